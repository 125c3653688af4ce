#pragma once

// Procedural eucalypt-like trees and rectangular forest plots whose wood
// volume is known exactly from the generated meshes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "forestvol/errors.hpp"
#include "forestvol/geometry.hpp"
#include "forestvol/mesh.hpp"
#include "forestvol/random.hpp"

namespace forestvol {

struct Range {
    double min = 0.0;
    double max = 0.0;

    double lerp(double t) const noexcept { return min + (max - min) * t; }
    bool contains(double v) const noexcept { return v >= min && v <= max; }
    bool valid_positive() const noexcept { return min > 0.0 && min <= max; }
};

struct IntRange {
    int min = 0;
    int max = 0;
};

struct TreeArchetype {
    int id = 0;
    Range trunk_height;          ///< m
    Range dbh;                   ///< m
    int branch_depth = 2;        ///< recursion levels below the trunk
    IntRange branch_count{3, 5}; ///< children per node
    double taper_ratio = 0.3;    ///< tip radius / base radius for every wood segment
    int leaf_density = 6;        ///< leaf quads per branch tip (scan-only)

    void validate() const {
        const std::string who = "archetype " + std::to_string(id);
        if (!trunk_height.valid_positive()) throw std::invalid_argument(who + ": bad trunk_height range");
        if (!dbh.valid_positive()) throw std::invalid_argument(who + ": bad dbh range");
        if (branch_depth < 0) throw std::invalid_argument(who + ": branch_depth < 0");
        if (branch_count.min < 1 || branch_count.min > branch_count.max) {
            throw std::invalid_argument(who + ": bad branch_count range");
        }
        if (!(taper_ratio > 0.0 && taper_ratio <= 1.0)) throw std::invalid_argument(who + ": taper_ratio not in (0, 1]");
        if (leaf_density < 0) throw std::invalid_argument(who + ": leaf_density < 0");
    }
};

/// The seven shipped archetypes, spanning 8-30 m heights.
inline std::vector<TreeArchetype> default_archetypes() {
    return {
        {0, {8.0, 11.0}, {0.10, 0.18}, 2, {3, 4}, 0.30, 6},
        {1, {10.0, 14.0}, {0.14, 0.24}, 2, {3, 5}, 0.30, 6},
        {2, {12.0, 17.0}, {0.18, 0.30}, 2, {3, 5}, 0.28, 7},
        {3, {15.0, 20.0}, {0.22, 0.38}, 2, {4, 5}, 0.26, 7},
        {4, {18.0, 23.0}, {0.28, 0.46}, 2, {4, 6}, 0.25, 8},
        {5, {21.0, 26.0}, {0.34, 0.56}, 2, {4, 6}, 0.24, 8},
        {6, {24.0, 30.0}, {0.42, 0.70}, 2, {5, 6}, 0.22, 8},
    };
}

/// Tessellation controls.
struct MeshResolution {
    int trunk_segments = 12;
    int trunk_sections = 6;
    int branch_segments = 6;
};

struct TreeModel {
    TriangleMesh wood;    ///< closed solids only
    TriangleMesh leaves;  ///< open quads, never part of the volume
    double height = 0.0;  ///< m
    double dbh = 0.0;     ///< m
    /// Trunk rings as (z, radius), bottom to top.
    std::vector<std::pair<double, double>> trunk_profile;
};

namespace detail {

inline constexpr double kMinWoodRadius = 0.005;

struct BranchBuilder {
    const TreeArchetype& arch;
    const MeshResolution& res;
    Rng& rng;
    Rng& leaf_rng;
    TreeModel& tree;

    void add_leaves(const Vec3& tip) {
        for (int q = 0; q < arch.leaf_density; ++q) {
            const Vec3 c = tip + Vec3{uniform(leaf_rng, -0.6, 0.6), uniform(leaf_rng, -0.6, 0.6),
                                      uniform(leaf_rng, -0.3, 0.5)};
            const double az = uniform(leaf_rng, 0.0, 2.0 * std::numbers::pi);
            const double tilt = uniform(leaf_rng, 0.0, 0.6);
            const Vec3 along{std::cos(az), std::sin(az), 0.0};
            const Vec3 across = Vec3{-std::sin(az) * std::cos(tilt), std::cos(az) * std::cos(tilt), std::sin(tilt)};
            const double hl = 0.25, hw = 0.15;
            std::vector<Vec3> v = {c - along * hl - across * hw, c + along * hl - across * hw,
                                   c + along * hl + across * hw, c - along * hl + across * hw};
            tree.leaves.append(TriangleMesh(std::move(v), {{0, 1, 2}, {0, 2, 3}}));
        }
    }

    void grow(const Vec3& base, const Vec3& dir, double length, double base_radius, int level) {
        const double tip_radius = std::max(kMinWoodRadius, base_radius * arch.taper_ratio);
        const Vec3 tip = base + dir * length;
        tree.wood.append(make_frustum(base, tip, base_radius, tip_radius, res.branch_segments));
        if (level >= arch.branch_depth) {
            add_leaves(tip);
            return;
        }
        const auto [u, w] = orthonormal_basis(dir);
        const int count = uniform_int(rng, arch.branch_count.min, arch.branch_count.max);
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        for (int c = 0; c < count; ++c) {
            const double t = uniform(rng, 0.4, 0.95);
            const double az = phase + 2.0 * std::numbers::pi * c / count + uniform(rng, -0.3, 0.3);
            const double spread = deg_to_rad(uniform(rng, 30.0, 55.0));
            const Vec3 side = u * std::cos(az) + w * std::sin(az);
            Vec3 child_dir = normalized(dir * std::cos(spread) + side * std::sin(spread) + Vec3{0, 0, 0.15});
            const double r_at = base_radius + (tip_radius - base_radius) * t;
            grow(base + dir * (length * t), child_dir, length * uniform(rng, 0.45, 0.65),
                 std::max(kMinWoodRadius, 0.6 * r_at), level + 1);
        }
    }
};

}  // namespace detail

/// Deterministic in (archetype, seed, resolution). Wood and leaves draw from
/// separate streams so leaf settings never change the wood.
inline TreeModel generate_tree(const TreeArchetype& arch, std::uint64_t seed, const MeshResolution& res = {}) {
    arch.validate();
    Rng rng(derive_seed(seed, 0));
    Rng leaf_rng(derive_seed(seed, 1));
    TreeModel tree;

    const double u_h = uniform01(rng);
    tree.height = arch.trunk_height.lerp(u_h);
    const double u_d = std::clamp(u_h + 0.1 * standard_normal(rng), 0.0, 1.0);
    tree.dbh = arch.dbh.lerp(u_d);

    const double r0 = 0.5 * tree.dbh;
    auto trunk_radius = [&](double s) {
        return std::max(detail::kMinWoodRadius,
                        r0 * (arch.taper_ratio + (1.0 - arch.taper_ratio) * std::pow(1.0 - s, 1.3)));
    };
    std::vector<Vec3> centres;
    std::vector<double> radii;
    for (int k = 0; k <= res.trunk_sections; ++k) {
        const double s = static_cast<double>(k) / res.trunk_sections;
        centres.push_back({0.0, 0.0, s * tree.height});
        radii.push_back(trunk_radius(s));
        tree.trunk_profile.emplace_back(s * tree.height, radii.back());
    }
    tree.wood = make_ring_stack(centres, radii, {0, 0, 1}, res.trunk_segments);

    detail::BranchBuilder builder{arch, res, rng, leaf_rng, tree};
    if (arch.branch_depth == 0) {
        builder.add_leaves({0.0, 0.0, tree.height});
        return tree;
    }
    const int count = uniform_int(rng, arch.branch_count.min, arch.branch_count.max);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (int c = 0; c < count; ++c) {
        const double s = uniform(rng, 0.45, 0.9);
        const double az = phase + 2.0 * std::numbers::pi * c / count + uniform(rng, -0.35, 0.35);
        const double el = deg_to_rad(uniform(rng, 25.0, 60.0));
        const Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
        const double length = tree.height * uniform(rng, 0.22, 0.38) * (1.0 - 0.4 * (s - 0.45));
        builder.grow({0.0, 0.0, s * tree.height}, dir, length, 0.55 * trunk_radius(s), 1);
    }
    builder.add_leaves({0.0, 0.0, tree.height});
    return tree;
}

// ---------------------------------------------------------------------------

struct TreeInstance {
    int archetype = 0;
    std::uint64_t seed = 0;
    double yaw_deg = 0.0;
    Vec3 position;        ///< trunk base in plot coordinates
    TriangleMesh wood;    ///< placed
    TriangleMesh leaves;  ///< placed
    double volume = 0.0;  ///< m^3
};

/// Plot coordinates: the rectangle [-width/2, width/2] x [-depth/2, depth/2] on
/// the ground plane z = 0 (before any rotation augmentation).
struct ForestPlot {
    std::uint32_t plot_id = 0;
    std::uint64_t seed = 0;
    double width = 0.0;
    double depth = 0.0;
    double rotation_tag = 0.0;  ///< degrees; 0 for base plots
    std::vector<TreeInstance> trees;
    double ground_truth_volume = 0.0;  ///< m^3, wood only

    double area() const noexcept { return width * depth; }

    /// Footprint corners (counter-clockwise), rotated with the plot.
    std::array<Vec3, 4> footprint() const {
        const double hw = 0.5 * width, hd = 0.5 * depth;
        std::array<Vec3, 4> c = {Vec3{-hw, -hd, 0}, Vec3{hw, -hd, 0}, Vec3{hw, hd, 0}, Vec3{-hw, hd, 0}};
        for (auto& p : c) p = rotate_z(p, rotation_tag);
        return c;
    }

    TriangleMesh wood_mesh() const {
        TriangleMesh m;
        for (const auto& t : trees) m.append(t.wood);
        return m;
    }
    TriangleMesh leaf_mesh() const {
        TriangleMesh m;
        for (const auto& t : trees) m.append(t.leaves);
        return m;
    }
};

struct PlotConfig {
    IntRange tree_count{2, 15};
    Range width{14.0, 20.0};
    Range depth{14.0, 20.0};
    std::vector<double> archetype_weights = std::vector<double>(7, 1.0);
    std::vector<TreeArchetype> archetypes = default_archetypes();
    double min_spacing = 1.0;
    int max_retries = 1000;
    MeshResolution resolution;

    void validate() const {
        if (tree_count.min < 1 || tree_count.min > tree_count.max) {
            throw ConfigError("forest.tree_count", "need 1 <= min <= max");
        }
        if (!width.valid_positive()) throw ConfigError("forest.width", "need 0 < min <= max");
        if (!depth.valid_positive()) throw ConfigError("forest.depth", "need 0 < min <= max");
        if (archetype_weights.size() != archetypes.size()) {
            throw ConfigError("forest.archetype_weights", "need one weight per archetype (" +
                                                              std::to_string(archetypes.size()) + ")");
        }
        double total = 0.0;
        for (double w : archetype_weights) {
            if (!(w >= 0.0)) throw ConfigError("forest.archetype_weights", "weights must be >= 0");
            total += w;
        }
        if (!(total > 0.0)) throw ConfigError("forest.archetype_weights", "weights sum to zero");
        if (!(min_spacing >= 0.0)) throw ConfigError("forest.min_spacing", "must be >= 0");
        if (max_retries < 1) throw ConfigError("forest.max_retries", "must be >= 1");
        if (resolution.trunk_segments < 3 || resolution.branch_segments < 3) {
            throw ConfigError("forest.segments", "need >= 3 radial segments");
        }
        if (resolution.trunk_sections < 1) throw ConfigError("forest.trunk_sections", "must be >= 1");
        for (const auto& a : archetypes) a.validate();
    }
};

namespace detail {

inline std::size_t pick_weighted(Rng& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform01(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (r < weights[i]) return i;
        r -= weights[i];
    }
    for (std::size_t i = weights.size(); i-- > 0;) {
        if (weights[i] > 0.0) return i;
    }
    return 0;
}

}  // namespace detail

/// Plot area grows linearly with tree count between the smallest and largest
/// configured rectangles; trees are placed by rejection sampling.
inline ForestPlot generate_plot(const PlotConfig& config, std::uint64_t seed, std::uint32_t plot_id = 0) {
    config.validate();
    Rng rng(seed);
    ForestPlot plot;
    plot.plot_id = plot_id;
    plot.seed = seed;

    const int n = uniform_int(rng, config.tree_count.min, config.tree_count.max);
    const double a_min = config.width.min * config.depth.min;
    const double a_max = config.width.max * config.depth.max;
    const int span = config.tree_count.max - config.tree_count.min;
    const double frac = span > 0 ? static_cast<double>(n - config.tree_count.min) / span : 0.5;
    const double area = std::clamp((a_min + frac * (a_max - a_min)) * uniform(rng, 0.9, 1.1), a_min, a_max);
    const double aspect = uniform(rng, 0.8, 1.25);
    plot.width = std::clamp(std::sqrt(area * aspect), config.width.min, config.width.max);
    plot.depth = std::clamp(area / plot.width, config.depth.min, config.depth.max);

    const double margin = 0.5;
    const double hx = std::max(0.0, 0.5 * plot.width - margin);
    const double hy = std::max(0.0, 0.5 * plot.depth - margin);
    const double min_d2 = config.min_spacing * config.min_spacing;

    for (int t = 0; t < n; ++t) {
        TreeInstance inst;
        bool placed = false;
        for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
            const Vec3 p{uniform(rng, -hx, hx), uniform(rng, -hy, hy), 0.0};
            placed = std::all_of(plot.trees.begin(), plot.trees.end(),
                                 [&](const TreeInstance& o) { return squared_distance(o.position, p) >= min_d2; });
            if (placed) inst.position = p;
        }
        if (!placed) {
            throw DataError("plot " + std::to_string(plot_id),
                            "could not place tree " + std::to_string(t + 1) + " of " + std::to_string(n) +
                                " after " + std::to_string(config.max_retries) + " retries (plot " +
                                std::to_string(plot.width) + " x " + std::to_string(plot.depth) +
                                " m, min spacing " + std::to_string(config.min_spacing) + " m)");
        }
        const auto a = detail::pick_weighted(rng, config.archetype_weights);
        inst.archetype = config.archetypes[a].id;
        inst.seed = derive_seed(seed, 0x74726565, static_cast<std::uint64_t>(t));
        inst.yaw_deg = uniform(rng, 0.0, 360.0);
        const TreeModel model = generate_tree(config.archetypes[a], inst.seed, config.resolution);
        inst.wood = transform(model.wood, inst.yaw_deg, inst.position);
        inst.leaves = transform(model.leaves, inst.yaw_deg, inst.position);
        inst.volume = signed_volume(inst.wood);
        plot.trees.push_back(std::move(inst));
    }
    for (const auto& t : plot.trees) plot.ground_truth_volume += t.volume;
    return plot;
}

inline constexpr std::array<double, 7> kAugmentAngles = {45, 90, 135, 180, 225, 270, 315};

/// Rotates a base plot about the z axis at the seven augmentation angles.
/// Labels are copied, not recomputed.
inline std::vector<ForestPlot> rotate_augment(const ForestPlot& plot) {
    if (plot.rotation_tag != 0.0) {
        throw std::invalid_argument("rotate_augment: plot " + std::to_string(plot.plot_id) +
                                    " is already rotated (" + std::to_string(plot.rotation_tag) + " deg)");
    }
    std::vector<ForestPlot> out;
    out.reserve(kAugmentAngles.size());
    for (double angle : kAugmentAngles) {
        ForestPlot r;
        r.plot_id = plot.plot_id;
        r.seed = plot.seed;
        r.width = plot.width;
        r.depth = plot.depth;
        r.rotation_tag = angle;
        r.ground_truth_volume = plot.ground_truth_volume;
        r.trees.reserve(plot.trees.size());
        for (const auto& t : plot.trees) {
            TreeInstance c = t;
            c.position = rotate_z(t.position, angle);
            c.yaw_deg = t.yaw_deg + angle;
            c.wood = transform(t.wood, angle, {});
            c.leaves = transform(t.leaves, angle, {});
            r.trees.push_back(std::move(c));
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace forestvol
