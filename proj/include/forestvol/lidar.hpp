#pragma once

// Simplified UAV laser-scanning simulator: parallel flight lines, a
// single-plane triangular-wave swath sweep, and discrete multi-return ray
// casting against triangle geometry. Rays are infinitesimal and pass through
// every surface they meet.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "forestvol/errors.hpp"
#include "forestvol/forest.hpp"
#include "forestvol/geometry.hpp"
#include "forestvol/mesh.hpp"
#include "forestvol/pointcloud.hpp"

namespace forestvol {

/// Defaults are the simulated-scanner acquisition settings (35 m, 2 m/s,
/// 200 kHz, 80 Hz, 5 returns, 180 deg swath).
struct ScannerConfig {
    double altitude = 35.0;             ///< m above ground
    double flight_speed = 2.0;          ///< m/s
    double pulse_rate = 200e3;          ///< Hz
    double scan_frequency = 80.0;       ///< Hz, sweeps per second
    int max_returns = 5;
    double scan_angle = 180.0;          ///< degrees, full swath
    double min_return_separation = 0.5; ///< m
    double flight_line_spacing = 20.0;  ///< m

    void validate() const {
        auto positive = [](double v, const char* field) {
            if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("scanner.") + field, "must be > 0");
        };
        positive(altitude, "altitude");
        positive(flight_speed, "flight_speed");
        positive(pulse_rate, "pulse_rate");
        positive(scan_frequency, "scan_frequency");
        positive(min_return_separation, "min_return_separation");
        positive(flight_line_spacing, "flight_line_spacing");
        if (max_returns < 1 || max_returns > 255) throw ConfigError("scanner.max_returns", "must be in [1, 255]");
        if (!(scan_angle >= 0.0 && scan_angle <= 360.0)) {
            throw ConfigError("scanner.scan_angle", "must be in [0, 360]");
        }
    }
};

struct Ray {
    Vec3 origin;
    Vec3 direction;  ///< unit length
    std::uint32_t line = 0;
    std::uint32_t pulse_id = 0;
};

/// Axis-aligned ground footprint.
struct Footprint {
    double x_min = 0.0, x_max = 0.0;
    double y_min = 0.0, y_max = 0.0;
};

/// Swath angle (degrees from nadir) at time t: a triangular wave with period
/// 1/scan_frequency between -scan_angle/2 (t = 0) and +scan_angle/2 (half period).
inline double sweep_angle(const ScannerConfig& cfg, double t) {
    const double amp = 0.5 * cfg.scan_angle;
    double phase = t * cfg.scan_frequency;
    phase -= std::floor(phase);
    return phase < 0.5 ? amp * (4.0 * phase - 1.0) : amp * (3.0 - 4.0 * phase);
}

inline std::size_t pulses_per_line(const ScannerConfig& cfg, double line_length) {
    return static_cast<std::size_t>(std::llround(line_length / cfg.flight_speed * cfg.pulse_rate));
}

/// Flight lines run along +x over the footprint, spaced flight_line_spacing
/// apart in y and centred on it; each line fires pulses at pulse_rate while
/// crossing the footprint, sweeping the swath in the y-z plane.
inline std::vector<Ray> plan_pulses(const ScannerConfig& cfg, const Footprint& fp) {
    cfg.validate();
    const double length = fp.x_max - fp.x_min;
    const double across = fp.y_max - fp.y_min;
    if (!(length > 0.0) || !(across >= 0.0)) throw std::invalid_argument("plan_pulses: empty footprint");
    const auto lines = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(across / cfg.flight_line_spacing)));
    const double y_mid = 0.5 * (fp.y_min + fp.y_max);
    const std::size_t per_line = pulses_per_line(cfg, length);

    std::vector<Ray> rays;
    rays.reserve(lines * per_line);
    std::uint32_t pulse_id = 0;
    for (std::size_t l = 0; l < lines; ++l) {
        const double y = y_mid + (static_cast<double>(l) - 0.5 * static_cast<double>(lines - 1)) * cfg.flight_line_spacing;
        for (std::size_t i = 0; i < per_line; ++i) {
            const double t = static_cast<double>(i) / cfg.pulse_rate;
            const double theta = deg_to_rad(sweep_angle(cfg, t));
            Ray r;
            r.origin = {fp.x_min + cfg.flight_speed * t, y, cfg.altitude};
            r.direction = {0.0, std::sin(theta), -std::cos(theta)};
            r.line = static_cast<std::uint32_t>(l);
            r.pulse_id = pulse_id++;
            rays.push_back(r);
        }
    }
    return rays;
}

// ---------------------------------------------------------------------------

/// Triangle soup with a bounding volume hierarchy; answers "all hits along a ray".
class Scene {
public:
    Scene() = default;

    explicit Scene(std::span<const TriangleMesh> meshes) {
        for (const auto& m : meshes) add(m);
        build();
    }

    void add(const TriangleMesh& mesh) {
        const auto& v = mesh.vertices();
        for (const auto& [a, b, c] : mesh.faces()) tris_.push_back({v[a], v[b], v[c]});
        built_ = false;
    }

    void build() {
        nodes_.clear();
        order_.resize(tris_.size());
        for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
        centroids_.resize(tris_.size());
        for (std::size_t i = 0; i < tris_.size(); ++i) {
            centroids_[i] = (tris_[i].a + tris_[i].b + tris_[i].c) * (1.0 / 3.0);
        }
        if (!tris_.empty()) build_node(0, static_cast<std::uint32_t>(tris_.size()));
        built_ = true;
    }

    std::size_t triangle_count() const noexcept { return tris_.size(); }

    /// Ranges (> 1e-9) of every intersection, unsorted.
    void intersect_all(const Ray& ray, std::vector<double>& ranges) const {
        ranges.clear();
        if (nodes_.empty()) return;
        if (!built_) throw std::logic_error("Scene::intersect_all before build()");
        const Vec3 inv{1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z};
        std::uint32_t stack[64];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const Node& n = nodes_[stack[--top]];
            if (!hits_box(n.box, ray.origin, inv)) continue;
            if (n.count > 0) {
                for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
                    const double t = intersect(tris_[order_[i]], ray);
                    if (t > 1e-9) ranges.push_back(t);
                }
            } else {
                stack[top++] = n.first;
                stack[top++] = n.first + 1;
            }
        }
    }

private:
    struct Tri {
        Vec3 a, b, c;
    };
    struct Node {
        Aabb box;
        std::uint32_t first = 0;  ///< leaf: first triangle; inner: left child (right = first + 1)
        std::uint32_t count = 0;  ///< 0 for inner nodes
    };

    // Möller-Trumbore, edges inclusive; returns -1 on a miss.
    static double intersect(const Tri& t, const Ray& r) noexcept {
        const Vec3 e1 = t.b - t.a;
        const Vec3 e2 = t.c - t.a;
        const Vec3 p = cross(r.direction, e2);
        const double det = dot(e1, p);
        if (std::abs(det) < 1e-14) return -1.0;
        const double inv_det = 1.0 / det;
        const Vec3 s = r.origin - t.a;
        const double u = dot(s, p) * inv_det;
        if (u < 0.0 || u > 1.0) return -1.0;
        const Vec3 q = cross(s, e1);
        const double v = dot(r.direction, q) * inv_det;
        if (v < 0.0 || u + v > 1.0) return -1.0;
        return dot(e2, q) * inv_det;
    }

    static bool hits_box(const Aabb& b, const Vec3& o, const Vec3& inv) noexcept {
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            double lo = (b.lo[a] - o[a]) * inv[a];
            double hi = (b.hi[a] - o[a]) * inv[a];
            if (std::isnan(lo) || std::isnan(hi)) {
                // Ray parallel to the slab and lying on its boundary.
                if (o[a] < b.lo[a] || o[a] > b.hi[a]) return false;
                continue;
            }
            if (lo > hi) std::swap(lo, hi);
            t0 = std::max(t0, lo);
            t1 = std::min(t1, hi);
            if (t0 > t1) return false;
        }
        return true;
    }

    void build_node(std::uint32_t begin, std::uint32_t end) {
        // Iterative construction: children of a node are stored adjacently.
        struct Task {
            std::uint32_t node, begin, end;
        };
        nodes_.push_back({});
        std::vector<Task> tasks{{0, begin, end}};
        while (!tasks.empty()) {
            const Task task = tasks.back();
            tasks.pop_back();
            Aabb box, cbox;
            for (std::uint32_t i = task.begin; i < task.end; ++i) {
                const Tri& t = tris_[order_[i]];
                box.expand(t.a);
                box.expand(t.b);
                box.expand(t.c);
                cbox.expand(centroids_[order_[i]]);
            }
            nodes_[task.node].box = box;
            const std::uint32_t count = task.end - task.begin;
            const Vec3 ext = cbox.extent();
            if (count <= 4 || (ext.x <= 0.0 && ext.y <= 0.0 && ext.z <= 0.0)) {
                nodes_[task.node].first = task.begin;
                nodes_[task.node].count = count;
                continue;
            }
            const int axis = (ext.x >= ext.y && ext.x >= ext.z) ? 0 : (ext.y >= ext.z ? 1 : 2);
            const std::uint32_t mid = task.begin + count / 2;
            std::nth_element(order_.begin() + task.begin, order_.begin() + mid, order_.begin() + task.end,
                             [&](std::uint32_t a, std::uint32_t b) {
                                 const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                                 return ca != cb ? ca < cb : a < b;
                             });
            const auto left = static_cast<std::uint32_t>(nodes_.size());
            nodes_.push_back({});
            nodes_.push_back({});
            nodes_[task.node].first = left;
            nodes_[task.node].count = 0;
            tasks.push_back({left, task.begin, mid});
            tasks.push_back({left + 1, mid, task.end});
        }
    }

    std::vector<Tri> tris_;
    std::vector<Vec3> centroids_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
    bool built_ = false;
};

struct Return {
    Vec3 point;
    double range = 0.0;
    std::uint8_t return_number = 1;
};

/// Keeps hits in range order, dropping any closer than min_return_separation to
/// the previously kept one, up to max_returns.
inline std::vector<Return> gate_returns(const Ray& ray, std::vector<double> ranges, const ScannerConfig& cfg) {
    std::sort(ranges.begin(), ranges.end());
    std::vector<Return> out;
    double last = -std::numeric_limits<double>::infinity();
    for (double r : ranges) {
        if (static_cast<int>(out.size()) >= cfg.max_returns) break;
        if (!out.empty() && !(r - last >= cfg.min_return_separation)) continue;
        out.push_back({ray.origin + ray.direction * r, r, static_cast<std::uint8_t>(out.size() + 1)});
        last = r;
    }
    return out;
}

inline std::vector<Return> cast_pulse(const Ray& ray, const Scene& scene, const ScannerConfig& cfg) {
    std::vector<double> ranges;
    scene.intersect_all(ray, ranges);
    return gate_returns(ray, std::move(ranges), cfg);
}

inline std::vector<Return> cast_pulse(const Ray& ray, std::span<const TriangleMesh> meshes, const ScannerConfig& cfg) {
    return cast_pulse(ray, Scene(meshes), cfg);
}

struct ScanResult {
    PointCloud cloud;                   ///< with return numbers
    std::vector<std::uint32_t> pulse_ids;  ///< one per point
    std::size_t pulse_count = 0;
};

/// Flat rectangle at z = 0 through the given corners (counter-clockwise, +z normal).
inline TriangleMesh make_ground(const std::array<Vec3, 4>& corners) {
    std::vector<Vec3> v(corners.begin(), corners.end());
    for (auto& p : v) p.z = 0.0;
    return TriangleMesh(std::move(v), {{0, 1, 2}, {0, 2, 3}});
}

inline Footprint footprint_bounds(const std::array<Vec3, 4>& corners) {
    Footprint fp{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& c : corners) {
        fp.x_min = std::min(fp.x_min, c.x);
        fp.x_max = std::max(fp.x_max, c.x);
        fp.y_min = std::min(fp.y_min, c.y);
        fp.y_max = std::max(fp.y_max, c.y);
    }
    return fp;
}

/// Scans arbitrary geometry over a footprint; output ordered by (line, pulse, return).
inline ScanResult scan_scene(const Scene& scene, const Footprint& fp, const ScannerConfig& cfg) {
    const auto rays = plan_pulses(cfg, fp);
    ScanResult result;
    result.pulse_count = rays.size();
    std::vector<double> ranges;
    for (const auto& ray : rays) {
        scene.intersect_all(ray, ranges);
        for (const auto& ret : gate_returns(ray, ranges, cfg)) {
            result.cloud.points.push_back(ret.point);
            result.cloud.return_numbers.push_back(ret.return_number);
            result.pulse_ids.push_back(ray.pulse_id);
        }
    }
    return result;
}

/// Scans wood and leaves of every tree, plus the plot's ground rectangle when
/// `ground` is set.
inline ScanResult scan_plot(const ForestPlot& plot, const ScannerConfig& cfg, bool ground = true) {
    cfg.validate();
    Scene scene;
    for (const auto& t : plot.trees) {
        scene.add(t.wood);
        scene.add(t.leaves);
    }
    const auto corners = plot.footprint();
    if (ground) scene.add(make_ground(corners));
    scene.build();
    auto result = scan_scene(scene, footprint_bounds(corners), cfg);
    if (result.cloud.empty()) {
        throw DataError("plot " + std::to_string(plot.plot_id),
                        "scan produced no returns (" + std::to_string(result.pulse_count) + " pulses)");
    }
    return result;
}

}  // namespace forestvol
