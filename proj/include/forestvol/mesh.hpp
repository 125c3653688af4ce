#pragma once

// Indexed triangle meshes, watertightness checking and exact enclosed volume.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forestvol/geometry.hpp"

namespace forestvol {

using Face = std::array<std::uint32_t, 3>;

/// Faces with area below this (m^2) are rejected at construction.
inline constexpr double kDegenerateFaceArea = 1e-12;

class TriangleMesh {
public:
    TriangleMesh() = default;

    /// Validates face indices and rejects zero-area faces.
    TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
        : vertices_(std::move(vertices)), faces_(std::move(faces)) {
        for (std::size_t f = 0; f < faces_.size(); ++f) {
            for (auto idx : faces_[f]) {
                if (idx >= vertices_.size()) {
                    throw std::invalid_argument("TriangleMesh: face " + std::to_string(f) +
                                                " references vertex " + std::to_string(idx) +
                                                " but mesh has " +
                                                std::to_string(vertices_.size()) + " vertices");
                }
            }
            if (face_area(f) < kDegenerateFaceArea) {
                throw std::invalid_argument("TriangleMesh: face " + std::to_string(f) +
                                            " is degenerate (area < 1e-12 m^2)");
            }
        }
    }

    const std::vector<Vec3>& vertices() const noexcept { return vertices_; }
    const std::vector<Face>& faces() const noexcept { return faces_; }
    std::size_t vertex_count() const noexcept { return vertices_.size(); }
    std::size_t face_count() const noexcept { return faces_.size(); }
    bool empty() const noexcept { return faces_.empty(); }

    double face_area(std::size_t f) const {
        const auto& [a, b, c] = faces_[f];
        return 0.5 * norm(cross(vertices_[b] - vertices_[a], vertices_[c] - vertices_[a]));
    }

    /// Disjoint union: `other`'s vertices are appended, no welding.
    void append(const TriangleMesh& other) {
        const auto offset = static_cast<std::uint32_t>(vertices_.size());
        vertices_.insert(vertices_.end(), other.vertices_.begin(), other.vertices_.end());
        faces_.reserve(faces_.size() + other.faces_.size());
        for (const auto& f : other.faces_) {
            faces_.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
        }
    }

    Aabb bounds() const noexcept {
        Aabb box;
        for (const auto& v : vertices_) box.expand(v);
        return box;
    }

    friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;

private:
    std::vector<Vec3> vertices_;
    std::vector<Face> faces_;
};

struct DirectedEdge {
    std::uint32_t from = 0;
    std::uint32_t to = 0;
    friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
};

struct WatertightReport {
    bool watertight = false;
    /// Edges not matched by exactly one oppositely oriented partner, in the
    /// orientation they appear in the mesh.
    std::vector<DirectedEdge> boundary_edges;
};

/// Every undirected edge must be used by exactly two faces, once in each
/// direction. An empty mesh encloses nothing and is reported as not watertight.
inline WatertightReport check_watertight(const TriangleMesh& mesh) {
    WatertightReport report;
    std::vector<DirectedEdge> edges;
    edges.reserve(mesh.face_count() * 3);
    for (const auto& f : mesh.faces()) {
        edges.push_back({f[0], f[1]});
        edges.push_back({f[1], f[2]});
        edges.push_back({f[2], f[0]});
    }
    // Group by undirected key; within a group count each direction.
    auto key = [](const DirectedEdge& e) {
        return std::pair{std::min(e.from, e.to), std::max(e.from, e.to)};
    };
    std::vector<std::size_t> order(edges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ka = key(edges[a]);
        const auto kb = key(edges[b]);
        return ka != kb ? ka < kb : a < b;
    });

    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        const auto k = key(edges[order[i]]);
        while (j < order.size() && key(edges[order[j]]) == k) ++j;
        std::size_t forward = 0;
        std::size_t backward = 0;
        for (std::size_t m = i; m < j; ++m) {
            (edges[order[m]].from == k.first ? forward : backward)++;
        }
        if (!(forward == 1 && backward == 1)) {
            for (std::size_t m = i; m < j; ++m) report.boundary_edges.push_back(edges[order[m]]);
        }
        i = j;
    }
    report.watertight = !mesh.empty() && report.boundary_edges.empty();
    return report;
}

class NonWatertightError : public std::invalid_argument {
public:
    explicit NonWatertightError(std::vector<DirectedEdge> edges)
        : std::invalid_argument("mesh is not watertight: " + std::to_string(edges.size()) +
                                " boundary edge(s)"),
          boundary_edges_(std::move(edges)) {}

    const std::vector<DirectedEdge>& boundary_edges() const noexcept { return boundary_edges_; }

private:
    std::vector<DirectedEdge> boundary_edges_;
};

/// Sum of signed tetrahedra against the origin, (1/6) * sum det[v0 v1 v2].
/// Skips the watertightness check; callers must know the mesh is closed.
inline double signed_volume_unchecked(const TriangleMesh& mesh) noexcept {
    const auto& v = mesh.vertices();
    double six_vol = 0.0;
    for (const auto& [a, b, c] : mesh.faces()) {
        six_vol += dot(v[a], cross(v[b], v[c]));
    }
    return six_vol / 6.0;
}

/// Enclosed volume (m^3); positive for outward winding.
/// Throws NonWatertightError listing the offending edges for open meshes.
inline double signed_volume(const TriangleMesh& mesh) {
    auto report = check_watertight(mesh);
    if (!report.watertight) throw NonWatertightError(std::move(report.boundary_edges));
    return signed_volume_unchecked(mesh);
}

/// Applies scale, then rotation about +z (degrees), then translation.
inline TriangleMesh transform(const TriangleMesh& mesh, double rotation_z_deg, const Vec3& translation,
                              double scale = 1.0) {
    if (!(scale > 0.0)) throw std::invalid_argument("transform: scale must be > 0");
    std::vector<Vec3> out;
    out.reserve(mesh.vertex_count());
    for (const auto& p : mesh.vertices()) out.push_back(rotate_z(p * scale, rotation_z_deg) + translation);
    return TriangleMesh(std::move(out), mesh.faces());
}

// ---------------------------------------------------------------------------
// Closed primitives.

/// Axis-aligned box [lo, hi] with outward winding.
inline TriangleMesh make_box(const Vec3& lo, const Vec3& hi) {
    std::vector<Vec3> v = {
        {lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {lo.x, hi.y, lo.z},
        {lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z},
    };
    std::vector<Face> f = {
        {0, 2, 1}, {0, 3, 2},  // bottom (-z)
        {4, 5, 6}, {4, 6, 7},  // top (+z)
        {0, 1, 5}, {0, 5, 4},  // -y
        {1, 2, 6}, {1, 6, 5},  // +x
        {2, 3, 7}, {2, 7, 6},  // +y
        {3, 0, 4}, {3, 4, 7},  // -x
    };
    return TriangleMesh(std::move(v), std::move(f));
}

inline TriangleMesh make_unit_cube() { return make_box({0, 0, 0}, {1, 1, 1}); }

/// Orthonormal pair (u, w) with u x w = axis (axis must be unit length).
inline std::pair<Vec3, Vec3> orthonormal_basis(const Vec3& axis) {
    const Vec3 helper = std::abs(axis.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    const Vec3 u = normalized(cross(helper, axis));
    const Vec3 w = cross(axis, u);
    return {u, w};
}

/// Closed tube through a polyline of rings: ring k is centred at centres[k]
/// with radius radii[k], all rings perpendicular to `axis`. Both ends capped.
inline TriangleMesh make_ring_stack(const std::vector<Vec3>& centres, const std::vector<double>& radii,
                                   const Vec3& axis, int segments) {
    if (segments < 3) throw std::invalid_argument("make_ring_stack: need >= 3 segments");
    if (centres.size() < 2 || centres.size() != radii.size()) {
        throw std::invalid_argument("make_ring_stack: need >= 2 rings with matching radii");
    }
    const auto [u, w] = orthonormal_basis(normalized(axis));
    const auto n = static_cast<std::uint32_t>(segments);
    const auto rings = static_cast<std::uint32_t>(centres.size());

    std::vector<Vec3> v;
    v.reserve(rings * n + 2);
    for (std::uint32_t k = 0; k < rings; ++k) {
        for (std::uint32_t i = 0; i < n; ++i) {
            const double a = 2.0 * std::numbers::pi * i / n;
            v.push_back(centres[k] + (u * std::cos(a) + w * std::sin(a)) * radii[k]);
        }
    }
    const std::uint32_t bottom = static_cast<std::uint32_t>(v.size());
    v.push_back(centres.front());
    const std::uint32_t top = static_cast<std::uint32_t>(v.size());
    v.push_back(centres.back());

    std::vector<Face> f;
    f.reserve(2 * n * (rings - 1) + 2 * n);
    for (std::uint32_t k = 0; k + 1 < rings; ++k) {
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t j = (i + 1) % n;
            const std::uint32_t b0 = k * n + i, b1 = k * n + j;
            const std::uint32_t t0 = (k + 1) * n + i, t1 = (k + 1) * n + j;
            f.push_back({b0, b1, t1});
            f.push_back({b0, t1, t0});
        }
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t j = (i + 1) % n;
        f.push_back({bottom, j, i});
        f.push_back({top, (rings - 1) * n + i, (rings - 1) * n + j});
    }
    return TriangleMesh(std::move(v), std::move(f));
}

/// Capped frustum from `base` to `tip`.
inline TriangleMesh make_frustum(const Vec3& base, const Vec3& tip, double base_radius, double tip_radius,
                                 int segments) {
    return make_ring_stack({base, tip}, {base_radius, tip_radius}, tip - base, segments);
}

inline TriangleMesh make_cylinder(double radius, double height, int segments) {
    return make_frustum({0, 0, 0}, {0, 0, height}, radius, radius, segments);
}

// ---------------------------------------------------------------------------
// OBJ subset: `v x y z` and `f i j k` lines, 1-based indices.

inline void append_number(std::string& out, double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    out.append(buf, res.ptr);
}

inline std::string to_obj(const TriangleMesh& mesh) {
    std::string out;
    out.reserve(mesh.vertex_count() * 48 + mesh.face_count() * 24);
    for (const auto& p : mesh.vertices()) {
        out += "v ";
        append_number(out, p.x);
        out += ' ';
        append_number(out, p.y);
        out += ' ';
        append_number(out, p.z);
        out += '\n';
    }
    for (const auto& f : mesh.faces()) {
        out += "f " + std::to_string(f[0] + 1) + ' ' + std::to_string(f[1] + 1) + ' ' +
               std::to_string(f[2] + 1) + '\n';
    }
    return out;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view tok, const std::string& where) {
    T value{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
        throw std::invalid_argument(where + ": cannot parse number '" + std::string(tok) + "'");
    }
    return value;
}

}  // namespace detail

inline TriangleMesh parse_obj(std::string_view text) {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const auto tok = detail::split_ws(line);
        if (tok.empty() || tok[0].starts_with('#')) continue;
        const std::string where = "obj line " + std::to_string(line_no);
        if (tok[0] == "v") {
            if (tok.size() != 4) throw std::invalid_argument(where + ": expected 'v x y z'");
            vertices.push_back({detail::parse_number<double>(tok[1], where),
                                detail::parse_number<double>(tok[2], where),
                                detail::parse_number<double>(tok[3], where)});
        } else if (tok[0] == "f") {
            if (tok.size() != 4) throw std::invalid_argument(where + ": expected 'f i j k'");
            Face f{};
            for (int k = 0; k < 3; ++k) {
                const auto idx = detail::parse_number<std::uint64_t>(tok[k + 1], where);
                if (idx == 0) throw std::invalid_argument(where + ": OBJ indices are 1-based");
                f[k] = static_cast<std::uint32_t>(idx - 1);
            }
            faces.push_back(f);
        } else {
            throw std::invalid_argument(where + ": unsupported record '" + std::string(tok[0]) + "'");
        }
    }
    return TriangleMesh(std::move(vertices), std::move(faces));
}

inline void write_obj(const std::string& path, const TriangleMesh& mesh) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const auto text = to_obj(mesh);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline TriangleMesh read_obj(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_obj(ss.str());
}

}  // namespace forestvol
