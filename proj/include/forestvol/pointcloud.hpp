#pragma once

// Point clouds: sampling, spatial metrics, jitter, tiling and the XYZ / PLY
// file formats.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "forestvol/geometry.hpp"
#include "forestvol/kdtree.hpp"
#include "forestvol/mesh.hpp"
#include "forestvol/random.hpp"

namespace forestvol {

struct PointCloud {
    std::vector<Vec3> points;
    /// Either empty or one entry per point.
    std::vector<std::uint8_t> return_numbers;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
    bool has_returns() const noexcept { return !return_numbers.empty(); }

    Aabb bounds() const noexcept {
        Aabb box;
        for (const auto& p : points) box.expand(p);
        return box;
    }

    /// Sub-cloud in the order given by `indices`.
    PointCloud select(std::span<const std::uint32_t> indices) const {
        PointCloud out;
        out.points.reserve(indices.size());
        for (auto i : indices) out.points.push_back(points.at(i));
        if (has_returns()) {
            out.return_numbers.reserve(indices.size());
            for (auto i : indices) out.return_numbers.push_back(return_numbers[i]);
        }
        return out;
    }

    void validate() const {
        if (has_returns() && return_numbers.size() != points.size()) {
            throw std::invalid_argument("PointCloud: return_numbers size does not match point count");
        }
        for (const auto& p : points) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
                throw std::invalid_argument("PointCloud: non-finite coordinate");
            }
        }
    }

    friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

inline void check_sample_size(std::size_t n, std::size_t size, const char* who) {
    if (n > size) {
        throw std::invalid_argument(std::string(who) + ": requested " + std::to_string(n) +
                                    " points from a cloud of " + std::to_string(size));
    }
}

/// n distinct indices drawn uniformly without replacement, ascending.
inline std::vector<std::uint32_t> random_sample_indices(std::size_t size, std::size_t n, std::uint64_t seed) {
    check_sample_size(n, size, "random_sample");
    Rng rng(seed);
    std::vector<std::uint32_t> idx(size);
    for (std::uint32_t i = 0; i < size; ++i) idx[i] = i;
    // Partial Fisher-Yates: the first n slots become the sample.
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + uniform_index(rng, size - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline PointCloud random_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    return cloud.select(random_sample_indices(cloud.size(), n, seed));
}

/// Greedy max-min selection starting at `start`. Each step adds the point whose
/// squared distance to the selected set is largest; ties go to the lowest index.
/// Returned in selection order.
inline std::vector<std::uint32_t> farthest_point_indices(std::span<const Vec3> points, std::size_t n,
                                                         std::size_t start) {
    check_sample_size(n, points.size(), "farthest_point_sample");
    std::vector<std::uint32_t> chosen;
    if (n == 0) return chosen;
    if (start >= points.size()) throw std::invalid_argument("farthest_point_sample: start index out of range");
    chosen.reserve(n);
    std::vector<double> min_d(points.size(), std::numeric_limits<double>::infinity());
    std::vector<char> taken(points.size(), 0);
    auto current = static_cast<std::uint32_t>(start);
    for (std::size_t step = 0; step < n; ++step) {
        chosen.push_back(current);
        taken[current] = 1;
        if (step + 1 == n) break;
        const Vec3 c = points[current];
        double best = -1.0;
        std::uint32_t best_idx = 0;
        for (std::uint32_t i = 0; i < points.size(); ++i) {
            if (taken[i]) continue;
            const double d = squared_distance(points[i], c);
            if (d < min_d[i]) min_d[i] = d;
            if (min_d[i] > best) {
                best = min_d[i];
                best_idx = i;
            }
        }
        current = best_idx;
    }
    return chosen;
}

/// FPS with a seeded uniform start point.
inline PointCloud farthest_point_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    check_sample_size(n, cloud.size(), "farthest_point_sample");
    if (n == 0) return {};
    Rng rng(seed);
    const auto start = uniform_index(rng, cloud.size());
    return cloud.select(farthest_point_indices(cloud.points, n, start));
}

enum class SamplingMethod { random, farthest_point };

inline PointCloud downsample(const PointCloud& cloud, std::size_t n, SamplingMethod method, std::uint64_t seed) {
    return method == SamplingMethod::random ? random_sample(cloud, n, seed)
                                            : farthest_point_sample(cloud, n, seed);
}

inline std::string to_string(SamplingMethod m) { return m == SamplingMethod::random ? "rs" : "fps"; }

inline SamplingMethod parse_sampling_method(const std::string& s) {
    if (s == "rs") return SamplingMethod::random;
    if (s == "fps") return SamplingMethod::farthest_point;
    throw std::invalid_argument("unknown sampling method '" + s + "' (expected rs or fps)");
}

// ---------------------------------------------------------------------------

struct SpatialMetrics {
    double area = 0.0;            ///< xy bounding-box area, m^2
    double volume = 0.0;          ///< area times vertical extent, m^3
    double density_area = 0.0;    ///< points per m^2
    double density_volume = 0.0;  ///< points per m^3
    double avg_spacing = 0.0;     ///< mean distance to the nearest other point, m
};

/// Distance from every point to its nearest other point (KD-tree).
inline std::vector<double> nearest_neighbor_distances(std::span<const Vec3> points) {
    const KdTree tree(points);
    std::vector<double> out(points.size());
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        out[i] = std::sqrt(tree.nearest(points[i], i).squared_distance);
    }
    return out;
}

inline double average_spacing(std::span<const Vec3> points) {
    if (points.size() < 2) throw std::invalid_argument("average_spacing: need at least 2 points");
    const auto d = nearest_neighbor_distances(points);
    double sum = 0.0;
    for (double v : d) sum += v;
    return sum / static_cast<double>(d.size());
}

inline SpatialMetrics spatial_metrics(const PointCloud& cloud) {
    if (cloud.size() < 2) throw std::invalid_argument("spatial_metrics: need at least 2 points");
    const Vec3 ext = cloud.bounds().extent();
    constexpr const char* names[] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
        if (!(ext[a] > 0.0)) {
            throw std::invalid_argument(std::string("spatial_metrics: degenerate bounding box, zero extent along ") +
                                        names[a]);
        }
    }
    SpatialMetrics m;
    const auto n = static_cast<double>(cloud.size());
    m.area = ext.x * ext.y;
    m.volume = m.area * ext.z;
    m.density_area = n / m.area;
    m.density_volume = n / m.volume;
    m.avg_spacing = average_spacing(cloud.points);
    return m;
}

// ---------------------------------------------------------------------------

/// Adds N(0, sigma^2) noise per coordinate, clamped to [-clip, clip].
inline PointCloud jitter(const PointCloud& cloud, double sigma, double clip, std::uint64_t seed) {
    if (sigma < 0.0 || clip < 0.0) throw std::invalid_argument("jitter: sigma and clip must be >= 0");
    PointCloud out = cloud;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    auto noise = [&] { return std::clamp(sigma * standard_normal(rng), -clip, clip); };
    for (auto& p : out.points) {
        p.x += noise();
        p.y += noise();
        p.z += noise();
    }
    return out;
}

inline PointCloud rotate_cloud_z(const PointCloud& cloud, double degrees, const Vec3& pivot = {}) {
    PointCloud out = cloud;
    for (auto& p : out.points) p = rotate_z(p - pivot, degrees) + pivot;
    return out;
}

// ---------------------------------------------------------------------------

struct Tile {
    int ix = 0;
    int iy = 0;
    PointCloud cloud;
    double area = 0.0;  ///< grid cell area clipped to the cloud footprint, m^2
};

struct DroppedTile {
    int ix = 0;
    int iy = 0;
    std::size_t point_count = 0;
};

struct Tiling {
    std::vector<Tile> tiles;
    std::vector<DroppedTile> dropped;
    int columns = 0;
    int rows = 0;
};

/// Square grid anchored at the footprint's (x_min, y_min). Cells are half-open,
/// except that points on the far footprint edge go to the last row/column.
/// Tiles holding fewer than `min_points` points are dropped and reported.
inline Tiling tile(const PointCloud& cloud, double tile_edge, std::size_t min_points = 256) {
    if (!(tile_edge > 0.0)) throw std::invalid_argument("tile: tile_edge must be > 0");
    Tiling out;
    if (cloud.empty()) return out;
    const Aabb box = cloud.bounds();
    const Vec3 ext = box.extent();
    out.columns = std::max(1, static_cast<int>(std::ceil(ext.x / tile_edge)));
    out.rows = std::max(1, static_cast<int>(std::ceil(ext.y / tile_edge)));

    auto cell = [&](double v, double lo, int count) {
        const int i = static_cast<int>(std::floor((v - lo) / tile_edge));
        return std::clamp(i, 0, count - 1);
    };
    std::vector<std::vector<std::uint32_t>> members(static_cast<std::size_t>(out.columns * out.rows));
    for (std::uint32_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const int ix = cell(p.x, box.lo.x, out.columns);
        const int iy = cell(p.y, box.lo.y, out.rows);
        members[static_cast<std::size_t>(iy * out.columns + ix)].push_back(i);
    }
    auto span_len = [&](int i, double lo, double hi) {
        const double a = lo + i * tile_edge;
        const double b = std::min(hi, a + tile_edge);
        return std::max(0.0, b - a);
    };
    for (int iy = 0; iy < out.rows; ++iy) {
        for (int ix = 0; ix < out.columns; ++ix) {
            const auto& m = members[static_cast<std::size_t>(iy * out.columns + ix)];
            if (m.size() < std::max<std::size_t>(min_points, 1)) {
                out.dropped.push_back({ix, iy, m.size()});
                continue;
            }
            Tile t;
            t.ix = ix;
            t.iy = iy;
            t.cloud = cloud.select(m);
            t.area = span_len(ix, box.lo.x, box.hi.x) * span_len(iy, box.lo.y, box.hi.y);
            out.tiles.push_back(std::move(t));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// XYZ: `x y z return_number` per line. PLY: binary little-endian, float64
// x/y/z plus uint8 return_number.

inline std::string to_xyz(const PointCloud& cloud) {
    std::string out;
    out.reserve(cloud.size() * 64);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        append_number(out, p.x);
        out += ' ';
        append_number(out, p.y);
        out += ' ';
        append_number(out, p.z);
        out += ' ';
        out += std::to_string(cloud.has_returns() ? cloud.return_numbers[i] : 0);
        out += '\n';
    }
    return out;
}

inline PointCloud parse_xyz(std::string_view text) {
    PointCloud cloud;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const auto tok = detail::split_ws(line);
        if (tok.empty() || tok[0].starts_with('#')) continue;
        const std::string where = "xyz line " + std::to_string(line_no);
        if (tok.size() != 4) throw std::invalid_argument(where + ": expected 'x y z return_number'");
        cloud.points.push_back({detail::parse_number<double>(tok[0], where),
                                detail::parse_number<double>(tok[1], where),
                                detail::parse_number<double>(tok[2], where)});
        const auto r = detail::parse_number<unsigned>(tok[3], where);
        if (r > 255) throw std::invalid_argument(where + ": return_number out of range");
        cloud.return_numbers.push_back(static_cast<std::uint8_t>(r));
    }
    cloud.validate();
    return cloud;
}

inline std::string to_ply(const PointCloud& cloud) {
    std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(cloud.size()) +
                      "\nproperty double x\nproperty double y\nproperty double z\n"
                      "property uchar return_number\nend_header\n";
    auto put = [&](double v) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xff);
    };
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        put(cloud.points[i].x);
        put(cloud.points[i].y);
        put(cloud.points[i].z);
        out += static_cast<char>(cloud.has_returns() ? cloud.return_numbers[i] : 0);
    }
    return out;
}

inline PointCloud parse_ply(std::string_view data) {
    const std::string_view end_tag = "end_header\n";
    const auto end = data.find(end_tag);
    if (!data.starts_with("ply\n") || end == std::string_view::npos) {
        throw std::invalid_argument("ply: missing header");
    }
    const std::string header(data.substr(0, end));
    if (header.find("format binary_little_endian 1.0") == std::string::npos ||
        header.find("property double x\nproperty double y\nproperty double z\nproperty uchar return_number") ==
            std::string::npos) {
        throw std::invalid_argument("ply: unsupported layout (expected float64 x/y/z + uint8 return_number)");
    }
    const auto pos = header.find("element vertex ");
    if (pos == std::string::npos) throw std::invalid_argument("ply: missing vertex element");
    const auto count = std::stoull(header.substr(pos + 15));
    const auto body = data.substr(end + end_tag.size());
    constexpr std::size_t stride = 3 * 8 + 1;
    if (body.size() != count * stride) throw std::invalid_argument("ply: body size does not match vertex count");
    PointCloud cloud;
    cloud.points.reserve(count);
    cloud.return_numbers.reserve(count);
    auto get = [&](std::size_t off) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(body[off + b])) << (8 * b);
        }
        return std::bit_cast<double>(bits);
    };
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t o = i * stride;
        cloud.points.push_back({get(o), get(o + 8), get(o + 16)});
        cloud.return_numbers.push_back(static_cast<std::uint8_t>(body[o + 24]));
    }
    cloud.validate();
    return cloud;
}

inline void write_cloud(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const auto data = path.ends_with(".ply") ? to_ply(cloud) : to_xyz(cloud);
    os.write(data.data(), static_cast<std::streamsize>(data.size()));
}

inline PointCloud read_cloud(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string data = ss.str();
    return path.ends_with(".ply") ? parse_ply(data) : parse_xyz(data);
}

inline const char* kMetricsCsvHeader = "plot_id,area_m2,volume_m3,density_m2,density_m3,avg_spacing_m";

inline std::string metrics_csv_row(const std::string& plot_id, const SpatialMetrics& m) {
    std::string out = plot_id;
    for (double v : {m.area, m.volume, m.density_area, m.density_volume, m.avg_spacing}) {
        out += ',';
        append_number(out, v);
    }
    return out;
}

}  // namespace forestvol
