#pragma once

// Point-set regression encoders: PointNet, PointNet++ (single-scale grouping)
// and DGCNN, each ending in a scalar volume head.
//
// Inputs are canonicalised before the network sees them: translated so the xy
// centroid sits at the origin and the lowest point at z = 0 (no scaling), then
// sorted lexicographically by (x, y, z). Every internal choice that depends on
// point order (FPS start, tie breaks) therefore depends only on the point set,
// which makes all three encoders exactly permutation invariant.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "forestvol/autodiff.hpp"
#include "forestvol/geometry.hpp"
#include "forestvol/kdtree.hpp"
#include "forestvol/nn.hpp"
#include "forestvol/pointcloud.hpp"
#include "forestvol/random.hpp"

namespace forestvol {

enum class Architecture { pointnet, pointnetpp, dgcnn };

inline std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::pointnet: return "pointnet";
        case Architecture::pointnetpp: return "pointnetpp";
        case Architecture::dgcnn: return "dgcnn";
    }
    return "?";
}

inline Architecture parse_architecture(const std::string& s) {
    if (s == "pointnet") return Architecture::pointnet;
    if (s == "pointnetpp") return Architecture::pointnetpp;
    if (s == "dgcnn") return Architecture::dgcnn;
    throw std::invalid_argument("unknown architecture '" + s + "' (expected pointnet, pointnetpp or dgcnn)");
}

struct SetAbstractionLevel {
    std::size_t centroids = 0;
    double radius = 0.0;  ///< m; infinity groups the nearest max_neighbors points
    std::size_t max_neighbors = 0;
    std::vector<std::size_t> widths;
};

struct EncoderDescriptor {
    Architecture architecture = Architecture::pointnet;
    std::size_t point_count = 2048;
    /// Hidden widths of the regression head; a final 1-wide linear layer is always appended.
    std::vector<std::size_t> head_widths{64, 32};

    // pointnet
    bool t_net = true;
    std::vector<std::size_t> tnet_widths{16, 32};
    std::vector<std::size_t> tnet_head_widths{16};
    std::vector<std::size_t> point_widths{16, 16, 32, 128};

    // pointnetpp
    std::vector<SetAbstractionLevel> levels{{256, 2.0, 16, {16, 32}}, {64, 4.0, 16, {32, 64}}};
    std::vector<std::size_t> global_widths{64, 128};

    // dgcnn
    std::size_t k = 20;
    std::vector<std::vector<std::size_t>> edge_widths{{16}, {16}, {32}};
    std::size_t embed_width = 128;

    void validate() const {
        if (point_count < 2) throw std::invalid_argument("encoder: point_count must be >= 2");
        for (auto w : head_widths)
            if (w == 0) throw std::invalid_argument("encoder: zero head width");
        switch (architecture) {
            case Architecture::pointnet:
                if (point_widths.empty()) throw std::invalid_argument("pointnet: point_widths must be non-empty");
                if (t_net && tnet_widths.empty()) throw std::invalid_argument("pointnet: tnet_widths must be non-empty");
                break;
            case Architecture::pointnetpp: {
                if (levels.empty()) throw std::invalid_argument("pointnetpp: need at least one level");
                std::size_t prev = point_count + 1;
                for (const auto& l : levels) {
                    if (l.centroids == 0 || l.centroids >= prev) {
                        throw std::invalid_argument("pointnetpp: centroid counts must be strictly decreasing and <= point_count");
                    }
                    if (!(l.radius > 0.0)) throw std::invalid_argument("pointnetpp: radius must be > 0");
                    if (l.max_neighbors == 0) throw std::invalid_argument("pointnetpp: max_neighbors must be >= 1");
                    if (l.widths.empty()) throw std::invalid_argument("pointnetpp: level widths must be non-empty");
                    prev = l.centroids;
                }
                if (global_widths.empty()) throw std::invalid_argument("pointnetpp: global_widths must be non-empty");
                break;
            }
            case Architecture::dgcnn:
                if (k == 0) throw std::invalid_argument("dgcnn: k must be >= 1");
                if (k >= point_count) {
                    throw std::invalid_argument("dgcnn: k = " + std::to_string(k) + " must be smaller than the point count " +
                                                std::to_string(point_count));
                }
                if (edge_widths.empty()) throw std::invalid_argument("dgcnn: need at least one edge block");
                for (const auto& b : edge_widths)
                    if (b.empty()) throw std::invalid_argument("dgcnn: empty edge block");
                if (embed_width == 0) throw std::invalid_argument("dgcnn: embed_width must be >= 1");
                break;
        }
    }
};

// ---------------------------------------------------------------------------
// Input handling

/// Centre xy on the centroid, shift min z to 0, sort lexicographically.
inline std::vector<Vec3> canonicalize(std::span<const Vec3> points) {
    if (points.empty()) return {};
    double cx = 0.0, cy = 0.0, zmin = points[0].z;
    for (const auto& p : points) {
        cx += p.x;
        cy += p.y;
        zmin = std::min(zmin, p.z);
    }
    cx /= static_cast<double>(points.size());
    cy /= static_cast<double>(points.size());
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back({p.x - cx, p.y - cy, p.z - zmin});
    std::sort(out.begin(), out.end(), lex_less);
    return out;
}

/// B canonicalised clouds of N points each, stored contiguously.
struct PointBatch {
    std::size_t batch = 0;
    std::size_t points_per_cloud = 0;
    std::vector<Vec3> points;

    std::span<const Vec3> cloud(std::size_t b) const {
        return std::span<const Vec3>(points).subspan(b * points_per_cloud, points_per_cloud);
    }

    ad::Tensor coordinates() const {
        std::vector<double> v;
        v.reserve(points.size() * 3);
        for (const auto& p : points) {
            v.push_back(p.x);
            v.push_back(p.y);
            v.push_back(p.z);
        }
        return ad::Tensor::from({points.size(), 3}, std::move(v));
    }
};

inline PointBatch make_batch(std::span<const PointCloud> clouds, std::size_t expected_points) {
    PointBatch batch;
    batch.batch = clouds.size();
    batch.points_per_cloud = expected_points;
    batch.points.reserve(clouds.size() * expected_points);
    for (std::size_t b = 0; b < clouds.size(); ++b) {
        if (clouds[b].size() != expected_points) {
            throw std::invalid_argument("encoder input " + std::to_string(b) + " has " + std::to_string(clouds[b].size()) +
                                        " points, model expects " + std::to_string(expected_points));
        }
        const auto c = canonicalize(clouds[b].points);
        batch.points.insert(batch.points.end(), c.begin(), c.end());
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Grouping helpers (no gradients flow through index selection)

/// Index of the lexicographically smallest point (lowest index on ties).
inline std::size_t lexicographic_min(std::span<const Vec3> pts) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (lex_less(pts[i], pts[best])) best = i;
    return best;
}

/// For each centroid: up to `cap` points within `radius`, nearest first (ties
/// by index), padded to exactly `cap` entries by repeating the nearest one.
inline std::vector<std::vector<std::uint32_t>> ball_query(std::span<const Vec3> pts,
                                                          std::span<const std::uint32_t> centroids, double radius,
                                                          std::size_t cap) {
    const KdTree tree(pts);
    const double r2 = radius * radius;
    std::vector<std::vector<std::uint32_t>> groups;
    groups.reserve(centroids.size());
    for (auto c : centroids) {
        std::vector<std::uint32_t> g;
        g.reserve(cap);
        for (const auto& nb : tree.knn(pts[c], cap)) {
            if (nb.squared_distance > r2) break;
            g.push_back(nb.index);
        }
        if (g.empty()) g.push_back(c);
        while (g.size() < cap) g.push_back(g.front());
        groups.push_back(std::move(g));
    }
    return groups;
}

/// k nearest neighbours (self excluded) of every row in each sample, in the
/// given feature space. Neighbours are ordered by (squared distance, index);
/// returned indices are global rows into the [B*N, C] feature matrix.
///
/// Exact search by sweeping outward along the first feature axis from each
/// query, stopping once that axis alone exceeds the current k-th distance.
inline std::vector<std::uint32_t> knn_graph(std::span<const double> features, std::size_t batch, std::size_t n,
                                            std::size_t channels, std::size_t k) {
    if (k >= n) {
        throw std::invalid_argument("knn_graph: k = " + std::to_string(k) + " must be smaller than the point count " +
                                    std::to_string(n));
    }
    if (channels == 0 || features.size() != batch * n * channels) {
        throw std::invalid_argument("knn_graph: feature matrix does not match batch x points x channels");
    }
    std::vector<std::uint32_t> out(batch * n * k);
    if (channels == 3) {
        std::vector<Vec3> pts(n);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* f = features.data() + (b * n + i) * 3;
                pts[i] = {f[0], f[1], f[2]};
            }
            const KdTree tree(pts);
            std::vector<Neighbor> nb;
            for (std::size_t i = 0; i < n; ++i) {
                tree.knn_into(pts[i], k, static_cast<std::uint32_t>(i), nb);
                for (std::size_t s = 0; s < k; ++s) out[(b * n + i) * k + s] = static_cast<std::uint32_t>(b * n + nb[s].index);
            }
        }
        return out;
    }
    std::vector<std::uint32_t> order(n);
    std::vector<double> key(n);
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* base = features.data() + b * n * channels;
        for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
        std::sort(order.begin(), order.end(), [&](std::uint32_t x, std::uint32_t y) {
            const double fx = base[x * channels], fy = base[y * channels];
            return fx != fy ? fx < fy : x < y;
        });
        for (std::size_t r = 0; r < n; ++r) key[r] = base[order[r] * channels];

        for (std::size_t r = 0; r < n; ++r) {
            const std::uint32_t i = order[r];
            const double* fi = base + i * channels;
            heap.clear();
            auto offer = [&](std::uint32_t j) {
                const double* fj = base + j * channels;
                double d = 0.0;
                for (std::size_t c = 0; c < channels; ++c) {
                    const double e = fi[c] - fj[c];
                    d += e * e;
                }
                const Neighbor cand{j, d};
                if (heap.size() < k) {
                    heap.push_back(cand);
                    std::push_heap(heap.begin(), heap.end());
                } else if (cand < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end());
                    heap.back() = cand;
                    std::push_heap(heap.begin(), heap.end());
                }
            };
            std::size_t lo = r, hi = r + 1;  // next candidates are lo-1 and hi
            while (lo > 0 || hi < n) {
                const double dl = lo > 0 ? key[r] - key[lo - 1] : std::numeric_limits<double>::infinity();
                const double dh = hi < n ? key[hi] - key[r] : std::numeric_limits<double>::infinity();
                const double gap = std::min(dl, dh);
                if (heap.size() == k && gap * gap > heap.front().squared_distance) break;
                if (dl <= dh) offer(order[--lo]);
                else offer(order[hi++]);
            }
            std::sort_heap(heap.begin(), heap.end());
            for (std::size_t s = 0; s < k; ++s) out[(b * n + i) * k + s] = static_cast<std::uint32_t>(b * n + heap[s].index);
        }
    }
    return out;
}

/// Explicit DGCNN edge features concat(h_i, h_j - h_i), one row per (i, slot).
inline ad::Tensor edge_features(const ad::Tensor& h, std::span<const std::uint32_t> neighbors, std::size_t k) {
    std::vector<std::uint32_t> centre(neighbors.size());
    for (std::size_t e = 0; e < neighbors.size(); ++e) centre[e] = static_cast<std::uint32_t>(e / k);
    const auto hi = ad::gather_rows(h, std::move(centre));
    const auto hj = ad::gather_rows(h, std::vector<std::uint32_t>(neighbors.begin(), neighbors.end()));
    return ad::concat_cols({hi, ad::sub(hj, hi)});
}

// ---------------------------------------------------------------------------

class Encoder {
public:
    explicit Encoder(EncoderDescriptor d) : desc_(std::move(d)) { desc_.validate(); }
    virtual ~Encoder() = default;
    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;

    const EncoderDescriptor& descriptor() const noexcept { return desc_; }
    nn::ParameterSet& parameters() noexcept { return params_; }
    const nn::ParameterSet& parameters() const noexcept { return params_; }

    /// [B, 1] volume predictions (m^3) for a canonicalised batch.
    virtual ad::Tensor forward(const PointBatch& batch, nn::Mode mode) const = 0;

    ad::Tensor forward(std::span<const PointCloud> clouds, nn::Mode mode) const {
        return forward(make_batch(clouds, desc_.point_count), mode);
    }

    /// Eval-mode predictions. Negative outputs are clamped to 0 (volumes are
    /// nonnegative) and counted; training uses forward() and is never clamped.
    std::vector<double> predict(std::span<const PointCloud> clouds) const {
        const auto out = forward(clouds, nn::Mode::eval);
        std::vector<double> v(out.values().begin(), out.values().end());
        for (auto& x : v) {
            if (x < 0.0) {
                x = 0.0;
                clamped_.fetch_add(1, std::memory_order_relaxed);
            }
        }
        return v;
    }
    std::size_t clamped_predictions() const noexcept { return clamped_.load(); }
    double predict(const PointCloud& cloud) const { return predict(std::span<const PointCloud>(&cloud, 1)).front(); }

    /// Final scalar output layer.
    const nn::Linear& output_layer() const { return head_.last(); }

    /// Human-readable parameter table.
    std::string describe() const {
        std::ostringstream os;
        os << "architecture: " << to_string(desc_.architecture) << "  input points: " << desc_.point_count << '\n';
        os << "parameter                                 shape            count\n";
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::string n = params_.name(i);
            n.resize(std::max<std::size_t>(n.size(), 42), ' ');
            std::string s = ad::shape_str(params_[i].shape());
            s.resize(std::max<std::size_t>(s.size(), 16), ' ');
            os << n << s << ' ' << params_[i].numel() << '\n';
        }
        os << "total trainable scalars: " << params_.scalar_count() << '\n';
        return os.str();
    }

protected:
    std::vector<std::size_t> head_with_output(std::size_t) const {
        auto w = desc_.head_widths;
        w.push_back(1);
        return w;
    }

    EncoderDescriptor desc_;
    nn::ParameterSet params_;
    nn::Head head_;
    mutable std::atomic<std::size_t> clamped_{0};
};

/// Shared point MLP, max pooling, regression head; optional learned 3x3 input
/// transform initialised at the identity.
class PointNetEncoder final : public Encoder {
public:
    PointNetEncoder(EncoderDescriptor d, std::uint64_t seed) : Encoder(std::move(d)) {
        Rng rng(seed);
        if (desc_.t_net) {
            tnet_mlp_ = nn::SharedMlp(params_, "tnet.mlp", 3, desc_.tnet_widths, rng);
            auto widths = desc_.tnet_head_widths;
            widths.push_back(9);
            tnet_head_ = nn::Head(params_, "tnet.fc", tnet_mlp_.out(), widths, rng);
            const auto& last = tnet_head_.last();
            auto w = const_cast<nn::Linear&>(last).weight.mutable_values();
            std::fill(w.begin(), w.end(), 0.0);
            auto b = const_cast<nn::Linear&>(last).bias.mutable_values();
            std::fill(b.begin(), b.end(), 0.0);
            b[0] = b[4] = b[8] = 1.0;
        }
        mlp_ = nn::SharedMlp(params_, "point.mlp", 3, desc_.point_widths, rng);
        head_ = nn::Head(params_, "head", mlp_.out(), head_with_output(0), rng);
    }

    using Encoder::forward;
    ad::Tensor forward(const PointBatch& batch, nn::Mode mode) const override {
        ad::Tensor x = batch.coordinates();
        if (desc_.t_net) {
            const auto t = tnet_head_(ad::segment_max(tnet_mlp_(x, mode), batch.points_per_cloud));
            x = ad::batched_transform(x, t, batch.points_per_cloud);
        }
        return head_(ad::segment_max(mlp_(x, mode), batch.points_per_cloud));
    }

private:
    nn::SharedMlp tnet_mlp_;
    nn::Head tnet_head_;
    nn::SharedMlp mlp_;
};

/// Set-abstraction levels (FPS centroids, ball-query groups, local PointNet on
/// centroid-relative coordinates), then a global PointNet over the last level.
class PointNetPlusPlusEncoder final : public Encoder {
public:
    PointNetPlusPlusEncoder(EncoderDescriptor d, std::uint64_t seed) : Encoder(std::move(d)) {
        Rng rng(seed);
        std::size_t channels = 0;
        for (std::size_t l = 0; l < desc_.levels.size(); ++l) {
            level_mlps_.emplace_back(params_, "sa" + std::to_string(l) + ".mlp", 3 + channels, desc_.levels[l].widths, rng);
            channels = level_mlps_.back().out();
        }
        global_mlp_ = nn::SharedMlp(params_, "global.mlp", 3 + channels, desc_.global_widths, rng);
        head_ = nn::Head(params_, "head", global_mlp_.out(), head_with_output(0), rng);
    }

    /// FPS centroid indices used for one cloud at one level.
    static std::vector<std::uint32_t> sample_centroids(std::span<const Vec3> pts, std::size_t count) {
        return farthest_point_indices(pts, count, lexicographic_min(pts));
    }

    using Encoder::forward;
    ad::Tensor forward(const PointBatch& batch, nn::Mode mode) const override {
        const std::size_t bsz = batch.batch;
        std::vector<Vec3> pos = batch.points;  // per-level positions, B * n contiguous
        std::size_t n = batch.points_per_cloud;
        ad::Tensor feats;  // undefined at level 0

        for (std::size_t l = 0; l < desc_.levels.size(); ++l) {
            const auto& lvl = desc_.levels[l];
            const std::size_t m = lvl.centroids, cap = lvl.max_neighbors;
            std::vector<Vec3> next_pos;
            next_pos.reserve(bsz * m);
            std::vector<double> rel;
            rel.reserve(bsz * m * cap * 3);
            std::vector<std::uint32_t> gather;
            gather.reserve(bsz * m * cap);
            for (std::size_t b = 0; b < bsz; ++b) {
                const std::span<const Vec3> p(pos.data() + b * n, n);
                const auto cent = sample_centroids(p, m);
                const auto groups = ball_query(p, cent, lvl.radius, cap);
                for (std::size_t c = 0; c < m; ++c) {
                    const Vec3 cp = p[cent[c]];
                    next_pos.push_back(cp);
                    for (auto j : groups[c]) {
                        const Vec3 d = p[j] - cp;
                        rel.insert(rel.end(), {d.x, d.y, d.z});
                        gather.push_back(static_cast<std::uint32_t>(b * n + j));
                    }
                }
            }
            ad::Tensor grouped = ad::Tensor::from({bsz * m * cap, 3}, std::move(rel));
            if (feats.defined()) grouped = ad::concat_cols({grouped, ad::gather_rows(feats, std::move(gather))});
            feats = ad::segment_max(level_mlps_[l](grouped, mode), cap);
            pos = std::move(next_pos);
            n = m;
        }
        PointBatch last{bsz, n, pos};
        const auto x = ad::concat_cols({last.coordinates(), feats});
        return head_(ad::segment_max(global_mlp_(x, mode), n));
    }

private:
    std::vector<nn::SharedMlp> level_mlps_;
    nn::SharedMlp global_mlp_;
};

/// Edge-convolution blocks over k-nearest-neighbour graphs rebuilt in each
/// block's input feature space, concatenated, embedded, max pooled, regressed.
class DgcnnEncoder final : public Encoder {
public:
    DgcnnEncoder(EncoderDescriptor d, std::uint64_t seed) : Encoder(std::move(d)) {
        Rng rng(seed);
        std::size_t channels = 3, concat = 0;
        for (std::size_t blk = 0; blk < desc_.edge_widths.size(); ++blk) {
            const auto& widths = desc_.edge_widths[blk];
            const std::string name = "edge" + std::to_string(blk);
            // First edge layer acts on concat(h_i, h_j - h_i); its weight is kept
            // as two halves so it can be applied per point before gathering.
            Block b;
            b.first_centre = nn::Linear(params_, name + ".0.centre", channels, widths[0], rng);
            const double bound = 1.0 / std::sqrt(static_cast<double>(2 * channels));
            std::vector<double> w(channels * widths[0]);
            for (auto& v : w) v = uniform(rng, -bound, bound);
            b.first_diff = params_.add(name + ".0.diff.weight", ad::Tensor::from({channels, widths[0]}, std::move(w), true));
            b.first_bn = nn::BatchNorm(params_, name + ".0.bn", widths[0]);
            b.rest = nn::SharedMlp(params_, name + ".rest", widths[0],
                                   std::vector<std::size_t>(widths.begin() + 1, widths.end()), rng);
            channels = widths.back();
            concat += channels;
            blocks_.push_back(std::move(b));
        }
        embed_ = nn::SharedMlp(params_, "embed", concat, {desc_.embed_width}, rng);
        head_ = nn::Head(params_, "head", desc_.embed_width, head_with_output(0), rng);
    }

    using Encoder::forward;
    ad::Tensor forward(const PointBatch& batch, nn::Mode mode) const override {
        const std::size_t bsz = batch.batch, n = batch.points_per_cloud, k = desc_.k;
        ad::Tensor h = batch.coordinates();
        std::vector<ad::Tensor> outputs;
        for (const auto& blk : blocks_) {
            const auto nbrs = knn_graph(h.values(), bsz, n, h.shape()[1], k);
            outputs.push_back(edge_conv(blk, h, nbrs, mode));
            h = outputs.back();
        }
        const auto x = outputs.size() == 1 ? outputs.front() : ad::concat_cols(outputs);
        return head_(ad::segment_max(embed_(x, mode), n));
    }

    /// Reference path: explicit concat(h_i, h_j - h_i) through the first edge
    /// layer (pre-normalisation). Equal to the factorised form used in forward.
    ad::Tensor first_edge_layer_reference(std::size_t block, const ad::Tensor& h,
                                          std::span<const std::uint32_t> nbrs) const {
        const auto& blk = blocks_.at(block);
        const auto w = ad::Tensor::from({2 * h.shape()[1], blk.first_centre.out()}, stacked_weight(blk));
        return ad::affine(edge_features(h, nbrs, desc_.k), w, blk.first_centre.bias);
    }

    /// Factorised first edge layer (pre-normalisation).
    ad::Tensor first_edge_layer(std::size_t block, const ad::Tensor& h, std::span<const std::uint32_t> nbrs) const {
        return first_layer(blocks_.at(block), h, nbrs);
    }

private:
    struct Block {
        nn::Linear first_centre;  ///< weight acting on h_i, plus the layer bias
        ad::Tensor first_diff;    ///< weight acting on h_j - h_i
        nn::BatchNorm first_bn;
        nn::SharedMlp rest;
    };

    static std::vector<double> stacked_weight(const Block& blk) {
        std::vector<double> w(blk.first_centre.weight.values().begin(), blk.first_centre.weight.values().end());
        w.insert(w.end(), blk.first_diff.values().begin(), blk.first_diff.values().end());
        return w;
    }

    // h_i Wc + (h_j - h_i) Wd + b  ==  h_i (Wc - Wd) + b  +  h_j Wd
    ad::Tensor first_layer(const Block& blk, const ad::Tensor& h, std::span<const std::uint32_t> nbrs) const {
        const std::size_t k = desc_.k;
        const auto per_centre = ad::affine(h, ad::sub(blk.first_centre.weight, blk.first_diff), blk.first_centre.bias);
        const auto per_neighbor = ad::matmul(h, blk.first_diff);
        std::vector<std::uint32_t> centre(nbrs.size());
        for (std::size_t e = 0; e < nbrs.size(); ++e) centre[e] = static_cast<std::uint32_t>(e / k);
        return ad::add(ad::gather_rows(per_centre, std::move(centre)),
                       ad::gather_rows(per_neighbor, std::vector<std::uint32_t>(nbrs.begin(), nbrs.end())));
    }

    ad::Tensor edge_conv(const Block& blk, const ad::Tensor& h, std::span<const std::uint32_t> nbrs, nn::Mode mode) const {
        const bool train = mode == nn::Mode::train;
        if (blk.rest.empty()) {
            // single-layer edge MLP: the max over neighbours fuses with the layer
            const auto per_centre = ad::affine(h, ad::sub(blk.first_centre.weight, blk.first_diff), blk.first_centre.bias);
            const auto per_neighbor = ad::matmul(h, blk.first_diff);
            return ad::edge_max_bn_relu(per_centre, per_neighbor, std::vector<std::uint32_t>(nbrs.begin(), nbrs.end()),
                                        desc_.k, blk.first_bn.gamma, blk.first_bn.beta, *blk.first_bn.stats, train,
                                        blk.first_bn.momentum);
        }
        auto e = ad::relu(blk.first_bn(first_layer(blk, h, nbrs), train));
        if (!blk.rest.empty()) e = blk.rest(e, mode);
        return ad::segment_max(e, desc_.k);
    }

    std::vector<Block> blocks_;
    nn::SharedMlp embed_;
};

inline std::unique_ptr<Encoder> make_encoder(const EncoderDescriptor& d, std::uint64_t seed) {
    switch (d.architecture) {
        case Architecture::pointnet: return std::make_unique<PointNetEncoder>(d, seed);
        case Architecture::pointnetpp: return std::make_unique<PointNetPlusPlusEncoder>(d, seed);
        case Architecture::dgcnn: return std::make_unique<DgcnnEncoder>(d, seed);
    }
    throw std::invalid_argument("make_encoder: unknown architecture");
}

/// Desk-scale descriptors: the same architectures with narrower layers and
/// fewer centroids/blocks, sized for CPU training on a few thousand clouds.
inline EncoderDescriptor desk_descriptor(Architecture a, std::size_t point_count = 2048) {
    EncoderDescriptor d;
    d.architecture = a;
    d.point_count = point_count;
    d.head_widths = {32, 16};
    d.point_widths = {16, 32, 64};
    d.levels = {{128, 2.5, 16, {16, 32}}, {32, 5.0, 16, {32, 64}}};
    d.global_widths = {64, 128};
    // one xyz-graph edge block keeps DGCNN training inside a CPU budget
    d.k = 10;
    d.edge_widths = {{16}};
    d.embed_width = 32;
    return d;
}

}  // namespace forestvol
