#pragma once

// Static 3-d tree over a point array. Neighbours are ordered by
// (squared distance, index), which makes results identical to a brute-force
// scan using the same tie rule.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "forestvol/geometry.hpp"

namespace forestvol {

struct Neighbor {
    std::uint32_t index = 0;
    double squared_distance = 0.0;

    friend bool operator<(const Neighbor& a, const Neighbor& b) noexcept {
        return a.squared_distance != b.squared_distance ? a.squared_distance < b.squared_distance
                                                        : a.index < b.index;
    }
    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

class KdTree {
public:
    static constexpr std::uint32_t kNoExclude = std::numeric_limits<std::uint32_t>::max();

    KdTree() = default;

    explicit KdTree(std::span<const Vec3> points, std::uint32_t leaf_size = 8)
        : points_(points.begin(), points.end()), leaf_size_(std::max<std::uint32_t>(1, leaf_size)) {
        index_.resize(points_.size());
        for (std::uint32_t i = 0; i < index_.size(); ++i) index_[i] = i;
        if (!points_.empty()) {
            nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
            build(0, static_cast<std::uint32_t>(points_.size()));
            ordered_.reserve(points_.size());
            for (auto i : index_) ordered_.push_back(points_[i]);
        }
    }

    std::size_t size() const noexcept { return points_.size(); }
    const std::vector<Vec3>& points() const noexcept { return points_; }

    /// k nearest points to `query`, sorted; `exclude` skips one index (self).
    std::vector<Neighbor> knn(const Vec3& query, std::size_t k, std::uint32_t exclude = kNoExclude) const {
        std::vector<Neighbor> heap;
        knn_into(query, k, exclude, heap);
        return heap;
    }

    /// As knn, reusing `out` as scratch space.
    void knn_into(const Vec3& query, std::size_t k, std::uint32_t exclude, std::vector<Neighbor>& out) const {
        out.clear();
        if (k == 0 || nodes_.empty()) return;
        out.reserve(k + 1);
        search_knn(0, query, k, exclude, out);
        std::sort_heap(out.begin(), out.end());
    }

    /// Nearest point other than `exclude`.
    Neighbor nearest(const Vec3& query, std::uint32_t exclude = kNoExclude) const {
        auto r = knn(query, 1, exclude);
        return r.empty() ? Neighbor{kNoExclude, std::numeric_limits<double>::infinity()} : r.front();
    }

    /// All points with squared distance <= radius^2, sorted.
    std::vector<Neighbor> radius_search(const Vec3& query, double radius) const {
        std::vector<Neighbor> out;
        if (nodes_.empty()) return out;
        search_radius(0, query, radius * radius, out);
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    struct Node {
        Aabb box;
        std::uint32_t begin = 0, end = 0;
        std::int32_t left = -1, right = -1;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end) {
        Node node;
        node.begin = begin;
        node.end = end;
        for (std::uint32_t i = begin; i < end; ++i) node.box.expand(points_[index_[i]]);
        const auto id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back(node);
        if (end - begin <= leaf_size_) return id;

        const Vec3 ext = node.box.extent();
        const int axis = (ext.x >= ext.y && ext.x >= ext.z) ? 0 : (ext.y >= ext.z ? 1 : 2);
        const std::uint32_t mid = begin + (end - begin) / 2;
        std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             const double pa = points_[a][axis], pb = points_[b][axis];
                             return pa != pb ? pa < pb : a < b;
                         });
        const auto l = build(begin, mid);
        const auto r = build(mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    static double box_distance(const Aabb& b, const Vec3& q) noexcept {
        double d = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double v = q[a];
            const double lo = b.lo[a], hi = b.hi[a];
            const double e = v < lo ? lo - v : (v > hi ? v - hi : 0.0);
            d += e * e;
        }
        return d;
    }

    void search_knn(std::int32_t id, const Vec3& q, std::size_t k, std::uint32_t exclude,
                    std::vector<Neighbor>& heap) const {
        const Node& node = nodes_[id];
        if (heap.size() == k && box_distance(node.box, q) > heap.front().squared_distance) return;
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = index_[i];
                if (idx == exclude) continue;
                const double d = squared_distance(q, ordered_[i]);
                if (heap.size() == k && d > heap.front().squared_distance) continue;
                const Neighbor cand{idx, d};
                if (heap.size() < k) {
                    heap.push_back(cand);
                    std::push_heap(heap.begin(), heap.end());
                } else if (cand < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end());
                    heap.back() = cand;
                    std::push_heap(heap.begin(), heap.end());
                }
            }
            return;
        }
        const double dl = box_distance(nodes_[node.left].box, q);
        const double dr = box_distance(nodes_[node.right].box, q);
        if (dl <= dr) {
            search_knn(node.left, q, k, exclude, heap);
            search_knn(node.right, q, k, exclude, heap);
        } else {
            search_knn(node.right, q, k, exclude, heap);
            search_knn(node.left, q, k, exclude, heap);
        }
    }

    void search_radius(std::int32_t id, const Vec3& q, double r2, std::vector<Neighbor>& out) const {
        const Node& node = nodes_[id];
        if (box_distance(node.box, q) > r2) return;
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const double d = squared_distance(q, ordered_[i]);
                if (d <= r2) out.push_back({index_[i], d});
            }
            return;
        }
        search_radius(node.left, q, r2, out);
        search_radius(node.right, q, r2, out);
    }

    std::vector<Vec3> points_;
    std::vector<Vec3> ordered_;  ///< points_ permuted by index_, so leaves scan contiguously
    std::vector<std::uint32_t> index_;
    std::vector<Node> nodes_;
    std::uint32_t leaf_size_ = 8;
};

}  // namespace forestvol
