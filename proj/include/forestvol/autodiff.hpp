#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major float64
// tensors. Only the primitives the point-set encoders need are provided; there
// is no general broadcasting.
//
// A Tensor is a shared handle to a graph node. Ops record a backward closure
// on their output; ad::backward(loss) walks the graph in reverse topological
// order and accumulates d(loss)/d(node) into every node that requires grad.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace forestvol::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  ///< empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("Tensor: shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(values.size()));
        }
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
    std::size_t cols() const {
        return node_->shape.size() < 2 ? 1 : node_->value.size() / std::max<std::size_t>(1, node_->shape[0]);
    }
    std::span<const double> values() const { return node_->value; }
    /// Mutable access for optimizers and parameter loading.
    std::span<double> mutable_values() { return node_->value; }
    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    double operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Same values, cut from the graph.
    Tensor detach() const { return from(shape(), node_->value, false); }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace detail {

inline ConstMatMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// Output node wired to `parents`; grads are tracked if any parent tracks them.
inline std::shared_ptr<Node> make_output(Shape shape, std::vector<double> value,
                                         std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

inline void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar. Gradients accumulate; call zero_grad on
/// parameters between steps.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node().ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Primitives

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    detail::as_matrix(out, m, n).noalias() = detail::as_matrix(a.node().value, m, k) * detail::as_matrix(b.node().value, k, n);
    auto node = detail::make_output({m, n}, std::move(out), {a.ptr(), b.ptr()});
    if (node->requires_grad) {
        node->backward = [m, k, n](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            const auto g = detail::as_matrix(std::as_const(self.grad), m, n);
            if (pa.requires_grad) {
                detail::as_matrix(pa.ensure_grad(), m, k).noalias() += g * detail::as_matrix(std::as_const(pb.value), k, n).transpose();
            }
            if (pb.requires_grad) {
                detail::as_matrix(pb.ensure_grad(), k, n).noalias() += detail::as_matrix(std::as_const(pa.value), m, k).transpose() * g;
            }
        };
    }
    return Tensor(node);
}

/// Per-row shared affine map x W + b: [m,k] x [k,n] + [n] -> [m,n]. This is a
/// 1x1 convolution over points when rows are points.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require_2d(x, "affine");
    detail::require_2d(w, "affine");
    const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
    if (w.shape()[0] != k || b.numel() != n) {
        throw ShapeError("affine: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    auto om = detail::as_matrix(out, m, n);
    om.noalias() = detail::as_matrix(x.node().value, m, k) * detail::as_matrix(w.node().value, k, n);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.node().value.data(), static_cast<Eigen::Index>(n));
    auto node = detail::make_output({m, n}, std::move(out), {x.ptr(), w.ptr(), b.ptr()});
    if (node->requires_grad) {
        node->backward = [m, k, n](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            Node& pb = *self.parents[2];
            const auto g = detail::as_matrix(std::as_const(self.grad), m, n);
            if (px.requires_grad) {
                detail::as_matrix(px.ensure_grad(), m, k).noalias() += g * detail::as_matrix(std::as_const(pw.value), k, n).transpose();
            }
            if (pw.requires_grad) {
                detail::as_matrix(pw.ensure_grad(), k, n).noalias() += detail::as_matrix(std::as_const(px.value), m, k).transpose() * g;
            }
            if (pb.requires_grad) {
                Eigen::Map<Eigen::RowVectorXd>(pb.ensure_grad().data(), static_cast<Eigen::Index>(n)) += g.colwise().sum();
            }
        };
    }
    return Tensor(node);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto node = detail::make_output(a.shape(), std::move(out), {a.ptr(), b.ptr()});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            for (int p = 0; p < 2; ++p) {
                Node& par = *self.parents[p];
                if (!par.requires_grad) continue;
                auto& g = par.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Tensor(node);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto node = detail::make_output(a.shape(), std::move(out), {a.ptr(), b.ptr()});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            for (int p = 0; p < 2; ++p) {
                Node& par = *self.parents[p];
                if (!par.requires_grad) continue;
                auto& g = par.ensure_grad();
                const double sign = p == 0 ? 1.0 : -1.0;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
            }
        };
    }
    return Tensor(node);
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
    auto node = detail::make_output(a.shape(), std::move(out), {a.ptr()});
    if (node->requires_grad) {
        node->backward = [c](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
        };
    }
    return Tensor(node);
}

inline Tensor relu(const Tensor& a) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    {
        const double* __restrict__ x = a.node().value.data();
        double* __restrict__ o = out.data();
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
    }
    auto node = detail::make_output(a.shape(), std::move(out), {a.ptr()});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            Node& p = *self.parents[0];
            auto& g = p.ensure_grad();
            const double* __restrict__ x = p.value.data();
            const double* __restrict__ up = self.grad.data();
            double* __restrict__ gp = g.data();
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += x[i] > 0.0 ? up[i] : 0.0;
        };
    }
    return Tensor(node);
}

/// Running statistics of a batch-norm layer (not trained by gradient).
struct BatchNormStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormStats(std::size_t channels = 0) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-column normalisation over rows, then gamma * xhat + beta.
/// Training mode uses batch statistics (biased variance) and updates
/// `stats` as running = momentum * running + (1 - momentum) * batch.
/// Eval mode is the fixed affine map given by the running statistics.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                         double momentum = 0.9, double eps = 1e-5) {
    detail::require_2d(x, "batch_norm");
    const std::size_t m = x.shape()[0], c = x.shape()[1];
    if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c) {
        throw ShapeError("batch_norm: parameters do not match " + shape_str(x.shape()));
    }
    const auto& xv = x.node().value;
    std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
    if (training) {
        if (m == 0) throw ShapeError("batch_norm: empty batch");
        std::vector<double> var(c, 0.0);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
        for (auto& v : mean) v /= static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = xv[r * c + j] - mean[j];
                var[j] += d * d;
            }
        for (std::size_t j = 0; j < c; ++j) {
            var[j] /= static_cast<double>(m);
            inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
            stats.running_mean[j] = momentum * stats.running_mean[j] + (1.0 - momentum) * mean[j];
            stats.running_var[j] = momentum * stats.running_var[j] + (1.0 - momentum) * var[j];
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mean[j] = stats.running_mean[j];
            inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + eps);
        }
    }
    std::vector<double> xhat(m * c), out(m * c);
    {
        const std::vector<double> gv(gamma.values().begin(), gamma.values().end());
        const std::vector<double> bv(beta.values().begin(), beta.values().end());
        const double* __restrict__ X = xv.data();
        double* __restrict__ XH = xhat.data();
        double* __restrict__ O = out.data();
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t i = r * c + j;
                XH[i] = (X[i] - mean[j]) * inv_std[j];
                O[i] = gv[j] * XH[i] + bv[j];
            }
    }
    auto node = detail::make_output({m, c}, std::move(out), {x.ptr(), gamma.ptr(), beta.ptr()});
    if (node->requires_grad) {
        node->backward = [m, c, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            const auto& g = self.grad;
            std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    sum_g[j] += g[r * c + j];
                    sum_gx[j] += g[r * c + j] * xhat[r * c + j];
                }
            if (pg.requires_grad) {
                auto& gg = pg.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
            }
            if (pb.requires_grad) {
                auto& gb = pb.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
            }
            if (!px.requires_grad) return;
            auto& gx = px.ensure_grad();
            const double inv_m = 1.0 / static_cast<double>(m);
            std::vector<double> a(c), b(c), d(c);
            for (std::size_t j = 0; j < c; ++j) {
                a[j] = pg.value[j] * inv_std[j];
                b[j] = training ? inv_m * sum_g[j] : 0.0;
                d[j] = training ? inv_m * sum_gx[j] : 0.0;
            }
            const double* __restrict__ G = g.data();
            const double* __restrict__ XH = xhat.data();
            double* __restrict__ GX = gx.data();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t i = r * c + j;
                    GX[i] += a[j] * (G[i] - b[j] - XH[i] * d[j]);
                }
        };
    }
    return Tensor(node);
}

/// Max over consecutive groups of `group` rows: [S*group, C] -> [S, C].
/// The gradient goes to the first row attaining each maximum.
inline Tensor segment_max(const Tensor& x, std::size_t group) {
    detail::require_2d(x, "segment_max");
    const std::size_t rows = x.shape()[0], c = x.shape()[1];
    if (group == 0 || rows % group != 0) {
        throw ShapeError("segment_max: " + std::to_string(rows) + " rows do not split into groups of " +
                         std::to_string(group));
    }
    const std::size_t s = rows / group;
    const auto& xv = x.node().value;
    std::vector<double> out(s * c, -std::numeric_limits<double>::infinity());
    std::vector<std::uint32_t> arg(s * c, 0);
    for (std::size_t g = 0; g < s; ++g)
        for (std::size_t r = 0; r < group; ++r) {
            const std::size_t row = g * group + r;
            for (std::size_t j = 0; j < c; ++j) {
                const double v = xv[row * c + j];
                if (v > out[g * c + j] || r == 0) {
                    out[g * c + j] = v;
                    arg[g * c + j] = static_cast<std::uint32_t>(row);
                }
            }
        }
    auto node = detail::make_output({s, c}, std::move(out), {x.ptr()});
    if (node->requires_grad) {
        node->backward = [c, arg = std::move(arg)](Node& self) {
            auto& gx = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * c + (i % c)] += self.grad[i];
        };
    }
    return Tensor(node);
}

/// Column-wise concatenation of tensors with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
    const std::size_t m = parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        widths.push_back(p.shape()[1]);
        total += p.shape()[1];
        parents.push_back(p.ptr());
    }
    std::vector<double> out(m * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].node().value;
        for (std::size_t r = 0; r < m; ++r)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + off));
        off += widths[k];
    }
    auto node = detail::make_output({m, total}, std::move(out), std::move(parents));
    if (node->requires_grad) {
        node->backward = [m, total, widths = std::move(widths)](Node& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                Node& p = *self.parents[k];
                if (p.requires_grad) {
                    auto& g = p.ensure_grad();
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += self.grad[r * total + off + j];
                }
                off += widths[k];
            }
        };
    }
    return Tensor(node);
}

/// Row gather: out[i] = x[indices[i]]. Backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, std::vector<std::uint32_t> indices) {
    detail::require_2d(x, "gather_rows");
    const std::size_t rows = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(indices.size() * c);
    const auto& xv = x.node().value;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) {
            throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " + shape_str(x.shape()));
        }
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    auto node = detail::make_output({indices.size(), c}, std::move(out), {x.ptr()});
    if (node->requires_grad) {
        node->backward = [c, indices = std::move(indices)](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) g[indices[i] * c + j] += self.grad[i * c + j];
        };
    }
    return Tensor(node);
}

/// Fused graph edge layer. For centre row i with neighbour rows nb(i, 0..k-1):
///   e_is = p_i + q_nb(i,s)
///   y_i  = max_s relu(gamma * (e_is - mean) * inv_std + beta)
/// with batch-norm statistics over all M*k edges. Values and gradients match
/// gather_rows/add/batch_norm/relu/segment_max composed on the materialised
/// [M*k, C] edge matrix, which this never allocates.
inline Tensor edge_max_bn_relu(const Tensor& p, const Tensor& q, std::vector<std::uint32_t> neighbors, std::size_t k,
                               const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                               double momentum = 0.9, double eps = 1e-5) {
    detail::require_2d(p, "edge_max_bn_relu");
    detail::require_2d(q, "edge_max_bn_relu");
    const std::size_t m = p.shape()[0], c = p.shape()[1], qrows = q.shape()[0];
    if (q.shape()[1] != c || k == 0 || neighbors.size() != m * k) {
        throw ShapeError("edge_max_bn_relu: " + shape_str(p.shape()) + ", " + shape_str(q.shape()) + ", " +
                         std::to_string(neighbors.size()) + " neighbours for k = " + std::to_string(k));
    }
    if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c) {
        throw ShapeError("edge_max_bn_relu: batch-norm parameters do not match width " + std::to_string(c));
    }
    for (auto j : neighbors)
        if (j >= qrows) throw ShapeError("edge_max_bn_relu: neighbour index out of range");
    const auto& pv = p.node().value;
    const auto& qv = q.node().value;
    const std::size_t edges = m * k;

    std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
    if (training) {
        if (edges == 0) throw ShapeError("edge_max_bn_relu: empty batch");
        std::vector<double> var(c, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t s = 0; s < k; ++s) {
                const double* qr = &qv[neighbors[i * k + s] * c];
                for (std::size_t j = 0; j < c; ++j) mean[j] += pv[i * c + j] + qr[j];
            }
        for (auto& v : mean) v /= static_cast<double>(edges);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t s = 0; s < k; ++s) {
                const double* qr = &qv[neighbors[i * k + s] * c];
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = (pv[i * c + j] + qr[j]) - mean[j];
                    var[j] += d * d;
                }
            }
        for (std::size_t j = 0; j < c; ++j) {
            var[j] /= static_cast<double>(edges);
            inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
            stats.running_mean[j] = momentum * stats.running_mean[j] + (1.0 - momentum) * mean[j];
            stats.running_var[j] = momentum * stats.running_var[j] + (1.0 - momentum) * var[j];
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mean[j] = stats.running_mean[j];
            inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + eps);
        }
    }

    // winning slot per (i, channel); first slot on ties, like segment_max
    std::vector<double> out(m * c, -std::numeric_limits<double>::infinity());
    std::vector<std::uint32_t> arg(m * c, 0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t s = 0; s < k; ++s) {
            const double* qr = &qv[neighbors[i * k + s] * c];
            for (std::size_t j = 0; j < c; ++j) {
                const double xhat = ((pv[i * c + j] + qr[j]) - mean[j]) * inv_std[j];
                const double z = gamma[j] * xhat + beta[j];
                const double y = z > 0.0 ? z : 0.0;
                if (y > out[i * c + j] || s == 0) {
                    out[i * c + j] = y;
                    arg[i * c + j] = static_cast<std::uint32_t>(s);
                }
            }
        }

    auto node = detail::make_output({m, c}, std::move(out), {p.ptr(), q.ptr(), gamma.ptr(), beta.ptr()});
    if (node->requires_grad) {
        node->backward = [m, c, k, edges, training, neighbors = std::move(neighbors), arg = std::move(arg),
                          mean = std::move(mean), inv_std = std::move(inv_std)](Node& self) {
            Node& pp = *self.parents[0];
            Node& pq = *self.parents[1];
            Node& pg = *self.parents[2];
            Node& pb = *self.parents[3];
            const auto& pv = pp.value;
            const auto& qv = pq.value;
            // upstream gradient at the batch-norm output, nonzero only on winning edges with z > 0
            std::vector<double> g_win(m * c, 0.0);
            std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t o = i * c + j;
                    if (!(self.value[o] > 0.0)) continue;
                    const std::uint32_t nb = neighbors[i * k + arg[o]];
                    const double xhat = ((pv[o] + qv[nb * c + j]) - mean[j]) * inv_std[j];
                    g_win[o] = self.grad[o];
                    sum_g[j] += g_win[o];
                    sum_gx[j] += g_win[o] * xhat;
                }
            if (pg.requires_grad) {
                auto& gg = pg.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
            }
            if (pb.requires_grad) {
                auto& gb = pb.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
            }
            if (!pp.requires_grad && !pq.requires_grad) return;
            const double inv_e = 1.0 / static_cast<double>(edges);
            std::vector<double> gp(m * c, 0.0);
            std::vector<double> gq(pq.value.size(), 0.0);
            // per channel: gx = a * (g - b - xhat * d), xhat = (e - mean) * inv_std
            std::vector<double> a(c), b(c), d(c);
            for (std::size_t j = 0; j < c; ++j) {
                a[j] = pg.value[j] * inv_std[j];
                b[j] = training ? inv_e * sum_g[j] : 0.0;
                d[j] = training ? inv_e * sum_gx[j] : 0.0;
            }
            const double* __restrict__ P = pv.data();
            const double* __restrict__ Q = qv.data();
            const double* __restrict__ GW = g_win.data();
            const std::uint32_t* __restrict__ AR = arg.data();
            double* __restrict__ GP = gp.data();
            double* __restrict__ GQ = gq.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t s = 0; s < k; ++s) {
                    const std::size_t nb = neighbors[i * k + s];
                    const std::uint32_t slot = static_cast<std::uint32_t>(s);
                    for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t o = i * c + j;
                        const double g = AR[o] == slot ? GW[o] : 0.0;
                        const double xhat = ((P[o] + Q[nb * c + j]) - mean[j]) * inv_std[j];
                        const double gx = a[j] * (g - b[j] - xhat * d[j]);
                        GP[o] += gx;
                        GQ[nb * c + j] += gx;
                    }
                }
            if (pp.requires_grad) {
                auto& g = pp.ensure_grad();
                for (std::size_t t = 0; t < g.size(); ++t) g[t] += gp[t];
            }
            if (pq.requires_grad) {
                auto& g = pq.ensure_grad();
                for (std::size_t t = 0; t < g.size(); ++t) g[t] += gq[t];
            }
        };
    }
    return Tensor(node);
}

/// Per-sample linear map of points: rows of sample b (N consecutive rows of
/// width C) are right-multiplied by the C x C matrix stored row-major in
/// mats[b]. [B*N, C] x [B, C*C] -> [B*N, C].
inline Tensor batched_transform(const Tensor& x, const Tensor& mats, std::size_t points_per_sample) {
    detail::require_2d(x, "batched_transform");
    detail::require_2d(mats, "batched_transform");
    const std::size_t c = x.shape()[1];
    const std::size_t b = mats.shape()[0];
    if (mats.shape()[1] != c * c || points_per_sample == 0 || x.shape()[0] != b * points_per_sample) {
        throw ShapeError("batched_transform: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(mats.shape()) + " with " + std::to_string(points_per_sample) + " points per sample");
    }
    const std::size_t n = points_per_sample;
    std::vector<double> out(x.numel());
    for (std::size_t s = 0; s < b; ++s) {
        detail::as_matrix(out, b * n, c).middleRows(static_cast<Eigen::Index>(s * n), static_cast<Eigen::Index>(n)).noalias() =
            detail::as_matrix(x.node().value, b * n, c).middleRows(static_cast<Eigen::Index>(s * n), static_cast<Eigen::Index>(n)) *
            ConstMatMap(mats.node().value.data() + s * c * c, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
    }
    auto node = detail::make_output(x.shape(), std::move(out), {x.ptr(), mats.ptr()});
    if (node->requires_grad) {
        node->backward = [b, n, c](Node& self) {
            Node& px = *self.parents[0];
            Node& pm = *self.parents[1];
            const auto g = detail::as_matrix(std::as_const(self.grad), b * n, c);
            for (std::size_t s = 0; s < b; ++s) {
                const auto gs = g.middleRows(static_cast<Eigen::Index>(s * n), static_cast<Eigen::Index>(n));
                const ConstMatMap t(pm.value.data() + s * c * c, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
                if (px.requires_grad) {
                    detail::as_matrix(px.ensure_grad(), b * n, c)
                        .middleRows(static_cast<Eigen::Index>(s * n), static_cast<Eigen::Index>(n))
                        .noalias() += gs * t.transpose();
                }
                if (pm.requires_grad) {
                    MatMap(pm.ensure_grad().data() + s * c * c, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c))
                        .noalias() += detail::as_matrix(std::as_const(px.value), b * n, c)
                                          .middleRows(static_cast<Eigen::Index>(s * n), static_cast<Eigen::Index>(n))
                                          .transpose() *
                                      gs;
                }
            }
        };
    }
    return Tensor(node);
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto node = detail::make_output({1}, {s}, {a.ptr()});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (auto& v : g) v += self.grad[0];
        };
    }
    return Tensor(node);
}

/// (1/n) sum (pred_i - target_i)^2 over all elements of `pred`.
inline Tensor mse_loss(const Tensor& pred, std::span<const double> target) {
    if (pred.numel() != target.size() || target.empty()) {
        throw ShapeError("mse_loss: " + std::to_string(pred.numel()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
    }
    const auto n = static_cast<double>(target.size());
    std::vector<double> resid(target.size());
    double s = 0.0;
    for (std::size_t i = 0; i < resid.size(); ++i) {
        resid[i] = pred[i] - target[i];
        s += resid[i] * resid[i];
    }
    auto node = detail::make_output({1}, {s / n}, {pred.ptr()});
    if (node->requires_grad) {
        node->backward = [n, resid = std::move(resid)](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * 2.0 * resid[i] / n;
        };
    }
    return Tensor(node);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    auto node = detail::make_output(std::move(shape), a.node().value, {a.ptr()});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        };
    }
    return Tensor(node);
}

}  // namespace forestvol::ad
