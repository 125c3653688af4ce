#pragma once

// Layers, parameter bookkeeping, AdamW and cosine annealing with warm restarts.

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "forestvol/autodiff.hpp"
#include "forestvol/random.hpp"

namespace forestvol::nn {

using ad::Tensor;

/// Named trainable tensors plus named non-trainable buffers (batch-norm
/// running statistics). Registration order defines serialization order.
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (index_.contains(name)) throw std::logic_error("duplicate parameter name " + name);
        index_[name] = params_.size();
        names_.push_back(name);
        params_.push_back(std::move(t));
        return params_.back();
    }

    ad::BatchNormStats& add_buffer(const std::string& name, std::size_t channels) {
        buffers_.push_back({name, std::make_unique<ad::BatchNormStats>(channels)});
        return *buffers_.back().stats;
    }

    std::size_t size() const noexcept { return params_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor& operator[](std::size_t i) { return params_[i]; }
    const Tensor& operator[](std::size_t i) const { return params_[i]; }
    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return params_[it->second];
    }

    struct Buffer {
        std::string name;
        std::unique_ptr<ad::BatchNormStats> stats;
    };
    std::vector<Buffer>& buffers() noexcept { return buffers_; }
    const std::vector<Buffer>& buffers() const noexcept { return buffers_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<Buffer> buffers_;
};

/// Fully connected layer, PyTorch-style uniform(-1/sqrt(in), 1/sqrt(in)) init.
struct Linear {
    Tensor weight;  ///< [in, out]
    Tensor bias;    ///< [out]

    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out), b(out);
        for (auto& v : w) v = uniform(rng, -bound, bound);
        for (auto& v : b) v = uniform(rng, -bound, bound);
        weight = ps.add(name + ".weight", Tensor::from({in, out}, std::move(w), true));
        bias = ps.add(name + ".bias", Tensor::from({out}, std::move(b), true));
    }

    Tensor operator()(const Tensor& x) const { return ad::affine(x, weight, bias); }
    std::size_t in() const { return weight.shape()[0]; }
    std::size_t out() const { return weight.shape()[1]; }
};

struct BatchNorm {
    Tensor gamma;
    Tensor beta;
    ad::BatchNormStats* stats = nullptr;
    double momentum = 0.9;

    BatchNorm() = default;
    BatchNorm(ParameterSet& ps, const std::string& name, std::size_t channels, double momentum_ = 0.9)
        : momentum(momentum_) {
        gamma = ps.add(name + ".gamma", Tensor::from({channels}, std::vector<double>(channels, 1.0), true));
        beta = ps.add(name + ".beta", Tensor::zeros({channels}, true));
        stats = &ps.add_buffer(name + ".running", channels);
    }

    Tensor operator()(const Tensor& x, bool training) const {
        return ad::batch_norm(x, gamma, beta, *stats, training, momentum);
    }
};

enum class Mode { train, eval };

/// Shared per-point MLP: each width is affine -> batch norm -> ReLU.
class SharedMlp {
public:
    SharedMlp() = default;
    SharedMlp(ParameterSet& ps, const std::string& name, std::size_t in, const std::vector<std::size_t>& widths,
              Rng& rng) {
        for (std::size_t i = 0; i < widths.size(); ++i) {
            const std::string n = name + "." + std::to_string(i);
            layers_.push_back({Linear(ps, n, in, widths[i], rng), BatchNorm(ps, n + ".bn", widths[i])});
            in = widths[i];
        }
    }

    Tensor operator()(Tensor x, Mode mode) const {
        for (const auto& [lin, bn] : layers_) x = ad::relu(bn(lin(x), mode == Mode::train));
        return x;
    }

    std::size_t out() const { return layers_.empty() ? 0 : layers_.back().first.out(); }
    bool empty() const noexcept { return layers_.empty(); }

private:
    std::vector<std::pair<Linear, BatchNorm>> layers_;
};

/// Fully connected stack: ReLU between layers, linear output.
class Head {
public:
    Head() = default;
    Head(ParameterSet& ps, const std::string& name, std::size_t in, const std::vector<std::size_t>& widths, Rng& rng) {
        for (std::size_t i = 0; i < widths.size(); ++i) {
            layers_.emplace_back(ps, name + "." + std::to_string(i), in, widths[i], rng);
            in = widths[i];
        }
    }

    Tensor operator()(Tensor x) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            x = layers_[i](x);
            if (i + 1 < layers_.size()) x = ad::relu(x);
        }
        return x;
    }

    const Linear& last() const { return layers_.back(); }

private:
    std::vector<Linear> layers_;
};

// ---------------------------------------------------------------------------

/// Cosine annealing with warm restarts:
///   lr(t) = eta_min + (eta_0 - eta_min) * (1 + cos(pi * t_cur / T_i)) / 2
/// where T_i starts at t0 and is multiplied by t_mult after every restart.
struct CosineWarmRestarts {
    double eta_0 = 1e-3;
    double eta_min = 1e-6;
    long t0 = 200;
    long t_mult = 1;

    void validate() const {
        if (t0 < 1) throw std::invalid_argument("scheduler: T0 must be >= 1");
        if (t_mult < 1) throw std::invalid_argument("scheduler: T_mult must be >= 1");
        if (!(eta_min >= 0.0) || !(eta_0 >= eta_min)) throw std::invalid_argument("scheduler: need 0 <= eta_min <= eta_0");
    }

    /// Position within the current cycle and that cycle's length.
    std::pair<long, long> cycle_position(long step) const {
        if (step < 0) throw std::invalid_argument("scheduler: step must be >= 0");
        long t_cur = step, t_i = t0;
        while (t_cur >= t_i) {
            t_cur -= t_i;
            t_i *= t_mult;
        }
        return {t_cur, t_i};
    }

    double operator()(long step) const {
        const auto [t_cur, t_i] = cycle_position(step);
        return eta_min + (eta_0 - eta_min) * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t_cur) / t_i)) / 2.0;
    }
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    long step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    /// One update of every parameter in `ps` at learning rate `lr`. Parameters
    /// without a gradient are treated as having a zero gradient.
    void step(ParameterSet& ps, double lr) {
        if (m.empty()) {
            for (std::size_t i = 0; i < ps.size(); ++i) {
                m.emplace_back(ps[i].numel(), 0.0);
                v.emplace_back(ps[i].numel(), 0.0);
            }
        }
        if (m.size() != ps.size()) throw std::logic_error("AdamW: parameter set changed between steps");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            for (double g : ps[i].grad()) {
                if (!std::isfinite(g)) throw NonFiniteGradient("AdamW: non-finite gradient in " + ps.name(i));
            }
        }
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto theta = ps[i].mutable_values();
            const auto grad = ps[i].grad();
            const bool has_grad = !grad.empty();
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double g = has_grad ? grad[j] : 0.0;
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
                const double m_hat = m[i][j] / bc1;
                const double v_hat = v[i][j] / bc2;
                theta[j] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta[j]);
            }
        }
    }
};

}  // namespace forestvol::nn
