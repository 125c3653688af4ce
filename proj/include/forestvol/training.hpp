#pragma once

// Regression metrics, k-fold splits and the per-fold training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "forestvol/autodiff.hpp"
#include "forestvol/checkpoint.hpp"
#include "forestvol/encoders.hpp"
#include "forestvol/errors.hpp"
#include "forestvol/nn.hpp"
#include "forestvol/pointcloud.hpp"
#include "forestvol/random.hpp"

namespace forestvol {

// ---------------------------------------------------------------------------
// metrics

/// (1/n) sum (y - yhat)^2
inline double mse(std::span<const double> truth, std::span<const double> pred) {
    if (truth.size() != pred.size()) throw std::invalid_argument("mse: length mismatch");
    if (truth.empty()) throw std::invalid_argument("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    return s / static_cast<double>(truth.size());
}

/// Mean absolute percentage error, in percent.
inline double mape(std::span<const double> truth, std::span<const double> pred) {
    if (truth.size() != pred.size()) throw std::invalid_argument("mape: length mismatch");
    if (truth.empty()) throw std::invalid_argument("mape: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 0.0) throw std::invalid_argument("mape: undefined for y = 0 (record " + std::to_string(i) + ")");
        s += std::abs(truth[i] - pred[i]) / std::abs(truth[i]);
    }
    return s / static_cast<double>(truth.size()) * 100.0;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  ///< sample standard deviation (n - 1); 0 for a single value
};

inline MeanStd mean_std(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean_std: empty input");
    MeanStd r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

// ---------------------------------------------------------------------------
// folds

enum class FoldMode { grouped, ungrouped };

inline std::string to_string(FoldMode m) { return m == FoldMode::grouped ? "grouped" : "ungrouped"; }

inline FoldMode parse_fold_mode(const std::string& s) {
    if (s == "grouped") return FoldMode::grouped;
    if (s == "ungrouped") return FoldMode::ungrouped;
    throw std::invalid_argument("unknown fold mode '" + s + "' (expected grouped or ungrouped)");
}

struct Fold {
    std::vector<std::size_t> train;  ///< ascending sample indices
    std::vector<std::size_t> val;
};

/// Partition samples into `fold_count` validation sets. In grouped mode all
/// samples sharing a group id (a base plot and its rotations) land in the same
/// fold; fold sizes differ by at most one group.
inline std::vector<Fold> make_folds(std::span<const std::uint32_t> groups, std::size_t fold_count, FoldMode mode,
                                    std::uint64_t seed) {
    if (groups.empty()) throw std::invalid_argument("make_folds: empty dataset");
    if (fold_count < 2) throw std::invalid_argument("make_folds: need at least 2 folds");
    std::vector<std::uint64_t> keys(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) keys[i] = mode == FoldMode::grouped ? groups[i] : i;
    std::vector<std::uint64_t> unique = keys;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    if (unique.size() < fold_count) {
        throw std::invalid_argument("make_folds: " + std::to_string(unique.size()) + " groups cannot fill " +
                                    std::to_string(fold_count) + " folds");
    }
    Rng rng(derive_seed(seed, 0x666f6c64));
    for (std::size_t i = unique.size(); i > 1; --i) std::swap(unique[i - 1], unique[uniform_index(rng, i)]);
    std::vector<std::size_t> fold_of_rank(unique.size());
    for (std::size_t r = 0; r < unique.size(); ++r) fold_of_rank[r] = r % fold_count;

    std::vector<std::pair<std::uint64_t, std::size_t>> lookup(unique.size());
    for (std::size_t r = 0; r < unique.size(); ++r) lookup[r] = {unique[r], fold_of_rank[r]};
    std::sort(lookup.begin(), lookup.end());

    std::vector<Fold> folds(fold_count);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto it = std::lower_bound(lookup.begin(), lookup.end(), std::make_pair(keys[i], std::size_t{0}));
        const std::size_t f = it->second;
        for (std::size_t k = 0; k < fold_count; ++k) (k == f ? folds[k].val : folds[k].train).push_back(i);
    }
    return folds;
}

// ---------------------------------------------------------------------------
// training

struct Sample {
    PointCloud cloud;
    double label = 0.0;       ///< ground-truth wood volume, m^3
    std::uint32_t group = 0;  ///< base plot id shared by rotated copies
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    long t0 = 200;  ///< scheduler cycle length in epochs
    long t_mult = 1;
    double eta_min = 1e-6;
    bool jitter = true;
    double jitter_sigma = 0.02;
    double jitter_clip = 0.06;
    std::size_t fold_count = 5;
    FoldMode fold_mode = FoldMode::grouped;
    std::uint64_t seed = 0;
    /// Start the scalar output bias at the mean training label.
    bool init_bias_to_mean = true;

    void validate() const {
        if (epochs < 1) throw ConfigError("training.epochs", "must be >= 1");
        if (batch_size < 1) throw ConfigError("training.batch_size", "must be >= 1");
        if (fold_count < 2) throw ConfigError("training.fold_count", "must be >= 2");
        if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate", "must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("training.weight_decay", "must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("training.beta1", "must be in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("training.beta2", "must be in [0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("training.adam_eps", "must be > 0");
        if (t0 < 1) throw ConfigError("training.t0", "must be >= 1");
        if (t_mult < 1) throw ConfigError("training.t_mult", "must be >= 1");
        if (!(eta_min >= 0.0 && eta_min <= learning_rate)) throw ConfigError("training.eta_min", "must be in [0, learning_rate]");
        if (!(jitter_sigma >= 0.0)) throw ConfigError("training.jitter_sigma", "must be >= 0");
        if (!(jitter_clip >= 0.0)) throw ConfigError("training.jitter_clip", "must be >= 0");
    }

    nn::CosineWarmRestarts scheduler() const { return {learning_rate, eta_min, t0, t_mult}; }
};

struct EpochRecord {
    std::size_t epoch = 0;  ///< 1-based
    double learning_rate = 0.0;
    double train_loss = 0.0;  ///< mean per-sample MSE over the epoch's training batches
    double val_loss = 0.0;
    double val_mape = 0.0;
};

struct FoldResult {
    std::size_t fold = 0;
    std::size_t train_size = 0;
    std::size_t val_size = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    double best_val_mape = 0.0;
    double baseline_val_loss = 0.0;  ///< constant predictor at the training-label mean
    double baseline_val_mape = 0.0;
    std::vector<EpochRecord> curve;
    Checkpoint best;  ///< parameters at best_epoch, optimizer state at that epoch
};

struct TrainSummary {
    MeanStd val_loss;
    MeanStd val_mape;
    MeanStd baseline_val_mape;
};

struct TrainResult {
    std::vector<FoldResult> folds;
    TrainSummary summary;
};

/// Training aborted on a non-finite loss or gradient.
class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Evaluation {
    std::vector<double> predictions;  ///< raw (unclamped) model outputs
    double loss = 0.0;
    double mape = 0.0;
};

/// Eval-mode predictions on `indices`, in mini-batches of `batch_size`.
inline Evaluation evaluate(const Encoder& enc, std::span<const Sample> data, std::span<const std::size_t> indices,
                           std::size_t batch_size) {
    Evaluation ev;
    std::vector<double> truth;
    std::vector<PointCloud> batch;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        batch.clear();
        const std::size_t end = std::min(indices.size(), start + batch_size);
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(data[indices[i]].cloud);
            truth.push_back(data[indices[i]].label);
        }
        const auto out = enc.forward(batch, nn::Mode::eval);
        ev.predictions.insert(ev.predictions.end(), out.values().begin(), out.values().end());
    }
    ev.loss = mse(truth, ev.predictions);
    ev.mape = mape(truth, ev.predictions);
    return ev;
}

using ProgressFn = std::function<void(const std::string&)>;

/// Train one model on `train_idx`, validate on `val_idx` after every epoch and
/// keep the parameters of the epoch with the lowest validation loss.
inline FoldResult fit(const EncoderDescriptor& desc, std::span<const Sample> data, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> val_idx, const TrainConfig& cfg, std::size_t fold,
                      const ProgressFn& progress = {}) {
    cfg.validate();
    if (train_idx.empty() || val_idx.empty()) throw std::invalid_argument("fit: empty train or validation set");
    auto enc = make_encoder(desc, derive_seed(cfg.seed, 0x696e6974, fold));
    const auto sched = cfg.scheduler();
    nn::AdamW opt;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.adam_eps;
    opt.weight_decay = cfg.weight_decay;

    FoldResult res;
    res.fold = fold;
    res.train_size = train_idx.size();
    res.val_size = val_idx.size();

    double label_mean = 0.0;
    for (auto i : train_idx) label_mean += data[i].label;
    label_mean /= static_cast<double>(train_idx.size());
    {
        std::vector<double> truth, constant;
        for (auto i : val_idx) {
            truth.push_back(data[i].label);
            constant.push_back(label_mean);
        }
        res.baseline_val_loss = mse(truth, constant);
        res.baseline_val_mape = mape(truth, constant);
    }
    if (cfg.init_bias_to_mean) {
        ad::Tensor bias = enc->output_layer().bias;
        bias.mutable_values()[0] = label_mean;
    }

    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
    std::vector<PointCloud> batch;
    std::vector<double> targets;
    bool have_best = false;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = sched(static_cast<long>(epoch - 1));
        Rng shuffle_rng(derive_seed(cfg.seed, fold, epoch, 0x73687566));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            targets.clear();
            for (std::size_t p = start; p < end; ++p) {
                const auto& s = data[order[p]];
                batch.push_back(cfg.jitter ? jitter(s.cloud, cfg.jitter_sigma, cfg.jitter_clip,
                                                    derive_seed(cfg.seed, fold, epoch, order[p]))
                                           : s.cloud);
                targets.push_back(s.label);
            }
            auto& ps = enc->parameters();
            ps.zero_grad();
            const auto loss = ad::mse_loss(enc->forward(batch, nn::Mode::train), targets);
            if (!std::isfinite(loss.item())) {
                throw TrainingAborted("fold " + std::to_string(fold) + " epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(start / cfg.batch_size) +
                                      ": non-finite loss (lr " + std::to_string(lr) + ")");
            }
            ad::backward(loss);
            try {
                opt.step(ps, lr);
            } catch (const nn::NonFiniteGradient& e) {
                throw TrainingAborted("fold " + std::to_string(fold) + " epoch " + std::to_string(epoch) + ": " + e.what());
            }
            loss_sum += loss.item() * static_cast<double>(end - start);
        }

        const auto ev = evaluate(*enc, data, val_idx, cfg.batch_size);
        EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()), ev.loss, ev.mape};
        res.curve.push_back(rec);
        if (!have_best || ev.loss < res.best_val_loss) {
            have_best = true;
            res.best_epoch = epoch;
            res.best_val_loss = ev.loss;
            res.best_val_mape = ev.mape;
            res.best = capture(*enc);
            res.best.optimizer = opt;
            res.best.scheduler = sched;
            res.best.epoch = epoch;
            res.best.rng_state = rng_state(shuffle_rng);
        }
        if (progress) {
            char line[200];
            std::snprintf(line, sizeof line, "fold %zu epoch %zu/%zu lr %.3g train %.5g val %.5g mape %.3f%%", fold,
                          epoch, cfg.epochs, lr, rec.train_loss, rec.val_loss, rec.val_mape);
            progress(line);
        }
    }
    return res;
}

inline TrainSummary summarize(const std::vector<FoldResult>& folds) {
    std::vector<double> loss, m, base;
    for (const auto& f : folds) {
        loss.push_back(f.best_val_loss);
        m.push_back(f.best_val_mape);
        base.push_back(f.baseline_val_mape);
    }
    return {mean_std(loss), mean_std(m), mean_std(base)};
}

/// k-fold cross-validation. Folds are independent and each is a pure function
/// of (descriptor, data, config, fold index), so running them on `threads`
/// worker threads gives the same results as running them one by one.
inline TrainResult cross_validate(const EncoderDescriptor& desc, std::span<const Sample> data, const TrainConfig& cfg,
                                  std::size_t threads = 1, const ProgressFn& progress = {}) {
    cfg.validate();
    desc.validate();
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].cloud.size() != desc.point_count) {
            throw DataError("sample " + std::to_string(i), "has " + std::to_string(data[i].cloud.size()) +
                                                               " points, model expects " + std::to_string(desc.point_count));
        }
        if (data[i].label == 0.0) throw DataError("sample " + std::to_string(i), "zero volume label (MAPE undefined)");
    }
    std::vector<std::uint32_t> groups;
    for (const auto& s : data) groups.push_back(s.group);
    const auto folds = make_folds(groups, cfg.fold_count, cfg.fold_mode, cfg.seed);

    std::mutex log_mutex;
    ProgressFn safe_progress;
    if (progress) {
        safe_progress = [&](const std::string& s) {
            std::lock_guard lock(log_mutex);
            progress(s);
        };
    }

    TrainResult result;
    result.folds.resize(folds.size());
    auto run = [&](std::size_t f) {
        result.folds[f] = fit(desc, data, folds[f].train, folds[f].val, cfg, f, safe_progress);
    };
    threads = std::max<std::size_t>(1, std::min(threads, folds.size()));
    if (threads == 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) run(f);
    } else {
        std::vector<std::exception_ptr> errors(folds.size());
        std::mutex next_mutex;
        std::size_t next = 0;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t f;
                    {
                        std::lock_guard lock(next_mutex);
                        if (next == folds.size()) return;
                        f = next++;
                    }
                    try {
                        run(f);
                    } catch (...) {
                        errors[f] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    result.summary = summarize(result.folds);
    return result;
}

}  // namespace forestvol
