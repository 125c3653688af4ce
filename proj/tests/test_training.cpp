#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "forestvol/training.hpp"

using namespace forestvol;

namespace {

// Boxes of random footprint and height; label = box volume, so the target is
// learnable from geometry alone.
std::vector<Sample> box_samples(std::size_t count, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> out;
    for (std::size_t s = 0; s < count; ++s) {
        const double w = uniform(rng, 2, 6), d = uniform(rng, 2, 6), h = uniform(rng, 1, 5);
        Sample smp;
        for (std::size_t i = 0; i < n; ++i)
            smp.cloud.points.push_back({uniform(rng, 0, w), uniform(rng, 0, d), uniform(rng, 0, h)});
        smp.label = w * d * h;
        smp.group = static_cast<std::uint32_t>(s / 2);
        out.push_back(std::move(smp));
    }
    return out;
}

EncoderDescriptor tiny_pointnet(std::size_t n) {
    EncoderDescriptor d;
    d.architecture = Architecture::pointnet;
    d.point_count = n;
    d.head_widths = {8};
    d.tnet_widths = {8};
    d.tnet_head_widths = {8};
    d.point_widths = {8, 16};
    return d;
}

TrainConfig quick(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.t0 = static_cast<long>(epochs);
    c.batch_size = 4;
    c.fold_count = 3;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(Metrics, MseAndMapeExamples) {
    const std::vector<double> y = {10, 20}, yhat = {11, 18};
    EXPECT_DOUBLE_EQ(mse(y, yhat), 2.5);
    EXPECT_DOUBLE_EQ(mape(y, yhat), 10.0);
    EXPECT_EQ(mse(y, y), 0.0);
    EXPECT_EQ(mape(y, y), 0.0);
    const std::vector<double> twice = {12, 16};
    EXPECT_DOUBLE_EQ(mse(y, twice), 4.0 * mse(y, yhat));
    const std::vector<double> up = {10.5, 21.0};
    EXPECT_NEAR(mape(y, up), 5.0, 1e-12);
}

TEST(Metrics, InvalidInputs) {
    const std::vector<double> empty;
    EXPECT_THROW(mse(empty, empty), std::invalid_argument);
    const std::vector<double> z = {0, 1}, p = {1, 1};
    EXPECT_THROW(mape(z, p), std::invalid_argument);
    EXPECT_THROW(mse(z, std::vector<double>{1}), std::invalid_argument);
}

TEST(Metrics, MeanStdIsSampleStd) {
    const std::vector<double> v = {1, 2, 3, 4};
    const auto r = mean_std(v);
    EXPECT_DOUBLE_EQ(r.mean, 2.5);
    EXPECT_DOUBLE_EQ(r.std, std::sqrt(5.0 / 3.0));
    EXPECT_EQ(mean_std(std::vector<double>{7}).std, 0.0);
}

TEST(Folds, FullScaleGroupedSizes) {
    std::vector<std::uint32_t> groups;
    for (std::uint32_t g = 0; g < 1200; ++g)
        for (int r = 0; r < 8; ++r) groups.push_back(g);
    const auto folds = make_folds(groups, 5, FoldMode::grouped, 1);
    ASSERT_EQ(folds.size(), 5u);
    for (const auto& f : folds) {
        EXPECT_EQ(f.val.size(), 1920u);
        EXPECT_EQ(f.train.size(), 7680u);
        std::set<std::uint32_t> val_groups;
        for (auto i : f.val) val_groups.insert(groups[i]);
        for (auto i : f.train) EXPECT_FALSE(val_groups.contains(groups[i]));
    }
}

TEST(Folds, UngroupedPartition) {
    const std::vector<std::uint32_t> groups(10, 0);
    const auto folds = make_folds(groups, 5, FoldMode::ungrouped, 3);
    std::vector<int> seen(10, 0);
    for (const auto& f : folds) {
        EXPECT_EQ(f.val.size(), 2u);
        EXPECT_EQ(f.train.size(), 8u);
        EXPECT_TRUE(std::is_sorted(f.val.begin(), f.val.end()));
        for (auto i : f.val) ++seen[i];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_THROW(make_folds(groups, 5, FoldMode::grouped, 3), std::invalid_argument);
    EXPECT_THROW(make_folds(groups, 1, FoldMode::ungrouped, 3), std::invalid_argument);
}

TEST(Folds, UnevenGroupsDifferByAtMostOne) {
    std::vector<std::uint32_t> groups;
    for (std::uint32_t g = 0; g < 13; ++g) groups.push_back(g);
    std::size_t lo = 99, hi = 0;
    for (const auto& f : make_folds(groups, 5, FoldMode::grouped, 8)) {
        lo = std::min(lo, f.val.size());
        hi = std::max(hi, f.val.size());
    }
    EXPECT_LE(hi - lo, 1u);
}

TEST(Folds, SeededAndStable) {
    std::vector<std::uint32_t> groups;
    for (std::uint32_t g = 0; g < 40; ++g) groups.push_back(g / 4);
    const auto a = make_folds(groups, 5, FoldMode::grouped, 11);
    const auto b = make_folds(groups, 5, FoldMode::grouped, 11);
    const auto c = make_folds(groups, 5, FoldMode::grouped, 12);
    bool differs = false;
    for (std::size_t f = 0; f < 5; ++f) {
        EXPECT_EQ(a[f].val, b[f].val);
        differs |= a[f].val != c[f].val;
    }
    EXPECT_TRUE(differs);
}

TEST(TrainConfigTest, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.fold_count = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_fold_mode("stratified"), std::invalid_argument);
}

TEST(Training, FitLearnsAndTracksBest) {
    const auto data = box_samples(24, 64, 1);
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < data.size(); ++i) (i < 18 ? train : val).push_back(i);
    auto cfg = quick(30);
    cfg.learning_rate = 5e-3;
    const auto r = fit(tiny_pointnet(64), data, train, val, cfg, 0);
    ASSERT_EQ(r.curve.size(), 30u);
    EXPECT_LT(r.curve.back().train_loss, r.curve.front().train_loss);
    double best = r.curve.front().val_loss;
    for (const auto& e : r.curve) best = std::min(best, e.val_loss);
    EXPECT_EQ(r.best_val_loss, best);
    EXPECT_EQ(r.curve[r.best_epoch - 1].val_loss, best);
    EXPECT_GT(r.baseline_val_mape, 0.0);
    // the retained checkpoint reproduces the best epoch's validation numbers
    const auto enc = load_encoder(r.best);
    const auto ev = evaluate(*enc, data, val, 4);
    EXPECT_NEAR(ev.loss, r.best_val_loss, 1e-9 * r.best_val_loss);
    EXPECT_EQ(r.best.epoch, r.best_epoch);
}

TEST(Training, BiasStartsAtLabelMean) {
    const auto data = box_samples(8, 32, 2);
    std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7};
    auto cfg = quick(1);
    cfg.learning_rate = 1e-12;
    cfg.eta_min = 0.0;
    const auto r = fit(tiny_pointnet(32), data, idx, idx, cfg, 0);
    double mean = 0.0;
    for (const auto& s : data) mean += s.label / 8.0;
    for (const auto& t : r.best.parameters)
        if (t.name == "head.1.bias") EXPECT_NEAR(t.values[0], mean, 1e-6);
}

TEST(Training, JitterNeverTouchesLabels) {
    auto data = box_samples(6, 32, 3);
    const auto before = data;
    auto cfg = quick(2);
    cfg.fold_count = 3;
    cross_validate(tiny_pointnet(32), data, cfg);
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(data[i].label, before[i].label);
        EXPECT_EQ(data[i].cloud, before[i].cloud);
    }
}

TEST(Training, CrossValidationIsThreadCountIndependent) {
    const auto data = box_samples(12, 32, 4);
    const auto cfg = quick(3);
    const auto a = cross_validate(tiny_pointnet(32), data, cfg, 1);
    const auto b = cross_validate(tiny_pointnet(32), data, cfg, 3);
    ASSERT_EQ(a.folds.size(), 3u);
    for (std::size_t f = 0; f < 3; ++f) {
        EXPECT_EQ(a.folds[f].best_val_loss, b.folds[f].best_val_loss);
        EXPECT_EQ(a.folds[f].best_val_mape, b.folds[f].best_val_mape);
    }
    EXPECT_EQ(a.summary.val_mape.mean, b.summary.val_mape.mean);
}

TEST(Training, BadDataIsRejected) {
    auto data = box_samples(6, 32, 5);
    data[2].label = 0.0;
    EXPECT_THROW(cross_validate(tiny_pointnet(32), data, quick(1)), DataError);
    data = box_samples(6, 32, 5);
    data[1].cloud.points.pop_back();
    EXPECT_THROW(cross_validate(tiny_pointnet(32), data, quick(1)), DataError);
}

TEST(Training, DivergenceAborts) {
    auto data = box_samples(6, 32, 6);
    for (auto& s : data) s.label *= 1e200;
    auto cfg = quick(2);
    EXPECT_THROW(cross_validate(tiny_pointnet(32), data, cfg), TrainingAborted);
}
