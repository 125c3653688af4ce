#include <cmath>

#include <gtest/gtest.h>

#include "forestvol/nn.hpp"
#include "support/oracles.hpp"

using namespace forestvol;
using ad::Tensor;

namespace {

Tensor leaf(ad::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(ad::shape_numel(s));
    for (auto& x : v) x = uniform(rng, lo, hi);
    return Tensor::from(std::move(s), std::move(v), true);
}

std::vector<double> targets(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> t(n);
    for (auto& x : t) x = uniform(rng, -1, 1);
    return t;
}

void expect_gradcheck(std::vector<Tensor> in, std::function<Tensor()> f) {
    const auto t = targets(f().numel(), 99);
    const auto r = oracle::check_gradients(in, [&] { return ad::mse_loss(f(), t); });
    EXPECT_TRUE(r.ok()) << r.failed << " of " << r.checked << " failed; worst " << r.worst_where;
}

}  // namespace

TEST(Autodiff, MseLossValue) {
    const auto p = Tensor::from({2}, {11, 18});
    const std::vector<double> y = {10, 20};
    EXPECT_DOUBLE_EQ(ad::mse_loss(p, y).item(), 2.5);
    EXPECT_THROW(ad::mse_loss(p, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Autodiff, MatmulValueAndShapeErrors) {
    const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const auto b = Tensor::from({2, 1}, {5, 6});
    const auto c = ad::matmul(a, b);
    EXPECT_EQ(c.shape(), (ad::Shape{2, 1}));
    EXPECT_EQ(c.values()[0], 17.0);
    EXPECT_EQ(c.values()[1], 39.0);
    try {
        ad::matmul(a, Tensor::from({3, 1}, {1, 2, 3}));
        FAIL() << "expected ShapeError";
    } catch (const ad::ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,2]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3,1]"), std::string::npos) << msg;
    }
    EXPECT_THROW(ad::add(a, b), ad::ShapeError);
}

TEST(Autodiff, ReluGradientIsAStep) {
    const auto x = Tensor::from({4}, {-2, -0.5, 0.5, 3}, true);
    ad::backward(ad::sum(ad::relu(x)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1, 1}));
}

TEST(Autodiff, MaxRoutesGradientToTheWinner) {
    const auto x = Tensor::from({3, 1}, {1, 5, 2}, true);
    ad::backward(ad::sum(ad::segment_max(x, 3)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0}));
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
    const auto x = Tensor::from({1}, {3}, true);
    ad::backward(ad::add(ad::scale(x, 2.0), ad::scale(x, 5.0)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autodiff, DetachedInputsGetNoGradient) {
    const auto x = Tensor::from({2}, {1, 2}, true);
    const auto w = Tensor::from({2}, {3, 4}, true);
    ad::backward(ad::sum(ad::add(x.detach(), w)));
    EXPECT_FALSE(x.has_grad());
    EXPECT_TRUE(w.has_grad());
}

TEST(Autodiff, FiniteDifferencePrimitives) {
    const auto a = leaf({5}, 1), b = leaf({5}, 2);
    expect_gradcheck({a, b}, [=] { return ad::add(a, b); });
    expect_gradcheck({a, b}, [=] { return ad::sub(a, b); });
    expect_gradcheck({a}, [=] { return ad::scale(a, 3.5); });
    expect_gradcheck({a}, [=] { return ad::sum(a); });
    expect_gradcheck({a}, [=] { return ad::reshape(a, {5, 1}); });
    const auto r = Tensor::from({5}, {-0.8, -0.2, 0.3, 0.6, 1.2}, true);
    expect_gradcheck({r}, [=] { return ad::relu(r); });
}

TEST(Autodiff, FiniteDifferenceLinearAlgebra) {
    const auto a = leaf({5, 3}, 3), b = leaf({3, 4}, 4), bias = leaf({4}, 5);
    expect_gradcheck({a, b}, [=] { return ad::matmul(a, b); });
    expect_gradcheck({a, b, bias}, [=] { return ad::affine(a, b, bias); });
    const auto m = leaf({1, 9}, 6);
    expect_gradcheck({a, m}, [=] { return ad::batched_transform(a, m, 5); });
}

TEST(Autodiff, FiniteDifferenceIndexing) {
    const auto x = leaf({6, 2}, 7), y = leaf({6, 3}, 8);
    expect_gradcheck({x}, [=] { return ad::segment_max(x, 3); });
    expect_gradcheck({x, y}, [=] { return ad::concat_cols({x, y}); });
    expect_gradcheck({x}, [=] { return ad::gather_rows(x, {5, 5, 0, 2}); });
}

TEST(Autodiff, FiniteDifferenceBatchNorm) {
    const auto x = leaf({5, 2}, 9), g = leaf({2}, 10, 0.5, 2.0), b = leaf({2}, 11);
    auto stats = std::make_shared<ad::BatchNormStats>(2);
    expect_gradcheck({x, g, b}, [=] { return ad::batch_norm(x, g, b, *stats, true); });
    expect_gradcheck({x, g, b}, [=] { return ad::batch_norm(x, g, b, *stats, false); });
}

TEST(Autodiff, BatchNormTrainingNormalisesAndTracks) {
    auto x = Tensor::from({4, 1}, {1, 2, 3, 4});
    ad::BatchNormStats stats(1);
    const auto y = ad::batch_norm(x, Tensor::from({1}, {1}), Tensor::from({1}, {0}), stats, true, 0.9);
    double mean = 0, var = 0;
    for (double v : y.values()) mean += v / 4;
    for (double v : y.values()) var += (v - mean) * (v - mean) / 4;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
    EXPECT_NEAR(stats.running_mean[0], 0.1 * 2.5, 1e-12);
}

TEST(Autodiff, BatchNormEvalIsFrozenAffine) {
    ad::BatchNormStats stats(1);
    stats.running_mean = {2.0};
    stats.running_var = {4.0};
    const auto g = Tensor::from({1}, {3}), b = Tensor::from({1}, {1});
    const auto y = ad::batch_norm(Tensor::from({2, 1}, {2, 4}), g, b, stats, false);
    EXPECT_NEAR(y.values()[0], 1.0, 1e-12);
    EXPECT_NEAR(y.values()[1], 1.0 + 3.0 * 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
    EXPECT_EQ(stats.running_mean[0], 2.0);
}

TEST(Autodiff, FusedEdgeOpMatchesComposition) {
    const std::size_t m = 7, k = 3, c = 4;
    const auto p = leaf({m, c}, 12), q = leaf({m, c}, 13);
    const auto g = leaf({c}, 14, 0.5, 1.5), b = leaf({c}, 15);
    std::vector<std::uint32_t> nb;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t s = 0; s < k; ++s) nb.push_back(static_cast<std::uint32_t>((i * 3 + s + 1) % m));
    for (bool train : {true, false}) {
        ad::BatchNormStats s1(c), s2(c);
        s1.running_var = s2.running_var = {0.5, 1.0, 2.0, 3.0};
        const auto fused = ad::edge_max_bn_relu(p, q, nb, k, g, b, s1, train);
        std::vector<std::uint32_t> centre(nb.size());
        for (std::size_t e = 0; e < nb.size(); ++e) centre[e] = static_cast<std::uint32_t>(e / k);
        const auto pre = ad::add(ad::gather_rows(p, centre), ad::gather_rows(q, nb));
        const auto ref = ad::segment_max(ad::relu(ad::batch_norm(pre, g, b, s2, train)), k);
        ASSERT_EQ(fused.shape(), ref.shape());
        for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(fused.values()[i], ref.values()[i], 1e-12);
        for (std::size_t j = 0; j < c; ++j) {
            EXPECT_NEAR(s1.running_mean[j], s2.running_mean[j], 1e-12);
            EXPECT_NEAR(s1.running_var[j], s2.running_var[j], 1e-12);
        }
    }
    auto stats = std::make_shared<ad::BatchNormStats>(c);
    expect_gradcheck({p, q, g, b}, [=] { return ad::edge_max_bn_relu(p, q, nb, k, g, b, *stats, true); });
}

// ---------------------------------------------------------------------------

TEST(Optimizer, DecayOnlyStep) {
    nn::ParameterSet ps;
    ps.add("w", Tensor::from({1}, {1.0}, true));
    nn::AdamW opt;
    opt.weight_decay = 1e-4;
    opt.step(ps, 1e-3);
    EXPECT_NEAR(ps[0].values()[0], 0.9999999, 1e-15);
}

TEST(Optimizer, NoDecayNoGradientIsANoOp) {
    nn::ParameterSet ps;
    ps.add("w", Tensor::from({2}, {1.0, -3.0}, true));
    nn::AdamW opt;
    opt.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) opt.step(ps, 1e-3);
    EXPECT_EQ(ps[0].values()[0], 1.0);
    EXPECT_EQ(ps[0].values()[1], -3.0);
}

TEST(Optimizer, ConstantGradientDescends) {
    nn::ParameterSet ps;
    auto& w = ps.add("w", Tensor::from({2}, {0.0, 0.0}, true));
    nn::AdamW opt;
    for (int i = 0; i < 20; ++i) {
        ps.zero_grad();
        ad::backward(ad::matmul(ad::reshape(w, {1, 2}), Tensor::from({2, 1}, {2.0, -1.0})));
        opt.step(ps, 1e-2);
    }
    EXPECT_LT(w.values()[0], 0.0);
    EXPECT_GT(w.values()[1], 0.0);
}

TEST(Optimizer, NonFiniteGradientIsRejected) {
    nn::ParameterSet ps;
    auto& w = ps.add("w", Tensor::from({1}, {1.0}, true));
    ad::backward(ad::scale(w, std::numeric_limits<double>::infinity()));
    nn::AdamW opt;
    EXPECT_THROW(opt.step(ps, 1e-3), nn::NonFiniteGradient);
}

TEST(Scheduler, CosineWarmRestarts) {
    nn::CosineWarmRestarts s{1e-3, 1e-6, 200, 1};
    EXPECT_DOUBLE_EQ(s(0), 1e-3);
    EXPECT_NEAR(s(199), 1e-6 + 0.5 * (1e-3 - 1e-6) * (1 + std::cos(M_PI * 199 / 200)), 1e-15);
    EXPECT_GT(s(199), 1e-6);
    EXPECT_DOUBLE_EQ(s(200), 1e-3);
    EXPECT_NEAR(s(100), 0.5 * (1e-3 + 1e-6), 1e-15);
    for (long t = 1; t < 200; ++t) EXPECT_LT(s(t), s(t - 1));
    nn::CosineWarmRestarts grow{1.0, 0.0, 2, 2};
    EXPECT_EQ(grow.cycle_position(2), (std::pair<long, long>{0, 4}));
    EXPECT_EQ(grow.cycle_position(6), (std::pair<long, long>{0, 8}));
    EXPECT_THROW(s(-1), std::invalid_argument);
    EXPECT_THROW((nn::CosineWarmRestarts{1.0, 0.0, 0, 1}.validate()), std::invalid_argument);
}

TEST(Layers, LinearAndHeadShapes) {
    Rng rng(1);
    nn::ParameterSet ps;
    nn::Linear lin(ps, "l", 3, 5, rng);
    EXPECT_EQ(lin(Tensor::zeros({4, 3})).shape(), (ad::Shape{4, 5}));
    nn::Head head(ps, "h", 5, {4, 1}, rng);
    EXPECT_EQ(head(lin(Tensor::zeros({2, 3}))).shape(), (ad::Shape{2, 1}));
    EXPECT_EQ(ps.scalar_count(), 3u * 5 + 5 + 5 * 4 + 4 + 4 + 1);
    EXPECT_THROW(ps.at("missing"), std::out_of_range);
}
