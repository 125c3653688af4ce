#include <cmath>
#include <set>
#include <span>

#include <gtest/gtest.h>

#include "forestvol/lidar.hpp"

using namespace forestvol;

namespace {

TriangleMesh quad(double x0, double y0, double x1, double y1, double z) {
    return TriangleMesh({{x0, y0, z}, {x1, y0, z}, {x1, y1, z}, {x0, y1, z}}, {{0, 1, 2}, {0, 2, 3}});
}

Ray down(double x, double y, double z) { return {{x, y, z}, {0, 0, -1}, 0, 0}; }

ScannerConfig fast_scanner() {
    ScannerConfig c;
    c.pulse_rate = 2000;
    return c;
}

}  // namespace

TEST(Lidar, PulsesPerLine) {
    ScannerConfig c;
    c.flight_speed = 2.0;
    c.pulse_rate = 1000.0;
    EXPECT_EQ(pulses_per_line(c, 20.0), 10000u);
    c.flight_line_spacing = 100.0;
    EXPECT_EQ(plan_pulses(c, {0, 20, -5, 5}).size(), 10000u);
}

TEST(Lidar, LinesCoverTheFootprint) {
    ScannerConfig c;
    c.pulse_rate = 100;
    c.flight_line_spacing = 20.0;
    const auto rays = plan_pulses(c, {0, 10, -30, 30});
    std::set<std::uint32_t> lines;
    for (const auto& r : rays) lines.insert(r.line);
    EXPECT_EQ(lines.size(), 3u);
    EXPECT_EQ(rays.size(), 3u * pulses_per_line(c, 10.0));
    for (std::size_t i = 0; i < rays.size(); ++i) EXPECT_EQ(rays[i].pulse_id, i);
}

TEST(Lidar, ZeroScanAngleIsNadir) {
    ScannerConfig c;
    c.scan_angle = 0.0;
    c.pulse_rate = 500;
    for (const auto& r : plan_pulses(c, {0, 4, 0, 4})) {
        EXPECT_EQ(r.direction.x, 0.0);
        EXPECT_NEAR(r.direction.y, 0.0, 1e-15);
        EXPECT_EQ(r.direction.z, -1.0);
        EXPECT_EQ(r.origin.z, c.altitude);
    }
}

TEST(Lidar, SweepReachesBothSwathEdges) {
    ScannerConfig c;
    c.scan_angle = 60.0;
    c.scan_frequency = 10.0;
    EXPECT_DOUBLE_EQ(sweep_angle(c, 0.0), -30.0);
    EXPECT_DOUBLE_EQ(sweep_angle(c, 0.05), 30.0);
    EXPECT_DOUBLE_EQ(sweep_angle(c, 0.025), 0.0);
    double lo = 0, hi = 0;
    c.pulse_rate = 4000;
    for (const auto& r : plan_pulses(c, {0, 2, 0, 1})) {
        const double theta = std::atan2(r.direction.y, -r.direction.z) * 180.0 / std::numbers::pi;
        lo = std::min(lo, theta);
        hi = std::max(hi, theta);
        EXPECT_NEAR(norm(r.direction), 1.0, 1e-12);
    }
    EXPECT_NEAR(lo, -30.0, 1e-9);
    EXPECT_NEAR(hi, 30.0, 1e-9);
}

TEST(Lidar, SingleTriangleHit) {
    const TriangleMesh tri({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
    const auto hits = cast_pulse(down(0.2, 0.2, 1.0), std::span(&tri, 1), ScannerConfig{});
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_NEAR(hits[0].range, 1.0, 1e-12);
    EXPECT_EQ(hits[0].return_number, 1);
    EXPECT_NEAR(hits[0].point.z, 0.0, 1e-12);
    EXPECT_TRUE(cast_pulse(down(0.8, 0.8, 1.0), std::span(&tri, 1), ScannerConfig{}).empty());
}

TEST(Lidar, BackFacesAreHitToo) {
    const TriangleMesh tri({{0, 0, 0}, {0, 1, 0}, {1, 0, 0}}, {{0, 1, 2}});
    EXPECT_EQ(cast_pulse(down(0.2, 0.2, 1.0), std::span(&tri, 1), ScannerConfig{}).size(), 1u);
}

TEST(Lidar, CloseSurfacesMergeIntoOneReturn) {
    const std::vector<TriangleMesh> planes = {quad(-1, -1, 1, 1, 0.0), quad(-1, -1, 1, 1, 0.1)};
    EXPECT_EQ(cast_pulse(down(0, 0.3, 5), planes, ScannerConfig{}).size(), 1u);
    const std::vector<TriangleMesh> apart = {quad(-1, -1, 1, 1, 0.0), quad(-1, -1, 1, 1, 2.0)};
    const auto hits = cast_pulse(down(0, 0.3, 5), apart, ScannerConfig{});
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_NEAR(hits[0].range, 3.0, 1e-12);
    EXPECT_EQ(hits[1].return_number, 2);
}

TEST(Lidar, MaxReturnsCaps) {
    std::vector<TriangleMesh> layers;
    for (int i = 0; i < 8; ++i) layers.push_back(quad(-1, -1, 1, 1, i));
    ScannerConfig c;
    c.max_returns = 5;
    EXPECT_EQ(cast_pulse(down(0.1, 0.2, 20), layers, c).size(), 5u);
    c.max_returns = 2;
    EXPECT_EQ(cast_pulse(down(0.1, 0.2, 20), layers, c).size(), 2u);
}

TEST(Lidar, GroundOnlyGivesOneReturnPerPulse) {
    const Footprint fp{-5, 5, -5, 5};
    Scene scene;
    // ground a little larger than the footprint so swath-edge rays still land
    scene.add(quad(-60, -60, 60, 60, 0.0));
    scene.build();
    const auto r = scan_scene(scene, fp, fast_scanner());
    // rays near the swath edge run almost horizontal and miss; nothing returns twice
    EXPECT_GT(r.cloud.size(), r.pulse_count / 2);
    EXPECT_EQ(std::set<std::uint32_t>(r.pulse_ids.begin(), r.pulse_ids.end()).size(), r.cloud.size());
    for (auto n : r.cloud.return_numbers) EXPECT_EQ(n, 1);
}

TEST(Lidar, CanopyOverGroundGivesTwoReturns) {
    Scene scene;
    scene.add(quad(-60, -60, 60, 60, 0.0));
    scene.add(quad(-100, -100, 100, 100, 10.0));
    scene.build();
    ScannerConfig c = fast_scanner();
    c.max_returns = 2;
    c.scan_angle = 0.0;
    const auto r = scan_scene(scene, {-5, 5, -5, 5}, c);
    EXPECT_EQ(r.cloud.size(), 2 * r.pulse_count);
    for (std::size_t i = 0; i < r.cloud.size(); ++i) EXPECT_EQ(r.cloud.return_numbers[i], i % 2 + 1);
}

TEST(Lidar, DoublingPulseRateDoublesPoints) {
    Scene scene;
    scene.add(quad(-60, -60, 60, 60, 0.0));
    scene.build();
    ScannerConfig c = fast_scanner();
    const auto a = scan_scene(scene, {-5, 5, -5, 5}, c);
    c.pulse_rate *= 2;
    const auto b = scan_scene(scene, {-5, 5, -5, 5}, c);
    EXPECT_EQ(b.cloud.size(), 2 * a.cloud.size());
}

TEST(Lidar, PlotScanIsDeterministicAndSeesTrees) {
    PlotConfig pc;
    pc.tree_count = {3, 3};
    const auto plot = generate_plot(pc, 4);
    const auto a = scan_plot(plot, fast_scanner());
    const auto b = scan_plot(plot, fast_scanner());
    EXPECT_EQ(a.cloud, b.cloud);
    EXPECT_EQ(a.pulse_ids, b.pulse_ids);
    std::size_t above = 0, later = 0;
    for (std::size_t i = 0; i < a.cloud.size(); ++i) {
        above += a.cloud.points[i].z > 1.0;
        later += a.cloud.return_numbers[i] > 1;
    }
    EXPECT_GT(above, 0u);
    EXPECT_GT(later, 0u);
    // without ground, only vegetation returns remain
    const auto bare = scan_plot(plot, fast_scanner(), false);
    EXPECT_LT(bare.cloud.size(), a.cloud.size());
}

TEST(Lidar, InvalidScannerIsAConfigError) {
    ScannerConfig c;
    c.pulse_rate = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ScannerConfig{};
    c.max_returns = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ScannerConfig{};
    c.scan_angle = 400;
    EXPECT_THROW(c.validate(), ConfigError);
}
