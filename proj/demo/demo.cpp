// Walk through one plot: generate, scan, down-sample, then the biomass maths.
// Usage: forestvol_demo [seed]

#include <cstdio>
#include <cstdlib>

#include "forestvol/biomass.hpp"
#include "forestvol/forest.hpp"
#include "forestvol/lidar.hpp"
#include "forestvol/pointcloud.hpp"
#include "forestvol/runtime.hpp"

using namespace forestvol;

int main(int argc, char** argv) {
    tune_allocator();
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 42;

    const auto plot = generate_plot(PlotConfig{}, seed);
    std::printf("plot %.1f x %.1f m, %zu trees, wood volume %.4f m^3\n", plot.width, plot.depth, plot.trees.size(),
                plot.ground_truth_volume);

    ScannerConfig scanner;
    scanner.pulse_rate = 20e3;  // a tenth of the survey rate keeps the demo quick
    const auto scan = scan_plot(plot, scanner);
    std::size_t multi = 0;
    for (auto r : scan.cloud.return_numbers) multi += r > 1;
    std::printf("scan: %zu pulses, %zu points, %zu later returns\n", scan.pulse_count, scan.cloud.size(), multi);

    const std::size_t n = std::min<std::size_t>(2048, scan.cloud.size());
    for (auto method : {SamplingMethod::random, SamplingMethod::farthest_point}) {
        const auto m = spatial_metrics(downsample(scan.cloud, n, method, seed));
        std::printf("%-3s %zu pts: %.1f pts/m^2, mean spacing %.3f m\n", to_string(method).c_str(), n, m.density_area,
                    m.avg_spacing);
    }

    const auto est = volume_to_carbon(plot.ground_truth_volume, kDefaultWoodDensity, plot.area() / 1e4, "demo");
    std::printf("at %.0f kg/m^3: AGB %.3f t (%.2f t/ha), carbon %.3f t (%.2f t/ha)\n", est.wood_density, est.agb,
                est.agb_per_ha, est.carbon, est.carbon_per_ha);

    const auto models = builtin_allometric_models();
    std::printf("eucalypt tree, D130 = 10 cm: %.2f kg; 10 m tall tree by height: %.1f kg\n",
                agb_from_diameter(find_model(models, "eucalypt"), 10.0), agb_from_height(10.0));
    return 0;
}
