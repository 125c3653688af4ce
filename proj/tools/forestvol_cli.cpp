// forestvol: generate -> scan -> sample -> train -> predict, plus allometric baselines.
//
// Exit codes: 0 ok, 2 invalid configuration or usage, 3 bad input data,
// 1 anything else. Errors are one line on stderr:
//   error: <config|data|internal>: <field or record>: <message>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "forestvol/pipeline.hpp"
#include "forestvol/runtime.hpp"

using namespace forestvol;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Synthetic forest plots, simulated laser scans and point-cloud volume regression"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    bool quiet = false;
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible, single-threaded)")->check(CLI::PositiveNumber);
    app.add_flag("--quiet,-q", quiet, "no progress output");
    app.set_version_flag("--version", [] {
        return std::string("forestvol ") + kVersion + "\n" + "checkpoint " + kCheckpointFormat + "\n" +
               "manifest " + kManifestFormat + "\n" + "scans " + kScanManifestFormat + "\n" + "dataset " +
               kDatasetFormat + "\n" + "training-report " + kTrainingReportFormat + "\n" +
               "mesh OBJ (v/f subset)\npoint cloud XYZ (x y z return_number), PLY binary_little_endian 1.0";
    });

    const ProgressFn progress = [&](const std::string& s) {
        if (!quiet) std::fprintf(stderr, "%s\n", s.c_str());
    };

    // generate
    std::string gen_config, gen_out;
    auto* gen = app.add_subcommand("generate", "generate synthetic plots and a manifest");
    gen->add_option("--config", gen_config, "pipeline TOML")->required();
    gen->add_option("--out", gen_out, "output directory")->required();

    // scan
    std::string scan_manifest, scan_config, scan_out;
    auto* scan = app.add_subcommand("scan", "simulate airborne scans of every plot in a manifest");
    scan->add_option("--manifest", scan_manifest, "manifest.json from generate")->required();
    scan->add_option("--scanner-config", scan_config, "TOML whose [scanner] section overrides the manifest");
    scan->add_option("--out", scan_out, "output directory")->required();

    // sample
    std::string sample_in, sample_method, sample_out;
    std::optional<std::size_t> sample_n;
    auto* sample = app.add_subcommand("sample", "down-sample scans to fixed-size clouds");
    sample->add_option("--in", sample_in, "scans.json from scan")->required();
    sample->add_option("--method", sample_method, "rs or fps (default: from config)");
    sample->add_option("--n", sample_n, "points per cloud (default: from config)");
    sample->add_option("--out", sample_out, "output directory")->required();

    // train
    std::string train_dataset, train_arch = "pointnetpp", train_config, train_out;
    auto* train = app.add_subcommand("train", "k-fold cross-validated training");
    train->add_option("--dataset", train_dataset, "dataset.json from sample")->required();
    train->add_option("--arch", train_arch, "pointnet, pointnetpp or dgcnn");
    train->add_option("--config", train_config, "TOML for [model] and [training] (default: from dataset)");
    train->add_option("--out", train_out, "output directory")->required();

    // predict
    std::string pred_cloud, pred_ckpt, pred_out, pred_site_report, pred_site;
    PredictOptions pred_opt;
    auto* predict = app.add_subcommand("predict", "tiled volume, AGB and carbon estimates for a point cloud");
    predict->add_option("--cloud", pred_cloud, "XYZ or PLY cloud")->required();
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint from train")->required();
    predict->add_option("--tile-edge", pred_opt.tile_edge, "tile edge length, m")->capture_default_str();
    predict->add_option("--min-tile-points", pred_opt.min_tile_points, "drop tiles with fewer points")->capture_default_str();
    predict->add_option("--density", pred_opt.wood_density, "wood density, kg/m^3")->capture_default_str();
    predict->add_option("--site", pred_site, "site name (default: cloud file stem)");
    predict->add_option("--site-report", pred_site_report, "also write the site report CSV here");
    predict->add_option("--out", pred_out, "PlotEstimate CSV")->required();

    // allometry
    std::string allo_mode = "diameter", allo_model = "eucalypt", allo_file, allo_out;
    std::vector<double> allo_values;
    auto* allo = app.add_subcommand("allometry", "allometric AGB baseline table (kg)");
    allo->add_option("--mode", allo_mode, "diameter (cm) or height (m)")->check(CLI::IsMember({"diameter", "height"}));
    allo->add_option("--model", allo_model, "eucalypt, multi, shrub, other or a model from --coefficients");
    allo->add_option("--values", allo_values, "comma-separated diameters or heights")->required()->delimiter(',');
    allo->add_option("--coefficients", allo_file, "coefficient CSV (default: built-in table)");
    allo->add_option("--out", allo_out, "output CSV (default: stdout)");

    // run
    std::string run_config, run_out, run_arch = "pointnetpp";
    auto* run = app.add_subcommand("run", "generate, scan, sample, train, then predict on the first scanned plot");
    run->add_option("--config", run_config, "pipeline TOML")->required();
    run->add_option("--arch", run_arch, "pointnet, pointnetpp or dgcnn");
    run->add_option("--out", run_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: config: command line: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    const auto parse_arch = [](const std::string& s) {
        try {
            return parse_architecture(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("model.architecture", e.what());
        }
    };

    try {
        if (*gen) {
            const auto cfg = load_config(gen_config);
            const auto r = cmd_generate(cfg, gen_out, threads, progress);
            std::printf("%s\n", r.manifest.string().c_str());
        } else if (*scan) {
            std::optional<ScannerSection> s;
            if (!scan_config.empty()) s = load_config(scan_config).scanner;
            const auto r = cmd_scan(scan_manifest, s, scan_out, threads, progress);
            std::printf("%s\n", r.manifest.string().c_str());
        } else if (*sample) {
            std::optional<SamplingMethod> m;
            if (!sample_method.empty()) {
                try {
                    m = parse_sampling_method(sample_method);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError("sampling.method", e.what());
                }
            }
            const auto r = cmd_sample(sample_in, m, sample_n, sample_out, threads, progress);
            std::printf("%s\n", r.dataset.string().c_str());
        } else if (*train) {
            std::optional<PipelineConfig> cfg;
            if (!train_config.empty()) cfg = load_config(train_config);
            const auto r = cmd_train(train_dataset, parse_arch(train_arch), cfg, train_out, threads, progress);
            const auto& s = r.result.summary;
            std::printf("%s\nval_mape %.4f +- %.4f %% (constant-mean baseline %.4f %%)\n", r.summary.string().c_str(),
                        s.val_mape.mean, s.val_mape.std, s.baseline_val_mape.mean);
        } else if (*predict) {
            pred_opt.site = pred_site;
            std::optional<fs::path> site;
            if (!pred_site_report.empty()) site = pred_site_report;
            const auto r = cmd_predict(pred_cloud, pred_ckpt, pred_opt, pred_out, site);
            std::printf("%s\n", pred_out.c_str());
            if (!quiet) {
                std::fprintf(stderr, "%zu tiles (%zu dropped): AGB %.4f t/ha, carbon %.4f t/ha at %g kg/m^3\n",
                             r.tiles.size(), r.dropped.size(), r.site.agb_per_ha, r.site.carbon_per_ha,
                             r.site.wood_density);
            }
        } else if (*allo) {
            const auto models = allo_file.empty() ? builtin_allometric_models() : read_allometry_csv(allo_file);
            const auto mode = allo_mode == "height" ? AllometryMode::height : AllometryMode::diameter;
            const auto table = allometry_table(mode, models, allo_model, allo_values);
            if (allo_out.empty()) std::fputs(table.c_str(), stdout);
            else write_text(allo_out, table);
        } else if (*run) {
            const auto cfg = load_config(run_config);
            const fs::path out = run_out;
            const auto g = cmd_generate(cfg, out / "plots", threads, progress);
            const auto s = cmd_scan(g.manifest, std::nullopt, out / "scans", threads, progress);
            const auto d = cmd_sample(s.manifest, std::nullopt, std::nullopt, out / "dataset", threads, progress);
            const auto t = cmd_train(d.dataset, parse_arch(run_arch), cfg, out / "train", threads, progress);
            const auto cloud = out / "scans" / "clouds" / (plot_stem(0, 0.0) + ".xyz");
            PredictOptions opt;
            opt.tile_edge = cfg.sampling.tile_edge;
            opt.min_tile_points = cfg.sampling.min_tile_points;
            opt.wood_density = cfg.biomass.wood_density;
            cmd_predict(cloud, out / "train" / "fold_0.ckpt.json", opt, out / "predict" / "estimates.csv",
                        out / "predict" / "site.csv");
            std::printf("val_mape %.4f +- %.4f %% (constant-mean baseline %.4f %%)\n", t.result.summary.val_mape.mean,
                        t.result.summary.val_mape.std, t.result.summary.baseline_val_mape.mean);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", one_line(e.what()).c_str());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: data: %s\n", one_line(e.what()).c_str());
        return 3;
    } catch (const TrainingAborted& e) {
        std::fprintf(stderr, "error: data: %s\n", one_line(e.what()).c_str());
        return 3;
    } catch (const std::invalid_argument& e) {
        // parsers of on-disk formats (OBJ, XYZ, PLY) report malformed records this way
        std::fprintf(stderr, "error: data: %s\n", one_line(e.what()).c_str());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", one_line(e.what()).c_str());
        return 1;
    }
    return 0;
}
