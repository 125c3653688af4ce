#pragma once

// Stage drivers behind the command-line tool. Every stage reads files written
// by the previous one and writes its own outputs plus a JSON manifest that
// carries the resolved configuration, so any stage can be rerun in isolation.
//
//   generate  -> manifest.json (+ OBJ meshes when forest.write_meshes)
//   scan      -> clouds/*.xyz, scans.json
//   sample    -> sampled/*.xyz, metrics.csv, dataset.json
//   train     -> fold_<k>.csv, fold_<k>.ckpt.json, summary.json
//   predict   -> PlotEstimate CSV (+ optional site report)

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "forestvol/biomass.hpp"
#include "forestvol/checkpoint.hpp"
#include "forestvol/config.hpp"
#include "forestvol/encoders.hpp"
#include "forestvol/errors.hpp"
#include "forestvol/forest.hpp"
#include "forestvol/lidar.hpp"
#include "forestvol/mesh.hpp"
#include "forestvol/pointcloud.hpp"
#include "forestvol/training.hpp"

namespace forestvol {

namespace fs = std::filesystem;

inline constexpr const char* kManifestFormat = "forestvol-manifest/1";
inline constexpr const char* kScanManifestFormat = "forestvol-scans/1";
inline constexpr const char* kDatasetFormat = "forestvol-dataset/1";
inline constexpr const char* kTrainingReportFormat = "forestvol-training/1";

// ---------------------------------------------------------------------------
// small helpers

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
/// independent; the first failure (by index) is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::mutex m;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard lock(m);
                    if (next == n) return;
                    i = next++;
                }
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string(), "cannot open for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError(path.string(), "write failed");
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string(), "cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json(const fs::path& path, const char* format) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string(), std::string("not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("format") || j["format"] != format) {
        throw DataError(path.string(), std::string("expected a ") + format + " document");
    }
    return j;
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError(dir.string(), "cannot create directory: " + ec.message());
}

inline PointCloud load_cloud(const fs::path& path) {
    try {
        return read_cloud(path.string());
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(path.string(), e.what());
    }
}

/// e.g. plot_0007_r135
inline std::string plot_stem(std::uint32_t plot_id, double rotation_tag) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "plot_%04u_r%03d", plot_id, static_cast<int>(std::lround(rotation_tag)));
    return buf;
}

inline std::uint64_t plot_seed(std::uint64_t master, std::uint32_t plot_id) {
    return derive_seed(master, 0x706c6f74, plot_id);
}

inline std::uint64_t sample_seed(std::uint64_t master, std::uint32_t plot_id, double rotation_tag) {
    return derive_seed(master, 0x73616d70, plot_id, static_cast<std::uint64_t>(std::lround(rotation_tag)));
}

/// Base plot followed by its rotated copies (when enabled).
inline std::vector<ForestPlot> plot_family(const PipelineConfig& cfg, std::uint32_t plot_id) {
    std::vector<ForestPlot> out;
    out.push_back(generate_plot(cfg.forest.plot, plot_seed(cfg.seed, plot_id), plot_id));
    if (cfg.forest.rotations) {
        auto rotated = rotate_augment(out.front());
        for (auto& r : rotated) out.push_back(std::move(r));
    }
    return out;
}

inline nlohmann::json provenance(const PipelineConfig& cfg) {
    return {{"config_hash", config_hash(cfg)},
            {"seed", cfg.seed},
            {"sampling_method", to_string(cfg.sampling.method)},
            {"fold_mode", to_string(cfg.training.fold_mode)},
            {"wood_density_kg_m3", cfg.biomass.wood_density}};
}

// ---------------------------------------------------------------------------
// in-memory dataset (generate + scan + sample without touching disk)

struct DatasetEntry {
    std::uint32_t plot_id = 0;
    double rotation_tag = 0.0;
    double volume = 0.0;
    std::size_t raw_points = 0;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<DatasetEntry> entries;
};

/// Same plots, scans and samples as generate -> scan -> sample with `cfg`.
inline Dataset build_dataset(const PipelineConfig& cfg, std::size_t threads = 1, const ProgressFn& progress = {}) {
    cfg.validate();
    const std::size_t per = cfg.forest.rotations ? 1 + kAugmentAngles.size() : 1;
    Dataset ds;
    ds.samples.resize(cfg.forest.plot_count * per);
    ds.entries.resize(ds.samples.size());
    std::mutex log;
    parallel_for(cfg.forest.plot_count, threads, [&](std::size_t b) {
        const auto id = static_cast<std::uint32_t>(b);
        const auto family = plot_family(cfg, id);
        for (std::size_t r = 0; r < family.size(); ++r) {
            const auto& plot = family[r];
            const auto scan = scan_plot(plot, cfg.scanner.scanner, cfg.scanner.ground);
            if (scan.cloud.size() < cfg.sampling.points) {
                throw DataError(plot_stem(id, plot.rotation_tag),
                                "scan has " + std::to_string(scan.cloud.size()) + " points, fewer than the " +
                                    std::to_string(cfg.sampling.points) + " requested");
            }
            auto& s = ds.samples[b * per + r];
            s.cloud = downsample(scan.cloud, cfg.sampling.points, cfg.sampling.method,
                                 sample_seed(cfg.seed, id, plot.rotation_tag));
            s.label = plot.ground_truth_volume;
            s.group = id;
            ds.entries[b * per + r] = {id, plot.rotation_tag, plot.ground_truth_volume, scan.cloud.size()};
        }
        if (progress) {
            std::lock_guard lock(log);
            progress("plot " + std::to_string(id) + " scanned");
        }
    });
    return ds;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateResult {
    fs::path manifest;
    std::size_t plots = 0;
};

inline GenerateResult cmd_generate(const PipelineConfig& cfg, const fs::path& out, std::size_t threads = 1,
                                   const ProgressFn& progress = {}) {
    cfg.validate();
    ensure_dir(out);
    if (cfg.forest.write_meshes) ensure_dir(out / "meshes");
    const std::size_t per = cfg.forest.rotations ? 1 + kAugmentAngles.size() : 1;
    std::vector<nlohmann::json> rows(cfg.forest.plot_count * per);
    parallel_for(cfg.forest.plot_count, threads, [&](std::size_t b) {
        const auto family = plot_family(cfg, static_cast<std::uint32_t>(b));
        for (std::size_t r = 0; r < family.size(); ++r) {
            const auto& p = family[r];
            nlohmann::json row = {{"plot_id", p.plot_id},
                                  {"seed", p.seed},
                                  {"rotation_tag", p.rotation_tag},
                                  {"ground_truth_volume", p.ground_truth_volume},
                                  {"width", p.width},
                                  {"depth", p.depth},
                                  {"tree_count", p.trees.size()}};
            if (cfg.forest.write_meshes) {
                const auto stem = plot_stem(p.plot_id, p.rotation_tag);
                const auto wood = fs::path("meshes") / (stem + "_wood.obj");
                const auto leaf = fs::path("meshes") / (stem + "_leaves.obj");
                write_text(out / wood, to_obj(p.wood_mesh()));
                write_text(out / leaf, to_obj(p.leaf_mesh()));
                row["wood_mesh"] = wood.generic_string();
                row["leaf_mesh"] = leaf.generic_string();
            }
            rows[b * per + r] = std::move(row);
        }
    });
    if (progress) progress("generated " + std::to_string(rows.size()) + " plots");
    nlohmann::json m = {{"format", kManifestFormat}, {"config", config_to_json(cfg)}, {"plots", rows}};
    m.update(provenance(cfg));
    write_text(out / "manifest.json", m.dump(2) + "\n");
    return {out / "manifest.json", rows.size()};
}

// ---------------------------------------------------------------------------
// scan

struct ScanStageResult {
    fs::path manifest;
    std::size_t clouds = 0;
};

/// Scans every plot listed in a generate manifest. Plots are rebuilt from
/// their seeds unless the manifest points at OBJ meshes. `scanner` overrides
/// the scanner section of the manifest's configuration.
inline ScanStageResult cmd_scan(const fs::path& manifest_path, const std::optional<ScannerSection>& scanner,
                                const fs::path& out, std::size_t threads = 1, const ProgressFn& progress = {}) {
    const auto m = read_json(manifest_path, kManifestFormat);
    PipelineConfig cfg = config_from_json(m.at("config"));
    if (scanner) {
        cfg.scanner = *scanner;
        cfg.validate();
    }
    const fs::path base = manifest_path.parent_path();
    const auto& plots = m.at("plots");
    ensure_dir(out / "clouds");
    std::vector<nlohmann::json> rows(plots.size());
    parallel_for(plots.size(), threads, [&](std::size_t i) {
        const auto& e = plots[i];
        const auto id = e.at("plot_id").get<std::uint32_t>();
        const auto tag = e.at("rotation_tag").get<double>();
        const auto volume = e.at("ground_truth_volume").get<double>();
        const auto stem = plot_stem(id, tag);
        ForestPlot plot;
        if (e.contains("wood_mesh")) {
            TreeInstance all;
            try {
                all.wood = read_obj((base / e.at("wood_mesh").get<std::string>()).string());
                all.leaves = read_obj((base / e.at("leaf_mesh").get<std::string>()).string());
            } catch (const std::exception& ex) {
                throw DataError(stem, ex.what());
            }
            plot.plot_id = id;
            plot.seed = e.at("seed").get<std::uint64_t>();
            plot.width = e.at("width").get<double>();
            plot.depth = e.at("depth").get<double>();
            plot.rotation_tag = tag;
            plot.ground_truth_volume = volume;
            plot.trees.push_back(std::move(all));
        } else {
            auto base_plot = generate_plot(cfg.forest.plot, e.at("seed").get<std::uint64_t>(), id);
            if (tag == 0.0) {
                plot = std::move(base_plot);
            } else {
                bool found = false;
                for (auto& r : rotate_augment(base_plot)) {
                    if (r.rotation_tag == tag) {
                        plot = std::move(r);
                        found = true;
                    }
                }
                if (!found) throw DataError(stem, "rotation_tag is not an augmentation angle");
            }
            if (std::abs(plot.ground_truth_volume - volume) > 1e-9 * std::max(1.0, volume)) {
                throw DataError(stem, "regenerated plot volume does not match the manifest");
            }
        }
        const auto scan = scan_plot(plot, cfg.scanner.scanner, cfg.scanner.ground);
        const auto rel = fs::path("clouds") / (stem + ".xyz");
        write_cloud((out / rel).string(), scan.cloud);
        rows[i] = {{"plot_id", id},
                   {"rotation_tag", tag},
                   {"ground_truth_volume", volume},
                   {"group", id},
                   {"points", scan.cloud.size()},
                   {"pulses", scan.pulse_count},
                   {"path", rel.generic_string()}};
    });
    if (progress) progress("scanned " + std::to_string(rows.size()) + " plots");
    nlohmann::json s = {{"format", kScanManifestFormat},
                        {"config", config_to_json(cfg)},
                        {"source_manifest", m.at("config_hash")},
                        {"scans", rows}};
    s.update(provenance(cfg));
    write_text(out / "scans.json", s.dump(2) + "\n");
    return {out / "scans.json", rows.size()};
}

// ---------------------------------------------------------------------------
// sample

struct SampleStageResult {
    fs::path dataset;
    std::size_t clouds = 0;
};

inline SampleStageResult cmd_sample(const fs::path& scans_path, std::optional<SamplingMethod> method,
                                    std::optional<std::size_t> points, const fs::path& out, std::size_t threads = 1,
                                    const ProgressFn& progress = {}) {
    const auto m = read_json(scans_path, kScanManifestFormat);
    PipelineConfig cfg = config_from_json(m.at("config"));
    if (method) cfg.sampling.method = *method;
    if (points) cfg.sampling.points = *points;
    cfg.validate();
    const fs::path base = scans_path.parent_path();
    const auto& scans = m.at("scans");
    ensure_dir(out / "sampled");
    std::vector<nlohmann::json> rows(scans.size());
    std::vector<std::string> metric_rows(scans.size());
    parallel_for(scans.size(), threads, [&](std::size_t i) {
        const auto& e = scans[i];
        const auto id = e.at("plot_id").get<std::uint32_t>();
        const auto tag = e.at("rotation_tag").get<double>();
        const auto stem = plot_stem(id, tag);
        const auto cloud = load_cloud(base / e.at("path").get<std::string>());
        if (cloud.size() < cfg.sampling.points) {
            throw DataError(stem, "cloud has " + std::to_string(cloud.size()) + " points, fewer than the " +
                                      std::to_string(cfg.sampling.points) + " requested");
        }
        const auto sampled = downsample(cloud, cfg.sampling.points, cfg.sampling.method, sample_seed(cfg.seed, id, tag));
        const auto rel = fs::path("sampled") / (stem + ".xyz");
        write_cloud((out / rel).string(), sampled);
        try {
            metric_rows[i] = metrics_csv_row(stem, spatial_metrics(sampled));
        } catch (const std::invalid_argument& ex) {
            throw DataError(stem, ex.what());
        }
        rows[i] = {{"plot_id", id},
                   {"rotation_tag", tag},
                   {"label", e.at("ground_truth_volume")},
                   {"group", e.at("group")},
                   {"path", rel.generic_string()}};
    });
    std::string csv = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : metric_rows) csv += r + "\n";
    write_text(out / "metrics.csv", csv);
    if (progress) progress("sampled " + std::to_string(rows.size()) + " clouds");
    nlohmann::json d = {{"format", kDatasetFormat},
                        {"config", config_to_json(cfg)},
                        {"points", cfg.sampling.points},
                        {"entries", rows}};
    d.update(provenance(cfg));
    write_text(out / "dataset.json", d.dump(2) + "\n");
    return {out / "dataset.json", rows.size()};
}

// ---------------------------------------------------------------------------
// train

inline std::vector<Sample> load_dataset(const fs::path& dataset_path, PipelineConfig* cfg_out = nullptr) {
    const auto d = read_json(dataset_path, kDatasetFormat);
    if (cfg_out) *cfg_out = config_from_json(d.at("config"));
    const fs::path base = dataset_path.parent_path();
    std::vector<Sample> samples;
    for (const auto& e : d.at("entries")) {
        Sample s;
        s.cloud = load_cloud(base / e.at("path").get<std::string>());
        s.label = e.at("label").get<double>();
        s.group = e.at("group").get<std::uint32_t>();
        samples.push_back(std::move(s));
    }
    return samples;
}

inline std::string fold_curve_csv(const FoldResult& f) {
    std::string s = "epoch,train_loss,val_loss,val_mape\n";
    for (const auto& r : f.curve) {
        s += std::to_string(r.epoch);
        for (double v : {r.train_loss, r.val_loss, r.val_mape}) {
            s += ',';
            append_number(s, v);
        }
        s += '\n';
    }
    return s;
}

struct TrainStageResult {
    fs::path summary;
    TrainResult result;
};

/// Cross-validated training. `cfg` supplies model and training sections; its
/// sampling section must agree with the dataset.
inline TrainStageResult cmd_train(const fs::path& dataset_path, Architecture arch, const std::optional<PipelineConfig>& cfg_override,
                                  const fs::path& out, std::size_t threads = 1, const ProgressFn& progress = {}) {
    PipelineConfig data_cfg;
    const auto samples = load_dataset(dataset_path, &data_cfg);
    PipelineConfig cfg = cfg_override ? *cfg_override : data_cfg;
    // the dataset decides what the clouds look like
    cfg.sampling = data_cfg.sampling;
    cfg.model.architecture = arch;
    cfg.training.seed = cfg.seed;
    cfg.validate();
    const auto desc = cfg.model.descriptor(arch, cfg.sampling.points);
    ensure_dir(out);
    auto result = cross_validate(desc, samples, cfg.training, threads, progress);

    const auto prov = provenance(cfg);
    nlohmann::json folds = nlohmann::json::array();
    for (auto& f : result.folds) {
        const auto stem = "fold_" + std::to_string(f.fold);
        write_text(out / (stem + ".csv"), fold_curve_csv(f));
        f.best.metadata = prov;
        f.best.metadata["fold"] = f.fold;
        f.best.metadata["architecture"] = to_string(arch);
        save_checkpoint(f.best, (out / (stem + ".ckpt.json")).string());
        folds.push_back({{"fold", f.fold},
                         {"train_size", f.train_size},
                         {"val_size", f.val_size},
                         {"best_epoch", f.best_epoch},
                         {"best_val_loss", f.best_val_loss},
                         {"best_val_mape", f.best_val_mape},
                         {"baseline_val_mape", f.baseline_val_mape},
                         {"checkpoint", stem + ".ckpt.json"},
                         {"curve", stem + ".csv"}});
    }
    const auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
    nlohmann::json s = {{"format", kTrainingReportFormat},
                        {"architecture", to_string(arch)},
                        {"descriptor", descriptor_to_json(desc)},
                        {"parameter_count", make_encoder(desc, 0)->parameters().scalar_count()},
                        {"layers", make_encoder(desc, 0)->describe()},
                        {"samples", samples.size()},
                        {"folds", folds},
                        {"val_mape_percent", ms(result.summary.val_mape)},
                        {"val_loss", ms(result.summary.val_loss)},
                        {"baseline_val_mape_percent", ms(result.summary.baseline_val_mape)},
                        {"config", config_to_json(cfg)},
                        {"notes",
                         {"inputs are canonicalized: xy centroid at the origin, minimum z at 0, points sorted",
                          "batch-norm statistics come from training batches; validation runs in eval mode",
                          "validation clouds are never jittered",
                          "the checkpoint per fold holds the epoch with the lowest validation loss",
                          "mean +- std across folds uses the sample standard deviation"}}};
    s.update(prov);
    write_text(out / "summary.json", s.dump(2) + "\n");
    return {out / "summary.json", std::move(result)};
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
    double tile_edge = 17.0;
    std::size_t min_tile_points = 256;
    double wood_density = kDefaultWoodDensity;
    std::string site;  ///< site name for the site report; the cloud file stem by default
};

struct PredictResult {
    std::vector<PlotEstimate> tiles;
    SiteTotals site;
    std::vector<DroppedTile> dropped;
    std::string estimates_csv;
    std::string site_csv;
};

/// Exactly `n` points from a tile: the configured down-sampling when the tile
/// is large enough, otherwise the tile repeated cyclically.
inline PointCloud fit_to_size(const PointCloud& c, std::size_t n, SamplingMethod method, std::uint64_t seed) {
    if (c.size() >= n) return downsample(c, n, method, seed);
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i % c.size());
    return c.select(idx);
}

inline PredictResult predict_cloud(const PointCloud& cloud, const Checkpoint& ckpt, const PredictOptions& opt) {
    if (!(opt.tile_edge > 0.0)) throw ConfigError("sampling.tile_edge", "must be > 0");
    if (!(opt.wood_density > 0.0)) throw ConfigError("biomass.wood_density", "must be > 0");
    const auto enc = load_encoder(ckpt);
    const auto& meta = ckpt.metadata;
    const auto seed = meta.value("seed", std::uint64_t{0});
    const auto method = parse_sampling_method(meta.value("sampling_method", std::string("fps")));
    const auto tiling = tile(cloud, opt.tile_edge, opt.min_tile_points);
    if (tiling.tiles.empty()) throw DataError(opt.site, "no tile holds at least " + std::to_string(opt.min_tile_points) + " points");

    PredictResult res;
    res.dropped = tiling.dropped;
    std::vector<PointCloud> inputs;
    for (const auto& t : tiling.tiles) {
        inputs.push_back(fit_to_size(t.cloud, enc->descriptor().point_count, method,
                                     derive_seed(seed, 0x74696c65, static_cast<std::uint64_t>(t.ix),
                                                 static_cast<std::uint64_t>(t.iy))));
    }
    const auto volumes = enc->predict(inputs);
    for (std::size_t i = 0; i < tiling.tiles.size(); ++i) {
        const auto& t = tiling.tiles[i];
        const auto id = opt.site + "_x" + std::to_string(t.ix) + "_y" + std::to_string(t.iy);
        res.tiles.push_back(volume_to_carbon(volumes[i], opt.wood_density, t.area / 10000.0, id));
    }
    res.site = aggregate_tiles(res.tiles);

    std::string head;
    for (const char* key : {"config_hash", "seed", "sampling_method", "fold_mode", "architecture", "fold"}) {
        if (meta.contains(key)) head += "# " + std::string(key) + "=" + (meta[key].is_string() ? meta[key].get<std::string>() : meta[key].dump()) + "\n";
    }
    head += "# density_kg_m3=";
    append_number(head, opt.wood_density);
    head += "\n# tile_edge_m=";
    append_number(head, opt.tile_edge);
    head += "\n# dropped_tiles=" + std::to_string(res.dropped.size()) + "\n";

    res.estimates_csv = head + kPlotEstimateCsvHeader + "\n";
    for (const auto& e : res.tiles) res.estimates_csv += plot_estimate_csv_row(e) + "\n";
    res.site_csv = head + kSiteReportCsvHeader + "\n" +
                   site_report_csv_row(opt.site, meta.value("architecture", std::string("model")), res.site) + "\n";
    return res;
}

inline PredictResult cmd_predict(const fs::path& cloud_path, const fs::path& checkpoint_path, PredictOptions opt,
                                 const fs::path& out_csv, const std::optional<fs::path>& site_csv = std::nullopt) {
    const auto ckpt = load_checkpoint(checkpoint_path.string());
    const auto cloud = load_cloud(cloud_path);
    if (opt.site.empty()) opt.site = cloud_path.stem().string();
    auto res = predict_cloud(cloud, ckpt, opt);
    if (out_csv.has_parent_path()) ensure_dir(out_csv.parent_path());
    write_text(out_csv, res.estimates_csv);
    if (site_csv) {
        if (site_csv->has_parent_path()) ensure_dir(site_csv->parent_path());
        write_text(*site_csv, res.site_csv);
    }
    return res;
}

// ---------------------------------------------------------------------------
// allometry

enum class AllometryMode { diameter, height };

/// CSV `mode,model,value,agb_kg` for a list of diameters (cm) or heights (m).
inline std::string allometry_table(AllometryMode mode, const std::vector<AllometricModel>& models,
                                   const std::string& model_name, const std::vector<double>& values) {
    std::string s = "mode,model,value,agb_kg\n";
    const AllometricModel* m = nullptr;
    if (mode == AllometryMode::diameter) {
        try {
            m = &find_model(models, model_name);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("allometry.model", e.what());
        }
    }
    for (double v : values) {
        double agb = 0.0;
        try {
            agb = mode == AllometryMode::diameter ? agb_from_diameter(*m, v) : agb_from_height(v);
        } catch (const std::domain_error& e) {
            std::string rec = "value ";
            append_number(rec, v);
            throw DataError(rec, e.what());
        }
        s += mode == AllometryMode::diameter ? "diameter," + m->name + "," : std::string("height,height,");
        append_number(s, v);
        s += ',';
        append_number(s, agb);
        s += '\n';
    }
    return s;
}

}  // namespace forestvol
