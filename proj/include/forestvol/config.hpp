#pragma once

// Pipeline configuration: one TOML document with sections
//   seed, output_dir
//   [forest] [scanner] [sampling] [model] [model.pointnet] [model.pointnetpp]
//   [model.dgcnn] [training] [biomass]
// Every key is optional (defaults below) but unknown keys and wrongly typed
// values are rejected with the dotted field path.

#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "forestvol/biomass.hpp"
#include "forestvol/checkpoint.hpp"
#include "forestvol/encoders.hpp"
#include "forestvol/errors.hpp"
#include "forestvol/forest.hpp"
#include "forestvol/lidar.hpp"
#include "forestvol/pointcloud.hpp"
#include "forestvol/training.hpp"

namespace forestvol {

struct ForestSection {
    std::size_t plot_count = 200;
    bool rotations = true;     ///< add the seven rotated copies of every base plot
    bool write_meshes = false; ///< also emit OBJ meshes (large); scans regenerate plots otherwise
    PlotConfig plot;
};

struct ScannerSection {
    ScannerConfig scanner;
    bool ground = true;
};

struct SamplingSection {
    SamplingMethod method = SamplingMethod::farthest_point;
    std::size_t points = 2048;
    double tile_edge = 17.0;
    std::size_t min_tile_points = 256;
};

struct ModelSection {
    Architecture architecture = Architecture::pointnetpp;
    EncoderDescriptor pointnet = desk_descriptor(Architecture::pointnet);
    EncoderDescriptor pointnetpp = desk_descriptor(Architecture::pointnetpp);
    EncoderDescriptor dgcnn = desk_descriptor(Architecture::dgcnn);

    EncoderDescriptor descriptor(Architecture a, std::size_t points) const {
        EncoderDescriptor d = a == Architecture::pointnet ? pointnet : (a == Architecture::pointnetpp ? pointnetpp : dgcnn);
        d.architecture = a;
        d.point_count = points;
        return d;
    }
};

struct BiomassSection {
    double wood_density = kDefaultWoodDensity;  ///< kg/m^3
    std::string allometry_file;                 ///< empty: built-in coefficients
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    ForestSection forest;
    ScannerSection scanner;
    SamplingSection sampling;
    ModelSection model;
    TrainConfig training;
    BiomassSection biomass;

    void validate() const {
        if (forest.plot_count < 1) throw ConfigError("forest.plot_count", "must be >= 1");
        forest.plot.validate();
        scanner.scanner.validate();
        if (sampling.points < 2) throw ConfigError("sampling.points", "must be >= 2");
        if (!(sampling.tile_edge > 0.0)) throw ConfigError("sampling.tile_edge", "must be > 0");
        if (sampling.min_tile_points < 1) throw ConfigError("sampling.min_tile_points", "must be >= 1");
        for (auto a : {Architecture::pointnet, Architecture::pointnetpp, Architecture::dgcnn}) {
            try {
                model.descriptor(a, sampling.points).validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError("model." + to_string(a), e.what());
            }
        }
        training.validate();
        if (!(biomass.wood_density > 0.0)) throw ConfigError("biomass.wood_density", "must be > 0");
    }
};

// ---------------------------------------------------------------------------
// TOML -> PipelineConfig

namespace detail {

class TomlReader {
public:
    TomlReader(const toml::table& t, std::string path) : t_(t), path_(std::move(path)) {}

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const toml::node* get(const std::string& key) {
        seen_.insert(key);
        return t_.get(key);
    }

    void read(const std::string& key, double& out) {
        if (const auto* n = get(key)) {
            if (auto v = n->value_exact<double>()) out = *v;
            else if (auto i = n->value_exact<std::int64_t>()) out = static_cast<double>(*i);
            else throw ConfigError(field(key), "expected a number");
            if (!std::isfinite(out)) throw ConfigError(field(key), "must be finite");
        }
    }

    template <typename Int>
        requires std::is_integral_v<Int>
    void read(const std::string& key, Int& out) {
        if (const auto* n = get(key)) out = as_int<Int>(*n, field(key));
    }

    void read(const std::string& key, bool& out) {
        if (const auto* n = get(key)) {
            auto v = n->value_exact<bool>();
            if (!v) throw ConfigError(field(key), "expected true or false");
            out = *v;
        }
    }

    void read(const std::string& key, std::string& out) {
        if (const auto* n = get(key)) {
            auto v = n->value_exact<std::string>();
            if (!v) throw ConfigError(field(key), "expected a string");
            out = *v;
        }
    }

    void read(const std::string& key, std::vector<std::size_t>& out) {
        if (const auto* n = get(key)) out = int_list(*n, field(key));
    }

    void read(const std::string& key, std::vector<double>& out) {
        if (const auto* n = get(key)) out = num_list(*n, field(key));
    }

    void read(const std::string& key, std::vector<std::vector<std::size_t>>& out) {
        if (const auto* n = get(key)) {
            const auto* arr = n->as_array();
            if (!arr) throw ConfigError(field(key), "expected an array of arrays");
            out.clear();
            for (std::size_t i = 0; i < arr->size(); ++i) out.push_back(int_list(*arr->get(i), field(key) + "[" + std::to_string(i) + "]"));
        }
    }

    void read(const std::string& key, Range& out) {
        if (const auto* n = get(key)) {
            const auto v = num_list(*n, field(key));
            if (v.size() != 2) throw ConfigError(field(key), "expected [min, max]");
            out = {v[0], v[1]};
        }
    }

    void read(const std::string& key, IntRange& out) {
        if (const auto* n = get(key)) {
            const auto* arr = n->as_array();
            if (!arr || arr->size() != 2) throw ConfigError(field(key), "expected [min, max]");
            out = {as_int<int>(*arr->get(0), field(key)), as_int<int>(*arr->get(1), field(key))};
        }
    }

    /// Sub-table (possibly absent) for nested sections.
    const toml::table* table(const std::string& key) {
        const auto* n = get(key);
        if (!n) return nullptr;
        const auto* t = n->as_table();
        if (!t) throw ConfigError(field(key), "expected a table");
        return t;
    }

    /// Reject keys nobody asked for.
    void finish() const {
        for (const auto& [k, v] : t_) {
            const std::string key(k.str());
            if (!seen_.contains(key)) throw ConfigError(field(key), "unknown key");
        }
    }

private:
    template <typename Int>
    static Int as_int(const toml::node& n, const std::string& where) {
        auto v = n.value_exact<std::int64_t>();
        if (!v) throw ConfigError(where, "expected an integer");
        if (*v < static_cast<std::int64_t>(std::numeric_limits<Int>::min()) ||
            (*v > 0 && static_cast<std::uint64_t>(*v) > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))) {
            throw ConfigError(where, "integer out of range");
        }
        return static_cast<Int>(*v);
    }

    static std::vector<std::size_t> int_list(const toml::node& n, const std::string& where) {
        const auto* arr = n.as_array();
        if (!arr) throw ConfigError(where, "expected an array of integers");
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < arr->size(); ++i) {
            const auto v = as_int<std::int64_t>(*arr->get(i), where);
            if (v < 0) throw ConfigError(where, "values must be >= 0");
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }

    static std::vector<double> num_list(const toml::node& n, const std::string& where) {
        const auto* arr = n.as_array();
        if (!arr) throw ConfigError(where, "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < arr->size(); ++i) {
            const auto* e = arr->get(i);
            if (auto d = e->value_exact<double>()) out.push_back(*d);
            else if (auto k = e->value_exact<std::int64_t>()) out.push_back(static_cast<double>(*k));
            else throw ConfigError(where, "expected numbers");
        }
        return out;
    }

    const toml::table& t_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_widths_common(TomlReader& r, EncoderDescriptor& d) {
    r.read("head_widths", d.head_widths);
}

}  // namespace detail

inline PipelineConfig config_from_toml(const toml::table& root) {
    using detail::TomlReader;
    PipelineConfig cfg;
    TomlReader top(root, "");
    std::int64_t seed = 0;
    top.read("seed", seed);
    if (seed < 0) throw ConfigError("seed", "must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(seed);
    top.read("output_dir", cfg.output_dir);

    if (const auto* t = top.table("forest")) {
        TomlReader r(*t, "forest");
        auto& f = cfg.forest;
        r.read("plot_count", f.plot_count);
        r.read("rotations", f.rotations);
        r.read("write_meshes", f.write_meshes);
        r.read("tree_count", f.plot.tree_count);
        r.read("width", f.plot.width);
        r.read("depth", f.plot.depth);
        r.read("archetype_weights", f.plot.archetype_weights);
        r.read("min_spacing", f.plot.min_spacing);
        r.read("max_retries", f.plot.max_retries);
        r.read("trunk_segments", f.plot.resolution.trunk_segments);
        r.read("trunk_sections", f.plot.resolution.trunk_sections);
        r.read("branch_segments", f.plot.resolution.branch_segments);
        r.finish();
    }
    if (const auto* t = top.table("scanner")) {
        TomlReader r(*t, "scanner");
        auto& s = cfg.scanner.scanner;
        r.read("altitude", s.altitude);
        r.read("flight_speed", s.flight_speed);
        r.read("pulse_rate", s.pulse_rate);
        r.read("scan_frequency", s.scan_frequency);
        r.read("max_returns", s.max_returns);
        r.read("scan_angle", s.scan_angle);
        r.read("min_return_separation", s.min_return_separation);
        r.read("flight_line_spacing", s.flight_line_spacing);
        r.read("ground", cfg.scanner.ground);
        r.finish();
    }
    if (const auto* t = top.table("sampling")) {
        TomlReader r(*t, "sampling");
        std::string method = to_string(cfg.sampling.method);
        r.read("method", method);
        try {
            cfg.sampling.method = parse_sampling_method(method);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("sampling.method", e.what());
        }
        r.read("points", cfg.sampling.points);
        r.read("tile_edge", cfg.sampling.tile_edge);
        r.read("min_tile_points", cfg.sampling.min_tile_points);
        r.finish();
    }
    if (const auto* t = top.table("model")) {
        TomlReader r(*t, "model");
        auto& m = cfg.model;
        std::string arch = to_string(m.architecture);
        r.read("architecture", arch);
        try {
            m.architecture = parse_architecture(arch);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("model.architecture", e.what());
        }
        if (const auto* p = r.table("pointnet")) {
            TomlReader s(*p, "model.pointnet");
            detail::read_widths_common(s, m.pointnet);
            s.read("t_net", m.pointnet.t_net);
            s.read("tnet_widths", m.pointnet.tnet_widths);
            s.read("tnet_head_widths", m.pointnet.tnet_head_widths);
            s.read("point_widths", m.pointnet.point_widths);
            s.finish();
        }
        if (const auto* p = r.table("pointnetpp")) {
            TomlReader s(*p, "model.pointnetpp");
            detail::read_widths_common(s, m.pointnetpp);
            std::vector<std::size_t> centroids, caps;
            std::vector<double> radii;
            std::vector<std::vector<std::size_t>> widths;
            for (const auto& l : m.pointnetpp.levels) {
                centroids.push_back(l.centroids);
                radii.push_back(l.radius);
                caps.push_back(l.max_neighbors);
                widths.push_back(l.widths);
            }
            s.read("centroids", centroids);
            s.read("radii", radii);
            s.read("max_neighbors", caps);
            s.read("level_widths", widths);
            if (radii.size() != centroids.size() || caps.size() != centroids.size() || widths.size() != centroids.size()) {
                throw ConfigError("model.pointnetpp.centroids", "centroids, radii, max_neighbors and level_widths need one entry per level");
            }
            m.pointnetpp.levels.clear();
            for (std::size_t i = 0; i < centroids.size(); ++i) m.pointnetpp.levels.push_back({centroids[i], radii[i], caps[i], widths[i]});
            s.read("global_widths", m.pointnetpp.global_widths);
            s.finish();
        }
        if (const auto* p = r.table("dgcnn")) {
            TomlReader s(*p, "model.dgcnn");
            detail::read_widths_common(s, m.dgcnn);
            s.read("k", m.dgcnn.k);
            s.read("edge_widths", m.dgcnn.edge_widths);
            s.read("embed_width", m.dgcnn.embed_width);
            s.finish();
        }
        r.finish();
    }
    if (const auto* t = top.table("training")) {
        TomlReader r(*t, "training");
        auto& c = cfg.training;
        r.read("epochs", c.epochs);
        r.read("batch_size", c.batch_size);
        r.read("learning_rate", c.learning_rate);
        r.read("weight_decay", c.weight_decay);
        r.read("beta1", c.beta1);
        r.read("beta2", c.beta2);
        r.read("adam_eps", c.adam_eps);
        r.read("t0", c.t0);
        r.read("t_mult", c.t_mult);
        r.read("eta_min", c.eta_min);
        r.read("jitter", c.jitter);
        r.read("jitter_sigma", c.jitter_sigma);
        r.read("jitter_clip", c.jitter_clip);
        r.read("fold_count", c.fold_count);
        std::string mode = to_string(c.fold_mode);
        r.read("fold_mode", mode);
        try {
            c.fold_mode = parse_fold_mode(mode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("training.fold_mode", e.what());
        }
        r.read("init_bias_to_mean", c.init_bias_to_mean);
        r.finish();
    }
    if (const auto* t = top.table("biomass")) {
        TomlReader r(*t, "biomass");
        r.read("wood_density", cfg.biomass.wood_density);
        r.read("allometry_file", cfg.biomass.allometry_file);
        r.finish();
    }
    top.finish();
    cfg.training.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

inline PipelineConfig parse_config(std::string_view text, const std::string& source = "config") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        const auto& b = e.source().begin;
        throw ConfigError(source + ":" + std::to_string(b.line) + ":" + std::to_string(b.column),
                          std::string(e.description()));
    }
    return config_from_toml(root);
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

// ---------------------------------------------------------------------------
// canonical form and hash

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    const auto& p = c.forest.plot;
    j["forest"] = {{"plot_count", c.forest.plot_count},
                   {"rotations", c.forest.rotations},
                   {"write_meshes", c.forest.write_meshes},
                   {"tree_count", {p.tree_count.min, p.tree_count.max}},
                   {"width", {p.width.min, p.width.max}},
                   {"depth", {p.depth.min, p.depth.max}},
                   {"archetype_weights", p.archetype_weights},
                   {"min_spacing", p.min_spacing},
                   {"max_retries", p.max_retries},
                   {"trunk_segments", p.resolution.trunk_segments},
                   {"trunk_sections", p.resolution.trunk_sections},
                   {"branch_segments", p.resolution.branch_segments}};
    const auto& s = c.scanner.scanner;
    j["scanner"] = {{"altitude", s.altitude},
                    {"flight_speed", s.flight_speed},
                    {"pulse_rate", s.pulse_rate},
                    {"scan_frequency", s.scan_frequency},
                    {"max_returns", s.max_returns},
                    {"scan_angle", s.scan_angle},
                    {"min_return_separation", s.min_return_separation},
                    {"flight_line_spacing", s.flight_line_spacing},
                    {"ground", c.scanner.ground}};
    j["sampling"] = {{"method", to_string(c.sampling.method)},
                     {"points", c.sampling.points},
                     {"tile_edge", c.sampling.tile_edge},
                     {"min_tile_points", c.sampling.min_tile_points}};
    const auto& pn = c.model.pointnet;
    const auto& pp = c.model.pointnetpp;
    const auto& dg = c.model.dgcnn;
    std::vector<std::size_t> centroids, caps;
    std::vector<double> radii;
    std::vector<std::vector<std::size_t>> level_widths;
    for (const auto& l : pp.levels) {
        centroids.push_back(l.centroids);
        radii.push_back(l.radius);
        caps.push_back(l.max_neighbors);
        level_widths.push_back(l.widths);
    }
    j["model"] = {{"architecture", to_string(c.model.architecture)},
                  {"pointnet",
                   {{"head_widths", pn.head_widths},
                    {"t_net", pn.t_net},
                    {"tnet_widths", pn.tnet_widths},
                    {"tnet_head_widths", pn.tnet_head_widths},
                    {"point_widths", pn.point_widths}}},
                  {"pointnetpp",
                   {{"head_widths", pp.head_widths},
                    {"centroids", centroids},
                    {"radii", radii},
                    {"max_neighbors", caps},
                    {"level_widths", level_widths},
                    {"global_widths", pp.global_widths}}},
                  {"dgcnn",
                   {{"head_widths", dg.head_widths},
                    {"k", dg.k},
                    {"edge_widths", dg.edge_widths},
                    {"embed_width", dg.embed_width}}}};
    const auto& t = c.training;
    j["training"] = {{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"learning_rate", t.learning_rate},
                     {"weight_decay", t.weight_decay},
                     {"beta1", t.beta1},
                     {"beta2", t.beta2},
                     {"adam_eps", t.adam_eps},
                     {"t0", t.t0},
                     {"t_mult", t.t_mult},
                     {"eta_min", t.eta_min},
                     {"jitter", t.jitter},
                     {"jitter_sigma", t.jitter_sigma},
                     {"jitter_clip", t.jitter_clip},
                     {"fold_count", t.fold_count},
                     {"fold_mode", to_string(t.fold_mode)},
                     {"init_bias_to_mean", t.init_bias_to_mean}};
    j["biomass"] = {{"wood_density", c.biomass.wood_density}, {"allometry_file", c.biomass.allometry_file}};
    return j;
}

namespace detail {

inline toml::table json_to_toml_table(const nlohmann::json& j);

inline toml::array json_to_toml_array(const nlohmann::json& j) {
    toml::array a;
    for (const auto& v : j) {
        if (v.is_boolean()) a.push_back(v.get<bool>());
        else if (v.is_number_integer()) a.push_back(v.get<std::int64_t>());
        else if (v.is_number_float()) a.push_back(v.get<double>());
        else if (v.is_string()) a.push_back(v.get<std::string>());
        else if (v.is_array()) a.push_back(json_to_toml_array(v));
        else if (v.is_object()) a.push_back(json_to_toml_table(v));
        else throw ConfigError("config", "null values are not representable");
    }
    return a;
}

inline toml::table json_to_toml_table(const nlohmann::json& j) {
    toml::table t;
    for (const auto& [k, v] : j.items()) {
        if (v.is_boolean()) t.insert_or_assign(k, v.get<bool>());
        else if (v.is_number_integer()) t.insert_or_assign(k, v.get<std::int64_t>());
        else if (v.is_number_float()) t.insert_or_assign(k, v.get<double>());
        else if (v.is_string()) t.insert_or_assign(k, v.get<std::string>());
        else if (v.is_array()) t.insert_or_assign(k, json_to_toml_array(v));
        else if (v.is_object()) t.insert_or_assign(k, json_to_toml_table(v));
        else throw ConfigError("config." + k, "null values are not representable");
    }
    return t;
}

}  // namespace detail

/// Inverse of config_to_json (used to reload the configuration embedded in manifests).
inline PipelineConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config", "expected an object");
    return config_from_toml(detail::json_to_toml_table(j));
}

/// FNV-1a 64 of a string, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Hash of the fully resolved configuration (defaults included, keys sorted).
inline std::string config_hash(const PipelineConfig& c) { return fnv1a_hex(config_to_json(c).dump()); }

}  // namespace forestvol
