#pragma once

// Model checkpoints as JSON: architecture descriptor, parameters, batch-norm
// buffers, optimizer and scheduler state, RNG state, under a format tag.

#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forestvol/encoders.hpp"
#include "forestvol/errors.hpp"
#include "forestvol/nn.hpp"

namespace forestvol {

inline constexpr const char* kCheckpointFormat = "forestvol-checkpoint/1";

// ---------------------------------------------------------------------------
// descriptor <-> json

inline nlohmann::json descriptor_to_json(const EncoderDescriptor& d) {
    nlohmann::json j;
    j["architecture"] = to_string(d.architecture);
    j["point_count"] = d.point_count;
    j["head_widths"] = d.head_widths;
    switch (d.architecture) {
        case Architecture::pointnet:
            j["t_net"] = d.t_net;
            j["tnet_widths"] = d.tnet_widths;
            j["tnet_head_widths"] = d.tnet_head_widths;
            j["point_widths"] = d.point_widths;
            break;
        case Architecture::pointnetpp: {
            auto levels = nlohmann::json::array();
            for (const auto& l : d.levels) {
                // radius may be +inf, which JSON cannot carry as a number
                levels.push_back({{"centroids", l.centroids},
                                  {"radius", std::isinf(l.radius) ? nlohmann::json("inf") : nlohmann::json(l.radius)},
                                  {"max_neighbors", l.max_neighbors},
                                  {"widths", l.widths}});
            }
            j["levels"] = levels;
            j["global_widths"] = d.global_widths;
            break;
        }
        case Architecture::dgcnn:
            j["k"] = d.k;
            j["edge_widths"] = d.edge_widths;
            j["embed_width"] = d.embed_width;
            break;
    }
    return j;
}

inline EncoderDescriptor descriptor_from_json(const nlohmann::json& j) {
    EncoderDescriptor d;
    d.architecture = parse_architecture(j.at("architecture").get<std::string>());
    d.point_count = j.at("point_count").get<std::size_t>();
    d.head_widths = j.at("head_widths").get<std::vector<std::size_t>>();
    switch (d.architecture) {
        case Architecture::pointnet:
            d.t_net = j.at("t_net").get<bool>();
            d.tnet_widths = j.at("tnet_widths").get<std::vector<std::size_t>>();
            d.tnet_head_widths = j.at("tnet_head_widths").get<std::vector<std::size_t>>();
            d.point_widths = j.at("point_widths").get<std::vector<std::size_t>>();
            break;
        case Architecture::pointnetpp:
            d.levels.clear();
            for (const auto& l : j.at("levels")) {
                SetAbstractionLevel lvl;
                lvl.centroids = l.at("centroids").get<std::size_t>();
                const auto& r = l.at("radius");
                lvl.radius = r.is_string() ? std::numeric_limits<double>::infinity() : r.get<double>();
                lvl.max_neighbors = l.at("max_neighbors").get<std::size_t>();
                lvl.widths = l.at("widths").get<std::vector<std::size_t>>();
                d.levels.push_back(std::move(lvl));
            }
            d.global_widths = j.at("global_widths").get<std::vector<std::size_t>>();
            break;
        case Architecture::dgcnn:
            d.k = j.at("k").get<std::size_t>();
            d.edge_widths = j.at("edge_widths").get<std::vector<std::vector<std::size_t>>>();
            d.embed_width = j.at("embed_width").get<std::size_t>();
            break;
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
};

struct NamedBuffer {
    std::string name;
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

struct Checkpoint {
    EncoderDescriptor descriptor;
    std::vector<NamedTensor> parameters;
    std::vector<NamedBuffer> buffers;
    nn::AdamW optimizer;
    nn::CosineWarmRestarts scheduler;
    std::size_t epoch = 0;
    std::string rng_state;  ///< textual mt19937_64 state, empty if not captured
    nlohmann::json metadata = nlohmann::json::object();  ///< provenance (config hash, seed, fold, ...)
};

/// Snapshot of an encoder's trainable parameters and buffers.
inline Checkpoint capture(const Encoder& enc) {
    Checkpoint c;
    c.descriptor = enc.descriptor();
    const auto& ps = enc.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        c.parameters.push_back({ps.name(i), ps[i].shape(), {ps[i].values().begin(), ps[i].values().end()}});
    }
    for (const auto& b : ps.buffers()) c.buffers.push_back({b.name, b.stats->running_mean, b.stats->running_var});
    return c;
}

/// Copy parameters and buffers into `enc`; names and shapes must match exactly.
inline void restore(Encoder& enc, const Checkpoint& c) {
    auto& ps = enc.parameters();
    if (c.parameters.size() != ps.size() || c.buffers.size() != ps.buffers().size()) {
        throw DataError("checkpoint", "parameter count does not match the architecture descriptor");
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& t = c.parameters[i];
        if (t.name != ps.name(i) || t.shape != ps[i].shape() || t.values.size() != ps[i].numel()) {
            throw DataError("checkpoint", "parameter " + t.name + " " + ad::shape_str(t.shape) + " does not match " +
                                              ps.name(i) + " " + ad::shape_str(ps[i].shape()));
        }
        std::copy(t.values.begin(), t.values.end(), ps[i].mutable_values().begin());
    }
    for (std::size_t i = 0; i < c.buffers.size(); ++i) {
        auto& dst = ps.buffers()[i];
        const auto& src = c.buffers[i];
        if (src.name != dst.name || src.running_mean.size() != dst.stats->running_mean.size() ||
            src.running_var.size() != dst.stats->running_var.size()) {
            throw DataError("checkpoint", "buffer " + src.name + " does not match " + dst.name);
        }
        dst.stats->running_mean = src.running_mean;
        dst.stats->running_var = src.running_var;
    }
}

inline std::unique_ptr<Encoder> load_encoder(const Checkpoint& c) {
    auto enc = make_encoder(c.descriptor, 0);
    restore(*enc, c);
    return enc;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["descriptor"] = descriptor_to_json(c.descriptor);
    auto params = nlohmann::json::array();
    for (const auto& t : c.parameters) params.push_back({{"name", t.name}, {"shape", t.shape}, {"values", t.values}});
    j["parameters"] = params;
    auto bufs = nlohmann::json::array();
    for (const auto& b : c.buffers)
        bufs.push_back({{"name", b.name}, {"running_mean", b.running_mean}, {"running_var", b.running_var}});
    j["buffers"] = bufs;
    const auto& o = c.optimizer;
    j["optimizer"] = {{"type", "adamw"},     {"beta1", o.beta1}, {"beta2", o.beta2},
                      {"eps", o.eps},        {"weight_decay", o.weight_decay},
                      {"step", o.step_count}, {"m", o.m},         {"v", o.v}};
    const auto& s = c.scheduler;
    j["scheduler"] = {{"type", "cosine_warm_restarts"},
                      {"eta_0", s.eta_0},
                      {"eta_min", s.eta_min},
                      {"t0", s.t0},
                      {"t_mult", s.t_mult}};
    j["epoch"] = c.epoch;
    j["rng_state"] = c.rng_state;
    j["metadata"] = c.metadata;
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) {
            throw DataError("checkpoint", "unsupported format tag '" + j.at("format").get<std::string>() + "'");
        }
        Checkpoint c;
        c.descriptor = descriptor_from_json(j.at("descriptor"));
        for (const auto& t : j.at("parameters")) {
            NamedTensor nt{t.at("name").get<std::string>(), t.at("shape").get<ad::Shape>(),
                           t.at("values").get<std::vector<double>>()};
            if (ad::shape_numel(nt.shape) != nt.values.size()) {
                throw DataError("checkpoint", "parameter " + nt.name + " has the wrong number of values");
            }
            c.parameters.push_back(std::move(nt));
        }
        for (const auto& b : j.at("buffers")) {
            c.buffers.push_back({b.at("name").get<std::string>(), b.at("running_mean").get<std::vector<double>>(),
                                 b.at("running_var").get<std::vector<double>>()});
        }
        const auto& o = j.at("optimizer");
        c.optimizer.beta1 = o.at("beta1").get<double>();
        c.optimizer.beta2 = o.at("beta2").get<double>();
        c.optimizer.eps = o.at("eps").get<double>();
        c.optimizer.weight_decay = o.at("weight_decay").get<double>();
        c.optimizer.step_count = o.at("step").get<long>();
        c.optimizer.m = o.at("m").get<std::vector<std::vector<double>>>();
        c.optimizer.v = o.at("v").get<std::vector<std::vector<double>>>();
        const auto& s = j.at("scheduler");
        c.scheduler.eta_0 = s.at("eta_0").get<double>();
        c.scheduler.eta_min = s.at("eta_min").get<double>();
        c.scheduler.t0 = s.at("t0").get<long>();
        c.scheduler.t_mult = s.at("t_mult").get<long>();
        c.epoch = j.at("epoch").get<std::size_t>();
        c.rng_state = j.at("rng_state").get<std::string>();
        if (j.contains("metadata")) c.metadata = j.at("metadata");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint", std::string("malformed checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError("checkpoint", e.what());
    }
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(path, "cannot write checkpoint");
    // max_digits10 via nlohmann's round-trip double formatting
    out << checkpoint_to_json(c).dump() << '\n';
    if (!out) throw DataError(path, "write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path, "cannot open checkpoint");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path, std::string("not valid JSON: ") + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace forestvol
