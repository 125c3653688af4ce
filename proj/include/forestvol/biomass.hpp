#pragma once

// Allometric AGB baselines and volume -> AGB -> carbon bookkeeping.

#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "forestvol/errors.hpp"
#include "forestvol/mesh.hpp"  // append_number, detail::parse_number

namespace forestvol {

inline constexpr double kCarbonFraction = 0.5;
inline constexpr double kDefaultWoodDensity = 650.0;  ///< kg/m^3, placeholder for eucalypt

enum class DiameterKind { d130, d10 };

inline std::string to_string(DiameterKind k) { return k == DiameterKind::d130 ? "D130" : "D10"; }

/// AGB (kg) = exp(ln_a + b ln D) * c with D in cm, valid for 0 < D < domain_max.
struct AllometricModel {
    std::string name;
    DiameterKind diameter_kind = DiameterKind::d130;
    double ln_a = 0.0;
    double b = 0.0;
    double c = 1.0;
    double domain_max_cm = 0.0;

    friend bool operator==(const AllometricModel&, const AllometricModel&) = default;
};

/// Diameter-based models for eucalypt plantings (compiled-in copy of data/allometry.csv).
inline std::vector<AllometricModel> builtin_allometric_models() {
    return {
        {"eucalypt", DiameterKind::d130, -2.016, 2.375, 1.0668, 169.0},
        {"multi", DiameterKind::d10, -2.757, 2.474, 1.0775, 62.0},
        {"shrub", DiameterKind::d10, -3.007, 2.428, 1.1281, 50.0},
        {"other", DiameterKind::d130, -1.693, 2.220, 1.0436, 102.0},
    };
}

inline std::vector<AllometricModel> parse_allometry_csv(const std::string& text, const std::string& source = "allometry") {
    std::vector<AllometricModel> models;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        const std::string where = source + ":" + std::to_string(lineno);
        if (!header) {
            if (line != "name,diameter_kind,ln_a,b,c,domain_max_cm") throw DataError(where, "unexpected header '" + line + "'");
            header = true;
            continue;
        }
        if (f.size() != 6) throw DataError(where, "expected 6 fields, got " + std::to_string(f.size()));
        AllometricModel m;
        m.name = f[0];
        if (f[1] == "D130") m.diameter_kind = DiameterKind::d130;
        else if (f[1] == "D10") m.diameter_kind = DiameterKind::d10;
        else throw DataError(where, "diameter_kind must be D130 or D10");
        const auto num = [&](const std::string& s, const char* what) {
            try {
                return detail::parse_number<double>(s, where);
            } catch (const std::invalid_argument&) {
                throw DataError(where, std::string("bad ") + what + " '" + s + "'");
            }
        };
        m.ln_a = num(f[2], "ln_a");
        m.b = num(f[3], "b");
        m.c = num(f[4], "c");
        m.domain_max_cm = num(f[5], "domain_max_cm");
        if (!(m.domain_max_cm > 0.0)) throw DataError(where, "domain_max_cm must be > 0");
        if (!(m.c > 0.0)) throw DataError(where, "correction factor must be > 0");
        models.push_back(std::move(m));
    }
    if (models.empty()) throw DataError(source, "no allometric models");
    return models;
}

inline std::vector<AllometricModel> read_allometry_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path, "cannot open allometry file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_allometry_csv(ss.str(), path);
}

inline const AllometricModel& find_model(std::span<const AllometricModel> models, const std::string& name) {
    for (const auto& m : models)
        if (m.name == name) return m;
    throw std::invalid_argument("unknown allometric model '" + name + "'");
}

/// Tree AGB in kg from stem diameter in cm. Outside the model domain is an error.
inline double agb_from_diameter(const AllometricModel& m, double d_cm) {
    if (!(d_cm > 0.0) || !(d_cm < m.domain_max_cm)) {
        std::ostringstream os;
        os << "diameter " << d_cm << " cm outside the " << m.name << " model domain (0, " << m.domain_max_cm << ") cm";
        throw std::domain_error(os.str());
    }
    return std::exp(m.ln_a + m.b * std::log(d_cm)) * m.c;
}

/// Height-based AGB in kg from tree height in m.
inline double agb_from_height(double h_m) {
    if (!(h_m > 0.0) || !std::isfinite(h_m)) throw std::domain_error("height must be a positive finite number of metres");
    return std::exp(-3.5413 + 3.5337 * std::log(h_m));
}

// ---------------------------------------------------------------------------

struct PlotEstimate {
    std::string id;
    double predicted_volume = 0.0;  ///< m^3
    double agb = 0.0;               ///< t
    double carbon = 0.0;            ///< t
    double area = 0.0;              ///< ha
    double agb_per_ha = 0.0;        ///< t/ha
    double carbon_per_ha = 0.0;     ///< t/ha
    double wood_density = 0.0;      ///< kg/m^3
};

inline PlotEstimate volume_to_carbon(double volume_m3, double density_kg_m3, double area_ha, std::string id = {}) {
    if (!(volume_m3 >= 0.0) || !std::isfinite(volume_m3)) throw std::invalid_argument("volume must be >= 0");
    if (!(density_kg_m3 > 0.0) || !std::isfinite(density_kg_m3)) throw std::invalid_argument("wood density must be > 0");
    if (!(area_ha > 0.0) || !std::isfinite(area_ha)) throw std::invalid_argument("area must be > 0");
    PlotEstimate e;
    e.id = std::move(id);
    e.predicted_volume = volume_m3;
    e.agb = volume_m3 * density_kg_m3 / 1000.0;
    e.carbon = kCarbonFraction * e.agb;
    e.area = area_ha;
    e.agb_per_ha = e.agb / area_ha;
    e.carbon_per_ha = e.carbon / area_ha;
    e.wood_density = density_kg_m3;
    return e;
}

struct SiteTotals {
    double volume = 0.0;  ///< m^3
    double agb = 0.0;     ///< t
    double carbon = 0.0;  ///< t
    double area = 0.0;    ///< ha
    double agb_per_ha = 0.0;
    double carbon_per_ha = 0.0;
    double wood_density = 0.0;  ///< shared density, or the AGB-weighted effective density when mixed
    std::size_t n_tiles = 0;
};

/// Site totals from tile estimates: sums of AGB, carbon and area, per-hectare
/// values as sum / total area. Tiles must share a density unless allow_mixed.
inline SiteTotals aggregate_tiles(std::span<const PlotEstimate> tiles, bool allow_mixed_density = false) {
    if (tiles.empty()) throw std::invalid_argument("aggregate_tiles: no tiles");
    SiteTotals s;
    bool mixed = false;
    for (const auto& t : tiles) {
        if (t.wood_density != tiles.front().wood_density) mixed = true;
        s.volume += t.predicted_volume;
        s.agb += t.agb;
        s.carbon += t.carbon;
        s.area += t.area;
    }
    if (mixed && !allow_mixed_density) {
        throw std::invalid_argument("aggregate_tiles: tiles use different wood densities (pass the mixed-density override)");
    }
    s.agb_per_ha = s.agb / s.area;
    s.carbon_per_ha = s.carbon / s.area;
    s.wood_density = !mixed ? tiles.front().wood_density : (s.volume > 0.0 ? s.agb * 1000.0 / s.volume : 0.0);
    s.n_tiles = tiles.size();
    return s;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kPlotEstimateCsvHeader =
    "id,predicted_volume_m3,agb_t,carbon_t,area_ha,agb_t_ha,carbon_t_ha,density_kg_m3";
inline constexpr const char* kSiteReportCsvHeader = "site,method,agb_t_ha,carbon_t_ha,density_kg_m3,n_tiles";

inline std::string plot_estimate_csv_row(const PlotEstimate& e) {
    std::string s = e.id;
    for (double v : {e.predicted_volume, e.agb, e.carbon, e.area, e.agb_per_ha, e.carbon_per_ha, e.wood_density}) {
        s += ',';
        append_number(s, v);
    }
    return s;
}

inline std::string site_report_csv_row(const std::string& site, const std::string& method, const SiteTotals& t) {
    std::string s = site + "," + method + ",";
    append_number(s, t.agb_per_ha);
    s += ',';
    append_number(s, t.carbon_per_ha);
    s += ',';
    append_number(s, t.wood_density);
    s += ',' + std::to_string(t.n_tiles);
    return s;
}

}  // namespace forestvol
