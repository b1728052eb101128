#pragma once

// Dataset ingestion, synthetic-data generation, run configuration, command
// workflows and result export. Everything downstream of this header speaks
// files: CSV for time series and draws, JSON for configuration, artifacts,
// summaries and prior exchanges. The core stays Celsius-exclusive; the one
// Fahrenheit conversion happens at the CSV boundary.

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "greybox/advi.hpp"
#include "greybox/diagnostics.hpp"
#include "greybox/errors.hpp"
#include "greybox/filtering.hpp"
#include "greybox/forecast.hpp"
#include "greybox/nuts.hpp"
#include "greybox/rng.hpp"
#include "greybox/samples.hpp"
#include "greybox/target.hpp"
#include "greybox/thermal_model.hpp"

namespace greybox {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Units. Temperatures cross the boundary in Celsius or Fahrenheit; fluxes are
// always kW and irradiance kW/m^2.

enum class TempUnit { Celsius, Fahrenheit };

inline TempUnit parse_temp_unit(const std::string& name) {
    if (name == "c" || name == "celsius") return TempUnit::Celsius;
    if (name == "f" || name == "fahrenheit") return TempUnit::Fahrenheit;
    throw config_error("unknown temperature unit '" + name + "' (expected c or f)");
}

inline double fahrenheit_to_celsius(double f) { return (f - 32.0) * 5.0 / 9.0; }

namespace detail {

// Shortest decimal text that parses back to the same double; the draws CSV
// and every JSON export rely on this being lossless.
inline std::string format_double(double v) {
    std::array<char, 40> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline double parse_number(const std::string& cell, std::size_t line_no,
                           const std::string& column) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw data_error("parse error at line " + std::to_string(line_no) + ", column '" +
                         column + "': cannot read a number from '" + cell + "'");
    return v;
}

// Epoch seconds from either a plain number or a naive UTC ISO-8601 stamp
// ("2020-01-31T00:05:00", T or space separator, optional trailing Z).
inline double parse_time(const std::string& cell, std::size_t line_no) {
    if (cell.find(':') == std::string::npos) return parse_number(cell, line_no, "time");

    std::string s = cell;
    if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.pop_back();
    int year = 0, month = 0, day = 0, hour = 0, minute = 0;
    double second = 0.0;
    char sep = 0;
    int n = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d:%lf", &year, &month, &day, &sep, &hour,
                        &minute, &second);
    bool ok = n == 7 && (sep == 'T' || sep == ' ') && month >= 1 && month <= 12 && day >= 1 &&
              day <= 31 && hour >= 0 && hour <= 23 && minute >= 0 && minute <= 59 &&
              second >= 0.0 && second < 61.0;
    if (!ok)
        throw data_error("parse error at line " + std::to_string(line_no) +
                         ", column 'time': expected epoch seconds or ISO-8601 like "
                         "2020-01-31T00:05:00, got '" +
                         cell + "'");
    std::tm tm{};
    tm.tm_year = year - 1900;
    tm.tm_mon = month - 1;
    tm.tm_mday = day;
    tm.tm_hour = hour;
    tm.tm_min = minute;
    tm.tm_sec = 0;
    tm.tm_isdst = 0;
    std::time_t base = timegm(&tm);
    return static_cast<double>(base) + second;
}

} // namespace detail

// ---------------------------------------------------------------------------
// CSV ingestion: columns time,y,ta,phi_h,phi_s with a header row, uniform
// sampling required. The returned grid is reconstructed as k*dt hours so the
// dataset invariants hold exactly regardless of timestamp arithmetic noise.

inline TimeSeriesDataset load_csv(const std::string& path,
                                  std::optional<double> dt_hint = std::nullopt,
                                  TempUnit unit = TempUnit::Celsius) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw data_error("'" + path + "': empty file, header row required");
    auto header = detail::split_csv(line);

    const std::array<const char*, 5> required{"time", "y", "ta", "phi_h", "phi_s"};
    std::map<std::string, std::size_t> column;
    for (const char* name : required) {
        std::size_t hits = 0, at = 0;
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) {
                ++hits;
                at = i;
            }
        if (hits == 0) throw data_error("'" + path + "': missing column '" + std::string(name) + "'");
        if (hits > 1)
            throw data_error("'" + path + "': duplicate column '" + std::string(name) + "'");
        column[name] = at;
    }

    std::vector<double> tsec, y, ta, phi_h, phi_s;
    std::vector<std::size_t> row_line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv(line);
        if (cells.size() != header.size())
            throw data_error("'" + path + "' line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(cells.size()));
        tsec.push_back(detail::parse_time(cells[column["time"]], line_no));
        y.push_back(detail::parse_number(cells[column["y"]], line_no, "y"));
        ta.push_back(detail::parse_number(cells[column["ta"]], line_no, "ta"));
        phi_h.push_back(detail::parse_number(cells[column["phi_h"]], line_no, "phi_h"));
        phi_s.push_back(detail::parse_number(cells[column["phi_s"]], line_no, "phi_s"));
        row_line.push_back(line_no);
    }
    if (tsec.size() < 2) throw data_error("'" + path + "': need at least two data rows");

    double gap = tsec[1] - tsec[0];
    for (std::size_t k = 1; k < tsec.size(); ++k) {
        double g = tsec[k] - tsec[k - 1];
        if (g <= 0.0)
            throw data_error("'" + path + "' line " + std::to_string(row_line[k]) +
                             ": timestamps must be strictly increasing");
        if (std::abs(g - gap) > 1e-6 * std::max(1.0, std::abs(gap)))
            throw data_error("'" + path + "' line " + std::to_string(row_line[k]) +
                             ": non-uniform sampling, step of " + detail::format_double(g) +
                             " s where " + detail::format_double(gap) + " s was established");
    }

    double dt = gap / 3600.0;
    if (dt_hint) {
        if (std::abs(dt - *dt_hint) > 1e-9 * std::max(1.0, std::abs(*dt_hint)))
            throw data_error("'" + path + "': sampling interval " + detail::format_double(dt) +
                             " h does not match the configured dt of " +
                             detail::format_double(*dt_hint) + " h");
        dt = *dt_hint;
    }

    TimeSeriesDataset ds;
    ds.dt = dt;
    ds.y = std::move(y);
    ds.ta = std::move(ta);
    ds.phi_h = std::move(phi_h);
    ds.phi_s = std::move(phi_s);
    ds.t_hours.resize(ds.y.size());
    for (std::size_t k = 0; k < ds.t_hours.size(); ++k)
        ds.t_hours[k] = static_cast<double>(k) * dt;
    if (unit == TempUnit::Fahrenheit) {
        for (double& v : ds.y) v = fahrenheit_to_celsius(v);
        for (double& v : ds.ta) v = fahrenheit_to_celsius(v);
    }
    ds.validate();
    return ds;
}

inline void save_csv(const std::string& path, const TimeSeriesDataset& ds) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw data_error("cannot write '" + path + "'");
    out << "time,y,ta,phi_h,phi_s\n";
    for (std::size_t k = 0; k < ds.size(); ++k) {
        out << detail::format_double(ds.t_hours[k] * 3600.0) << ',' << detail::format_double(ds.y[k])
            << ',' << detail::format_double(ds.ta[k]) << ',' << detail::format_double(ds.phi_h[k])
            << ',' << detail::format_double(ds.phi_s[k]) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic data: sinusoidal daily ambient, bang-bang thermostat on the noisy
// indoor reading, half-sine daytime sun. The recorded exogenous columns drive
// the same transition the generator used, so a zero-noise run satisfies the
// model difference equations identically.

struct DriverSpec {
    double ta_mean = 8.0;        // degC
    double ta_amplitude = 6.0;   // daily swing, degC
    double setpoint = 21.0;      // thermostat target, degC
    double hysteresis = 0.5;     // dead-band half-width, degC
    double heater_kw = 4.0;      // furnace capacity
    double solar_peak = 0.5;     // noon irradiance, kW/m^2
    double initial_temp = 21.0;  // pre-sample state for every node
    bool binary_hvac = false;    // record phi_h as a 0/1 signal
    double hvac_sign = 1.0;      // -1 for cooling seasons
};

struct SyntheticData {
    TimeSeriesDataset data;
    ThermalParams truth;  // echo; phi_h_scale carries the capacity in binary mode
    Vec<double> x0{0};
};

inline SyntheticData generate_synthetic(ModelKind kind, const ThermalParams& params,
                                        const DriverSpec& drv, std::size_t n, double dt,
                                        std::uint64_t seed) {
    if (n < 2) throw config_error("synthetic series needs at least two samples");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw config_error("synthetic dt must be positive");
    if (!(drv.heater_kw >= 0.0) || !(drv.hysteresis >= 0.0))
        throw config_error("heater capacity and hysteresis must be non-negative");

    ThermalParams truth = params;
    if (drv.binary_hvac) truth.phi_h_scale = drv.heater_kw;
    truth.validate(kind);
    auto mats = build_matrices(kind, truth, dt, drv.hvac_sign);
    const int d = state_dimension(kind);

    std::vector<double> q_sd(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) q_sd[static_cast<std::size_t>(i)] = std::sqrt(mats.q_diag[i]);
    double r_sd = std::sqrt(mats.r_obs);

    SyntheticData out;
    out.truth = truth;
    out.x0 = Vec<double>(d, drv.initial_temp);
    TimeSeriesDataset& ds = out.data;
    ds.dt = dt;
    ds.binary_hvac = drv.binary_hvac;
    ds.hvac_sign = drv.hvac_sign;

    Rng rng(seed);
    Vec<double> x = out.x0;
    double sensed = drv.initial_temp;
    // Bang-bang control around the setpoint; under a cooling sign the unit
    // engages above the dead band instead of below it.
    const bool cooling = drv.hvac_sign < 0.0;
    bool active = cooling ? drv.initial_temp > drv.setpoint : drv.initial_temp < drv.setpoint;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < n; ++k) {
        double t = static_cast<double>(k) * dt;
        double hod = std::fmod(t, 24.0);
        double ta = drv.ta_mean - drv.ta_amplitude * std::cos(two_pi * t / 24.0);
        double sun = std::sin(std::numbers::pi * (hod - 6.0) / 12.0);
        double ps = drv.solar_peak * std::max(0.0, sun);
        double low = drv.setpoint - drv.hysteresis, high = drv.setpoint + drv.hysteresis;
        if (cooling) {
            if (sensed > high) active = true;
            else if (sensed < low) active = false;
        } else {
            if (sensed < low) active = true;
            else if (sensed > high) active = false;
        }
        double ph = active ? (drv.binary_hvac ? 1.0 : drv.heater_kw) : 0.0;

        ds.t_hours.push_back(t);
        ds.ta.push_back(ta);
        ds.phi_h.push_back(ph);
        ds.phi_s.push_back(ps);

        Vec<double> u(3);
        u[0] = ta;
        u[1] = ph;
        u[2] = ps;
        Vec<double> next = matvec(mats.A, x) + matvec(mats.B, u);
        for (int i = 0; i < d; ++i) next[i] += q_sd[static_cast<std::size_t>(i)] * rng.normal();
        x = next;
        double yk = x[mats.obs_index] + r_sd * rng.normal();
        ds.y.push_back(yk);
        sensed = yk;
    }
    ds.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Run configuration: one JSON document is the whole experiment record. All
// keys are checked so typos fail loudly instead of silently changing a study.

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw config_error("unknown key '" + it.key() + "' in " + where);
    }
}

inline nlohmann::json load_json(const std::string& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw config_error(what + " '" + path + "' cannot be opened");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(what + " '" + path + "' is not valid JSON: " + e.what());
    }
}

} // namespace detail

inline PriorSpec parse_prior_spec(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("family"))
        throw config_error("a prior specification needs a 'family' key");
    std::string f = j.at("family").get<std::string>();
    if (f == "gamma") {
        detail::check_keys(j, "gamma prior", {"family", "shape", "rate"});
        return PriorSpec::gamma(j.at("shape").get<double>(), j.at("rate").get<double>());
    }
    if (f == "bounded_gamma") {
        detail::check_keys(j, "bounded_gamma prior", {"family", "shape", "rate", "lo", "hi"});
        return PriorSpec::bounded_gamma(j.at("shape").get<double>(), j.at("rate").get<double>(),
                                        j.at("lo").get<double>(), j.at("hi").get<double>());
    }
    if (f == "normal") {
        detail::check_keys(j, "normal prior", {"family", "mean", "sd"});
        return PriorSpec::normal(j.at("mean").get<double>(), j.at("sd").get<double>());
    }
    if (f == "lognormal") {
        detail::check_keys(j, "lognormal prior", {"family", "mu", "sigma"});
        return PriorSpec::lognormal(j.at("mu").get<double>(), j.at("sigma").get<double>());
    }
    if (f == "lognormal_mixture") {
        detail::check_keys(j, "lognormal_mixture prior", {"family", "mu", "sigma", "weight"});
        return PriorSpec::lognormal_mixture(j.at("mu").get<std::vector<double>>(),
                                            j.at("sigma").get<std::vector<double>>(),
                                            j.at("weight").get<std::vector<double>>());
    }
    if (f == "uniform") {
        detail::check_keys(j, "uniform prior", {"family", "lo", "hi"});
        return PriorSpec::uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
    }
    throw config_error("unknown prior family '" + f + "'");
}

struct PriorConfig {
    PriorRegime regime = PriorRegime::Uninformed;
    std::map<std::string, double> estimates;  // informed: audit values
    std::string metadata_path;                // hyper: mixture side file
    std::string transfer_path;                // transferred: prior file
    std::vector<std::pair<std::string, PriorSpec>> overrides;
};

struct BackendConfig {
    std::string name = "nuts";  // nuts | advi | mle | map
    std::optional<Formulation> formulation;
    NutsConfig nuts;
    AdviConfig advi;
    OptimOptions optim;
    std::size_t summary_draws = 1000;  // reporting draws for the variational fit

    // Sampling and optimizing default to the marginalized likelihood; the
    // variational backend defaults to the latent-state joint.
    Formulation resolved_formulation() const {
        if (formulation) return *formulation;
        return name == "advi" ? Formulation::LatentStates : Formulation::Marginalized;
    }
};

struct ForecastSection {
    std::string artifact_path;  // empty: <output>/artifact.json
    std::size_t horizon = 144;
    std::size_t draws = 500;
    std::optional<std::size_t> start;  // history length; default size - horizon
    BandMode band = BandMode::MinMax;
    double alpha = 0.05;
    std::optional<double> setpoint;
    double hysteresis = 0.5;
    bool hold_hvac = false;
};

struct SyntheticSection {
    bool present = false;
    std::size_t n = 0;
    double dt = 0.0;
    ThermalParams params;
    DriverSpec drivers;
};

struct DiagnoseSection {
    std::string artifact_path;
    int ppc_replicates = 200;
};

struct TransferSection {
    std::string artifact_path;
};

struct RunConfig {
    ModelKind kind = ModelKind::Ti;
    std::string data_path;
    std::string output_dir;
    std::optional<double> dt_hint;  // hours
    TempUnit unit = TempUnit::Celsius;
    bool binary_hvac = false;
    double hvac_sign = 1.0;
    std::optional<std::size_t> take;
    std::uint64_t seed = 0;
    PriorConfig prior;
    BackendConfig backend;
    ForecastSection forecast;
    SyntheticSection synthetic;
    DiagnoseSection diagnose;
    TransferSection transfer;
    nlohmann::json echo = nlohmann::json::object();

    void validate(const std::string& command) const {
        if (output_dir.empty()) throw config_error("output directory required");
        auto need_data = [&] {
            if (data_path.empty()) throw config_error("data path required for " + command);
        };
        if (command == "fit") {
            need_data();
            if (take && *take < 2) throw config_error("take must keep at least two rows");
            if (dt_hint && !(*dt_hint > 0.0)) throw config_error("dt must be positive");
            if (backend.name == "nuts") {
                backend.nuts.validate();
            } else if (backend.name == "advi") {
                backend.advi.validate();
                if (backend.summary_draws < 2)
                    throw config_error("summary_draws must be at least 2");
            } else if (backend.name == "mle" || backend.name == "map") {
                if (backend.optim.max_iterations < 1)
                    throw config_error("optimizer iterations must be at least 1");
            } else {
                throw config_error("unknown backend '" + backend.name + "'");
            }
            switch (prior.regime) {
                case PriorRegime::Informed:
                    if (prior.estimates.empty())
                        throw config_error("informed prior regime requires audit estimates");
                    break;
                case PriorRegime::Hyper:
                    if (prior.metadata_path.empty())
                        throw config_error("hyper prior regime requires a metadata file");
                    break;
                case PriorRegime::Transferred:
                    if (prior.transfer_path.empty())
                        throw config_error("transferred prior regime requires a prior file");
                    break;
                case PriorRegime::Uninformed: break;
            }
        } else if (command == "simulate") {
            if (!synthetic.present) throw config_error("simulate requires a 'synthetic' section");
            if (synthetic.n < 2) throw config_error("synthetic n must be at least 2");
            if (!(synthetic.dt > 0.0)) throw config_error("synthetic dt must be positive");
            synthetic.params.validate(kind);
        } else if (command == "forecast") {
            need_data();
            if (forecast.horizon < 1) throw config_error("forecast horizon must be at least 1");
            if (forecast.draws < 2) throw config_error("forecast needs at least two draws");
            if (!(forecast.alpha > 0.0 && forecast.alpha < 1.0))
                throw config_error("alpha must lie in (0, 1)");
        } else if (command == "diagnose") {
            need_data();
            if (diagnose.ppc_replicates < 100)
                throw config_error("posterior predictive checks need at least 100 replicates");
        } else if (command == "transfer") {
            // Only the artifact and output paths matter; both resolve at run time.
        } else {
            throw config_error("unknown command '" + command + "'");
        }
    }
};

// Parameter names a prior or override may legitimately address.
inline std::set<std::string> prior_param_names(ModelKind kind) {
    std::set<std::string> names;
    for (const auto& n : r_param_names(kind)) names.insert(n);
    for (const auto& n : c_param_names(kind)) names.insert(n);
    names.insert("A_w");
    names.insert("phi_h_scale");
    for (const auto& s : state_names(kind)) names.insert("sigma2_" + s);
    names.insert("sigma2_obs");
    return names;
}

inline RunConfig parse_run_config(const nlohmann::json& doc) {
    try {
        if (!doc.is_object()) throw config_error("config must be a JSON object");
        detail::check_keys(doc, "config",
                           {"model", "data", "output", "seed", "take", "dt", "unit", "binary_hvac",
                            "hvac_sign", "prior", "backend", "forecast", "synthetic", "diagnose",
                            "transfer"});
        RunConfig cfg;
        cfg.echo = doc;
        if (doc.contains("model")) cfg.kind = parse_model_kind(doc.at("model").get<std::string>());
        if (doc.contains("data")) cfg.data_path = doc.at("data").get<std::string>();
        if (doc.contains("output")) cfg.output_dir = doc.at("output").get<std::string>();
        if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("take")) cfg.take = doc.at("take").get<std::size_t>();
        if (doc.contains("dt")) cfg.dt_hint = doc.at("dt").get<double>();
        if (doc.contains("unit")) cfg.unit = parse_temp_unit(doc.at("unit").get<std::string>());
        if (doc.contains("binary_hvac")) cfg.binary_hvac = doc.at("binary_hvac").get<bool>();
        if (doc.contains("hvac_sign")) cfg.hvac_sign = doc.at("hvac_sign").get<double>();

        if (doc.contains("prior")) {
            const auto& p = doc.at("prior");
            detail::check_keys(p, "prior",
                               {"regime", "estimates", "metadata", "transfer", "overrides"});
            if (p.contains("regime"))
                cfg.prior.regime = parse_prior_regime(p.at("regime").get<std::string>());
            if (p.contains("estimates"))
                for (auto it = p.at("estimates").begin(); it != p.at("estimates").end(); ++it)
                    cfg.prior.estimates[it.key()] = it.value().get<double>();
            if (p.contains("metadata")) cfg.prior.metadata_path = p.at("metadata").get<std::string>();
            if (p.contains("transfer")) cfg.prior.transfer_path = p.at("transfer").get<std::string>();
            if (p.contains("overrides"))
                for (auto it = p.at("overrides").begin(); it != p.at("overrides").end(); ++it)
                    cfg.prior.overrides.emplace_back(it.key(), parse_prior_spec(it.value()));
        }

        if (doc.contains("backend")) {
            const auto& b = doc.at("backend");
            detail::check_keys(b, "backend",
                               {"name", "formulation", "chains", "warmup", "draws",
                                "target_accept", "max_depth", "metric", "init_step", "init_jitter",
                                "max_iterations", "mc_samples", "learning_rate", "tau",
                                "elbo_stride", "elbo_samples", "window", "rel_tol",
                                "summary_draws", "grad_tol", "memory"});
            if (b.contains("name")) cfg.backend.name = b.at("name").get<std::string>();
            if (cfg.backend.name != "nuts" && cfg.backend.name != "advi" &&
                cfg.backend.name != "mle" && cfg.backend.name != "map")
                throw config_error("unknown backend '" + cfg.backend.name +
                                   "' (expected nuts, advi, mle or map)");
            if (b.contains("formulation"))
                cfg.backend.formulation = parse_formulation(b.at("formulation").get<std::string>());

            NutsConfig& nc = cfg.backend.nuts;
            if (b.contains("chains")) nc.chains = b.at("chains").get<int>();
            if (b.contains("warmup")) nc.warmup = b.at("warmup").get<int>();
            if (b.contains("draws")) nc.draws = b.at("draws").get<int>();
            if (b.contains("target_accept")) nc.target_accept = b.at("target_accept").get<double>();
            if (b.contains("max_depth")) nc.max_depth = b.at("max_depth").get<int>();
            if (b.contains("metric")) nc.metric = parse_metric(b.at("metric").get<std::string>());
            if (b.contains("init_step")) nc.init_step = b.at("init_step").get<double>();
            if (b.contains("init_jitter")) nc.init_jitter = b.at("init_jitter").get<double>();

            AdviConfig& ac = cfg.backend.advi;
            if (b.contains("mc_samples")) ac.mc_samples = b.at("mc_samples").get<int>();
            if (b.contains("learning_rate")) ac.learning_rate = b.at("learning_rate").get<double>();
            if (b.contains("tau")) ac.tau = b.at("tau").get<double>();
            if (b.contains("elbo_stride")) ac.elbo_stride = b.at("elbo_stride").get<int>();
            if (b.contains("elbo_samples")) ac.elbo_samples = b.at("elbo_samples").get<int>();
            if (b.contains("window")) ac.window = b.at("window").get<int>();
            if (b.contains("rel_tol")) ac.rel_tol = b.at("rel_tol").get<double>();
            if (b.contains("summary_draws"))
                cfg.backend.summary_draws = b.at("summary_draws").get<std::size_t>();

            OptimOptions& oo = cfg.backend.optim;
            if (b.contains("grad_tol")) oo.grad_tol = b.at("grad_tol").get<double>();
            if (b.contains("memory")) oo.memory = b.at("memory").get<int>();
            if (b.contains("max_iterations")) {
                if (cfg.backend.name == "advi")
                    ac.max_iterations = b.at("max_iterations").get<long>();
                else
                    oo.max_iterations = b.at("max_iterations").get<int>();
            }
        }

        if (doc.contains("forecast")) {
            const auto& f = doc.at("forecast");
            detail::check_keys(f, "forecast",
                               {"artifact", "horizon", "draws", "start", "band", "alpha",
                                "setpoint", "hysteresis", "hold_hvac"});
            if (f.contains("artifact")) cfg.forecast.artifact_path = f.at("artifact").get<std::string>();
            if (f.contains("horizon")) cfg.forecast.horizon = f.at("horizon").get<std::size_t>();
            if (f.contains("draws")) cfg.forecast.draws = f.at("draws").get<std::size_t>();
            if (f.contains("start")) cfg.forecast.start = f.at("start").get<std::size_t>();
            if (f.contains("band")) cfg.forecast.band = parse_band_mode(f.at("band").get<std::string>());
            if (f.contains("alpha")) cfg.forecast.alpha = f.at("alpha").get<double>();
            if (f.contains("setpoint")) cfg.forecast.setpoint = f.at("setpoint").get<double>();
            if (f.contains("hysteresis")) cfg.forecast.hysteresis = f.at("hysteresis").get<double>();
            if (f.contains("hold_hvac")) cfg.forecast.hold_hvac = f.at("hold_hvac").get<bool>();
        }

        if (doc.contains("synthetic")) {
            const auto& s = doc.at("synthetic");
            detail::check_keys(s, "synthetic", {"n", "dt", "params", "drivers"});
            cfg.synthetic.present = true;
            if (s.contains("n")) cfg.synthetic.n = s.at("n").get<std::size_t>();
            if (s.contains("dt")) cfg.synthetic.dt = s.at("dt").get<double>();
            if (s.contains("params")) {
                const auto& q = s.at("params");
                detail::check_keys(q, "synthetic params",
                                   {"R", "C", "A_w", "phi_h_scale", "sigma", "sigma_obs"});
                ThermalParams& tp = cfg.synthetic.params;
                if (q.contains("R"))
                    for (auto it = q.at("R").begin(); it != q.at("R").end(); ++it)
                        tp.R[it.key()] = it.value().get<double>();
                if (q.contains("C"))
                    for (auto it = q.at("C").begin(); it != q.at("C").end(); ++it)
                        tp.C[it.key()] = it.value().get<double>();
                if (q.contains("A_w")) tp.A_w = q.at("A_w").get<double>();
                if (q.contains("phi_h_scale")) tp.phi_h_scale = q.at("phi_h_scale").get<double>();
                if (q.contains("sigma")) tp.sigma = q.at("sigma").get<std::vector<double>>();
                if (q.contains("sigma_obs")) tp.sigma_obs = q.at("sigma_obs").get<double>();
            }
            if (s.contains("drivers")) {
                const auto& w = s.at("drivers");
                detail::check_keys(w, "synthetic drivers",
                                   {"ta_mean", "ta_amplitude", "setpoint", "hysteresis",
                                    "heater_kw", "solar_peak", "initial_temp"});
                DriverSpec& dv = cfg.synthetic.drivers;
                if (w.contains("ta_mean")) dv.ta_mean = w.at("ta_mean").get<double>();
                if (w.contains("ta_amplitude")) dv.ta_amplitude = w.at("ta_amplitude").get<double>();
                if (w.contains("setpoint")) dv.setpoint = w.at("setpoint").get<double>();
                if (w.contains("hysteresis")) dv.hysteresis = w.at("hysteresis").get<double>();
                if (w.contains("heater_kw")) dv.heater_kw = w.at("heater_kw").get<double>();
                if (w.contains("solar_peak")) dv.solar_peak = w.at("solar_peak").get<double>();
                if (w.contains("initial_temp")) dv.initial_temp = w.at("initial_temp").get<double>();
            }
        }

        if (doc.contains("diagnose")) {
            const auto& g = doc.at("diagnose");
            detail::check_keys(g, "diagnose", {"artifact", "ppc_replicates"});
            if (g.contains("artifact")) cfg.diagnose.artifact_path = g.at("artifact").get<std::string>();
            if (g.contains("ppc_replicates"))
                cfg.diagnose.ppc_replicates = g.at("ppc_replicates").get<int>();
        }

        if (doc.contains("transfer")) {
            const auto& t = doc.at("transfer");
            detail::check_keys(t, "transfer", {"artifact"});
            if (t.contains("artifact")) cfg.transfer.artifact_path = t.at("artifact").get<std::string>();
        }
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(detail::load_json(path, "config file"));
}

// ---------------------------------------------------------------------------
// Prior resolution. Regime first, then per-parameter overrides; companion
// files (hyper metadata, transferred priors) are read here, before any data.

inline PriorSet resolve_priors(const RunConfig& cfg) {
    const auto known = prior_param_names(cfg.kind);
    auto check_name = [&](const std::string& name, const char* what) {
        if (!known.count(name))
            throw config_error(std::string("unknown parameter '") + name + "' in " + what +
                               " for model " + model_name(cfg.kind));
    };

    PriorSet set;
    switch (cfg.prior.regime) {
        case PriorRegime::Uninformed: set = uninformed_priors(cfg.kind); break;
        case PriorRegime::Informed: {
            if (cfg.prior.estimates.empty())
                throw config_error("informed prior regime requires audit estimates");
            for (const auto& [name, v] : cfg.prior.estimates) check_name(name, "estimates");
            set = informed_priors(cfg.kind, cfg.prior.estimates);
            break;
        }
        case PriorRegime::Hyper: {
            if (cfg.prior.metadata_path.empty())
                throw config_error("hyper prior regime requires a metadata file");
            auto meta = detail::load_json(cfg.prior.metadata_path, "hyperprior metadata");
            detail::check_keys(meta, "hyperprior metadata", {"mu", "sigma", "weight"});
            if (!meta.contains("mu") || !meta.contains("sigma") || !meta.contains("weight"))
                throw config_error("hyperprior metadata '" + cfg.prior.metadata_path +
                                   "' needs 'mu', 'sigma' and 'weight' arrays");
            try {
                set = hyper_priors(cfg.kind, PriorSpec::lognormal_mixture(
                                                 meta.at("mu").get<std::vector<double>>(),
                                                 meta.at("sigma").get<std::vector<double>>(),
                                                 meta.at("weight").get<std::vector<double>>()));
            } catch (const nlohmann::json::exception& e) {
                throw config_error("hyperprior metadata '" + cfg.prior.metadata_path +
                                   "': " + e.what());
            }
            break;
        }
        case PriorRegime::Transferred: {
            if (cfg.prior.transfer_path.empty())
                throw config_error("transferred prior regime requires a prior file");
            auto doc = detail::load_json(cfg.prior.transfer_path, "transferred prior");
            if (!doc.contains("parameters") || !doc.at("parameters").is_object())
                throw config_error("transferred prior '" + cfg.prior.transfer_path +
                                   "' needs a 'parameters' object");
            std::map<std::string, std::pair<double, double>> summary;
            try {
                for (auto it = doc.at("parameters").begin(); it != doc.at("parameters").end();
                     ++it) {
                    if (!known.count(it.key())) continue;  // allow cross-model reuse
                    summary[it.key()] = {it.value().at("mean").get<double>(),
                                         it.value().at("sd").get<double>()};
                }
            } catch (const nlohmann::json::exception& e) {
                throw config_error("transferred prior '" + cfg.prior.transfer_path +
                                   "': " + e.what());
            }
            set = transferred_priors(cfg.kind, summary);
            break;
        }
    }
    for (const auto& [name, spec] : cfg.prior.overrides) {
        check_name(name, "overrides");
        set.set(name, spec);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Fit artifact: summary, raw draws (or variational parameters, or the point
// estimate), the config echo, version and wall-clock. JSON and CSV encodings
// are lossless for doubles, so reload-then-rewrite is byte-stable.

struct FitArtifact {
    std::string version = kVersion;
    std::string backend;
    ModelKind kind = ModelKind::Ti;
    double wall_seconds = 0.0;
    SummaryReport summary;
    nlohmann::json config_echo = nlohmann::json::object();
    bool has_draws = false;
    PosteriorSamples draws;
    std::optional<VariationalPosterior> variational;
    std::optional<PointEstimate> point;
};

namespace detail {

inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;  // R-hat of a single chain and similar
}

inline double number_or_nan(const nlohmann::json& v) {
    if (v.is_number()) return v.get<double>();
    return std::numeric_limits<double>::quiet_NaN();
}

inline nlohmann::json summary_to_json(const SummaryReport& s) {
    nlohmann::json j;
    j["chains"] = s.chains;
    j["draws"] = s.draws;
    j["divergences"] = s.divergences;
    auto rows = nlohmann::json::array();
    for (const auto& p : s.params) {
        rows.push_back({{"name", p.name},
                        {"mean", json_number(p.mean)},
                        {"sd", json_number(p.sd)},
                        {"l95", json_number(p.l95)},
                        {"u95", json_number(p.u95)},
                        {"rhat", json_number(p.rhat)}});
    }
    j["parameters"] = rows;
    if (s.metrics) {
        j["metrics"] = {{"rmse", json_number(s.metrics->rmse)},
                        {"nrmse_pct", json_number(s.metrics->nrmse_pct)},
                        {"mape", json_number(s.metrics->mape)},
                        {"coverage_pct", json_number(s.metrics->coverage_pct)}};
    }
    return j;
}

inline SummaryReport summary_from_json(const nlohmann::json& j) {
    SummaryReport s;
    s.chains = j.at("chains").get<std::size_t>();
    s.draws = j.at("draws").get<std::size_t>();
    s.divergences = j.at("divergences").get<std::size_t>();
    for (const auto& row : j.at("parameters")) {
        ParamSummary p;
        p.name = row.at("name").get<std::string>();
        p.mean = number_or_nan(row.at("mean"));
        p.sd = number_or_nan(row.at("sd"));
        p.l95 = number_or_nan(row.at("l95"));
        p.u95 = number_or_nan(row.at("u95"));
        p.rhat = number_or_nan(row.at("rhat"));
        s.params.push_back(std::move(p));
    }
    if (j.contains("metrics")) {
        ErrorMetrics m;
        m.rmse = number_or_nan(j.at("metrics").at("rmse"));
        m.nrmse_pct = number_or_nan(j.at("metrics").at("nrmse_pct"));
        m.mape = number_or_nan(j.at("metrics").at("mape"));
        m.coverage_pct = number_or_nan(j.at("metrics").at("coverage_pct"));
        s.metrics = m;
    }
    return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write '" + path.string() + "'");
    out << text;
}

inline void write_draws_csv(const std::filesystem::path& path, const PosteriorSamples& s) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write '" + path.string() + "'");
    out << "chain,draw,divergent";
    for (const auto& name : s.layout.coordinate_names()) out << ',' << name;
    out << '\n';
    for (std::size_t c = 0; c < s.chains; ++c)
        for (std::size_t d = 0; d < s.draws; ++d) {
            out << c << ',' << d << ',' << (s.diagnostics(c, d).divergent ? 1 : 0);
            auto row = s.draw(c, d);
            for (double v : row) out << ',' << format_double(v);
            out << '\n';
        }
}

inline PosteriorSamples read_draws_csv(const std::filesystem::path& path,
                                       const ParamLayout& layout) {
    std::ifstream in(path);
    if (!in) throw config_error("draws file '" + path.string() + "' cannot be opened");
    std::string line;
    if (!std::getline(in, line)) throw data_error("draws file '" + path.string() + "' is empty");
    auto header = split_csv(line);
    auto expected = layout.coordinate_names();
    if (header.size() != expected.size() + 3 || header[0] != "chain" || header[1] != "draw" ||
        header[2] != "divergent")
        throw data_error("draws file '" + path.string() + "' does not match the artifact layout");
    for (std::size_t i = 0; i < expected.size(); ++i)
        if (header[i + 3] != expected[i])
            throw data_error("draws file '" + path.string() + "' column '" + header[i + 3] +
                             "' does not match the artifact layout");

    PosteriorSamples s;
    s.layout = layout;
    std::vector<std::pair<std::size_t, std::size_t>> index;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw data_error("draws file '" + path.string() + "' line " +
                             std::to_string(line_no) + ": wrong field count");
        index.emplace_back(static_cast<std::size_t>(parse_number(cells[0], line_no, "chain")),
                           static_cast<std::size_t>(parse_number(cells[1], line_no, "draw")));
        DrawDiagnostics dd;
        dd.divergent = parse_number(cells[2], line_no, "divergent") != 0.0;
        s.info.push_back(dd);
        for (std::size_t i = 3; i < cells.size(); ++i)
            s.values.push_back(parse_number(cells[i], line_no, header[i]));
        s.chains = std::max(s.chains, index.back().first + 1);
    }
    if (index.empty()) throw data_error("draws file '" + path.string() + "' has no rows");
    if (index.size() % s.chains != 0)
        throw data_error("draws file '" + path.string() + "' is not rectangular");
    s.draws = index.size() / s.chains;
    for (std::size_t r = 0; r < index.size(); ++r)
        if (index[r] != std::make_pair(r / s.draws, r % s.draws))
            throw data_error("draws file '" + path.string() +
                             "' rows are not in chain-major order");
    return s;
}

inline ParamLayout layout_from_json(const nlohmann::json& j) {
    ParamLayout layout;
    layout.names = j.at("names").get<std::vector<std::string>>();
    layout.latent_dim = j.at("latent_dim").get<int>();
    layout.latent_steps = j.at("latent_steps").get<std::size_t>();
    return layout;
}

inline nlohmann::json layout_to_json(const ParamLayout& layout) {
    return {{"names", layout.names},
            {"latent_dim", layout.latent_dim},
            {"latent_steps", layout.latent_steps}};
}

} // namespace detail

inline nlohmann::json artifact_to_json(const FitArtifact& art) {
    nlohmann::json j;
    j["artifact"] = "greybox-fit";
    j["version"] = art.version;
    j["model"] = model_name(art.kind);
    j["backend"] = art.backend;
    j["wall_seconds"] = art.wall_seconds;
    j["config"] = art.config_echo;
    j["summary"] = detail::summary_to_json(art.summary);
    if (art.has_draws) {
        j["draws"] = "draws.csv";
        j["layout"] = detail::layout_to_json(art.draws.layout);
    }
    if (art.variational) {
        const auto& q = *art.variational;
        j["variational"] = {{"names", q.layout.names},
                            {"latent_dim", q.layout.latent_dim},
                            {"latent_steps", q.layout.latent_steps},
                            {"mu", q.mu},
                            {"omega", q.omega},
                            {"elbo", detail::json_number(q.elbo)},
                            {"elbo_trace", q.elbo_trace},
                            {"converged", q.converged},
                            {"diverged", q.diverged},
                            {"iterations", q.iterations}};
    }
    if (art.point) {
        const auto& p = *art.point;
        j["point"] = {{"theta", p.theta},
                      {"u", p.u},
                      {"objective", p.objective},
                      {"converged", p.converged},
                      {"iterations", p.iterations},
                      {"grad_norm", p.grad_norm}};
    }
    return j;
}

inline void write_artifact(const FitArtifact& art, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::path out(dir);
    fs::create_directories(out);
    if (art.has_draws) detail::write_draws_csv(out / "draws.csv", art.draws);
    detail::write_text(out / "artifact.json", artifact_to_json(art).dump(2) + "\n");

    nlohmann::json s;
    s["model"] = model_name(art.kind);
    s["backend"] = art.backend;
    s["chains"] = art.summary.chains;
    s["draws"] = art.summary.draws;
    s["divergences"] = art.summary.divergences;
    s["parameters"] = nlohmann::json::object();
    for (const auto& p : art.summary.params)
        s["parameters"][p.name] = {{"mean", detail::json_number(p.mean)},
                                   {"sd", detail::json_number(p.sd)},
                                   {"l95", detail::json_number(p.l95)},
                                   {"u95", detail::json_number(p.u95)},
                                   {"rhat", detail::json_number(p.rhat)}};
    if (art.summary.metrics) s["metrics"] = detail::summary_to_json(art.summary)["metrics"];
    detail::write_text(out / "summary.json", s.dump(2) + "\n");
}

inline FitArtifact load_artifact(const std::string& path) {
    namespace fs = std::filesystem;
    auto j = detail::load_json(path, "artifact");
    try {
        FitArtifact art;
        art.version = j.value("version", "");
        art.backend = j.value("backend", "");
        art.kind = parse_model_kind(j.at("model").get<std::string>());
        art.wall_seconds = j.at("wall_seconds").get<double>();
        art.config_echo = j.value("config", nlohmann::json::object());
        art.summary = detail::summary_from_json(j.at("summary"));
        if (j.contains("draws")) {
            auto layout = detail::layout_from_json(j.at("layout"));
            fs::path csv = fs::path(path).parent_path() / j.at("draws").get<std::string>();
            art.draws = detail::read_draws_csv(csv, layout);
            art.has_draws = true;
        }
        if (j.contains("variational")) {
            const auto& q = j.at("variational");
            VariationalPosterior vp;
            vp.layout.names = q.at("names").get<std::vector<std::string>>();
            vp.layout.latent_dim = q.at("latent_dim").get<int>();
            vp.layout.latent_steps = q.at("latent_steps").get<std::size_t>();
            vp.mu = q.at("mu").get<std::vector<double>>();
            vp.omega = q.at("omega").get<std::vector<double>>();
            vp.elbo = detail::number_or_nan(q.at("elbo"));
            vp.elbo_trace = q.at("elbo_trace").get<std::vector<double>>();
            vp.converged = q.at("converged").get<bool>();
            vp.diverged = q.at("diverged").get<bool>();
            vp.iterations = q.at("iterations").get<long>();
            art.variational = std::move(vp);
        }
        if (j.contains("point")) {
            const auto& p = j.at("point");
            PointEstimate pe;
            pe.theta = p.at("theta").get<std::map<std::string, double>>();
            pe.u = p.at("u").get<std::vector<double>>();
            pe.objective = p.at("objective").get<double>();
            pe.converged = p.at("converged").get<bool>();
            pe.iterations = p.at("iterations").get<int>();
            pe.grad_norm = p.at("grad_norm").get<double>();
            art.point = std::move(pe);
        }
        return art;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("artifact '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shared run helpers.

namespace detail {

inline ThermalParams params_from_summary(ModelKind kind, const SummaryReport& s) {
    auto need = [&](const std::string& name) {
        const auto* row = s.find(name);
        if (!row) throw config_error("summary lacks parameter '" + name + "'");
        return row->mean;
    };
    ThermalParams p;
    for (const auto& n : r_param_names(kind)) p.R[n] = need(n);
    for (const auto& n : c_param_names(kind)) p.C[n] = need(n);
    p.A_w = need("A_w");
    if (const auto* row = s.find("phi_h_scale")) p.phi_h_scale = row->mean;
    for (const auto& n : state_names(kind)) p.sigma.push_back(std::sqrt(need("sigma2_" + n)));
    p.sigma_obs = std::sqrt(need("sigma2_obs"));
    return p;
}

// Error metrics of a predicted series against observations, with an interval
// for coverage. Undefined pieces (zero observations, constant range) become
// NaN instead of failing a whole report.
inline ErrorMetrics score_series(std::span<const double> yhat, std::span<const double> y,
                                 std::span<const double> low, std::span<const double> high) {
    ErrorMetrics m;
    try {
        auto os = one_step_metrics(yhat, y);
        m.rmse = os.rmse;
        m.nrmse_pct = os.nrmse_pct;
    } catch (const Error&) {
        double ss = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) ss += (yhat[k] - y[k]) * (yhat[k] - y[k]);
        m.rmse = std::sqrt(ss / static_cast<double>(y.size()));
        m.nrmse_pct = std::numeric_limits<double>::quiet_NaN();
    }
    try {
        m.mape = mape(y, yhat);
    } catch (const Error&) {
        m.mape = std::numeric_limits<double>::quiet_NaN();
    }
    try {
        m.coverage_pct = interval_coverage(y, low, high);
    } catch (const Error&) {
        m.coverage_pct = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

inline ErrorMetrics one_step_report(ModelKind kind, const ThermalParams& p,
                                    const TimeSeriesDataset& data) {
    auto mats = build_matrices(kind, p, data.dt, data.hvac_sign);
    const int d = state_dimension(kind);
    auto kp = kalman_predict(mats, std::span<const double>(data.y), data.exogenous(),
                             default_m0(d, data.y[0]), default_p0(d));
    std::vector<double> low(kp.yhat.size()), high(kp.yhat.size());
    for (std::size_t k = 0; k < kp.yhat.size(); ++k) {
        double half = 1.959963984540054 * std::sqrt(kp.svar[k]);
        low[k] = kp.yhat[k] - half;
        high[k] = kp.yhat[k] + half;
    }
    return score_series(kp.yhat, data.y, low, high);
}

inline SummaryReport point_summary(ModelKind kind, const PointEstimate& pe,
                                   const std::vector<std::string>& names) {
    SummaryReport s;
    s.chains = 0;
    s.draws = 0;
    s.divergences = 0;
    auto add = [&](const std::string& name, double v) {
        ParamSummary row;
        row.name = name;
        row.mean = v;
        row.sd = 0.0;
        row.l95 = v;
        row.u95 = v;
        s.params.push_back(row);
    };
    for (const auto& name : names) add(name, pe.theta.at(name));
    auto rc = composite_rc(kind, pe.theta);
    add("totalR", rc.totalR);
    add("totalC", rc.totalC);
    return s;
}

// Point estimates act as a one-draw posterior so forecasting stays uniform.
inline PosteriorSamples point_samples(const FitArtifact& art) {
    if (!art.point) throw config_error("artifact has neither draws nor a point estimate");
    PosteriorSamples s;
    for (const auto& [name, v] : art.point->theta) {
        s.layout.names.push_back(name);
        s.values.push_back(v);
    }
    s.chains = 1;
    s.draws = 1;
    s.info.resize(1);
    return s;
}

inline std::string resolve_artifact_path(const RunConfig& cfg, const std::string& explicit_path) {
    if (!explicit_path.empty()) return explicit_path;
    return (std::filesystem::path(cfg.output_dir) / "artifact.json").string();
}

inline TimeSeriesDataset load_configured_data(const RunConfig& cfg) {
    TimeSeriesDataset data = load_csv(cfg.data_path, cfg.dt_hint, cfg.unit);
    data.binary_hvac = cfg.binary_hvac;
    data.hvac_sign = cfg.hvac_sign;
    if (cfg.take) data = data.head(*cfg.take);
    data.validate();
    return data;
}

inline void print_summary(std::ostream& os, const FitArtifact& art) {
    os << "model " << model_name(art.kind) << " | backend " << art.backend;
    if (art.summary.chains > 0)
        os << " | " << art.summary.chains << " chains x " << art.summary.draws << " draws | "
           << art.summary.divergences << " divergences";
    os << " | " << format_double(art.wall_seconds) << " s\n";
    os << "  parameter        mean        sd       l95       u95      rhat\n";
    for (const auto& p : art.summary.params) {
        char line[160];
        std::snprintf(line, sizeof(line), "  %-12s %9.4g %9.4g %9.4g %9.4g %9.4g\n",
                      p.name.c_str(), p.mean, p.sd, p.l95, p.u95, p.rhat);
        os << line;
    }
    if (art.summary.metrics) {
        const auto& m = *art.summary.metrics;
        os << "  one-step rmse " << format_double(m.rmse) << " degC, nrmse " << m.nrmse_pct
           << "%, mape " << m.mape << ", 95% coverage " << m.coverage_pct << "%\n";
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands.

inline FitArtifact run_fit(const RunConfig& cfg) {
    cfg.validate("fit");
    PriorSet priors = resolve_priors(cfg);  // companion files load before any data
    TimeSeriesDataset data = detail::load_configured_data(cfg);

    TargetOptions topt;
    topt.formulation = cfg.backend.resolved_formulation();
    if (cfg.backend.name == "mle")
        topt.flavor = TargetFlavor::Mle;
    else if (cfg.backend.name == "map")
        topt.flavor = TargetFlavor::Map;
    else
        topt.flavor = TargetFlavor::Posterior;
    TargetDensity target = build_target(cfg.kind, priors, data, topt);

    FitArtifact art;
    art.backend = cfg.backend.name;
    art.kind = cfg.kind;
    art.config_echo = cfg.echo;

    auto t0 = std::chrono::steady_clock::now();
    if (cfg.backend.name == "nuts") {
        NutsConfig nc = cfg.backend.nuts;
        nc.seed = cfg.seed;
        art.draws = nuts_sample(target, nc);
        art.has_draws = true;
        art.summary = summarize(art.draws, cfg.kind);
    } else if (cfg.backend.name == "advi") {
        AdviConfig ac = cfg.backend.advi;
        ac.seed = cfg.seed;
        auto q = advi_fit(target, ac);
        if (q.diverged) throw numerical_error("variational optimization diverged");
        art.draws = advi_draw(q, cfg.backend.summary_draws, Rng::mix(cfg.seed, 0xADD7));
        art.has_draws = true;
        art.variational = std::move(q);
        art.summary = summarize(art.draws, cfg.kind);
    } else {
        PointEstimate pe = fit_point(target, target.init_point(), cfg.backend.optim);
        art.summary = detail::point_summary(cfg.kind, pe, target.layout().names);
        art.point = std::move(pe);
    }
    art.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    art.summary.metrics =
        detail::one_step_report(cfg.kind, detail::params_from_summary(cfg.kind, art.summary), data);
    write_artifact(art, cfg.output_dir);
    detail::print_summary(std::cout, art);
    std::cout << "wrote " << cfg.output_dir << "/artifact.json\n";
    return art;
}

inline SyntheticData run_simulate(const RunConfig& cfg) {
    cfg.validate("simulate");
    DriverSpec drv = cfg.synthetic.drivers;
    drv.binary_hvac = cfg.binary_hvac;
    drv.hvac_sign = cfg.hvac_sign;
    auto s = generate_synthetic(cfg.kind, cfg.synthetic.params, drv, cfg.synthetic.n,
                                cfg.synthetic.dt, cfg.seed);

    namespace fs = std::filesystem;
    fs::path out(cfg.output_dir);
    fs::create_directories(out);
    save_csv((out / "synthetic.csv").string(), s.data);

    nlohmann::json truth;
    truth["model"] = model_name(cfg.kind);
    truth["seed"] = cfg.seed;
    truth["params"] = {{"R", s.truth.R},
                       {"C", s.truth.C},
                       {"A_w", s.truth.A_w},
                       {"phi_h_scale", s.truth.phi_h_scale},
                       {"sigma", s.truth.sigma},
                       {"sigma_obs", s.truth.sigma_obs}};
    std::vector<double> x0(s.x0.size());
    for (int i = 0; i < s.x0.size(); ++i) x0[static_cast<std::size_t>(i)] = s.x0[i];
    truth["x0"] = x0;
    auto rc = composite_rc(cfg.kind, s.truth);
    truth["totalR"] = rc.totalR;
    truth["totalC"] = rc.totalC;
    detail::write_text(out / "truth.json", truth.dump(2) + "\n");
    std::cout << "wrote " << (out / "synthetic.csv").string() << " (" << s.data.size()
              << " rows, dt " << detail::format_double(s.data.dt) << " h)\n";
    return s;
}

inline ForecastResult run_forecast(const RunConfig& cfg) {
    cfg.validate("forecast");
    FitArtifact art = load_artifact(detail::resolve_artifact_path(cfg, cfg.forecast.artifact_path));
    TimeSeriesDataset data = detail::load_configured_data(cfg);

    const std::size_t n = data.size();
    const std::size_t horizon = cfg.forecast.horizon;
    std::size_t start = cfg.forecast.start.value_or(n > horizon ? n - horizon : 0);
    if (start < 2) throw config_error("forecast start must leave at least two history rows");
    if (start + horizon > n)
        throw config_error("forecast window exceeds the data: start " + std::to_string(start) +
                           " + horizon " + std::to_string(horizon) + " > " + std::to_string(n));

    TimeSeriesDataset history = data.head(start);
    ExogenousSeries future;
    future.dt = data.dt;
    future.ta.assign(data.ta.begin() + static_cast<long>(start),
                     data.ta.begin() + static_cast<long>(start + horizon));
    future.phi_h.assign(data.phi_h.begin() + static_cast<long>(start),
                        data.phi_h.begin() + static_cast<long>(start + horizon));
    future.phi_s.assign(data.phi_s.begin() + static_cast<long>(start),
                        data.phi_s.begin() + static_cast<long>(start + horizon));
    if (cfg.forecast.hold_hvac)
        future = hvac_hold(history.exogenous(), future.ta, future.phi_s);

    PosteriorSamples samples = art.has_draws ? art.draws : detail::point_samples(art);
    const int d = state_dimension(art.kind);

    TerminalState x_T;
    if (samples.layout.latent_steps > 0) {
        // Latent fits carry the filtered path in the posterior itself.
        std::size_t last = samples.layout.latent_steps - 1;
        x_T.mean = Vec<double>(d);
        x_T.sd = Vec<double>(d);
        for (int i = 0; i < d; ++i) {
            std::vector<double> vals;
            vals.reserve(samples.chains * samples.draws);
            std::size_t coord = samples.layout.latent_index(last, i);
            for (std::size_t c = 0; c < samples.chains; ++c)
                for (std::size_t dr = 0; dr < samples.draws; ++dr)
                    vals.push_back(samples.value(c, dr, coord));
            double m = 0.0;
            for (double v : vals) m += v;
            m /= static_cast<double>(vals.size());
            double ss = 0.0;
            for (double v : vals) ss += (v - m) * (v - m);
            x_T.mean[i] = m;
            x_T.sd[i] = vals.size() > 1
                            ? std::sqrt(ss / static_cast<double>(vals.size() - 1))
                            : 0.0;
        }
    } else {
        ThermalParams p = detail::params_from_summary(art.kind, art.summary);
        auto mats = build_matrices(art.kind, p, data.dt, cfg.hvac_sign);
        auto kp = kalman_predict(mats, std::span<const double>(history.y), history.exogenous(),
                                 default_m0(d, history.y[0]), default_p0(d));
        x_T.mean = kp.final_mean;
        x_T.sd = Vec<double>(d);
        for (int i = 0; i < d; ++i) x_T.sd[i] = std::sqrt(std::max(0.0, kp.final_cov(i, i)));
    }

    ForecastOptions fopt;
    fopt.band = cfg.forecast.band;
    fopt.alpha = cfg.forecast.alpha;
    fopt.setpoint = cfg.forecast.setpoint;
    fopt.hysteresis = cfg.forecast.hysteresis;
    fopt.hvac_sign = cfg.hvac_sign;
    ForecastResult fc =
        forecast(art.kind, samples, x_T, future, cfg.forecast.draws, cfg.seed, fopt);

    namespace fs = std::filesystem;
    fs::path out(cfg.output_dir);
    fs::create_directories(out);
    {
        std::ofstream csv(out / "forecast.csv");
        if (!csv) throw data_error("cannot write '" + (out / "forecast.csv").string() + "'");
        csv << "step,mean,low,high\n";
        for (std::size_t k = 0; k < fc.horizon; ++k)
            csv << (k + 1) << ',' << detail::format_double(fc.mean[k]) << ','
                << detail::format_double(fc.low[k]) << ',' << detail::format_double(fc.high[k])
                << '\n';
    }

    std::span<const double> actual(data.y.data() + start, horizon);
    ErrorMetrics metrics = detail::score_series(fc.mean, actual, fc.low, fc.high);
    nlohmann::json report;
    report["model"] = model_name(art.kind);
    report["horizon"] = horizon;
    report["draws"] = cfg.forecast.draws;
    report["start"] = start;
    report["band"] = cfg.forecast.band == BandMode::MinMax ? "minmax" : "quantile";
    report["alpha"] = cfg.forecast.alpha;
    report["dt"] = data.dt;
    report["metrics"] = {{"rmse", detail::json_number(metrics.rmse)},
                         {"nrmse_pct", detail::json_number(metrics.nrmse_pct)},
                         {"mape", detail::json_number(metrics.mape)},
                         {"coverage_pct", detail::json_number(metrics.coverage_pct)}};
    detail::write_text(out / "forecast.json", report.dump(2) + "\n");
    std::cout << "forecast " << horizon << " steps from row " << start << ": mape "
              << detail::format_double(metrics.mape) << ", coverage "
              << detail::format_double(metrics.coverage_pct) << "%\n";
    return fc;
}

inline nlohmann::json run_diagnose(const RunConfig& cfg) {
    cfg.validate("diagnose");
    FitArtifact art = load_artifact(detail::resolve_artifact_path(cfg, cfg.diagnose.artifact_path));
    if (!art.has_draws)
        throw config_error("diagnose needs a sampled artifact (nuts or advi backend)");
    TimeSeriesDataset data = detail::load_configured_data(cfg);

    SummaryReport summary = summarize(art.draws, art.kind);
    PpcResult ppc = posterior_predictive_check(art.kind, art.draws, data,
                                               cfg.diagnose.ppc_replicates, cfg.seed, {});

    nlohmann::json report;
    report["model"] = model_name(art.kind);
    report["backend"] = art.backend;
    report["chains"] = summary.chains;
    report["draws"] = summary.draws;
    report["divergences"] = summary.divergences;
    report["rhat"] = nlohmann::json::object();
    for (const auto& p : summary.params) report["rhat"][p.name] = detail::json_number(p.rhat);
    report["replicates"] = cfg.diagnose.ppc_replicates;
    report["ppc"] = {{"p_mean", ppc.p_mean},
                     {"p_stddev", ppc.p_stddev},
                     {"p_lag1", ppc.p_lag1}};

    namespace fs = std::filesystem;
    fs::path out(cfg.output_dir);
    fs::create_directories(out);
    detail::write_text(out / "diagnostics.json", report.dump(2) + "\n");
    std::cout << "divergences " << summary.divergences << "; ppc p-values: mean "
              << detail::format_double(ppc.p_mean) << ", sd "
              << detail::format_double(ppc.p_stddev) << ", lag1 "
              << detail::format_double(ppc.p_lag1) << "\n";
    return report;
}

inline void run_transfer(const RunConfig& cfg) {
    cfg.validate("transfer");
    std::string source = detail::resolve_artifact_path(cfg, cfg.transfer.artifact_path);
    FitArtifact art = load_artifact(source);
    if (!art.has_draws)
        throw config_error("transfer needs a posterior artifact with draws (nuts or advi backend)");

    std::vector<std::string> names = r_param_names(art.kind);
    for (const auto& n : c_param_names(art.kind)) names.push_back(n);
    names.push_back("A_w");
    if (art.summary.find("phi_h_scale")) names.push_back("phi_h_scale");

    nlohmann::json params = nlohmann::json::object();
    for (const auto& name : names) {
        const auto* row = art.summary.find(name);
        if (!row) throw config_error("artifact summary lacks parameter '" + name + "'");
        if (!(row->sd > 0.0))
            throw config_error("posterior sd for '" + name + "' is degenerate; cannot transfer");
        params[name] = {{"mean", row->mean}, {"sd", row->sd}};
    }

    nlohmann::json doc;
    doc["regime"] = "transferred";
    doc["model"] = model_name(art.kind);
    doc["version"] = kVersion;
    doc["source"] = source;
    doc["parameters"] = params;

    namespace fs = std::filesystem;
    fs::path out(cfg.output_dir);
    fs::create_directories(out);
    detail::write_text(out / "transferred_priors.json", doc.dump(2) + "\n");
    std::cout << "wrote " << (out / "transferred_priors.json").string() << "\n";
}

inline int run_command(const std::string& command, const RunConfig& cfg) {
    if (command == "fit") {
        run_fit(cfg);
    } else if (command == "forecast") {
        run_forecast(cfg);
    } else if (command == "simulate") {
        run_simulate(cfg);
    } else if (command == "diagnose") {
        run_diagnose(cfg);
    } else if (command == "transfer") {
        run_transfer(cfg);
    } else {
        throw config_error("unknown command '" + command + "'");
    }
    return 0;
}

} // namespace greybox
