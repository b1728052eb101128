#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "greybox/errors.hpp"
#include "greybox/linalg.hpp"
#include "greybox/rng.hpp"

namespace greybox {

// Lumped RC networks for building thermal dynamics, discretized directly in
// update form: every 1/(R*C) and 1/C coupling is multiplied by the sample
// interval dt (hours), so parameters keep physical units (degC/kW, kWh/degC)
// at any sampling rate. Process noise variances are per-step and not
// dt-scaled. State 0 is always the observed interior temperature.

enum class ModelKind { Ti, TiTe, TiTeTh };

inline int state_dimension(ModelKind kind) {
    switch (kind) {
        case ModelKind::Ti: return 1;
        case ModelKind::TiTe: return 2;
        case ModelKind::TiTeTh: return 3;
    }
    return 0;
}

inline const char* model_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Ti: return "Ti";
        case ModelKind::TiTe: return "TiTe";
        case ModelKind::TiTeTh: return "TiTeTh";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& name) {
    if (name == "Ti") return ModelKind::Ti;
    if (name == "TiTe") return ModelKind::TiTe;
    if (name == "TiTeTh") return ModelKind::TiTeTh;
    throw config_error("unknown model kind '" + name + "' (expected Ti, TiTe or TiTeTh)");
}

inline std::vector<std::string> r_param_names(ModelKind kind) {
    switch (kind) {
        case ModelKind::Ti: return {"R_ia"};
        case ModelKind::TiTe: return {"R_ie", "R_ea"};
        case ModelKind::TiTeTh: return {"R_ie", "R_ea", "R_ih"};
    }
    return {};
}

inline std::vector<std::string> c_param_names(ModelKind kind) {
    switch (kind) {
        case ModelKind::Ti: return {"C_i"};
        case ModelKind::TiTe: return {"C_i", "C_e"};
        case ModelKind::TiTeTh: return {"C_i", "C_e", "C_h"};
    }
    return {};
}

inline std::vector<std::string> state_names(ModelKind kind) {
    switch (kind) {
        case ModelKind::Ti: return {"i"};
        case ModelKind::TiTe: return {"i", "e"};
        case ModelKind::TiTeTh: return {"i", "e", "h"};
    }
    return {};
}

// Physical parameter set in constrained space.
struct ThermalParams {
    std::map<std::string, double> R;   // thermal resistances, degC per kW
    std::map<std::string, double> C;   // heat capacities, kWh per degC
    double A_w = 0.0;                  // effective window area scaling solar flux, m^2
    std::optional<double> A_e;         // envelope solar aperture; carried for round-trips, unused here
    double phi_h_scale = 1.0;          // heater flux multiplier (free parameter for binary HVAC signals)
    std::vector<double> sigma;         // per-state process noise scale, degC
    double sigma_obs = 0.0;            // observation noise scale, degC

    void validate(ModelKind kind) const {
        auto need = [&](const std::map<std::string, double>& m, const std::string& k, const char* what) {
            auto it = m.find(k);
            if (it == m.end()) throw config_error(std::string(what) + " parameter '" + k + "' missing");
            if (!std::isfinite(it->second) || it->second <= 0.0)
                throw config_error(std::string(what) + " parameter '" + k + "' must be positive and finite");
        };
        for (const auto& k : r_param_names(kind)) need(R, k, "resistance");
        for (const auto& k : c_param_names(kind)) need(C, k, "capacity");
        if (!std::isfinite(A_w) || A_w < 0.0) throw config_error("A_w must be non-negative and finite");
        if (!std::isfinite(phi_h_scale)) throw config_error("phi_h_scale must be finite");
        int d = state_dimension(kind);
        if (sigma.size() != static_cast<std::size_t>(d))
            throw config_error("sigma must have one entry per state");
        for (double s : sigma)
            if (!std::isfinite(s) || s < 0.0) throw config_error("process noise scales must be non-negative");
        if (!std::isfinite(sigma_obs) || sigma_obs < 0.0)
            throw config_error("sigma_obs must be non-negative");
    }
};

// Flat name -> value view over parameters of scalar type T (double or AD
// variable). Lookups are linear scans; the largest layout has a dozen entries
// and build_matrices runs once per density evaluation.
template <typename T>
struct ParamView {
    std::vector<std::pair<std::string, T>> kv;

    void set(std::string name, T v) { kv.emplace_back(std::move(name), std::move(v)); }

    const T& get(const std::string& name) const {
        for (const auto& [k, v] : kv)
            if (k == name) return v;
        throw config_error("parameter '" + name + "' not provided");
    }

    bool has(const std::string& name) const {
        for (const auto& [k, v] : kv)
            if (k == name) return true;
        return false;
    }
};

// Discrete state-space system x_n = A x_{n-1} + B u_n + w, y_n = x[obs] + v,
// with inputs u = (Ta, phi_h, phi_s) and diagonal process noise.
template <typename T>
struct StateSpaceMatrices {
    Mat<T> A;        // D x D
    Mat<T> B;        // D x 3, columns ordered (Ta, phi_h, phi_s)
    int obs_index = 0;
    Vec<T> q_diag;   // process noise variances, degC^2
    T r_obs{};       // observation noise variance, degC^2
    double dt = 0.0; // hours
};

inline double zero_like(double) { return 0.0; }

// Assembles A and B for one model kind. hvac_sign is -1 when the heat flux
// column represents cooling. The view must carry the kind's R/C names, A_w,
// phi_h_scale and sigma2_<state>/sigma2_obs variances.
template <typename T>
StateSpaceMatrices<T> build_matrices(ModelKind kind, const ParamView<T>& p, double dt,
                                     double hvac_sign = 1.0) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw config_error("dt must be positive and finite");
    int d = state_dimension(kind);
    const T& aw = p.get("A_w");
    T heat = p.get("phi_h_scale") * hvac_sign;

    StateSpaceMatrices<T> m;
    m.dt = dt;
    m.obs_index = 0;
    m.A = Mat<T>(d, d, zero_like(aw));
    m.B = Mat<T>(d, 3, zero_like(aw));

    switch (kind) {
        case ModelKind::Ti: {
            // Single node exchanging heat with ambient; all fluxes enter it.
            T k_ia = dt / (p.get("R_ia") * p.get("C_i"));
            m.A(0, 0) = 1.0 - k_ia;
            m.B(0, 0) = k_ia;
            m.B(0, 1) = heat * (dt / p.get("C_i"));
            m.B(0, 2) = aw * (dt / p.get("C_i"));
            break;
        }
        case ModelKind::TiTe: {
            // Interior node coupled to an envelope node; the envelope alone
            // exchanges with ambient. Heater and solar fluxes hit the interior.
            T k_iei = dt / (p.get("R_ie") * p.get("C_i"));
            T k_iee = dt / (p.get("R_ie") * p.get("C_e"));
            T k_eae = dt / (p.get("R_ea") * p.get("C_e"));
            m.A(0, 0) = 1.0 - k_iei;
            m.A(0, 1) = k_iei;
            m.A(1, 0) = k_iee;
            m.A(1, 1) = 1.0 - k_iee - k_eae;
            m.B(1, 0) = k_eae;
            m.B(0, 1) = heat * (dt / p.get("C_i"));
            m.B(0, 2) = aw * (dt / p.get("C_i"));
            break;
        }
        case ModelKind::TiTeTh: {
            // Adds a heater node that absorbs the heat flux and relaxes toward
            // the interior temperature. The interior row intentionally carries
            // no reciprocal heater term in this formulation.
            T k_iei = dt / (p.get("R_ie") * p.get("C_i"));
            T k_iee = dt / (p.get("R_ie") * p.get("C_e"));
            T k_eae = dt / (p.get("R_ea") * p.get("C_e"));
            T k_ihh = dt / (p.get("R_ih") * p.get("C_h"));
            m.A(0, 0) = 1.0 - k_iei;
            m.A(0, 1) = k_iei;
            m.A(1, 0) = k_iee;
            m.A(1, 1) = 1.0 - k_iee - k_eae;
            m.A(2, 0) = k_ihh;
            m.A(2, 2) = 1.0 - k_ihh;
            m.B(1, 0) = k_eae;
            m.B(2, 1) = heat * (dt / p.get("C_h"));
            m.B(0, 2) = aw * (dt / p.get("C_i"));
            break;
        }
    }

    m.q_diag = Vec<T>(d);
    auto snames = state_names(kind);
    for (int i = 0; i < d; ++i) m.q_diag[i] = p.get("sigma2_" + snames[i]);
    m.r_obs = p.get("sigma2_obs");
    return m;
}

inline ParamView<double> to_param_view(ModelKind kind, const ThermalParams& p) {
    p.validate(kind);
    ParamView<double> v;
    for (const auto& [k, x] : p.R) v.set(k, x);
    for (const auto& [k, x] : p.C) v.set(k, x);
    v.set("A_w", p.A_w);
    v.set("phi_h_scale", p.phi_h_scale);
    auto snames = state_names(kind);
    for (int i = 0; i < state_dimension(kind); ++i)
        v.set("sigma2_" + snames[i], p.sigma[static_cast<std::size_t>(i)] * p.sigma[static_cast<std::size_t>(i)]);
    v.set("sigma2_obs", p.sigma_obs * p.sigma_obs);
    return v;
}

inline StateSpaceMatrices<double> build_matrices(ModelKind kind, const ThermalParams& p, double dt,
                                                 double hvac_sign = 1.0) {
    return build_matrices(kind, to_param_view(kind, p), dt, hvac_sign);
}

// Exogenous drivers aligned with the observation grid.
struct ExogenousSeries {
    std::vector<double> ta;     // ambient temperature, degC
    std::vector<double> phi_h;  // heater flux, kW (or 0/1 when binary)
    std::vector<double> phi_s;  // solar irradiance, kW/m^2
    double dt = 0.0;            // hours

    std::size_t size() const { return ta.size(); }

    void validate() const {
        if (ta.size() != phi_h.size() || ta.size() != phi_s.size())
            throw data_error("exogenous series lengths differ");
        if (!(dt > 0.0)) throw data_error("exogenous dt must be positive");
        for (std::size_t i = 0; i < ta.size(); ++i)
            if (!std::isfinite(ta[i]) || !std::isfinite(phi_h[i]) || !std::isfinite(phi_s[i]))
                throw data_error("non-finite exogenous value at row " + std::to_string(i));
    }

    Vec<double> at(std::size_t n) const {
        Vec<double> u(3);
        u[0] = ta[n];
        u[1] = phi_h[n];
        u[2] = phi_s[n];
        return u;
    }
};

// Observation series plus drivers; the unit of exchange for fitting.
struct TimeSeriesDataset {
    std::vector<double> t_hours;  // sample times, strictly increasing, uniform
    std::vector<double> y;        // indoor temperature, degC
    std::vector<double> ta;
    std::vector<double> phi_h;
    std::vector<double> phi_s;
    double dt = 0.0;              // hours
    bool binary_hvac = false;     // phi_h is a 0/1 furnace signal
    double hvac_sign = 1.0;       // -1 when the HVAC extracts heat (cooling)

    std::size_t size() const { return y.size(); }

    void validate() const {
        std::size_t n = y.size();
        if (n < 2) throw data_error("at least 2 observations required");
        if (t_hours.size() != n || ta.size() != n || phi_h.size() != n || phi_s.size() != n)
            throw data_error("column lengths differ");
        if (!(dt > 0.0) || !std::isfinite(dt)) throw data_error("dt must be positive");
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(y[i]) || !std::isfinite(ta[i]) || !std::isfinite(phi_h[i]) ||
                !std::isfinite(phi_s[i]))
                throw data_error("non-finite value at row " + std::to_string(i));
            if (i > 0) {
                double gap = t_hours[i] - t_hours[i - 1];
                if (gap <= 0.0) throw data_error("timestamps must be strictly increasing");
                if (std::abs(gap - dt) > 1e-9 * std::max(1.0, std::abs(dt)))
                    throw data_error("non-uniform sampling at row " + std::to_string(i));
            }
        }
        if (binary_hvac) {
            for (std::size_t i = 0; i < n; ++i)
                if (phi_h[i] != 0.0 && phi_h[i] != 1.0)
                    throw data_error("binary_hvac set but phi_h is not a 0/1 signal");
        }
        if (hvac_sign != 1.0 && hvac_sign != -1.0) throw data_error("hvac_sign must be +1 or -1");
    }

    ExogenousSeries exogenous() const { return ExogenousSeries{ta, phi_h, phi_s, dt}; }

    // First n rows (data-size sweeps).
    TimeSeriesDataset head(std::size_t n) const {
        if (n < 2) throw data_error("take: need at least 2 rows");
        if (n > size()) throw data_error("take: only " + std::to_string(size()) + " rows available");
        TimeSeriesDataset out = *this;
        out.t_hours.resize(n);
        out.y.resize(n);
        out.ta.resize(n);
        out.phi_h.resize(n);
        out.phi_s.resize(n);
        return out;
    }
};

struct SimulationResult {
    std::vector<double> states;  // row n holds x_n, flattened n*D + d
    std::vector<double> y;       // observed series
    int state_dim = 0;

    double state(std::size_t n, int d) const {
        return states[n * static_cast<std::size_t>(state_dim) + static_cast<std::size_t>(d)];
    }
};

// Rolls the system forward from the pre-sample state x0: the first output row
// already includes one transition, matching the filter's predict-then-update
// convention. Process and observation noise can be toggled independently.
inline SimulationResult simulate(const StateSpaceMatrices<double>& m, const ExogenousSeries& u,
                                 const Vec<double>& x0, Rng& rng, bool process_noise = true,
                                 bool obs_noise = true) {
    u.validate();
    int d = m.A.rows();
    if (x0.size() != d) throw config_error("x0 dimension does not match model");
    std::size_t n = u.size();
    SimulationResult out;
    out.state_dim = d;
    out.states.resize(n * static_cast<std::size_t>(d));
    out.y.resize(n);

    std::vector<double> q_sd(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) q_sd[static_cast<std::size_t>(i)] = std::sqrt(m.q_diag[i]);
    double r_sd = std::sqrt(m.r_obs);

    Vec<double> x = x0;
    for (std::size_t k = 0; k < n; ++k) {
        Vec<double> next = matvec(m.A, x) + matvec(m.B, u.at(k));
        if (process_noise)
            for (int i = 0; i < d; ++i) next[i] += q_sd[static_cast<std::size_t>(i)] * rng.normal();
        x = next;
        for (int i = 0; i < d; ++i) out.states[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)] = x[i];
        out.y[k] = x[m.obs_index] + (obs_noise ? r_sd * rng.normal() : 0.0);
    }
    return out;
}

inline SimulationResult simulate(ModelKind kind, const ThermalParams& p, const ExogenousSeries& u,
                                 const Vec<double>& x0, std::uint64_t seed, bool process_noise = true,
                                 bool obs_noise = true, double hvac_sign = 1.0) {
    Rng rng(seed);
    return simulate(build_matrices(kind, p, u.dt, hvac_sign), u, x0, rng, process_noise, obs_noise);
}

struct CompositeRC {
    double totalR = 0.0;
    double totalC = 0.0;
};

// Whole-building equivalents: resistances along the interior-to-ambient path
// (the heater branch R_ih is a detour, not part of the envelope) and all
// capacities in parallel.
inline CompositeRC composite_rc(ModelKind kind, const std::map<std::string, double>& values) {
    CompositeRC out;
    for (const auto& name : r_param_names(kind)) {
        if (name == "R_ih") continue;
        auto it = values.find(name);
        if (it == values.end()) throw config_error("composite_rc: missing " + name);
        out.totalR += it->second;
    }
    for (const auto& name : c_param_names(kind)) {
        auto it = values.find(name);
        if (it == values.end()) throw config_error("composite_rc: missing " + name);
        out.totalC += it->second;
    }
    return out;
}

inline CompositeRC composite_rc(ModelKind kind, const ThermalParams& p) {
    std::map<std::string, double> v = p.R;
    v.insert(p.C.begin(), p.C.end());
    return composite_rc(kind, v);
}

} // namespace greybox
