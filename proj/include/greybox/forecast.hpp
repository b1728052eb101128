#pragma once

// Monte-Carlo indoor-temperature forecasting: per-draw rollouts of the fitted
// state-space model over a future exogenous scenario, aggregated into a mean
// path and an uncertainty band.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greybox/diagnostics.hpp"
#include "greybox/errors.hpp"
#include "greybox/rng.hpp"
#include "greybox/samples.hpp"
#include "greybox/thermal_model.hpp"

namespace greybox {

enum class BandMode { MinMax, Quantile };

inline BandMode parse_band_mode(const std::string& name) {
    if (name == "minmax") return BandMode::MinMax;
    if (name == "quantile") return BandMode::Quantile;
    throw config_error("unknown band mode '" + name + "' (expected minmax or quantile)");
}

// Start-of-forecast state: per-dimension Gaussian, point mass when sd is
// empty or zero.
struct TerminalState {
    Vec<double> mean;
    Vec<double> sd;
};

struct ForecastOptions {
    BandMode band = BandMode::MinMax;
    double alpha = 0.05;  // band tail mass under Quantile
    bool keep_paths = false;
    std::optional<double> setpoint;  // thermostat clamp, disabled by default
    double hysteresis = 0.5;         // degC half-width around the setpoint
    double hvac_sign = 1.0;
    std::map<std::string, double> overrides;  // see PpcOptions
};

struct ForecastResult {
    std::size_t horizon = 0;
    std::size_t n_draws = 0;
    std::vector<double> mean;
    std::vector<double> low;
    std::vector<double> high;
    std::vector<double> paths;  // n_draws x horizon when keep_paths was set
    ExogenousSeries exo;        // the scenario the forecast assumed
};

// Extends the heater series at its last observed value over a future window
// whose ambient and solar drivers the caller supplies.
inline ExogenousSeries hvac_hold(const ExogenousSeries& history, std::span<const double> ta_future,
                                 std::span<const double> phi_s_future) {
    if (history.phi_h.empty()) throw data_error("empty exogenous history");
    if (ta_future.size() != phi_s_future.size())
        throw data_error("future driver lengths differ");
    ExogenousSeries out;
    out.dt = history.dt;
    out.ta.assign(ta_future.begin(), ta_future.end());
    out.phi_s.assign(phi_s_future.begin(), phi_s_future.end());
    out.phi_h.assign(ta_future.size(), history.phi_h.back());
    return out;
}

inline ForecastResult forecast(ModelKind kind, const PosteriorSamples& samples,
                               const TerminalState& x_T, const ExogenousSeries& exo,
                               std::size_t n_draws, std::uint64_t seed,
                               const ForecastOptions& opt = {}) {
    if (samples.chains == 0 || samples.draws == 0) throw data_error("empty sample set");
    if (exo.size() == 0) throw data_error("missing future exogenous series");
    exo.validate();
    if (n_draws < 2) throw config_error("forecast needs at least two draws");
    const int d = state_dimension(kind);
    if (x_T.mean.size() != d) throw config_error("terminal state dimension mismatch");
    if (x_T.sd.size() != 0 && x_T.sd.size() != d)
        throw config_error("terminal state sd dimension mismatch");
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw config_error("alpha must lie in (0, 1)");

    const std::size_t k_steps = exo.size();
    std::vector<double> paths(n_draws * k_steps);

    for (std::size_t i = 0; i < n_draws; ++i) {
        // One derived stream per draw index: growing n_draws extends the draw
        // set without disturbing earlier rollouts.
        Rng rng(Rng::mix(seed, i));
        std::size_t chain = rng.integer(samples.chains);
        std::size_t draw = rng.integer(samples.draws);
        ThermalParams p = detail::draw_params(kind, samples, chain, draw, opt.overrides);

        Vec<double> x0 = x_T.mean;
        if (x_T.sd.size() != 0)
            for (int j = 0; j < d; ++j) x0[j] += x_T.sd[j] * rng.normal();

        auto sim = simulate(build_matrices(kind, p, exo.dt, opt.hvac_sign), exo, x0, rng,
                            true, false);
        double* row = paths.data() + i * k_steps;
        for (std::size_t k = 0; k < k_steps; ++k) {
            double v = sim.y[k];
            if (opt.setpoint)
                v = std::clamp(v, *opt.setpoint - opt.hysteresis, *opt.setpoint + opt.hysteresis);
            row[k] = v;
        }
    }

    ForecastResult out;
    out.horizon = k_steps;
    out.n_draws = n_draws;
    out.mean.resize(k_steps);
    out.low.resize(k_steps);
    out.high.resize(k_steps);
    out.exo = exo;

    std::vector<double> column(n_draws);
    for (std::size_t k = 0; k < k_steps; ++k) {
        for (std::size_t i = 0; i < n_draws; ++i) column[i] = paths[i * k_steps + k];
        out.mean[k] = detail::series_mean(column);
        if (opt.band == BandMode::MinMax) {
            auto [lo, hi] = std::minmax_element(column.begin(), column.end());
            out.low[k] = *lo;
            out.high[k] = *hi;
        } else {
            out.low[k] = quantile(column, opt.alpha / 2.0);
            out.high[k] = quantile(column, 1.0 - opt.alpha / 2.0);
        }
    }
    if (opt.keep_paths) out.paths = std::move(paths);
    return out;
}

} // namespace greybox
