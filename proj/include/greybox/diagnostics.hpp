#pragma once

// Convergence diagnostics, interval summaries, posterior predictive checks,
// and forecast error metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "greybox/errors.hpp"
#include "greybox/filtering.hpp"
#include "greybox/rng.hpp"
#include "greybox/samples.hpp"
#include "greybox/thermal_model.hpp"

namespace greybox {

namespace detail {

inline double series_mean(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v;
    return acc / static_cast<double>(x.size());
}

// Sample variance, n-1 divisor.
inline double series_variance(std::span<const double> x) {
    double m = series_mean(x);
    double acc = 0.0;
    for (double v : x) acc += (v - m) * (v - m);
    return acc / (static_cast<double>(x.size()) - 1.0);
}

} // namespace detail

// Linear interpolation between order statistics (the "type 7" rule).
inline double quantile(std::span<const double> x, double q) {
    if (x.empty()) throw data_error("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw config_error("quantile level must lie in [0, 1]");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    double h = q * (static_cast<double>(s.size()) - 1.0);
    auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= s.size()) return s.back();
    return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
}

// Equal-tailed credible interval at level 1 - alpha.
inline std::pair<double, double> credible_interval(std::span<const double> x,
                                                   double alpha = 0.05) {
    if (x.size() < 2) throw data_error("credible interval needs at least two samples");
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("alpha must lie in (0, 1)");
    return {quantile(x, alpha / 2.0), quantile(x, 1.0 - alpha / 2.0)};
}

// Potential scale reduction: sqrt(((n-1)/n * W + B/n) / W) with W the mean
// within-chain variance and B = n * variance of the chain means. With
// split=true each chain is first halved (the middle draw of an odd-length
// chain is dropped), which also exposes within-chain drift.
inline double gelman_rubin(const std::vector<std::vector<double>>& chains_in,
                           bool split = false) {
    std::vector<std::vector<double>> halves;
    const std::vector<std::vector<double>>* chains = &chains_in;
    if (split) {
        for (const auto& c : chains_in) {
            std::size_t m = c.size() / 2;
            halves.emplace_back(c.begin(), c.begin() + static_cast<long>(m));
            halves.emplace_back(c.end() - static_cast<long>(m), c.end());
        }
        chains = &halves;
    }
    std::size_t m = chains->size();
    if (m < 2) throw data_error("potential scale reduction needs at least two chains");
    std::size_t n = (*chains)[0].size();
    for (const auto& c : *chains)
        if (c.size() != n) throw data_error("chains have unequal lengths");
    if (n < 2) throw data_error("chains need at least two draws");

    std::vector<double> means(m);
    double w = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
        means[c] = detail::series_mean((*chains)[c]);
        w += detail::series_variance((*chains)[c]);
    }
    w /= static_cast<double>(m);
    if (!(w > 0.0)) throw numerical_error("zero within-chain variance");
    double b = static_cast<double>(n) * detail::series_variance(means);
    double nn = static_cast<double>(n);
    return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

// Mean absolute percentage error, reported as a fraction.
inline double mape(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw data_error("series lengths differ");
    if (y.empty()) throw data_error("mape of an empty series");
    double acc = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (y[k] == 0.0)
            throw data_error("zero observation at row " + std::to_string(k) +
                             ": relative error undefined");
        acc += std::abs(y[k] - yhat[k]) / std::abs(y[k]);
    }
    return acc / static_cast<double>(y.size());
}

// Percentage of observations falling inside [low, high].
inline double interval_coverage(std::span<const double> y, std::span<const double> low,
                                std::span<const double> high) {
    if (y.size() != low.size() || y.size() != high.size())
        throw data_error("band and series lengths differ");
    if (y.empty()) throw data_error("coverage of an empty series");
    std::size_t inside = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (low[k] > high[k]) throw data_error("band is inverted at row " + std::to_string(k));
        if (low[k] <= y[k] && y[k] <= high[k]) ++inside;
    }
    return 100.0 * static_cast<double>(inside) / static_cast<double>(y.size());
}

inline double lag1_autocorr(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    double m = detail::series_mean(x);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        den += (x[k] - m) * (x[k] - m);
        if (k + 1 < x.size()) num += (x[k] - m) * (x[k + 1] - m);
    }
    if (den == 0.0) return 0.0;
    return num / den;
}

struct ParamSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double l95 = 0.0;
    double u95 = 0.0;
    double rhat = std::numeric_limits<double>::quiet_NaN();
};

struct ErrorMetrics {
    double rmse = 0.0;
    double nrmse_pct = 0.0;
    double mape = 0.0;
    double coverage_pct = 0.0;
};

struct SummaryReport {
    std::vector<ParamSummary> params;
    std::size_t chains = 0;
    std::size_t draws = 0;
    std::size_t divergences = 0;
    std::optional<ErrorMetrics> metrics;

    const ParamSummary* find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
};

namespace detail {

inline ParamSummary summarize_series(std::string name,
                                     const std::vector<std::vector<double>>& per_chain) {
    std::vector<double> flat;
    for (const auto& c : per_chain) flat.insert(flat.end(), c.begin(), c.end());
    ParamSummary out;
    out.name = std::move(name);
    out.mean = series_mean(flat);
    out.sd = flat.size() > 1 ? std::sqrt(series_variance(flat)) : 0.0;
    auto [l, u] = credible_interval(flat, 0.05);
    out.l95 = l;
    out.u95 = u;
    if (per_chain.size() >= 2) {
        try {
            out.rhat = gelman_rubin(per_chain);
        } catch (const Error&) {
            // constant draws: leave NaN
        }
    }
    return out;
}

} // namespace detail

// Per-parameter posterior summaries on the constrained draws, plus whole-
// building composite totals when the model kind is supplied.
inline SummaryReport summarize(const PosteriorSamples& s,
                               std::optional<ModelKind> kind = std::nullopt) {
    if (s.chains == 0 || s.draws < 2) throw data_error("summary needs at least two draws");
    SummaryReport report;
    report.chains = s.chains;
    report.draws = s.draws;
    for (const auto& d : s.info)
        if (d.divergent) ++report.divergences;

    for (std::size_t j = 0; j < s.layout.n_params(); ++j)
        report.params.push_back(detail::summarize_series(s.layout.names[j], s.chains_for(j)));

    if (kind) {
        // Draw-wise composite sums, summarized like any other parameter. The
        // series path keeps R_ih out of totalR, matching composite_rc.
        std::vector<std::size_t> r_idx, c_idx;
        for (const auto& name : r_param_names(*kind)) {
            if (name == "R_ih") continue;
            if (!s.layout.has(name)) throw config_error("summary totals need parameter '" + name + "'");
            r_idx.push_back(s.layout.index_of(name));
        }
        for (const auto& name : c_param_names(*kind)) {
            if (!s.layout.has(name)) throw config_error("summary totals need parameter '" + name + "'");
            c_idx.push_back(s.layout.index_of(name));
        }
        std::vector<std::vector<double>> tot_r(s.chains), tot_c(s.chains);
        for (std::size_t c = 0; c < s.chains; ++c) {
            tot_r[c].resize(s.draws);
            tot_c[c].resize(s.draws);
            for (std::size_t d = 0; d < s.draws; ++d) {
                double r = 0.0, cc = 0.0;
                for (std::size_t j : r_idx) r += s.value(c, d, j);
                for (std::size_t j : c_idx) cc += s.value(c, d, j);
                tot_r[c][d] = r;
                tot_c[c][d] = cc;
            }
        }
        report.params.push_back(detail::summarize_series("totalR", tot_r));
        report.params.push_back(detail::summarize_series("totalC", tot_c));
    }
    return report;
}

struct PpcOptions {
    // Fallback constrained values for coordinates absent from the samples
    // (e.g. noise variances of a fixed-noise fit).
    std::map<std::string, double> overrides;
};

namespace detail {

// Assembles the physical parameter set held by one posterior draw, falling
// back to caller-supplied constants for coordinates the fit did not sample.
inline ThermalParams draw_params(ModelKind kind, const PosteriorSamples& s, std::size_t chain,
                                 std::size_t draw,
                                 const std::map<std::string, double>& overrides) {
    auto coordinate = [&](const std::string& name) {
        if (s.layout.has(name)) return s.value(chain, draw, s.layout.index_of(name));
        auto it = overrides.find(name);
        if (it == overrides.end())
            throw config_error("posterior draws carry no coordinate '" + name +
                               "' and no override was given");
        return it->second;
    };
    ThermalParams p;
    for (const auto& name : r_param_names(kind)) p.R[name] = coordinate(name);
    for (const auto& name : c_param_names(kind)) p.C[name] = coordinate(name);
    p.A_w = coordinate("A_w");
    if (s.layout.has("phi_h_scale"))
        p.phi_h_scale = s.value(chain, draw, s.layout.index_of("phi_h_scale"));
    const int d = state_dimension(kind);
    for (int i = 0; i < d; ++i)
        p.sigma.push_back(std::sqrt(
            coordinate("sigma2_" + state_names(kind)[static_cast<std::size_t>(i)])));
    p.sigma_obs = std::sqrt(coordinate("sigma2_obs"));
    return p;
}

} // namespace detail

struct PpcResult {
    double p_mean = 0.0;
    double p_stddev = 0.0;
    double p_lag1 = 0.0;
};

// Bayesian p-values: simulate n_rep replicated records under parameters drawn
// from the posterior and report the fraction of replicates whose statistic is
// at least the observed one. Replicates start from the drawn step-0 latent
// state when the samples carry one, otherwise from every state at y[0].
inline PpcResult posterior_predictive_check(ModelKind kind, const PosteriorSamples& s,
                                            const TimeSeriesDataset& data, int n_rep,
                                            std::uint64_t seed, const PpcOptions& opt = {}) {
    if (n_rep < 100) throw config_error("posterior predictive check needs at least 100 replicates");
    if (s.chains == 0 || s.draws == 0) throw data_error("empty sample set");
    data.validate();
    ExogenousSeries u = data.exogenous();
    const int d = state_dimension(kind);

    double obs_mean = detail::series_mean(data.y);
    double obs_sd = std::sqrt(detail::series_variance(data.y));
    double obs_lag1 = lag1_autocorr(data.y);

    Rng pick(Rng::mix(seed, 0));
    int ge_mean = 0, ge_sd = 0, ge_lag1 = 0;
    for (int rep = 0; rep < n_rep; ++rep) {
        std::size_t chain = pick.integer(s.chains);
        std::size_t draw = pick.integer(s.draws);
        ThermalParams p = detail::draw_params(kind, s, chain, draw, opt.overrides);

        Vec<double> x0(d, data.y[0]);
        if (s.layout.latent_steps > 0)
            for (int i = 0; i < d; ++i)
                x0[i] = s.value(chain, draw, s.layout.latent_index(0, i));

        Rng rep_rng(Rng::mix(seed, static_cast<std::uint64_t>(rep) + 1));
        auto sim = simulate(build_matrices(kind, p, data.dt, data.hvac_sign), u, x0, rep_rng);

        if (detail::series_mean(sim.y) >= obs_mean) ++ge_mean;
        if (std::sqrt(detail::series_variance(sim.y)) >= obs_sd) ++ge_sd;
        if (lag1_autocorr(sim.y) >= obs_lag1) ++ge_lag1;
    }
    PpcResult out;
    out.p_mean = static_cast<double>(ge_mean) / static_cast<double>(n_rep);
    out.p_stddev = static_cast<double>(ge_sd) / static_cast<double>(n_rep);
    out.p_lag1 = static_cast<double>(ge_lag1) / static_cast<double>(n_rep);
    return out;
}

} // namespace greybox
