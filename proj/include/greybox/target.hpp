#pragma once

// Assembly of the inference targets: prior regimes over the physical
// parameters, unconstraining transforms with their Jacobians, and the two
// likelihood formulations -- the marginalized form (states integrated out by
// the Kalman filter) and the latent-state form (states kept as coordinates,
// with the initial state integrated out exactly).

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "greybox/density.hpp"
#include "greybox/errors.hpp"
#include "greybox/filtering.hpp"
#include "greybox/thermal_model.hpp"

namespace greybox {

enum class Formulation { Marginalized, LatentStates };
enum class TargetFlavor { Posterior, Map, Mle };
enum class PriorRegime { Uninformed, Informed, Hyper, Transferred };

inline Formulation parse_formulation(const std::string& name) {
    if (name == "marginalized") return Formulation::Marginalized;
    if (name == "latent" || name == "latent_states") return Formulation::LatentStates;
    throw config_error("unknown formulation '" + name + "' (expected marginalized or latent)");
}

inline PriorRegime parse_prior_regime(const std::string& name) {
    if (name == "uninformed") return PriorRegime::Uninformed;
    if (name == "informed") return PriorRegime::Informed;
    if (name == "hyper") return PriorRegime::Hyper;
    if (name == "transferred") return PriorRegime::Transferred;
    throw config_error("unknown prior regime '" + name +
                       "' (expected uninformed, informed, hyper or transferred)");
}

inline const char* regime_name(PriorRegime r) {
    switch (r) {
        case PriorRegime::Uninformed: return "uninformed";
        case PriorRegime::Informed: return "informed";
        case PriorRegime::Hyper: return "hyper";
        case PriorRegime::Transferred: return "transferred";
    }
    return "?";
}

// Gamma log-density with parameters that may themselves be sampled values
// (the hyper regime conditions R on a sampled prior mean).
template <typename T>
T gamma_log_pdf(const T& theta, const T& shape, const T& rate) {
    using ad::lgamma;
    using ad::log;
    using std::lgamma;
    using std::log;
    return shape * log(rate) - lgamma(shape) + (shape - 1.0) * log(theta) - rate * theta;
}

// ---------------------------------------------------------------------------
// Prior regimes. A PriorSet names a distribution for each physical parameter;
// the hyper regime instead marks the resistances as conditionally gamma with
// a sampled mean mu_R drawn from a lognormal mixture.

struct PriorSet {
    std::vector<std::pair<std::string, PriorSpec>> entries;
    bool hyper_r = false;                  // resistances ~ Gamma(mu_R^2, mu_R)
    std::optional<PriorSpec> hyper_mean;   // prior over mu_R

    bool has(const std::string& name) const {
        for (const auto& [k, v] : entries)
            if (k == name) return true;
        return false;
    }
    const PriorSpec& at(const std::string& name) const {
        for (const auto& [k, v] : entries)
            if (k == name) return v;
        throw config_error("missing prior for '" + name + "'");
    }
    void set(const std::string& name, PriorSpec spec) {
        for (auto& [k, v] : entries)
            if (k == name) {
                v = std::move(spec);
                return;
            }
        entries.emplace_back(name, std::move(spec));
    }
};

// Broad gamma with both shape and rate at a very small value: mean one,
// variance a thousand -- effectively flat over the scales that matter here.
inline PriorSpec broad_gamma() { return PriorSpec::gamma(0.001, 0.001); }

// Two-component lognormal mixture over whole-home R-values estimated from
// residential metadata; the shipped default for the hyper regime.
inline PriorSpec default_r_mixture() {
    return PriorSpec::lognormal_mixture({3.02, 3.43}, {0.59, 0.50}, {0.5, 0.5});
}

inline PriorSet uninformed_priors(ModelKind kind) {
    PriorSet s;
    for (const auto& name : r_param_names(kind)) s.set(name, broad_gamma());
    for (const auto& name : c_param_names(kind)) s.set(name, broad_gamma());
    s.set("A_w", broad_gamma());
    return s;
}

// Gamma centered at an audit estimate with unit standard deviation:
// shape m^2, rate m gives mean m and variance 1.
inline PriorSet informed_priors(ModelKind kind,
                                const std::map<std::string, double>& estimates) {
    PriorSet s = uninformed_priors(kind);
    for (const auto& [name, m] : estimates) {
        if (!(m > 0.0))
            throw config_error("informed prior estimate for '" + name + "' must be positive");
        s.set(name, PriorSpec::gamma(m * m, m));
    }
    return s;
}

inline PriorSet hyper_priors(ModelKind kind, PriorSpec mixture = default_r_mixture()) {
    PriorSet s = uninformed_priors(kind);
    s.hyper_r = true;
    s.hyper_mean = std::move(mixture);
    return s;
}

// Normal priors taken from a previous fit's posterior summary; parameters
// absent from the summary keep the broad default.
inline PriorSet transferred_priors(
    ModelKind kind, const std::map<std::string, std::pair<double, double>>& summary) {
    PriorSet s = uninformed_priors(kind);
    for (const auto& [name, ms] : summary) s.set(name, PriorSpec::normal(ms.first, ms.second));
    return s;
}

// ---------------------------------------------------------------------------
// Latent-state log joint log p(x_{1:N}, y_{1:N} | theta) with the initial
// state integrated out exactly: x_1 ~ N(A m0 + B u_1, A P0 A^T + Q), then
// x_k ~ N(A x_{k-1} + B u_k, Q) and y_k ~ N(x_k[obs], R).

namespace detail {

[[noreturn]] inline void not_positive_definite(double) {
    throw numerical_error("latent-state covariance is not positive definite");
}
[[noreturn]] inline void not_positive_definite(const ad::Var&) {
    throw ad::DomainError("latent-state covariance is not positive definite");
}

} // namespace detail

template <typename T>
T latent_log_joint(const StateSpaceMatrices<T>& mats, std::span<const double> y,
                   const ExogenousSeries& u, const Vec<double>& m0, const Mat<double>& P0,
                   std::span<const T> x) {
    using ad::sqrt;
    using std::sqrt;

    const int d = mats.A.rows();
    const int o = mats.obs_index;
    const std::size_t n = y.size();
    if (u.size() != n) throw data_error("exogenous series length does not match observations");
    if (x.size() != n * static_cast<std::size_t>(d))
        throw config_error("latent state block has the wrong dimension");
    if (m0.size() != d || P0.rows() != d || P0.cols() != d)
        throw config_error("initial state dimension mismatch");

    const Mat<T>& A = mats.A;
    const Mat<T>& B = mats.B;
    constexpr double log2pi_c = 1.8378770664093454836; // log(2*pi)

    // First state: mean A m0 + B u_1 and dense covariance S = A P0 A^T + Q.
    Vec<T> mean1(d);
    for (int i = 0; i < d; ++i) {
        T acc = A(i, 0) * m0[0];
        for (int j = 1; j < d; ++j) acc = acc + A(i, j) * m0[j];
        const Vec<double> u0 = u.at(0);
        for (int j = 0; j < 3; ++j)
            if (u0[j] != 0.0) acc = acc + B(i, j) * u0[j];
        mean1[i] = acc;
    }
    Mat<T> S(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            T acc = zero_like(A(0, 0));
            bool started = false;
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double p0 = P0(k, l);
                    if (p0 == 0.0) continue;
                    T term = A(i, k) * (A(j, l) * p0);
                    acc = started ? acc + term : term;
                    started = true;
                }
            S(i, j) = (i == j) ? acc + mats.q_diag[i] : acc;
            if (i != j) S(j, i) = S(i, j);
        }

    // Gaussian log-density of x_1 via a small Cholesky factorization.
    Mat<T> L(d, d);
    T first_quad = zero_like(A(0, 0));
    T first_logdet = zero_like(A(0, 0));
    Vec<T> z(d);
    for (int j = 0; j < d; ++j) {
        T acc = S(j, j);
        for (int k = 0; k < j; ++k) acc = acc - L(j, k) * L(j, k);
        if (!(ad::value_of(acc) > 0.0)) detail::not_positive_definite(acc);
        L(j, j) = sqrt(acc);
        for (int i = j + 1; i < d; ++i) {
            T off = S(i, j);
            for (int k = 0; k < j; ++k) off = off - L(i, k) * L(j, k);
            L(i, j) = off / L(j, j);
        }
    }
    for (int i = 0; i < d; ++i) {
        T acc = x[static_cast<std::size_t>(i)] - mean1[i];
        for (int k = 0; k < i; ++k) acc = acc - L(i, k) * z[k];
        z[i] = acc / L(i, i);
        first_quad = first_quad + z[i] * z[i];
        first_logdet = first_logdet + detail::log_generic(L(i, i));
    }
    T lp = -0.5 * first_quad - first_logdet - 0.5 * d * log2pi_c;

    // Remaining transitions share the diagonal process covariance, so the
    // squared residuals accumulate per dimension with one division at the end.
    if (n > 1) {
        for (int i = 0; i < d; ++i) {
            T acc = zero_like(A(0, 0));
            bool started = false;
            for (std::size_t k = 1; k < n; ++k) {
                const T* prev = &x[(k - 1) * static_cast<std::size_t>(d)];
                T mean = A(i, 0) * prev[0];
                for (int j = 1; j < d; ++j) mean = mean + A(i, j) * prev[j];
                const Vec<double> uk = u.at(k);
                for (int j = 0; j < 3; ++j)
                    if (uk[j] != 0.0) mean = mean + B(i, j) * uk[j];
                T resid = x[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)] - mean;
                T sq = resid * resid;
                acc = started ? acc + sq : sq;
                started = true;
            }
            lp = lp - 0.5 * acc / mats.q_diag[i] -
                 0.5 * static_cast<double>(n - 1) * (log2pi_c + detail::log_generic(mats.q_diag[i]));
        }
    }

    // Emissions.
    {
        T acc = zero_like(A(0, 0));
        bool started = false;
        for (std::size_t k = 0; k < n; ++k) {
            T resid = y[k] - x[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(o)];
            T sq = resid * resid;
            acc = started ? acc + sq : sq;
            started = true;
        }
        lp = lp - 0.5 * acc / mats.r_obs -
             0.5 * static_cast<double>(n) * (log2pi_c + detail::log_generic(mats.r_obs));
    }
    return lp;
}

// ---------------------------------------------------------------------------
// Target construction.

struct TargetOptions {
    Formulation formulation = Formulation::Marginalized;
    TargetFlavor flavor = TargetFlavor::Posterior;

    // When set, the noise variances are excluded from the parameter vector
    // and pinned at the values below (per-state process, then observation).
    bool fix_noise = false;
    std::vector<double> fixed_sigma2;
    double fixed_sigma2_obs = 0.01;

    // Initial-state prior; defaults to mean = first observation for every
    // state and a diagonal variance of 25.
    std::optional<Vec<double>> m0;
    std::optional<Mat<double>> P0;

    double r_upper_bound = 70.0;  // metadata-derived cap on resistances
};

namespace detail {

enum class CoordRole { Plain, HyperR };

struct TargetSpec {
    ModelKind kind;
    Formulation formulation;
    TargetFlavor flavor;
    std::vector<std::string> names;
    std::vector<Transform> transforms;
    std::vector<PriorSpec> priors;       // aligned with names; placeholder for HyperR
    std::vector<CoordRole> roles;
    std::size_t mu_index = 0;            // valid when hyper is set
    bool hyper = false;
    bool binary_hvac = false;
    bool fix_noise = false;
    std::vector<double> fixed_q;
    double fixed_r = 0.0;
    double hvac_sign = 1.0;
    double dt = 0.0;
    std::vector<double> y;
    ExogenousSeries exo;
    Vec<double> m0{0};
    Mat<double> P0{0, 0};

    template <typename T>
    T operator()(std::span<const T> v) const {
        const std::size_t np = names.size();
        std::vector<T> theta;
        theta.reserve(np);
        for (std::size_t j = 0; j < np; ++j) theta.push_back(transforms[j].apply(v[j]));

        bool started = false;
        T lp = zero_like(theta[0]);
        auto add = [&](const T& term) {
            lp = started ? lp + term : term;
            started = true;
        };

        if (flavor != TargetFlavor::Mle) {
            for (std::size_t j = 0; j < np; ++j) {
                if (roles[j] == CoordRole::HyperR) continue;
                add(log_prior(priors[j], theta[j]));
            }
            if (hyper) {
                const T& mu = theta[mu_index];
                for (std::size_t j = 0; j < np; ++j)
                    if (roles[j] == CoordRole::HyperR)
                        add(gamma_log_pdf(theta[j], mu * mu, mu));
            }
        }
        if (flavor == TargetFlavor::Posterior)
            for (std::size_t j = 0; j < np; ++j) add(transforms[j].log_jacobian(v[j]));

        ParamView<T> pv;
        for (std::size_t j = 0; j < np; ++j) pv.set(names[j], theta[j]);
        if (!binary_hvac) pv.set("phi_h_scale", theta[0] * 0.0 + 1.0);
        if (fix_noise) {
            auto snames = state_names(kind);
            for (std::size_t i = 0; i < snames.size(); ++i)
                pv.set("sigma2_" + snames[i], theta[0] * 0.0 + fixed_q[i]);
            pv.set("sigma2_obs", theta[0] * 0.0 + fixed_r);
        }
        auto mats = build_matrices(kind, pv, dt, hvac_sign);

        if (formulation == Formulation::Marginalized) {
            add(kalman_loglik(mats, std::span<const double>(y), exo, m0, P0));
        } else {
            add(latent_log_joint(mats, std::span<const double>(y), exo, m0, P0,
                                 v.subspan(np)));
        }
        return lp;
    }
};

} // namespace detail

inline TargetDensity build_target(ModelKind kind, const PriorSet& priors,
                                  const TimeSeriesDataset& data, TargetOptions opt = {}) {
    data.validate();
    const int d = state_dimension(kind);
    const std::size_t n = data.y.size();

    detail::TargetSpec spec;
    spec.kind = kind;
    spec.formulation = opt.formulation;
    spec.flavor = opt.flavor;
    spec.binary_hvac = data.binary_hvac;
    spec.hvac_sign = data.hvac_sign;
    spec.dt = data.dt;
    spec.y = data.y;
    spec.exo = data.exogenous();

    auto add_coord = [&](const std::string& name, Transform t, PriorSpec p,
                         detail::CoordRole role = detail::CoordRole::Plain) {
        spec.names.push_back(name);
        spec.transforms.push_back(t);
        spec.priors.push_back(std::move(p));
        spec.roles.push_back(role);
    };

    for (const auto& name : r_param_names(kind)) {
        if (priors.hyper_r)
            add_coord(name, Transform::interval(0.0, opt.r_upper_bound), broad_gamma(),
                      detail::CoordRole::HyperR);
        else
            add_coord(name, Transform::interval(0.0, opt.r_upper_bound), priors.at(name));
    }
    for (const auto& name : c_param_names(kind))
        add_coord(name, Transform::log(), priors.at(name));
    add_coord("A_w", Transform::log(), priors.at("A_w"));
    if (data.binary_hvac)
        add_coord("phi_h_scale", Transform::log(),
                  priors.has("phi_h_scale") ? priors.at("phi_h_scale") : broad_gamma());
    if (priors.hyper_r) {
        if (!priors.hyper_mean)
            throw config_error("hyper prior regime needs a distribution for the prior mean");
        spec.hyper = true;
        spec.mu_index = spec.names.size();
        add_coord("mu_R", Transform::log(), *priors.hyper_mean);
    }

    if (opt.fix_noise) {
        if (opt.fixed_sigma2.size() != static_cast<std::size_t>(d))
            throw config_error("fixed process variance needs one entry per state");
        for (double q : opt.fixed_sigma2)
            if (!(q > 0.0)) throw config_error("fixed process variance must be positive");
        if (!(opt.fixed_sigma2_obs > 0.0))
            throw config_error("fixed observation variance must be positive");
        spec.fix_noise = true;
        spec.fixed_q = opt.fixed_sigma2;
        spec.fixed_r = opt.fixed_sigma2_obs;
    } else {
        for (const auto& s : state_names(kind)) {
            std::string name = "sigma2_" + s;
            add_coord(name, Transform::log(),
                      priors.has(name) ? priors.at(name) : broad_gamma());
        }
        add_coord("sigma2_obs", Transform::log(),
                  priors.has("sigma2_obs") ? priors.at("sigma2_obs") : broad_gamma());
    }

    spec.m0 = opt.m0 ? *opt.m0 : default_m0(d, data.y[0]);
    spec.P0 = opt.P0 ? *opt.P0 : default_p0(d);
    if (spec.m0.size() != d || spec.P0.rows() != d || spec.P0.cols() != d)
        throw config_error("initial state prior dimension mismatch");

    ParamLayout layout;
    layout.names = spec.names;
    layout.transforms = spec.transforms;

    std::vector<double> init(spec.names.size(), 0.0);
    if (opt.formulation == Formulation::LatentStates) {
        layout.latent_dim = d;
        layout.latent_steps = n;
        // Anchor every latent coordinate at the observed series: hidden
        // temperatures start near the indoor one.
        init.resize(layout.dimension(), 0.0);
        for (std::size_t k = 0; k < n; ++k)
            for (int i = 0; i < d; ++i) init[layout.latent_index(k, i)] = data.y[k];
    }

    return TargetDensity(std::move(layout), std::move(spec), std::move(init));
}

} // namespace greybox
