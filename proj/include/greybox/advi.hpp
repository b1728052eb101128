#pragma once

// Mean-field ADVI: fits a diagonal Gaussian q(u) = N(mu, diag(exp(omega))^2)
// in unconstrained space by stochastic ascent on the ELBO with
// reparameterized gradients and an accumulated-squared-gradient step size.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "greybox/density.hpp"
#include "greybox/errors.hpp"
#include "greybox/rng.hpp"
#include "greybox/samples.hpp"

namespace greybox {

struct AdviConfig {
    long max_iterations = 180000;
    int mc_samples = 1;          // gradient samples per step
    double learning_rate = 0.1;  // eta of the adaptive schedule
    double tau = 1.0;
    int elbo_stride = 500;       // iterations between ELBO evaluations
    int elbo_samples = 100;      // MC samples per ELBO evaluation
    int window = 100;            // convergence window, in ELBO evaluations
    double rel_tol = 1e-4;       // relative change of windowed-mean ELBO
    std::uint64_t seed = 0;

    void validate() const {
        if (max_iterations < 1 || mc_samples < 1 || elbo_stride < 1 || elbo_samples < 1 ||
            window < 1)
            throw config_error("variational counts must all be at least 1");
        if (!(rel_tol > 0.0)) throw config_error("convergence tolerance must be positive");
        if (!(learning_rate > 0.0) || !(tau > 0.0))
            throw config_error("learning-rate schedule parameters must be positive");
    }
};

struct VariationalPosterior {
    ParamLayout layout;
    std::vector<double> mu;      // unconstrained means
    std::vector<double> omega;   // unconstrained log-stddevs
    double elbo = -std::numeric_limits<double>::infinity();
    std::vector<double> elbo_trace;  // one entry per evaluation stride
    bool converged = false;
    bool diverged = false;
    long iterations = 0;
};

// Monte-Carlo ELBO: mean log target over reparameterized draws plus the
// closed-form Gaussian entropy sum(omega + log(2*pi*e)/2).
inline double elbo_estimate(const TargetDensity& target, const VariationalPosterior& q,
                            int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw config_error("elbo estimate needs at least one sample");
    const std::size_t dim = target.dimension();
    if (q.mu.size() != dim || q.omega.size() != dim)
        throw config_error("variational posterior does not match the target layout");

    Rng rng(seed);
    std::vector<double> u(dim);
    double acc = 0.0;
    int kept = 0;
    for (int s = 0; s < n_samples; ++s) {
        for (std::size_t i = 0; i < dim; ++i)
            u[i] = q.mu[i] + std::exp(q.omega[i]) * rng.normal();
        double v = target.log_density(u);
        if (std::isfinite(v)) {
            acc += v;
            ++kept;
        }
    }
    if (kept == 0) throw numerical_error("every ELBO sample fell outside the target support");

    double entropy = 0.0;
    constexpr double half_log_2pie = 1.4189385332046727; // log(2*pi*e)/2
    for (std::size_t i = 0; i < dim; ++i) entropy += q.omega[i] + half_log_2pie;
    return acc / kept + entropy;
}

inline VariationalPosterior advi_fit(const TargetDensity& target, const AdviConfig& cfg) {
    cfg.validate();
    const std::size_t dim = target.dimension();

    VariationalPosterior q;
    q.layout = target.layout();
    q.mu = target.init_point();
    q.omega.assign(dim, 0.0);

    GradientEvaluator ge(target);
    Rng rng(cfg.seed);

    std::vector<double> s_mu(dim, 0.0), s_om(dim, 0.0);
    std::vector<double> u(dim), g(dim), z(dim), g_mu(dim), g_om(dim);
    bool schedule_seeded = false;

    double best_elbo = -std::numeric_limits<double>::infinity();
    std::vector<double> best_mu = q.mu, best_omega = q.omega;
    int starved = 0;  // consecutive iterations with no usable gradient sample

    long it = 1;
    for (; it <= cfg.max_iterations; ++it) {
        std::fill(g_mu.begin(), g_mu.end(), 0.0);
        std::fill(g_om.begin(), g_om.end(), 0.0);
        int kept = 0;
        for (int s = 0; s < cfg.mc_samples; ++s) {
            for (std::size_t i = 0; i < dim; ++i) {
                z[i] = rng.normal();
                u[i] = q.mu[i] + std::exp(q.omega[i]) * z[i];
            }
            TargetEval ev = ge(u, g);
            if (!ev.finite) continue;
            ++kept;
            for (std::size_t i = 0; i < dim; ++i) {
                g_mu[i] += g[i];
                g_om[i] += g[i] * z[i] * std::exp(q.omega[i]);
            }
        }
        if (kept == 0) {
            if (++starved >= 50) {
                q.diverged = true;
                break;
            }
            continue;
        }
        starved = 0;
        for (std::size_t i = 0; i < dim; ++i) {
            g_mu[i] /= kept;
            g_om[i] = g_om[i] / kept + 1.0;  // entropy contributes d/d omega = 1
        }

        if (!schedule_seeded) {
            for (std::size_t i = 0; i < dim; ++i) {
                s_mu[i] = g_mu[i] * g_mu[i];
                s_om[i] = g_om[i] * g_om[i];
            }
            schedule_seeded = true;
        } else {
            for (std::size_t i = 0; i < dim; ++i) {
                s_mu[i] = 0.1 * g_mu[i] * g_mu[i] + 0.9 * s_mu[i];
                s_om[i] = 0.1 * g_om[i] * g_om[i] + 0.9 * s_om[i];
            }
        }
        double step = cfg.learning_rate * std::pow(static_cast<double>(it), -0.5 + 1e-16);
        bool finite_params = true;
        for (std::size_t i = 0; i < dim; ++i) {
            q.mu[i] += step / (cfg.tau + std::sqrt(s_mu[i])) * g_mu[i];
            q.omega[i] += step / (cfg.tau + std::sqrt(s_om[i])) * g_om[i];
            finite_params = finite_params && std::isfinite(q.mu[i]) && std::isfinite(q.omega[i]);
        }
        if (!finite_params) {
            q.diverged = true;
            break;
        }

        if (it % cfg.elbo_stride == 0) {
            double e;
            try {
                e = elbo_estimate(target, q, cfg.elbo_samples,
                                  Rng::mix(cfg.seed, 0xE1B0 + q.elbo_trace.size()));
            } catch (const Error&) {
                e = -std::numeric_limits<double>::infinity();
            }
            q.elbo_trace.push_back(e);
            if (e > best_elbo) {
                best_elbo = e;
                best_mu = q.mu;
                best_omega = q.omega;
            }
            if (e < best_elbo - 100.0 * (1.0 + std::abs(best_elbo))) {
                q.diverged = true;
                break;
            }
            auto w = static_cast<std::size_t>(cfg.window);
            if (q.elbo_trace.size() >= 2 * w) {
                double m1 = 0.0, m0 = 0.0;
                for (std::size_t k = 0; k < w; ++k) {
                    m1 += q.elbo_trace[q.elbo_trace.size() - 1 - k];
                    m0 += q.elbo_trace[q.elbo_trace.size() - 1 - w - k];
                }
                m1 /= static_cast<double>(w);
                m0 /= static_cast<double>(w);
                if (std::abs(m1 - m0) / std::max(1e-12, std::abs(m0)) < cfg.rel_tol) {
                    q.converged = true;
                    break;
                }
            }
        }
    }
    q.iterations = std::min(it, cfg.max_iterations);

    if (q.diverged) {
        // Hand back the best state seen rather than the one that blew up.
        if (std::isfinite(best_elbo)) {
            q.mu = best_mu;
            q.omega = best_omega;
            q.elbo = best_elbo;
        }
        return q;
    }
    if (!q.elbo_trace.empty()) {
        q.elbo = q.elbo_trace.back();
    } else {
        try {
            q.elbo = elbo_estimate(target, q, cfg.elbo_samples, Rng::mix(cfg.seed, 0xE1B0));
        } catch (const Error&) {
            // leave -inf
        }
    }
    return q;
}

// Reparameterized draws mapped through the constraining transforms into a
// single-chain sample container.
inline PosteriorSamples advi_draw(const VariationalPosterior& q, std::size_t n,
                                  std::uint64_t seed) {
    if (n < 1) throw config_error("draw count must be at least 1");
    const std::size_t dim = q.layout.dimension();
    if (q.mu.size() != dim || q.omega.size() != dim)
        throw config_error("variational posterior does not match its layout");

    PosteriorSamples out;
    out.layout = q.layout;
    out.chains = 1;
    out.draws = n;
    out.values.resize(n * dim);
    out.info.resize(n);

    Rng rng(seed);
    std::vector<double> u(dim);
    for (std::size_t d = 0; d < n; ++d) {
        for (std::size_t i = 0; i < dim; ++i)
            u[i] = q.mu[i] + std::exp(q.omega[i]) * rng.normal();
        out.layout.constrain(u, std::span<double>(out.values.data() + d * dim, dim));
    }
    return out;
}

} // namespace greybox
