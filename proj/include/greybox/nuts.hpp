#pragma once

// No-U-Turn sampler over a TargetDensity: multinomial trajectory sampling
// with recursive doubling, dual-averaging step-size adaptation, and optional
// diagonal mass-matrix adaptation from the second half of warmup.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "greybox/density.hpp"
#include "greybox/errors.hpp"
#include "greybox/rng.hpp"
#include "greybox/samples.hpp"

namespace greybox {

struct NutsConfig {
    int chains = 4;
    int warmup = 5000;
    int draws = 5000;
    double target_accept = 0.8;
    int max_depth = 10;
    std::uint64_t seed = 0;
    double init_step = 1.0;

    enum class Metric { Identity, DiagAdapted };
    Metric metric = Metric::DiagAdapted;

    // Per-chain uniform jitter applied around the target's starting point.
    double init_jitter = 0.1;

    void validate() const {
        if (chains < 1 || warmup < 1 || draws < 1)
            throw config_error("sampler counts must all be at least 1");
        if (!(target_accept > 0.0 && target_accept < 1.0))
            throw config_error("target acceptance must lie in (0, 1)");
        if (max_depth < 1) throw config_error("max tree depth must be at least 1");
        if (!(init_step > 0.0)) throw config_error("initial step size must be positive");
    }
};

inline NutsConfig::Metric parse_metric(const std::string& name) {
    if (name == "identity") return NutsConfig::Metric::Identity;
    if (name == "diag" || name == "diagonal" || name == "diagonal-adapted")
        return NutsConfig::Metric::DiagAdapted;
    throw config_error("unknown metric '" + name + "' (expected identity or diag)");
}

// ---------------------------------------------------------------------------
// Leapfrog integrator. The public overload integrates one step under the
// identity metric; the sampler drives the evaluator-based version directly.

struct LeapfrogResult {
    std::vector<double> u, p, grad;
    double logp = 0.0;
    bool finite = false;
};

namespace detail {

struct PhaseState {
    std::vector<double> u, p, grad;
    double logp = 0.0;
};

inline double kinetic_energy(std::span<const double> p, std::span<const double> inv_mass) {
    double k = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) k += p[i] * p[i] * inv_mass[i];
    return 0.5 * k;
}

// One step of size eps (sign included); returns false when the target or
// gradient turns non-finite, leaving the state flagged for divergence.
inline bool leapfrog_step(GradientEvaluator& ge, PhaseState& s, double eps,
                          std::span<const double> inv_mass) {
    const std::size_t n = s.u.size();
    for (std::size_t i = 0; i < n; ++i) s.p[i] += 0.5 * eps * s.grad[i];
    for (std::size_t i = 0; i < n; ++i) s.u[i] += eps * inv_mass[i] * s.p[i];
    TargetEval ev = ge(s.u, s.grad);
    s.logp = ev.value;
    if (!ev.finite) return false;
    for (std::size_t i = 0; i < n; ++i) s.p[i] += 0.5 * eps * s.grad[i];
    return true;
}

inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// No-U-turn criterion between two endpoints under a diagonal metric.
inline bool is_turning(const PhaseState& minus, const PhaseState& plus,
                       std::span<const double> inv_mass) {
    double fwd = 0.0, bwd = 0.0;
    for (std::size_t i = 0; i < inv_mass.size(); ++i) {
        double du = plus.u[i] - minus.u[i];
        fwd += du * inv_mass[i] * plus.p[i];
        bwd += du * inv_mass[i] * minus.p[i];
    }
    return fwd < 0.0 || bwd < 0.0;
}

struct Subtree {
    PhaseState minus, plus;
    PhaseState proposal;                                     // multinomial pick
    double logw = -std::numeric_limits<double>::infinity();  // log sum exp(h0 - h)
    double sum_alpha = 0.0;
    std::size_t n_alpha = 0;
    bool divergent = false;
    bool turning = false;
};

constexpr double divergence_threshold = 1000.0;

inline Subtree build_tree(GradientEvaluator& ge, const PhaseState& from, int direction,
                          int depth, double eps, std::span<const double> inv_mass, double h0,
                          Rng& rng) {
    if (depth == 0) {
        Subtree leaf;
        leaf.minus = from;
        bool ok = leapfrog_step(ge, leaf.minus, direction * eps, inv_mass);
        double h = ok ? -leaf.minus.logp + kinetic_energy(leaf.minus.p, inv_mass)
                      : std::numeric_limits<double>::infinity();
        leaf.n_alpha = 1;
        leaf.sum_alpha = ok ? std::min(1.0, std::exp(h0 - h)) : 0.0;
        if (!ok || h - h0 > divergence_threshold) {
            leaf.divergent = true;
            return leaf;
        }
        leaf.logw = h0 - h;
        leaf.plus = leaf.minus;
        leaf.proposal = leaf.minus;
        return leaf;
    }

    Subtree first = build_tree(ge, from, direction, depth - 1, eps, inv_mass, h0, rng);
    if (first.divergent || first.turning) return first;

    const PhaseState& edge = direction > 0 ? first.plus : first.minus;
    Subtree second = build_tree(ge, edge, direction, depth - 1, eps, inv_mass, h0, rng);
    first.sum_alpha += second.sum_alpha;
    first.n_alpha += second.n_alpha;
    if (second.divergent || second.turning) {
        first.divergent = second.divergent;
        first.turning = second.turning;
        return first;
    }

    double total = log_add_exp(first.logw, second.logw);
    if (std::log(rng.uniform()) < second.logw - total) first.proposal = second.proposal;
    first.logw = total;
    if (direction > 0)
        first.plus = second.plus;
    else
        first.minus = second.minus;
    first.turning = is_turning(first.minus, first.plus, inv_mass);
    return first;
}

// Dual-averaging schedule with the reference constants of the NUTS paper.
struct DualAveraging {
    double mu = 0.0;
    double log_eps = 0.0;
    double log_eps_bar = 0.0;
    double h_bar = 0.0;
    double count = 0.0;
    static constexpr double gamma = 0.05;
    static constexpr double t0 = 10.0;
    static constexpr double kappa = 0.75;

    void restart(double eps) {
        mu = std::log(10.0 * eps);
        log_eps = std::log(eps);
        log_eps_bar = 0.0;
        h_bar = 0.0;
        count = 0.0;
    }
    void update(double accept_prob, double target) {
        count += 1.0;
        double eta = 1.0 / (count + t0);
        h_bar = (1.0 - eta) * h_bar + eta * (target - accept_prob);
        log_eps = mu - std::sqrt(count) / gamma * h_bar;
        double w = std::pow(count, -kappa);
        log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
    }
    double current() const { return std::exp(log_eps); }
    double averaged() const { return std::exp(log_eps_bar); }
};

} // namespace detail

inline LeapfrogResult leapfrog(const TargetDensity& target, std::span<const double> u,
                               std::span<const double> p, double eps) {
    GradientEvaluator ge(target);
    detail::PhaseState s;
    s.u.assign(u.begin(), u.end());
    s.p.assign(p.begin(), p.end());
    s.grad.resize(u.size());
    TargetEval ev = ge(s.u, s.grad);
    LeapfrogResult out;
    if (!ev.finite) return out;
    std::vector<double> ones(u.size(), 1.0);
    out.finite = detail::leapfrog_step(ge, s, eps, ones);
    out.u = std::move(s.u);
    out.p = std::move(s.p);
    out.grad = std::move(s.grad);
    out.logp = s.logp;
    return out;
}

// ---------------------------------------------------------------------------
// Sampler.

inline PosteriorSamples nuts_sample(const TargetDensity& target, const NutsConfig& cfg) {
    cfg.validate();
    const std::size_t dim = target.dimension();
    const std::size_t n_warm = static_cast<std::size_t>(cfg.warmup);
    const std::size_t n_draws = static_cast<std::size_t>(cfg.draws);

    PosteriorSamples out;
    out.layout = target.layout();
    out.chains = static_cast<std::size_t>(cfg.chains);
    out.draws = n_draws;
    out.values.resize(out.chains * n_draws * dim);
    out.info.resize(out.chains * n_draws);

    // Mass-matrix adaptation window inside warmup (second half, leaving the
    // tail for the step size to re-settle under the new metric).
    const std::size_t window_begin = n_warm / 2;
    const std::size_t window_end = (n_warm * 85) / 100;
    const bool adapt_metric =
        cfg.metric == NutsConfig::Metric::DiagAdapted && window_end > window_begin + 9;

    for (std::size_t chain = 0; chain < out.chains; ++chain) {
        Rng rng(cfg.seed + chain);
        GradientEvaluator ge(target);

        detail::PhaseState cur;
        cur.u.resize(dim);
        cur.p.resize(dim);
        cur.grad.resize(dim);
        const std::vector<double>& anchor = target.init_point();
        bool ready = false;
        for (int attempt = 0; attempt < 100 && !ready; ++attempt) {
            for (std::size_t i = 0; i < dim; ++i)
                cur.u[i] = anchor[i] + rng.uniform(-cfg.init_jitter, cfg.init_jitter);
            TargetEval ev = ge(cur.u, cur.grad);
            cur.logp = ev.value;
            ready = ev.finite;
        }
        if (!ready)
            throw numerical_error("chain " + std::to_string(chain) +
                                  " failed to find a finite starting point");

        std::vector<double> inv_mass(dim, 1.0);
        detail::DualAveraging da;
        da.restart(cfg.init_step);
        double eps = cfg.init_step;

        std::vector<double> wsum(dim, 0.0), wsumsq(dim, 0.0);
        std::size_t wcount = 0;
        std::size_t divergent_draws = 0;

        for (std::size_t iter = 0; iter < n_warm + n_draws; ++iter) {
            // Fresh momentum, then recursive doubling around the current point.
            for (std::size_t i = 0; i < dim; ++i)
                cur.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
            double h0 = -cur.logp + detail::kinetic_energy(cur.p, inv_mass);

            detail::PhaseState minus = cur, plus = cur, proposal = cur;
            double logw = 0.0;
            double sum_alpha = 0.0;
            std::size_t n_alpha = 0;
            int depth = 0;
            bool divergent = false;

            while (depth < cfg.max_depth) {
                int direction = rng.uniform() < 0.5 ? -1 : 1;
                detail::Subtree sub =
                    detail::build_tree(ge, direction > 0 ? plus : minus, direction, depth,
                                       eps, inv_mass, h0, rng);
                sum_alpha += sub.sum_alpha;
                n_alpha += sub.n_alpha;
                if (sub.divergent || sub.turning) {
                    divergent = sub.divergent;
                    break;
                }
                // Biased progressive sampling favors the fresh half-tree.
                if (std::log(rng.uniform()) < sub.logw - logw) proposal = sub.proposal;
                logw = detail::log_add_exp(logw, sub.logw);
                if (direction > 0)
                    plus = sub.plus;
                else
                    minus = sub.minus;
                ++depth;
                if (detail::is_turning(minus, plus, inv_mass)) break;
            }

            cur.u = proposal.u;
            cur.grad = proposal.grad;
            cur.logp = proposal.logp;
            double accept = n_alpha > 0 ? sum_alpha / static_cast<double>(n_alpha) : 0.0;

            if (iter < n_warm) {
                da.update(accept, cfg.target_accept);
                eps = da.current();
                if (adapt_metric && iter >= window_begin && iter < window_end) {
                    for (std::size_t i = 0; i < dim; ++i) {
                        wsum[i] += cur.u[i];
                        wsumsq[i] += cur.u[i] * cur.u[i];
                    }
                    ++wcount;
                    if (iter + 1 == window_end) {
                        double n = static_cast<double>(wcount);
                        for (std::size_t i = 0; i < dim; ++i) {
                            double mean = wsum[i] / n;
                            double var = (wsumsq[i] - n * mean * mean) / (n - 1.0);
                            // Shrink toward a small floor as the regularized
                            // estimate; keeps the metric positive.
                            inv_mass[i] = n / (n + 5.0) * var + 1e-3 * (5.0 / (n + 5.0));
                        }
                        da.restart(eps);
                    }
                }
                if (iter + 1 == n_warm) eps = da.averaged();
            } else {
                std::size_t d = iter - n_warm;
                out.layout.constrain(cur.u, std::span<double>(
                    out.values.data() + (chain * n_draws + d) * dim, dim));
                auto& di = out.info[chain * n_draws + d];
                di.tree_depth = depth;
                di.divergent = divergent;
                di.accept_stat = accept;
                if (divergent) ++divergent_draws;
            }
        }

        if (divergent_draws == n_draws)
            out.warnings.push_back("chain " + std::to_string(chain) +
                                   ": every post-warmup draw diverged; results are unusable");
    }
    return out;
}

} // namespace greybox
