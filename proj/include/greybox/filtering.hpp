#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "greybox/autodiff.hpp"
#include "greybox/density.hpp"
#include "greybox/errors.hpp"
#include "greybox/linalg.hpp"
#include "greybox/thermal_model.hpp"

namespace greybox {

namespace detail {

[[noreturn]] inline void singular_innovation(double /*tag*/, std::size_t step) {
    throw numerical_error("singular innovation variance at step " + std::to_string(step));
}
[[noreturn]] inline void singular_innovation(const ad::Var& /*tag*/, std::size_t step) {
    throw ad::DomainError("singular innovation variance at step " + std::to_string(step));
}

inline double log_generic(double x) { return std::log(x); }
inline ad::Var log_generic(const ad::Var& x) { return ad::log(x); }

} // namespace detail

// Exact marginal log likelihood of the observed series under the linear
// Gaussian state-space model, by one Kalman forward pass. The prior state
// (m0, P0) sits one transition before the first observation, so every step
// predicts then updates. Works on doubles and on tape variables; the tape
// route is the gradient workhorse, so the update exploits the single-output
// structure (C = e_obs) instead of calling generic matrix routines.
template <typename T>
T kalman_loglik(const StateSpaceMatrices<T>& mats, std::span<const double> y,
                const ExogenousSeries& u, const Vec<double>& m0, const Mat<double>& P0) {
    const int d = mats.A.rows();
    const int o = mats.obs_index;
    const std::size_t n = y.size();
    if (u.size() != n) throw data_error("exogenous series length does not match observations");
    if (m0.size() != d || P0.rows() != d || P0.cols() != d)
        throw config_error("initial state dimension mismatch");

    const Mat<T>& A = mats.A;
    const Mat<T>& B = mats.B;

    Vec<T> m(d);
    Mat<T> P(d, d);
    T acc_logs = zero_like(A(0, 0));   // sum of log innovation variances
    T acc_quad = zero_like(A(0, 0));   // sum of squared standardized residuals

    for (std::size_t step = 0; step < n; ++step) {
        // Predict. The first step consumes the double-valued prior moments.
        Vec<T> mp(d);
        Mat<T> Pp(d, d);
        if (step == 0) {
            for (int i = 0; i < d; ++i) {
                T acc = A(i, 0) * m0[0];
                for (int j = 1; j < d; ++j) acc = acc + A(i, j) * m0[j];
                mp[i] = acc;
            }
            // A P0 A^T + Q with double P0; zero prior entries add no nodes.
            for (int i = 0; i < d; ++i) {
                for (int j = i; j < d; ++j) {
                    T acc = zero_like(A(0, 0));
                    bool started = false;
                    for (int k = 0; k < d; ++k) {
                        for (int l = 0; l < d; ++l) {
                            double p0 = P0(k, l);
                            if (p0 == 0.0) continue;
                            T term = A(i, k) * (A(j, l) * p0);
                            acc = started ? acc + term : term;
                            started = true;
                        }
                    }
                    Pp(i, j) = (i == j) ? acc + mats.q_diag[i] : acc;
                    if (i != j) Pp(j, i) = Pp(i, j);
                }
            }
        } else {
            for (int i = 0; i < d; ++i) {
                T acc = A(i, 0) * m[0];
                for (int j = 1; j < d; ++j) acc = acc + A(i, j) * m[j];
                mp[i] = acc;
            }
            // A P A^T + Q via the intermediate AP, upper triangle mirrored.
            Mat<T> AP(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    T acc = A(i, 0) * P(0, j);
                    for (int k = 1; k < d; ++k) acc = acc + A(i, k) * P(k, j);
                    AP(i, j) = acc;
                }
            for (int i = 0; i < d; ++i)
                for (int j = i; j < d; ++j) {
                    T acc = AP(i, 0) * A(j, 0);
                    for (int k = 1; k < d; ++k) acc = acc + AP(i, k) * A(j, k);
                    Pp(i, j) = (i == j) ? acc + mats.q_diag[i] : acc;
                    if (i != j) Pp(j, i) = Pp(i, j);
                }
        }
        // Exogenous contribution; zero inputs add no tape nodes.
        const Vec<double> uk = u.at(step);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < 3; ++j)
                if (uk[j] != 0.0) mp[i] = mp[i] + B(i, j) * uk[j];

        // Innovation.
        T s = Pp(o, o) + mats.r_obs;
        if (!(ad::value_of(s) > 0.0)) detail::singular_innovation(s, step);
        T resid = y[step] - mp[o];
        acc_logs = acc_logs + detail::log_generic(s);
        acc_quad = acc_quad + resid * resid / s;

        // Update with Kalman gain K = Pp e_o / s, Joseph-form covariance
        // P = (I - K e_o^T) Pp (I - K e_o^T)^T + r K K^T, expanded so only the
        // observed row/column participates. Upper triangle computed, mirrored.
        Vec<T> K(d);
        for (int i = 0; i < d; ++i) K[i] = Pp(i, o) / s;
        for (int i = 0; i < d; ++i) m[i] = mp[i] + K[i] * resid;

        Mat<T> JP(d, d);  // (I - K e_o^T) Pp
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                JP(i, j) = Pp(i, j) - K[i] * Pp(o, j);
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                T v = JP(i, j) - JP(i, o) * K[j] + (K[i] * K[j]) * mats.r_obs;
                P(i, j) = v;
                if (i != j) P(j, i) = v;
            }
    }

    double c = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    return c - 0.5 * acc_logs - 0.5 * acc_quad;
}

// One-step-ahead predictive moments plus the filtered terminal state, double
// precision only. The terminal state seeds forecasting.
struct KalmanPredictions {
    std::vector<double> yhat;  // predictive mean of y_n given y_1..n-1
    std::vector<double> svar;  // predictive variance
    double loglik = 0.0;
    Vec<double> final_mean;
    Mat<double> final_cov;
};

inline KalmanPredictions kalman_predict(const StateSpaceMatrices<double>& mats,
                                        std::span<const double> y, const ExogenousSeries& u,
                                        const Vec<double>& m0, const Mat<double>& P0) {
    const int d = mats.A.rows();
    const int o = mats.obs_index;
    const std::size_t n = y.size();
    if (u.size() != n) throw data_error("exogenous series length does not match observations");

    KalmanPredictions out;
    out.yhat.resize(n);
    out.svar.resize(n);

    Vec<double> m = m0;
    Mat<double> P = P0;
    double ll = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    for (std::size_t step = 0; step < n; ++step) {
        Vec<double> mp = matvec(mats.A, m) + matvec(mats.B, u.at(step));
        Mat<double> Pp = matmul(matmul(mats.A, P), transpose(mats.A));
        for (int i = 0; i < d; ++i) Pp(i, i) += mats.q_diag[i];

        double s = Pp(o, o) + mats.r_obs;
        if (!(s > 0.0)) detail::singular_innovation(s, step);
        double resid = y[step] - mp[o];
        out.yhat[step] = mp[o];
        out.svar[step] = s;
        ll += -0.5 * (std::log(s) + resid * resid / s);

        Vec<double> K(d);
        for (int i = 0; i < d; ++i) K[i] = Pp(i, o) / s;
        for (int i = 0; i < d; ++i) m[i] = mp[i] + K[i] * resid;
        Mat<double> JP(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) JP(i, j) = Pp(i, j) - K[i] * Pp(o, j);
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                double v = JP(i, j) - JP(i, o) * K[j] + K[i] * K[j] * mats.r_obs;
                P(i, j) = v;
                P(j, i) = v;
            }
    }
    out.loglik = ll;
    out.final_mean = m;
    out.final_cov = P;
    return out;
}

struct OneStepMetrics {
    double rmse = 0.0;
    double nrmse_pct = 0.0;  // RMSE as a percentage of the observed range
};

inline OneStepMetrics one_step_metrics(std::span<const double> yhat, std::span<const double> y) {
    if (yhat.size() != y.size()) throw data_error("prediction and observation lengths differ");
    if (y.empty()) throw data_error("one_step_metrics: empty series");
    double ss = 0.0;
    double lo = y[0], hi = y[0];
    for (std::size_t k = 0; k < y.size(); ++k) {
        double e = y[k] - yhat[k];
        ss += e * e;
        lo = std::min(lo, y[k]);
        hi = std::max(hi, y[k]);
    }
    OneStepMetrics out;
    out.rmse = std::sqrt(ss / static_cast<double>(y.size()));
    if (!(hi > lo)) throw data_error("constant observations: normalized error undefined");
    out.nrmse_pct = 100.0 * out.rmse / (hi - lo);
    return out;
}

// Default filter initialization: every state starts at the first observation
// with a weak diagonal prior.
inline Vec<double> default_m0(int d, double y0) { return Vec<double>(d, y0); }
inline Mat<double> default_p0(int d, double v = 25.0) {
    Mat<double> p(d, d, 0.0);
    for (int i = 0; i < d; ++i) p(i, i) = v;
    return p;
}

// ---------------------------------------------------------------------------
// Point estimation: L-BFGS ascent with Armijo backtracking on a TargetDensity
// built without the Jacobian correction, so the optimum is the MLE/MAP in the
// physical parameterization while transforms still enforce bounds.

struct OptimOptions {
    int max_iterations = 500;
    double grad_tol = 1e-6;
    int memory = 10;
};

struct PointEstimate {
    std::map<std::string, double> theta;  // constrained parameters
    std::vector<double> u;                // unconstrained optimum
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
};

inline PointEstimate fit_point(const TargetDensity& target, std::span<const double> init,
                               const OptimOptions& opt = {}) {
    const std::size_t dim = target.dimension();
    if (init.size() != dim) throw config_error("fit_point init dimension mismatch");

    GradientEvaluator eval(target);
    std::vector<double> x(init.begin(), init.end());
    std::vector<double> g(dim), gx(dim);

    auto r = eval(x, g);
    if (!r.finite) throw numerical_error("objective not finite at the initial point");
    double f = r.value;

    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;

    auto norm2 = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double vi : v) s += vi * vi;
        return std::sqrt(s);
    };

    PointEstimate out;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        double gn = norm2(g);
        if (gn < opt.grad_tol) {
            out.converged = true;
            break;
        }

        // Two-loop recursion on the negative gradient (we ascend).
        std::vector<double> q(dim);
        for (std::size_t i = 0; i < dim; ++i) q[i] = g[i];
        std::vector<double> alpha(s_hist.size());
        for (std::size_t h = s_hist.size(); h-- > 0;) {
            double a = 0.0;
            for (std::size_t i = 0; i < dim; ++i) a += s_hist[h][i] * q[i];
            a *= rho_hist[h];
            alpha[h] = a;
            for (std::size_t i = 0; i < dim; ++i) q[i] -= a * y_hist[h][i];
        }
        if (!s_hist.empty()) {
            double sy = 0.0, yy = 0.0;
            const auto& sl = s_hist.back();
            const auto& yl = y_hist.back();
            for (std::size_t i = 0; i < dim; ++i) {
                sy += sl[i] * yl[i];
                yy += yl[i] * yl[i];
            }
            double scale = sy / yy;
            for (std::size_t i = 0; i < dim; ++i) q[i] *= scale;
        } else {
            for (std::size_t i = 0; i < dim; ++i) q[i] /= std::max(gn, 1.0);
        }
        for (std::size_t h = 0; h < s_hist.size(); ++h) {
            double b = 0.0;
            for (std::size_t i = 0; i < dim; ++i) b += y_hist[h][i] * q[i];
            b *= rho_hist[h];
            for (std::size_t i = 0; i < dim; ++i) q[i] += s_hist[h][i] * (alpha[h] - b);
        }

        // q is an ascent direction candidate; fall back to the gradient if not.
        double dir_g = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dir_g += q[i] * g[i];
        if (!(dir_g > 0.0)) {
            for (std::size_t i = 0; i < dim; ++i) q[i] = g[i] / std::max(gn, 1.0);
            dir_g = gn * gn / std::max(gn, 1.0);
        }

        // Armijo backtracking.
        double step = 1.0;
        std::vector<double> xn(dim);
        double fn = f;
        bool accepted = false;
        for (int bt = 0; bt < 50; ++bt) {
            for (std::size_t i = 0; i < dim; ++i) xn[i] = x[i] + step * q[i];
            auto rn = eval(xn, gx);
            if (rn.finite && rn.value >= f + 1e-4 * step * dir_g) {
                fn = rn.value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // line search stalled; report current point

        std::vector<double> sv(dim), yv(dim);
        double sy = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            sv[i] = xn[i] - x[i];
            yv[i] = -(gx[i] - g[i]);  // gradient of -f changes sign
            sy += sv[i] * yv[i];
        }
        if (sy > 1e-12) {
            s_hist.push_back(std::move(sv));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }
        x = xn;
        f = fn;
        g = gx;
    }

    out.u = x;
    out.objective = f;
    out.iterations = it;
    out.grad_norm = norm2(g);
    const auto& layout = target.layout();
    auto theta = layout.constrain(x);
    for (std::size_t i = 0; i < layout.n_params(); ++i) out.theta[layout.names[i]] = theta[i];
    return out;
}

} // namespace greybox
