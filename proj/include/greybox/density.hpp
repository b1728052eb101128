#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "greybox/autodiff.hpp"
#include "greybox/errors.hpp"

namespace greybox {

// Signals a parameter outside its prior's support. The double evaluation path
// converts it to a -inf log density; the tape path lets it propagate so the
// gradient evaluator can flag the point as rejected rather than broken.
struct OutOfSupport {};

// ---------------------------------------------------------------------------
// Transforms between the sampler's unconstrained coordinate u and the
// physical parameter theta. log_jacobian is log|d theta / d u|, the term that
// keeps densities consistent under the change of variables.

class Transform {
public:
    enum class Kind { Identity, Log, Interval };

    static Transform identity() { return Transform(Kind::Identity, 0.0, 0.0); }
    static Transform log() { return Transform(Kind::Log, 0.0, 0.0); }
    static Transform interval(double lo, double hi) {
        if (!(lo < hi)) throw config_error("interval transform requires lo < hi");
        return Transform(Kind::Interval, lo, hi);
    }

    Kind kind() const { return kind_; }
    double lower() const { return lo_; }
    double upper() const { return hi_; }

    template <typename T>
    T apply(const T& u) const {
        using ad::exp;
        using std::exp;
        switch (kind_) {
            case Kind::Identity: return u;
            case Kind::Log: return exp(u);
            case Kind::Interval: return lo_ + (hi_ - lo_) * sigmoid_generic(u);
        }
        throw config_error("bad transform kind");
    }

    template <typename T>
    T log_jacobian(const T& u) const {
        switch (kind_) {
            case Kind::Identity: return u * 0.0;
            case Kind::Log: return u;
            case Kind::Interval:
                return std::log(hi_ - lo_) - ad::softplus(u) - ad::softplus(-u);
        }
        throw config_error("bad transform kind");
    }

    double inverse(double theta) const {
        switch (kind_) {
            case Kind::Identity: return theta;
            case Kind::Log:
                if (theta <= 0.0) throw config_error("log transform inverse needs theta > 0");
                return std::log(theta);
            case Kind::Interval: {
                if (!(theta > lo_ && theta < hi_))
                    throw config_error("interval transform inverse needs theta in (lo, hi)");
                double p = (theta - lo_) / (hi_ - lo_);
                return std::log(p) - std::log1p(-p);
            }
        }
        throw config_error("bad transform kind");
    }

private:
    Transform(Kind k, double lo, double hi) : kind_(k), lo_(lo), hi_(hi) {}

    static double sigmoid_generic(double u) { return ad::sigmoid_value(u); }
    static ad::Var sigmoid_generic(const ad::Var& u) { return ad::sigmoid(u); }

    Kind kind_;
    double lo_, hi_;
};

// ---------------------------------------------------------------------------
// Prior families. Parameters are fixed constants; densities are evaluated on
// the constrained scale. Support violations surface as OutOfSupport.

class PriorSpec {
public:
    enum class Family { Gamma, BoundedGamma, LogNormal, LogNormalMixture, Normal, Uniform };

    static PriorSpec gamma(double shape, double rate) {
        check_positive(shape, "gamma shape");
        check_positive(rate, "gamma rate");
        PriorSpec p(Family::Gamma);
        p.a_ = shape;
        p.b_ = rate;
        p.const_ = shape * std::log(rate) - std::lgamma(shape);
        return p;
    }

    // Gamma restricted to (lo, hi); the truncation mass is folded into the
    // normalizing constant via the regularized incomplete gamma function.
    static PriorSpec bounded_gamma(double shape, double rate, double lo, double hi) {
        if (!(lo < hi) || lo < 0.0) throw config_error("bounded gamma needs 0 <= lo < hi");
        PriorSpec p = gamma(shape, rate);
        p.family_ = Family::BoundedGamma;
        p.lo_ = lo;
        p.hi_ = hi;
        double mass = boost::math::gamma_p(shape, rate * hi) -
                      (lo > 0.0 ? boost::math::gamma_p(shape, rate * lo) : 0.0);
        if (!(mass > 0.0)) throw config_error("bounded gamma truncation has no mass");
        p.const_ -= std::log(mass);
        return p;
    }

    static PriorSpec lognormal(double mu, double sigma) {
        check_positive(sigma, "lognormal sigma");
        PriorSpec p(Family::LogNormal);
        p.a_ = mu;
        p.b_ = sigma;
        p.const_ = -std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
        return p;
    }

    static PriorSpec lognormal_mixture(std::vector<double> mu, std::vector<double> sigma,
                                       std::vector<double> weight) {
        if (mu.size() != sigma.size() || mu.size() != weight.size() || mu.empty())
            throw config_error("mixture components misaligned");
        double wsum = 0.0;
        for (double w : weight) {
            check_positive(w, "mixture weight");
            wsum += w;
        }
        PriorSpec p(Family::LogNormalMixture);
        p.mix_mu_ = std::move(mu);
        p.mix_sigma_ = std::move(sigma);
        p.mix_w_ = std::move(weight);
        for (double s : p.mix_sigma_) check_positive(s, "mixture sigma");
        for (double& w : p.mix_w_) w /= wsum;
        return p;
    }

    static PriorSpec normal(double mean, double sd) {
        check_positive(sd, "normal sd");
        PriorSpec p(Family::Normal);
        p.a_ = mean;
        p.b_ = sd;
        p.const_ = -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
        return p;
    }

    static PriorSpec uniform(double lo, double hi) {
        if (!(lo < hi)) throw config_error("uniform needs lo < hi");
        PriorSpec p(Family::Uniform);
        p.lo_ = lo;
        p.hi_ = hi;
        p.const_ = -std::log(hi - lo);
        return p;
    }

    Family family() const { return family_; }
    double param_a() const { return a_; }
    double param_b() const { return b_; }
    double lower() const { return lo_; }
    double upper() const { return hi_; }

    // Mean of the distribution (used for reporting and regime construction).
    double mean() const {
        switch (family_) {
            case Family::Gamma: return a_ / b_;
            case Family::BoundedGamma: return a_ / b_;  // untruncated mean, indicative only
            case Family::LogNormal: return std::exp(a_ + 0.5 * b_ * b_);
            case Family::LogNormalMixture: {
                double m = 0.0;
                for (std::size_t k = 0; k < mix_mu_.size(); ++k)
                    m += mix_w_[k] * std::exp(mix_mu_[k] + 0.5 * mix_sigma_[k] * mix_sigma_[k]);
                return m;
            }
            case Family::Normal: return a_;
            case Family::Uniform: return 0.5 * (lo_ + hi_);
        }
        return 0.0;
    }

    template <typename T>
    friend T log_prior(const PriorSpec& p, const T& theta);

private:
    explicit PriorSpec(Family f) : family_(f) {}

    static void check_positive(double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw config_error(std::string(what) + " must be positive and finite");
    }

    Family family_;
    double a_ = 0.0, b_ = 0.0;
    double lo_ = 0.0, hi_ = 0.0;
    double const_ = 0.0;  // log normalizing constant, precomputed
    std::vector<double> mix_mu_, mix_sigma_, mix_w_;
};

namespace detail {

// -inf for the double path, exception for the tape path.
inline double out_of_support(double) {
    return -std::numeric_limits<double>::infinity();
}
[[noreturn]] inline ad::Var out_of_support(const ad::Var&) { throw OutOfSupport{}; }

} // namespace detail

// Log density of the prior at a constrained value theta.
template <typename T>
T log_prior(const PriorSpec& p, const T& theta) {
    using ad::log;
    using std::log;
    using ad::exp;
    using std::exp;
    double tv = ad::value_of(theta);
    switch (p.family_) {
        case PriorSpec::Family::Gamma: {
            if (!(tv > 0.0)) return detail::out_of_support(theta);
            return (p.a_ - 1.0) * log(theta) - p.b_ * theta + p.const_;
        }
        case PriorSpec::Family::BoundedGamma: {
            if (!(tv > p.lo_ && tv < p.hi_)) return detail::out_of_support(theta);
            return (p.a_ - 1.0) * log(theta) - p.b_ * theta + p.const_;
        }
        case PriorSpec::Family::LogNormal: {
            if (!(tv > 0.0)) return detail::out_of_support(theta);
            T lt = log(theta);
            T z = (lt - p.a_) / p.b_;
            return p.const_ - lt - 0.5 * z * z;
        }
        case PriorSpec::Family::LogNormalMixture: {
            if (!(tv > 0.0)) return detail::out_of_support(theta);
            // log-sum-exp over components, stabilized by the max evaluated at
            // the current value; each component is a weighted lognormal.
            T lt = log(theta);
            std::vector<T> comp;
            comp.reserve(p.mix_mu_.size());
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < p.mix_mu_.size(); ++k) {
                double s = p.mix_sigma_[k];
                T z = (lt - p.mix_mu_[k]) / s;
                T lp = std::log(p.mix_w_[k]) - std::log(s) -
                       0.5 * std::log(2.0 * std::numbers::pi) - lt - 0.5 * z * z;
                m = std::max(m, ad::value_of(lp));
                comp.push_back(lp);
            }
            T acc = exp(comp[0] - m);
            for (std::size_t k = 1; k < comp.size(); ++k) acc = acc + exp(comp[k] - m);
            return m + log(acc);
        }
        case PriorSpec::Family::Normal: {
            T z = (theta - p.a_) / p.b_;
            return p.const_ - 0.5 * z * z;
        }
        case PriorSpec::Family::Uniform: {
            if (!(tv >= p.lo_ && tv <= p.hi_)) return detail::out_of_support(theta);
            return theta * 0.0 + p.const_;
        }
    }
    throw config_error("bad prior family");
}

// ---------------------------------------------------------------------------
// Layout of the unconstrained vector: named structural parameters first, then
// an optional latent state block of latent_steps * latent_dim identity
// coordinates (state trajectories sampled alongside parameters).

struct ParamLayout {
    std::vector<std::string> names;
    std::vector<Transform> transforms;
    int latent_dim = 0;
    std::size_t latent_steps = 0;

    std::size_t n_params() const { return names.size(); }
    std::size_t dimension() const { return names.size() + latent_steps * static_cast<std::size_t>(latent_dim); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw config_error("no parameter named '" + name + "' in layout");
    }

    bool has(const std::string& name) const {
        for (const auto& n : names)
            if (n == name) return true;
        return false;
    }

    std::size_t latent_index(std::size_t step, int d) const {
        return names.size() + step * static_cast<std::size_t>(latent_dim) + static_cast<std::size_t>(d);
    }

    // Maps an unconstrained vector to constrained parameters + latent states.
    void constrain(std::span<const double> u, std::span<double> theta) const {
        for (std::size_t i = 0; i < names.size(); ++i) theta[i] = transforms[i].apply(u[i]);
        for (std::size_t i = names.size(); i < dimension(); ++i) theta[i] = u[i];
    }

    std::vector<double> constrain(std::span<const double> u) const {
        std::vector<double> theta(dimension());
        constrain(u, theta);
        return theta;
    }

    // Column label for every coordinate (latents become x<step>_<dim>).
    std::vector<std::string> coordinate_names() const {
        std::vector<std::string> out = names;
        out.reserve(dimension());
        for (std::size_t n = 0; n < latent_steps; ++n)
            for (int d = 0; d < latent_dim; ++d)
                out.push_back("x" + std::to_string(n) + "_" + std::to_string(d));
        return out;
    }
};

// ---------------------------------------------------------------------------
// A log density over unconstrained coordinates with two evaluation routes
// from one definition: plain doubles for filtering/optimization and tape
// variables for gradients. Construction type-erases any functor templated on
// the scalar type.

class TargetDensity {
public:
    template <typename F>
    TargetDensity(ParamLayout layout, F f, std::vector<double> init_point = {})
        : layout_(std::move(layout)),
          impl_(std::make_shared<Model<F>>(std::move(f))),
          init_(std::move(init_point)) {
        if (init_.empty()) init_.assign(layout_.dimension(), 0.0);
        if (init_.size() != layout_.dimension())
            throw config_error("init point dimension mismatch");
    }

    const ParamLayout& layout() const { return layout_; }
    std::size_t dimension() const { return layout_.dimension(); }

    // Recommended unconstrained starting point (zeros unless the builder
    // anchored the latent block at the data).
    const std::vector<double>& init_point() const { return init_; }

    // -inf marks an out-of-support point, NaN a numerical domain failure.
    double log_density(std::span<const double> u) const {
        try {
            return impl_->ev(u);
        } catch (const OutOfSupport&) {
            return -std::numeric_limits<double>::infinity();
        } catch (const ad::DomainError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    }

    // Tape route; OutOfSupport and DomainError propagate to the caller.
    ad::Var log_density(ad::Tape& tape, std::span<const ad::Var> u) const {
        (void)tape;
        return impl_->ev(u);
    }

private:
    struct Concept {
        virtual ~Concept() = default;
        virtual double ev(std::span<const double>) const = 0;
        virtual ad::Var ev(std::span<const ad::Var>) const = 0;
    };

    template <typename F>
    struct Model final : Concept {
        explicit Model(F fn) : f(std::move(fn)) {}
        double ev(std::span<const double> u) const override { return f(u); }
        ad::Var ev(std::span<const ad::Var> u) const override { return f(u); }
        F f;
    };

    ParamLayout layout_;
    std::shared_ptr<const Concept> impl_;
    std::vector<double> init_;
};

struct TargetEval {
    double value = 0.0;
    bool finite = false;          // value and gradient all finite
    bool out_of_support = false;  // prior support violation, distinct from numerical failure
};

// Reusable tape harness: one instance per chain/thread, reset per evaluation.
class GradientEvaluator {
public:
    explicit GradientEvaluator(const TargetDensity& target) : target_(&target) {
        tape_.reserve(1024);
    }

    TargetEval operator()(std::span<const double> u, std::span<double> grad) {
        tape_.reset();
        vars_.clear();
        vars_.reserve(u.size());
        for (double ui : u) vars_.push_back(tape_.input(ui));
        TargetEval out;
        try {
            ad::Var res = target_->log_density(tape_, std::span<const ad::Var>(vars_.data(), vars_.size()));
            out.value = res.value();
            out.finite = tape_.backward(res, grad) && std::isfinite(out.value);
        } catch (const OutOfSupport&) {
            out.value = -std::numeric_limits<double>::infinity();
            out.finite = false;
            out.out_of_support = true;
            for (auto& g : grad) g = 0.0;
        } catch (const ad::DomainError&) {
            out.value = std::numeric_limits<double>::quiet_NaN();
            out.finite = false;
            for (auto& g : grad) g = 0.0;
        }
        return out;
    }

    std::size_t last_tape_size() const { return tape_.size(); }

private:
    const TargetDensity* target_;
    ad::Tape tape_;
    std::vector<ad::Var> vars_;
};

} // namespace greybox
