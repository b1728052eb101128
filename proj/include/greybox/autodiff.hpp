#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

namespace greybox::ad {

// Scalar reverse-mode automatic differentiation on an explicit tape.
//
// Every primitive records at most two parents and caches its local partial
// derivatives at forward time, so one reverse sweep accumulates adjoints in
// a single pass over the node array. Extending the primitive set means adding
// an Op tag, a local-partial rule here, and a finite-difference test.

enum class Op : std::uint8_t {
    Input, Constant, Add, Sub, Mul, Div, Neg, Exp, Log, Pow, Sigmoid, Lgamma
};

// Out-of-domain intermediate (e.g. log of a non-positive value). Distinct from
// a non-finite result, which is reported through flags rather than thrown.
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

class Tape;

// Handle to a tape node. Cheap to copy; arithmetic on Vars appends nodes.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t idx = 0;

    double value() const;
};

class Tape {
public:
    static constexpr std::uint32_t kNone = 0xffffffffu;

    void reserve(std::size_t n) { nodes_.reserve(n); }

    void reset() {
        nodes_.clear();
        inputs_.clear();
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t num_inputs() const { return inputs_.size(); }

    Var input(double v) {
        std::uint32_t id = emit(Op::Input, v, kNone, 0.0, kNone, 0.0);
        inputs_.push_back(id);
        return Var{this, id};
    }

    Var constant(double v) { return Var{this, emit(Op::Constant, v, kNone, 0.0, kNone, 0.0)}; }

    double value(std::uint32_t idx) const { return nodes_[idx].val; }

    // Accumulates d(out)/d(input_i) into grad, ordered by input creation.
    // Returns false when any adjoint or the output value is non-finite.
    bool backward(Var out, std::span<double> grad) {
        adj_.assign(nodes_.size(), 0.0);
        adj_[out.idx] = 1.0;
        bool finite = std::isfinite(nodes_[out.idx].val);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            double a = adj_[i];
            if (a == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.p1 != kNone) adj_[n.p1] += a * n.d1;
            if (n.p2 != kNone) adj_[n.p2] += a * n.d2;
        }
        for (std::size_t k = 0; k < inputs_.size(); ++k) {
            grad[k] = adj_[inputs_[k]];
            if (!std::isfinite(grad[k])) finite = false;
        }
        return finite;
    }

    std::uint32_t emit(Op op, double val, std::uint32_t p1, double d1, std::uint32_t p2, double d2) {
        nodes_.push_back(Node{val, d1, d2, p1, p2, op});
        return static_cast<std::uint32_t>(nodes_.size() - 1);
    }

private:
    struct Node {
        double val, d1, d2;
        std::uint32_t p1, p2;
        Op op;
    };

    std::vector<Node> nodes_;
    std::vector<std::uint32_t> inputs_;
    std::vector<double> adj_;
};

inline double Var::value() const { return tape->value(idx); }

inline Var unary(Op op, const Var& a, double val, double da) {
    return Var{a.tape, a.tape->emit(op, val, a.idx, da, Tape::kNone, 0.0)};
}

inline Var binary(Op op, const Var& a, const Var& b, double val, double da, double db) {
    return Var{a.tape, a.tape->emit(op, val, a.idx, da, b.idx, db)};
}

// Arithmetic. Mixed Var/double forms fold the constant into the node's local
// partials instead of materializing a Constant node; with tape sizes in the
// tens of thousands per Kalman sweep this roughly halves the node count.

inline Var operator+(const Var& a, const Var& b) { return binary(Op::Add, a, b, a.value() + b.value(), 1.0, 1.0); }
inline Var operator+(const Var& a, double c) { return unary(Op::Add, a, a.value() + c, 1.0); }
inline Var operator+(double c, const Var& a) { return a + c; }

inline Var operator-(const Var& a, const Var& b) { return binary(Op::Sub, a, b, a.value() - b.value(), 1.0, -1.0); }
inline Var operator-(const Var& a, double c) { return unary(Op::Sub, a, a.value() - c, 1.0); }
inline Var operator-(double c, const Var& a) { return unary(Op::Sub, a, c - a.value(), -1.0); }
inline Var operator-(const Var& a) { return unary(Op::Neg, a, -a.value(), -1.0); }

inline Var operator*(const Var& a, const Var& b) { return binary(Op::Mul, a, b, a.value() * b.value(), b.value(), a.value()); }
inline Var operator*(const Var& a, double c) { return unary(Op::Mul, a, a.value() * c, c); }
inline Var operator*(double c, const Var& a) { return a * c; }

inline Var operator/(const Var& a, const Var& b) {
    double bv = b.value();
    double v = a.value() / bv;
    return binary(Op::Div, a, b, v, 1.0 / bv, -v / bv);
}
inline Var operator/(const Var& a, double c) { return unary(Op::Div, a, a.value() / c, 1.0 / c); }
inline Var operator/(double c, const Var& b) {
    double bv = b.value();
    double v = c / bv;
    return unary(Op::Div, b, v, -v / bv);
}

inline Var exp(const Var& a) {
    double v = std::exp(a.value());
    return unary(Op::Exp, a, v, v);
}

inline Var log(const Var& a) {
    double av = a.value();
    if (av <= 0.0) throw DomainError("log of non-positive value " + std::to_string(av));
    return unary(Op::Log, a, std::log(av), 1.0 / av);
}

inline Var pow(const Var& a, double e) {
    double av = a.value();
    if (av < 0.0 && e != std::floor(e)) throw DomainError("fractional power of negative base");
    if (av == 0.0 && e < 0.0) throw DomainError("negative power of zero");
    double v = std::pow(av, e);
    return unary(Op::Pow, a, v, e * std::pow(av, e - 1.0));
}

inline Var pow(const Var& a, const Var& b) {
    double av = a.value();
    if (av <= 0.0) throw DomainError("pow with non-positive variable base");
    double v = std::pow(av, b.value());
    return binary(Op::Pow, a, b, v, b.value() * v / av, v * std::log(av));
}

inline Var sqrt(const Var& a) { return pow(a, 0.5); }

// Numerically stable logistic; the branch keeps exp's argument non-positive.
inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
    double s = sigmoid_value(a.value());
    return unary(Op::Sigmoid, a, s, s * (1.0 - s));
}

inline Var lgamma(const Var& a) {
    double av = a.value();
    if (av <= 0.0) throw DomainError("lgamma of non-positive value");
    return unary(Op::Lgamma, a, std::lgamma(av), boost::math::digamma(av));
}

// log(1 + exp(x)) assembled from primitives; the value-level branch picks the
// overflow-safe form, and both branches carry the correct derivative.
inline Var softplus(const Var& x) {
    if (x.value() > 0.0) return x + log(exp(-x) + 1.0);
    return log(exp(x) + 1.0);
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& v) { return v.value(); }

// Generic zero of the same scalar kind, usable from templated numeric code.
inline Var zero_like(const Var& v) { return v.tape->constant(0.0); }

// Scalar type helpers so templated model code can run on doubles unchanged.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct GradResult {
    double value = 0.0;
    bool finite = false;
};

// One-shot convenience: value and gradient of f at x, where f maps a span of
// Vars to a Var. Sampler hot paths should hold a Tape and reuse it instead.
template <typename F>
GradResult grad(F&& f, std::span<const double> x, std::span<double> grad_out) {
    Tape tape;
    tape.reserve(64 + 16 * x.size());
    std::vector<Var> vars;
    vars.reserve(x.size());
    for (double xi : x) vars.push_back(tape.input(xi));
    Var out = f(std::span<const Var>(vars.data(), vars.size()));
    GradResult r;
    r.value = out.value();
    r.finite = tape.backward(out, grad_out) && std::isfinite(r.value);
    return r;
}

} // namespace greybox::ad
