#pragma once

#include <cstdint>
#include <random>

namespace greybox {

// Seeded pseudo-random stream. Every stochastic routine in the library takes an
// explicit seed or an Rng&, never hidden global state, so identical seeds give
// bitwise-identical runs on a fixed platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return unif_(gen_); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unif_(gen_); }

    double normal() { return norm_(gen_); }

    double normal(double mean, double sd) { return mean + sd * norm_(gen_); }

    // Uniform integer in [0, n).
    std::uint64_t integer(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
    }

    bool bernoulli(double p = 0.5) { return unif_(gen_) < p; }

    std::mt19937_64& engine() { return gen_; }

    // Decorrelates derived streams (per-chain, per-draw) from a base seed.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> norm_{0.0, 1.0};
};

} // namespace greybox
