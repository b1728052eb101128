#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "greybox/autodiff.hpp"
#include "greybox/thermal_model.hpp"
#include "oracles.hpp"

using namespace greybox;

namespace {

ThermalParams tite_reference() {
    ThermalParams p;
    p.R = {{"R_ie", 1.73}, {"R_ea", 3.54}};
    p.C = {{"C_i", 21.39}, {"C_e", 68.56}};
    p.A_w = 10.75;
    p.sigma = {0.1, 0.1};
    p.sigma_obs = 0.05;
    return p;
}

ThermalParams random_params(ModelKind kind, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> r(0.5, 10.0), c(1.0, 100.0), a(0.5, 20.0);
    ThermalParams p;
    for (const auto& name : r_param_names(kind)) p.R[name] = r(gen);
    for (const auto& name : c_param_names(kind)) p.C[name] = c(gen);
    p.A_w = a(gen);
    p.sigma.assign(static_cast<std::size_t>(state_dimension(kind)), 0.1);
    p.sigma_obs = 0.05;
    return p;
}

} // namespace

TEST_CASE("TiTe transition matrix entries at the reference estimate", "[thermal]") {
    auto m = build_matrices(ModelKind::TiTe, tite_reference(), 1.0);
    CHECK(m.A(0, 0) == Catch::Approx(0.9729764056998165).epsilon(1e-12));
    CHECK(m.A(0, 1) == Catch::Approx(0.02702359430018349).epsilon(1e-12));
    CHECK(m.A(1, 0) == Catch::Approx(0.008431077626617923).epsilon(1e-12));
    CHECK(m.A(1, 1) == Catch::Approx(0.9874486499739332).epsilon(1e-12));
    CHECK(m.B(1, 0) == Catch::Approx(0.004120272399448872).epsilon(1e-12));
    CHECK(m.B(0, 1) == Catch::Approx(0.04675081813931744).epsilon(1e-12));
    CHECK(m.B(0, 2) == Catch::Approx(0.5025712949976624).epsilon(1e-12));
    CHECK(m.B(0, 0) == 0.0);
    CHECK(m.B(1, 1) == 0.0);
    CHECK(m.B(1, 2) == 0.0);
    CHECK(m.r_obs == Catch::Approx(0.05 * 0.05));
    CHECK(m.q_diag[0] == Catch::Approx(0.01));
}

TEST_CASE("heat balance closure across every row", "[thermal]") {
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> dts(0.05, 2.0);
    for (auto kind : {ModelKind::Ti, ModelKind::TiTe, ModelKind::TiTeTh}) {
        for (int trial = 0; trial < 25; ++trial) {
            auto p = random_params(kind, gen);
            double dt = dts(gen);
            auto m = build_matrices(kind, p, dt);
            int d = state_dimension(kind);
            for (int i = 0; i < d; ++i) {
                // Temperature-coupled coefficients (states + ambient) must sum
                // to one: heat lost along each edge reappears at its far end.
                double row = m.B(i, 0);
                for (int j = 0; j < d; ++j) row += m.A(i, j);
                INFO(model_name(kind) << " row " << i << " dt " << dt);
                CHECK(row == Catch::Approx(1.0).margin(1e-12));
            }
        }
    }
}

TEST_CASE("couplings recoverable from assembled matrices", "[thermal]") {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto p = random_params(ModelKind::TiTeTh, gen);
        double dt = 0.25;
        auto m = build_matrices(ModelKind::TiTeTh, p, dt);
        CHECK(std::abs(m.A(0, 1) - dt * (1.0 / p.R.at("R_ie")) * (1.0 / p.C.at("C_i"))) < 1e-12);
        CHECK(std::abs(m.A(1, 0) - dt * (1.0 / p.R.at("R_ie")) * (1.0 / p.C.at("C_e"))) < 1e-12);
        CHECK(std::abs(m.B(1, 0) - dt * (1.0 / p.R.at("R_ea")) * (1.0 / p.C.at("C_e"))) < 1e-12);
        CHECK(std::abs(m.A(2, 0) - dt * (1.0 / p.R.at("R_ih")) * (1.0 / p.C.at("C_h"))) < 1e-12);
        CHECK(std::abs(m.B(2, 1) - dt / p.C.at("C_h")) < 1e-12);
        CHECK(std::abs(m.B(0, 2) - dt * p.A_w / p.C.at("C_i")) < 1e-12);
        // Structural zeros of the heater formulation.
        CHECK(m.B(0, 1) == 0.0);
        CHECK(m.A(0, 2) == 0.0);
        CHECK(m.A(1, 2) == 0.0);
        CHECK(m.A(2, 1) == 0.0);
    }
}

TEST_CASE("halving dt halves couplings, process noise stays put", "[thermal]") {
    std::mt19937_64 gen(11);
    auto p = random_params(ModelKind::TiTe, gen);
    auto m1 = build_matrices(ModelKind::TiTe, p, 0.5);
    auto m2 = build_matrices(ModelKind::TiTe, p, 0.25);
    CHECK(m2.A(0, 1) == Catch::Approx(m1.A(0, 1) / 2.0).epsilon(1e-14));
    CHECK(m2.A(1, 0) == Catch::Approx(m1.A(1, 0) / 2.0).epsilon(1e-14));
    CHECK(m2.B(1, 0) == Catch::Approx(m1.B(1, 0) / 2.0).epsilon(1e-14));
    // 1 - A(i,i) re-derives the summed couplings; the subtraction costs a few
    // ulps of the diagonal's magnitude, hence the looser bound.
    CHECK(1.0 - m2.A(0, 0) == Catch::Approx((1.0 - m1.A(0, 0)) / 2.0).epsilon(1e-11));
    CHECK(1.0 - m2.A(1, 1) == Catch::Approx((1.0 - m1.A(1, 1)) / 2.0).epsilon(1e-11));
    // Per-step noise variances are deliberately independent of dt.
    CHECK(m1.q_diag[0] == m2.q_diag[0]);
    CHECK(m1.q_diag[1] == m2.q_diag[1]);
    CHECK(m1.r_obs == m2.r_obs);
}

TEST_CASE("hvac sign and scale enter only the heat flux column", "[thermal]") {
    std::mt19937_64 gen(13);
    auto p = random_params(ModelKind::Ti, gen);
    p.phi_h_scale = 2.5;
    auto heat = build_matrices(ModelKind::Ti, p, 1.0, +1.0);
    auto cool = build_matrices(ModelKind::Ti, p, 1.0, -1.0);
    CHECK(cool.B(0, 1) == Catch::Approx(-heat.B(0, 1)));
    CHECK(heat.B(0, 1) == Catch::Approx(2.5 / p.C.at("C_i")));
    CHECK(cool.A(0, 0) == heat.A(0, 0));
    CHECK(cool.B(0, 0) == heat.B(0, 0));
    CHECK(cool.B(0, 2) == heat.B(0, 2));
}

TEST_CASE("free cooling follows the analytic exponential decay", "[thermal]") {
    // Ti with no fluxes and Ta = 0 is x_k = a^k x_0, a = 1 - dt/(R C).
    ThermalParams p;
    p.R = {{"R_ia", 5.29}};
    p.C = {{"C_i", 24.96}};
    p.A_w = 0.0;
    p.sigma = {0.0};
    p.sigma_obs = 0.0;
    double dt = 0.25;
    std::size_t n = 200;
    ExogenousSeries u{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                      std::vector<double>(n, 0.0), dt};
    Vec<double> x0(1);
    x0[0] = 20.0;
    auto sim = simulate(ModelKind::Ti, p, u, x0, 1, false, false);
    double a = 1.0 - dt / (5.29 * 24.96);
    for (std::size_t k = 0; k < n; k += 17) {
        double expected = 20.0 * std::pow(a, static_cast<double>(k + 1));
        CHECK(sim.y[k] == Catch::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("constant forcing settles at the thermal fixed point", "[thermal]") {
    // Steady state of Ti under constant Ta and heater flux: T = Ta + R phi.
    ThermalParams p;
    p.R = {{"R_ia", 4.0}};
    p.C = {{"C_i", 10.0}};
    p.A_w = 0.0;
    p.sigma = {0.0};
    p.sigma_obs = 0.0;
    std::size_t n = 4000;
    ExogenousSeries u{std::vector<double>(n, -3.0), std::vector<double>(n, 1.5),
                      std::vector<double>(n, 0.0), 0.5};
    Vec<double> x0(1);
    x0[0] = 15.0;
    auto sim = simulate(ModelKind::Ti, p, u, x0, 1, false, false);
    CHECK(sim.y.back() == Catch::Approx(-3.0 + 4.0 * 1.5).margin(1e-6));
}

TEST_CASE("two-node relaxation approaches ambient through the envelope", "[thermal]") {
    ThermalParams p = tite_reference();
    p.sigma = {0.0, 0.0};
    p.sigma_obs = 0.0;
    std::size_t n = 60000;
    ExogenousSeries u{std::vector<double>(n, 8.0), std::vector<double>(n, 0.0),
                      std::vector<double>(n, 0.0), 1.0};
    Vec<double> x0(2);
    x0[0] = 25.0;
    x0[1] = 20.0;
    auto sim = simulate(ModelKind::TiTe, p, u, x0, 1, false, false);
    CHECK(sim.y.back() == Catch::Approx(8.0).margin(1e-4));
    CHECK(sim.state(n - 1, 1) == Catch::Approx(8.0).margin(1e-4));
    // Interior cools monotonically through the transient.
    for (std::size_t k = 1; k < 5000; k += 97)
        CHECK(sim.y[k] < sim.y[k - 1]);
}

TEST_CASE("simulation noise is seeded and reproducible", "[thermal]") {
    auto p = tite_reference();
    std::size_t n = 500;
    ExogenousSeries u{std::vector<double>(n, 5.0), std::vector<double>(n, 0.5),
                      std::vector<double>(n, 0.1), 0.25};
    Vec<double> x0(2);
    x0[0] = 20.0;
    x0[1] = 15.0;
    auto s1 = simulate(ModelKind::TiTe, p, u, x0, 99);
    auto s2 = simulate(ModelKind::TiTe, p, u, x0, 99);
    auto s3 = simulate(ModelKind::TiTe, p, u, x0, 100);
    CHECK(s1.y == s2.y);
    CHECK(s1.states == s2.states);
    CHECK(s1.y != s3.y);

    // Observation noise magnitude: y minus the simulated state is exactly the
    // measurement error sequence.
    std::vector<double> diffs(n);
    for (std::size_t k = 0; k < n; ++k) diffs[k] = s1.y[k] - s1.state(k, 0);
    double sd = std::sqrt(oracles::variance(diffs));
    CHECK(sd == Catch::Approx(p.sigma_obs).epsilon(0.2));
}

TEST_CASE("composite RC equivalents", "[thermal]") {
    CHECK(composite_rc(ModelKind::Ti, {{"R_ia", 5.29}, {"C_i", 24.96}}).totalR == Catch::Approx(5.29));
    CHECK(composite_rc(ModelKind::Ti, {{"R_ia", 5.29}, {"C_i", 24.96}}).totalC == Catch::Approx(24.96));

    auto tite = composite_rc(ModelKind::TiTe, tite_reference());
    CHECK(tite.totalR == Catch::Approx(5.27).epsilon(1e-12));
    CHECK(tite.totalC == Catch::Approx(89.95).epsilon(1e-12));

    auto t3 = composite_rc(ModelKind::TiTeTh,
                           {{"R_ie", 2.176}, {"R_ea", 0.63}, {"R_ih", 0.23},
                            {"C_i", 177.82}, {"C_e", 2.05}, {"C_h", 4.59}});
    CHECK(t3.totalR == Catch::Approx(2.806).epsilon(1e-12));  // heater branch excluded
    CHECK(t3.totalC == Catch::Approx(184.46).epsilon(1e-12));
}

TEST_CASE("matrix assembly is differentiable", "[thermal]") {
    // d A(0,0) / d R_ia of the Ti model against the finite-difference oracle.
    auto entry = [](std::span<const double> x) {
        ParamView<double> v;
        v.set("R_ia", x[0]);
        v.set("C_i", x[1]);
        v.set("A_w", 3.0);
        v.set("phi_h_scale", 1.0);
        v.set("sigma2_i", 0.01);
        v.set("sigma2_obs", 0.01);
        return build_matrices(ModelKind::Ti, v, 0.5).A(0, 0);
    };
    std::vector<double> x = {5.0, 25.0};
    auto fd = oracles::fd_gradient(entry, x);

    namespace ad = greybox::ad;
    ad::Tape tape;
    auto r = tape.input(5.0);
    auto c = tape.input(25.0);
    ParamView<ad::Var> v;
    v.set("R_ia", r);
    v.set("C_i", c);
    v.set("A_w", tape.constant(3.0));
    v.set("phi_h_scale", tape.constant(1.0));
    v.set("sigma2_i", tape.constant(0.01));
    v.set("sigma2_obs", tape.constant(0.01));
    auto m = build_matrices(ModelKind::Ti, v, 0.5);
    std::vector<double> g(2);
    REQUIRE(tape.backward(m.A(0, 0), g));
    CHECK(oracles::rel_err(g[0], fd[0]) < 1e-6);
    CHECK(oracles::rel_err(g[1], fd[1]) < 1e-6);
}

TEST_CASE("validation rejects malformed inputs", "[thermal]") {
    ThermalParams p = tite_reference();
    p.R["R_ie"] = -1.0;
    CHECK_THROWS_AS(p.validate(ModelKind::TiTe), Error);

    ThermalParams missing = tite_reference();
    missing.R.erase("R_ea");
    CHECK_THROWS_AS(missing.validate(ModelKind::TiTe), Error);

    TimeSeriesDataset ds;
    ds.t_hours = {0.0, 0.5, 1.0};
    ds.y = {20.0, 20.1, 20.2};
    ds.ta = {5.0, 5.0, 5.0};
    ds.phi_h = {0.0, 1.0, 0.0};
    ds.phi_s = {0.0, 0.0, 0.0};
    ds.dt = 0.5;
    ds.validate();

    TimeSeriesDataset bad = ds;
    bad.t_hours[2] = 1.2;
    CHECK_THROWS_AS(bad.validate(), Error);

    TimeSeriesDataset nonbin = ds;
    nonbin.binary_hvac = true;
    nonbin.phi_h[1] = 0.7;
    CHECK_THROWS_AS(nonbin.validate(), Error);

    CHECK_THROWS_AS(ds.head(1), Error);
    CHECK_THROWS_AS(ds.head(9), Error);
    CHECK(ds.head(2).size() == 2);
}
