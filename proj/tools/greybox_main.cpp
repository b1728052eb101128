// Command-line front end: five subcommands over one JSON run configuration.
// Exit codes: 0 success, 1 configuration/usage, 2 data, 3 numerical.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "greybox/greybox.hpp"

namespace {

constexpr const char* kFooter = R"(Configuration file keys (JSON object; every key optional unless stated):
  model         Ti | TiTe | TiTeTh                         (default Ti)
  data          input CSV: time,y,ta,phi_h,phi_s           (fit/forecast/diagnose)
  output        output directory, required for every command
  seed          RNG seed for the whole run                  (default 0)
  take          keep only the first N rows of the data
  dt            expected sampling interval in hours; validated against the CSV
  unit          c | f: temperature unit of y and ta         (default c)
  binary_hvac   true when phi_h is a 0/1 signal             (default false)
  hvac_sign     1 heating, -1 cooling                       (default 1)

  prior.regime     uninformed | informed | hyper | transferred   (default uninformed)
  prior.estimates  {"R_ia": 5.0, ...} audit values          (informed)
  prior.metadata   hyperprior mixture JSON {mu[],sigma[],weight[]}  (hyper;
                   configs/hyper_default.json ships the documented default)
  prior.transfer   transferred_priors.json from `transfer`  (transferred)
  prior.overrides  {"A_w": {"family":"lognormal","mu":1.5,"sigma":0.4}, ...}

  backend.name     nuts | advi | mle | map                  (default nuts)
  backend.formulation  marginalized | latent                (nuts/mle/map default
                   marginalized; advi defaults latent)
  nuts:  chains 4, warmup 5000, draws 5000, target_accept 0.8, max_depth 10,
         metric diag|unit, init_step 1.0, init_jitter 0.1
  advi:  max_iterations 180000, mc_samples 1, learning_rate 0.1, tau 1.0,
         elbo_stride 500, elbo_samples 100, window 100, rel_tol 1e-4,
         summary_draws 1000
  mle/map: max_iterations 500, grad_tol 1e-6, memory 10

  forecast: artifact (default <output>/artifact.json), horizon 144, draws 500,
            start (default N-horizon), band minmax|quantile, alpha 0.05,
            setpoint, hysteresis 0.5, hold_hvac false
  synthetic: n, dt, params {R{},C{},A_w,phi_h_scale,sigma[],sigma_obs},
             drivers {ta_mean 8, ta_amplitude 6, setpoint 21, hysteresis 0.5,
                      heater_kw 4, solar_peak 0.5, initial_temp 21}
  diagnose: artifact, ppc_replicates 200
  transfer: artifact

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical error.)";

struct Overrides {
    std::string data;
    std::string output;
    std::uint64_t seed = 0;
    std::size_t take = 0;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"grey-box thermal parameter estimation for buildings"};
    app.footer(kFooter);
    app.require_subcommand(1);

    const std::pair<const char*, const char*> commands[] = {
        {"fit", "estimate RC-model parameters from a temperature record"},
        {"forecast", "Monte-Carlo indoor-temperature forecast from a fit artifact"},
        {"simulate", "generate a synthetic temperature record from known parameters"},
        {"diagnose", "convergence and posterior predictive checks for a fit artifact"},
        {"transfer", "export a fitted posterior as priors for another season"},
    };

    std::string config_path;
    Overrides ov;
    std::vector<CLI::App*> subs;
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("-c,--config", config_path, "run configuration (JSON)")
            ->required();
        sub->add_option("--data", ov.data, "override the configured data CSV");
        sub->add_option("--output", ov.output, "override the configured output directory");
        sub->add_option("--seed", ov.seed, "override the configured RNG seed");
        sub->add_option("--take", ov.take, "keep only the first N data rows");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        CLI::App* active = nullptr;
        for (CLI::App* sub : subs)
            if (sub->parsed()) active = sub;
        if (!active) {
            std::cerr << "error: no command given\n";
            return 1;
        }
        greybox::RunConfig cfg = greybox::load_run_config(config_path);
        if (active->count("--data")) cfg.data_path = ov.data;
        if (active->count("--output")) cfg.output_dir = ov.output;
        if (active->count("--seed")) cfg.seed = ov.seed;
        if (active->count("--take")) cfg.take = ov.take;
        return greybox::run_command(active->get_name(), cfg);
    } catch (const greybox::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
