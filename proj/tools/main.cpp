// mhsid: sparse dynamics discovery from noisy trajectories.
//
// Subcommands: simulate, discover, validate, baseline. Exit codes: 0 success
// (or converged), 1 input error, 2 not converged, 3 internal solver abort.

#include <CLI11.hpp>

#include <cstdio>

#include "mhsid/cli.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string system;
    std::string out_dir;
    std::string input_csv;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int replications = 0;
    double sigma = -1.0;
    double t_end = 0.0;
};

void add_common(CLI::App *cmd, CommonFlags &f) {
    cmd->add_option("--config", f.config_path, "JSON run configuration");
    cmd->add_option("--system", f.system,
                    "benchmark system: lotka_volterra, van_der_pol, brusselator, lorenz");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--input", f.input_csv, "input trajectory CSV (t,x1,..)");
    cmd->add_option("--seed", f.seed, "noise seed")->each([&](const std::string &) {
        f.seed_set = true;
    });
    cmd->add_option("--replications", f.replications, "independent runs with seed, seed+1, ..");
    cmd->add_option("--sigma", f.sigma, "noise standard deviation, all states");
    cmd->add_option("--t-end", f.t_end, "simulation horizon in time units");
}

int build_config(const CommonFlags &f, mhsid::RunConfig &cfg) {
    try {
        if (!f.config_path.empty())
            cfg = mhsid::RunConfig::load(f.config_path);
        else
            cfg = mhsid::RunConfig::defaults_for(f.system.empty() ? "lotka_volterra" : f.system);
        if (!f.system.empty()) {
            // Flag overrides the config file's system but keeps its other
            // settings only when both name the same system.
            if (f.config_path.empty() || cfg.system != f.system)
                cfg = mhsid::RunConfig::defaults_for(f.system);
        }
        if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
        if (!f.input_csv.empty()) cfg.input_csv = f.input_csv;
        if (f.seed_set) cfg.seed = f.seed;
        if (f.replications > 0) cfg.replications = f.replications;
        if (f.sigma >= 0.0) cfg.sigma = f.sigma;
        if (f.t_end > 0.0) cfg.t_end = f.t_end;
        return 0;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return mhsid::exit_input_error;
    }
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Sparse ODE discovery via moving-horizon optimization"};
    app.require_subcommand(1);

    CommonFlags sim_f, disc_f, val_f, base_f;
    std::string model_path;

    auto *sim = app.add_subcommand("simulate", "generate clean and noisy trajectory CSVs");
    add_common(sim, sim_f);
    auto *disc = app.add_subcommand("discover", "run the full discovery pipeline");
    add_common(disc, disc_f);
    auto *val = app.add_subcommand("validate", "compare a discovered model with the truth");
    add_common(val, val_f);
    val->add_option("--model", model_path, "discovered model JSON")->required();
    auto *base = app.add_subcommand("baseline", "sparse-regression baseline on the same data");
    add_common(base, base_f);

    CLI11_PARSE(app, argc, argv);

    mhsid::RunConfig cfg;
    if (sim->parsed()) {
        if (int rc = build_config(sim_f, cfg)) return rc;
        return mhsid::cmd_simulate(cfg);
    }
    if (disc->parsed()) {
        if (int rc = build_config(disc_f, cfg)) return rc;
        return mhsid::cmd_discover(cfg);
    }
    if (val->parsed()) {
        if (int rc = build_config(val_f, cfg)) return rc;
        return mhsid::cmd_validate(cfg, model_path);
    }
    if (base->parsed()) {
        if (int rc = build_config(base_f, cfg)) return rc;
        return mhsid::cmd_baseline(cfg);
    }
    return mhsid::exit_input_error;
}
