#ifndef MHSID_CLI_HPP
#define MHSID_CLI_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mhsid/bench.hpp"
#include "mhsid/mho.hpp"
#include "mhsid/preprocess.hpp"
#include "mhsid/smoothing.hpp"

namespace mhsid {

/// Everything one pipeline run needs; serializes losslessly to JSON. Defaults
/// come from per-system benchmark configurations via defaults_for.
struct RunConfig {
    std::string system = "lotka_volterra";
    std::string input_csv;  // when set, discover/baseline read this instead of simulating
    std::string out_dir = "out";
    double t_end = 0.0;  // 0 picks the system default

    SmoothingConfig smoothing;
    PreprocessConfig preprocess;
    MovingHorizonConfig mho;

    double sigma = 0.0;                  // measurement-noise deviation, all states
    std::vector<double> sigma_per_state; // optional per-state override
    std::uint64_t seed = 0;
    int replications = 1;

    double baseline_lambda = 0.0;
    double baseline_rho = 0.9;

    static RunConfig defaults_for(const std::string &system);
    std::string to_json() const;
    static RunConfig from_json(const std::string &text);
    static RunConfig load(const std::string &path);
    void save(const std::string &path) const;

    Eigen::VectorXd sigma_vector(int n_x) const;
    double horizon_end() const;  // t_end or the system default
};

// Exit codes shared by every command.
inline constexpr int exit_ok = 0;
inline constexpr int exit_input_error = 1;
inline constexpr int exit_not_converged = 2;
inline constexpr int exit_internal = 3;

/// Writes the clean trajectory, one contaminated CSV per replication seed, and
/// a manifest with seeds and content hashes.
int cmd_simulate(const RunConfig &cfg);

/// Full pipeline on one CSV (or freshly simulated data): smooth, preprocess,
/// moving-horizon discovery. Writes model.json, trace.json, equations.txt.
/// With replications > 1, fans runs out across threads into rep_<k>/
/// subdirectories plus a summary.json.
int cmd_discover(const RunConfig &cfg);

/// Compares a discovered model against the configured benchmark system.
/// Writes report.json and comparison.csv. Blow-ups are reported, not fatal.
int cmd_validate(const RunConfig &cfg, const std::string &model_json_path);

/// Sparse-regression baseline on the same smoothed data: central differences
/// plus elastic net per state. Writes baseline.json.
int cmd_baseline(const RunConfig &cfg);

}  // namespace mhsid

#endif
