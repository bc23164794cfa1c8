#ifndef MHSID_BENCH_HPP
#define MHSID_BENCH_HPP

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mhsid/basis.hpp"
#include "mhsid/mho.hpp"
#include "mhsid/timeseries.hpp"

namespace mhsid {

/// A canonical test system: closed-form dynamics expressed as dictionary
/// terms, a default initial condition, and desk-scale sampling defaults.
struct BenchmarkSystem {
    std::string name;
    int n_x = 0;
    Eigen::VectorXd initial_condition;
    double sampling_frequency = 0.0;  // samples per time unit
    double t_end = 0.0;               // default horizon for data generation
    // Per state: (term label, true coefficient). Labels resolve in
    // Dictionary::defaults(n_x).
    std::vector<std::vector<std::pair<std::string, double>>> truth;

    static BenchmarkSystem by_name(const std::string &name);
    static std::vector<std::string> names();

    Eigen::VectorXd rhs(const Eigen::VectorXd &x) const;
    /// True coefficients laid out over d with exactly the truth support active.
    CoefficientMatrix truth_coefficients(const Dictionary &d) const;
};

/// Samples dx/dt = f(x) on the uniform grid t0, t0+dt, .., via an adaptive
/// embedded Runge-Kutta pair at 1e-12 relative tolerance. Throws
/// std::runtime_error naming the last valid time on blow-up.
TimeSeries simulate_rhs(const std::function<Eigen::VectorXd(const Eigen::VectorXd &)> &f,
                        const Eigen::VectorXd &x0, double t0, double t_end, double dt_sample);

TimeSeries simulate(const BenchmarkSystem &system, double t0, double t_end, double dt_sample);

struct NoiseSpec {
    Eigen::VectorXd sigma;  // per state, state units
    std::uint64_t seed = 0;
};

/// Adds i.i.d. Gaussian measurement noise. Each sample's draw depends only on
/// (seed, sample index, state), so realizations are platform-stable and
/// order-independent.
TimeSeries contaminate(const TimeSeries &ts, const NoiseSpec &spec);

struct BaselineResult {
    Eigen::VectorXd coefficients;
    double stationarity = 0.0;  // max KKT violation at exit
    int sweeps = 0;
};

/// Elastic-net sparse regression
///   min (1/2m)|Theta xi - xdot|^2 + lambda rho |xi|_1 + (lambda(1-rho)/2)|xi|_2^2
/// by cyclic coordinate descent with internal column scaling. lambda=0
/// reduces to least squares. Throws std::runtime_error with the residual KKT
/// gap if max_sweeps is exhausted.
BaselineResult baseline_sparse_regression(const Eigen::MatrixXd &theta,
                                          const Eigen::VectorXd &xdot, double lambda, double rho,
                                          int max_sweeps = 200000);

struct ValidationReport {
    Eigen::VectorXd mse;                 // per state; +inf on blow-up
    double coefficient_error_pct = 0.0;  // cumulative over the true support
    std::vector<std::string> spurious;   // "state j: label"
    std::vector<std::string> missing;
    bool blew_up = false;
    double blowup_time = 0.0;
    TimeSeries reference_trajectory;
    TimeSeries model_trajectory;  // truncated at blow-up

    std::string to_json() const;
};

/// Integrates the reference system and the discovered model from the same
/// initial condition and compares trajectories and coefficients.
ValidationReport validate(const DiscoveredModel &model, const BenchmarkSystem &reference,
                          double t0, double t_end);

/// Paired trajectories as CSV: t, x1_true.., x1_model.. (rows truncated to the
/// shorter trajectory).
void write_comparison_csv(const ValidationReport &report, const std::string &path);

}  // namespace mhsid

#endif
