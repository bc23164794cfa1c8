#ifndef MHSID_PREPROCESS_HPP
#define MHSID_PREPROCESS_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "mhsid/basis.hpp"
#include "mhsid/timeseries.hpp"

namespace mhsid {

/// Derivative estimates at the interior sample times t_2..t_{m-1}.
struct DerivativeMatrix {
    Eigen::VectorXd times;
    Eigen::MatrixXd values;  // (m-2) x n_x
};

DerivativeMatrix central_differences(const TimeSeries &ts);

/// Dictionary evaluated row-wise on the interior samples of ts (aligned with
/// central_differences) for one state's term list.
Eigen::MatrixXd dictionary_data_matrix(const TimeSeries &ts, const Dictionary &d, int state);

struct PreprocessConfig {
    double granger_significance = 0.1;
    int restricted_lag = 1;
    bool enforce_stationarity = false;  // difference the signals before the AR fits
    double ols_significance = 0.9;
    double interval_alpha = 1e-6;
};

struct OlsResult {
    Eigen::VectorXd coefficients;
    Eigen::VectorXd std_errors;
    Eigen::VectorXd p_values;  // two-sided test of zero coefficient
    double residual_variance = 0.0;
    Eigen::Index dof = 0;
    std::vector<int> collinear_columns;
    Eigen::VectorXd column_norms;   // Euclidean norm per regressor column
    double response_norm = 0.0;     // Euclidean norm of the response
};

/// Least-squares fit of xdot on theta via column-pivoted orthogonal
/// factorization (minimum-norm on rank deficiency, collinear columns
/// flagged).
OlsResult ols_fit(const Eigen::MatrixXd &theta, const Eigen::VectorXd &xdot);

struct GrangerResult {
    std::vector<Eigen::VectorXd> p_values;            // per state, averaged F/chi2 p-value
    std::vector<std::vector<std::uint8_t>> kept;      // per state, per term
    std::vector<std::string> warnings;
};

/// Keeps term k for state j iff the averaged F- and chi-squared-test p-value
/// of adding one lag of the term to the state's own-lag AR model is below the
/// significance level. Constant terms are exempt; degenerate regressions are
/// kept with a warning.
GrangerResult granger_prune(const TimeSeries &ts, const Dictionary &d, double significance,
                            int restricted_lag, bool enforce_stationarity = false);

struct PreprocessReport {
    std::vector<Eigen::VectorXd> granger_pvalues;
    std::vector<Eigen::VectorXd> ols_coefficients;
    std::vector<Eigen::VectorXd> ols_std_errors;
    std::vector<Eigen::VectorXd> ols_pvalues;
    std::vector<std::vector<std::uint8_t>> kept;  // Granger mask intersected with OLS mask
    std::vector<Eigen::VectorXd> lower;           // meaningful on kept entries only
    std::vector<Eigen::VectorXd> upper;
    std::vector<std::string> warnings;

    std::string to_json() const;
    /// Coefficient matrix initialized at the OLS estimates (clipped into the
    /// bounds) with the kept mask active.
    CoefficientMatrix make_coefficients() const;
};

/// Intersects the Granger mask with the OLS p-value mask (ties kept) and
/// attaches confidence-interval bounds to the survivors. Throws if a state
/// loses every term.
PreprocessReport prune_and_bound(const GrangerResult &granger,
                                 const std::vector<OlsResult> &ols, const Dictionary &d,
                                 double ols_significance, double interval_alpha);

/// Full pipeline: central differences, Granger test, full-dictionary OLS,
/// prune and bound.
PreprocessReport run_preprocess(const TimeSeries &smoothed, const Dictionary &d,
                                const PreprocessConfig &cfg);

/// OLS restricted to the active terms of mask; used to retighten bounds after
/// dictionary pruning. Returns coefficients and confidence bounds on the
/// active entries.
CoefficientMatrix ols_bounds(const TimeSeries &smoothed, const Dictionary &d,
                             const std::vector<std::vector<std::uint8_t>> &mask,
                             double interval_alpha);

}  // namespace mhsid

#endif
