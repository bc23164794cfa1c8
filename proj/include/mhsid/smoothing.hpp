#ifndef MHSID_SMOOTHING_HPP
#define MHSID_SMOOTHING_HPP

#include <Eigen/Core>
#include <vector>

#include "mhsid/timeseries.hpp"

namespace mhsid {

struct SmoothingConfig {
    int initial_window = 11;  // odd; even inputs are rounded up
    int step = 10;            // window growth per iteration, samples
    int poly_order = 2;
    double alpha = 0.1;       // relative change of the noise proxy that stops growth
};

struct MinMaxScaled {
    Eigen::VectorXd scaled;
    double min = 0.0;
    double max = 0.0;
};

/// Maps y affinely onto [0,1]. Throws std::domain_error for a constant series.
MinMaxScaled minmax_scale(const Eigen::VectorXd &y);

/// out(t) = y(t) - y(t-1), length m-1.
Eigen::VectorXd first_difference(const Eigen::VectorXd &y);

/// Savitzky-Golay smoothing: each point is replaced by the center value of a
/// local least-squares polynomial fit. Edge points reuse the first/last full
/// window's fit evaluated at their own positions, so the length is preserved.
Eigen::VectorXd savgol(const Eigen::VectorXd &y, int window, int poly_order);

struct SmoothingResult {
    TimeSeries smoothed;
    std::vector<int> final_window;             // per state
    std::vector<std::vector<double>> sigma_trace;  // noise proxy per iteration, per state
};

/// Grows the filter window per state until the differenced-series noise proxy
/// stops shrinking by a relative alpha, then applies the previous window to
/// the raw data.
SmoothingResult iterative_smooth(const TimeSeries &ts, const SmoothingConfig &cfg);

}  // namespace mhsid

#endif
