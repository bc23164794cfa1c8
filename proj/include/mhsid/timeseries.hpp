#ifndef MHSID_TIMESERIES_HPP
#define MHSID_TIMESERIES_HPP

#include <Eigen/Core>
#include <string>
#include <vector>

namespace mhsid {

/// Sampled multivariate trajectory on a uniform, strictly increasing time grid.
/// CSV layout: header "t,x1,..,xn", one row per sample, '.' decimal separator.
struct TimeSeries {
    Eigen::VectorXd times;   // m stamps
    Eigen::MatrixXd values;  // m x n_x

    Eigen::Index samples() const { return times.size(); }
    Eigen::Index states() const { return values.cols(); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }

    // Throws std::invalid_argument if stamps are not strictly increasing or
    // the spacing is non-uniform beyond 1e-9 relative.
    void validate() const;

    TimeSeries slice(Eigen::Index start, Eigen::Index end) const;  // [start, end)
};

TimeSeries read_csv(const std::string &path);
void write_csv(const TimeSeries &ts, const std::string &path);

}  // namespace mhsid

#endif
