#ifndef MHSID_DISCRETIZE_HPP
#define MHSID_DISCRETIZE_HPP

#include <Eigen/Core>

#include "mhsid/timeseries.hpp"

namespace mhsid {

enum class CollocationScheme { radau, legendre };

/// Collocation abscissae on (0,1]. Radau includes the right endpoint exactly;
/// Legendre (behind the scheme flag) does not. 1 <= K <= 15.
Eigen::VectorXd radau_points(int K);
Eigen::VectorXd legendre_points(int K);

/// Derivative matrix of the Lagrange basis over a set of distinct support
/// points: entry (k,j) = d l_j/d tau at point k.
Eigen::MatrixXd lagrange_derivative_matrix(const Eigen::VectorXd &support);

/// Interpolation weights l_j(1) over the support points.
Eigen::VectorXd lagrange_weights_at_one(const Eigen::VectorXd &support);

/// Finite-element collocation grid over one time window. The support for the
/// interpolating polynomial on each element is {0} followed by the K
/// collocation points, so deriv_matrix is (K+1) x (K+1).
struct CollocationGrid {
    int n_elements = 0;
    int K = 0;
    CollocationScheme scheme = CollocationScheme::radau;
    Eigen::VectorXd element_bounds;      // n_elements + 1 time stamps
    Eigen::VectorXd element_width;       // h_i per element
    Eigen::VectorXd tau;                 // K points in (0,1]
    Eigen::MatrixXd deriv_matrix;        // (K+1) x (K+1)
    Eigen::VectorXd continuity_weights;  // l_j(1), j = 0..K

    /// All collocation time stamps t_ij in order: the window start followed
    /// by each element's K collocation points (n_elements*K + 1 stamps). With
    /// Radau points the last stamp of each element is the next element's
    /// tau_0.
    Eigen::VectorXd stamp_times() const;
};

CollocationGrid build_grid(double horizon_start, double horizon_length, int n_elements, int K,
                           CollocationScheme scheme = CollocationScheme::radau);

/// Natural cubic spline through (times, values); exact at the knots.
class CubicSpline {
  public:
    CubicSpline(const Eigen::VectorXd &times, const Eigen::VectorXd &values);

    /// Throws std::out_of_range outside [times.front(), times.back()].
    double operator()(double t) const;

  private:
    Eigen::VectorXd t_, y_, m_;  // knots, values, second derivatives
};

/// Per-state spline interpolation of the measurements onto all grid stamps.
Eigen::MatrixXd spline_to_grid(const TimeSeries &ts, const CollocationGrid &grid);

}  // namespace mhsid

#endif
