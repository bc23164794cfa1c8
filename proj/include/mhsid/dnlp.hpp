#ifndef MHSID_DNLP_HPP
#define MHSID_DNLP_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <string>
#include <vector>

#include "mhsid/basis.hpp"
#include "mhsid/coefficients.hpp"
#include "mhsid/discretize.hpp"
#include "mhsid/timeseries.hpp"

namespace mhsid {

enum class Regularizer { none, l2, smooth_l1 };

struct DnlpOptions {
    double lambda = 0.0;
    Regularizer regularizer = Regularizer::none;
    double tol_feas = 1e-8;
    double tol_opt = 1e-5;
    int max_outer = 40;
    int max_inner = 80;
};

/// One moving-horizon window transcribed to a finite-dimensional NLP.
///
/// Decision vector z: states at every collocation stamp except the first
/// (which is pinned to the first data point), followed by the active
/// coefficient entries state-by-state. Equality constraints are the
/// collocation equations on every element; the data mismatch is summed over
/// element-boundary stamps. Immutable after assembly.
class WindowProblem {
  public:
    WindowProblem(const TimeSeries &window, const Dictionary &d, const CoefficientMatrix &xi,
                  const CollocationGrid &grid, double lambda = 0.0,
                  Regularizer reg = Regularizer::none);

    const CollocationGrid &grid() const { return grid_; }
    const Eigen::MatrixXd &data_at_grid() const { return data_; }
    const Dictionary &dictionary() const { return dict_; }
    double lambda() const { return lambda_; }
    Regularizer regularizer() const { return reg_; }

    int n_x() const { return dict_.n_x; }
    Eigen::Index n_stamps() const { return data_.rows(); }
    Eigen::Index n_coefficients() const { return n_xi_; }
    /// All collocation-state variables plus active coefficients, the pinned
    /// initial stamp included.
    Eigen::Index num_variables() const { return n_stamps() * n_x() + n_xi_; }
    /// Free dimension of z (pinned stamp excluded).
    Eigen::Index dim() const { return (n_stamps() - 1) * n_x() + n_xi_; }
    Eigen::Index num_constraints() const;

    /// Data-mismatch objective plus the configured regularizer.
    double objective(const Eigen::VectorXd &z) const;
    Eigen::VectorXd objective_gradient(const Eigen::VectorXd &z) const;
    Eigen::VectorXd constraints(const Eigen::VectorXd &z) const;
    Eigen::SparseMatrix<double> constraint_jacobian(const Eigen::VectorXd &z) const;

    /// z with states from the interpolated data and coefficients from xi
    /// (clipped into the bounds).
    Eigen::VectorXd initial_point(const CoefficientMatrix &xi_init, bool *clipped = nullptr) const;

    /// Box bounds over z: states are free, coefficient entries carry their
    /// bounds.
    void variable_bounds(Eigen::VectorXd &lower, Eigen::VectorXd &upper) const;

    /// Unpacks the coefficient part of z into the full matrix shape.
    CoefficientMatrix unpack_coefficients(const Eigen::VectorXd &z) const;
    /// Internal scaling of the coefficient variables: z stores xi * scale,
    /// where scale is each dictionary column's RMS over the window. Keeps the
    /// Jacobian's coefficient columns O(1) regardless of term magnitudes.
    const Eigen::VectorXd &coefficient_scale() const { return xi_scale_; }
    Eigen::VectorXd state_at(const Eigen::VectorXd &z, Eigen::Index stamp) const;

    /// Variables, bounds, and constraint residuals at a point, for solver
    /// diagnosis.
    std::string debug_json(const Eigen::VectorXd &z) const;

  private:
    double xi_entry(const Eigen::VectorXd &z, int state, Eigen::Index local) const;

    CollocationGrid grid_;
    Eigen::MatrixXd data_;
    Dictionary dict_;
    std::vector<std::vector<Eigen::Index>> active_;  // per state, term indices
    std::vector<Eigen::VectorXd> template_lower_, template_upper_;
    std::vector<std::vector<std::uint8_t>> template_mask_;
    Eigen::VectorXd xi_scale_;  // flat, active entries state-by-state
    Eigen::Index n_xi_ = 0;
    double lambda_ = 0.0;
    Regularizer reg_ = Regularizer::none;
};

enum class SolveStatus { converged, max_iter, infeasible };

struct WindowSolution {
    CoefficientMatrix xi_hat;
    double objective = 0.0;    // mean squared mismatch at the solution
    double feasibility = 0.0;  // max collocation-residual inf-norm
    double optimality = 0.0;   // projected-gradient inf-norm
    SolveStatus status = SolveStatus::max_iter;
    int outer_iterations = 0;
    std::string message;
    std::vector<double> merit_trace;  // inner merit values, non-increasing per sweep
    Eigen::VectorXd z;                // full solution point
};

/// Bound-constrained augmented-Lagrangian solve with Gauss-Newton inner
/// iterations and a projected line search. Deterministic for fixed inputs.
WindowSolution solve(const WindowProblem &p, const CoefficientMatrix &xi_init,
                     const DnlpOptions &opts = {});

}  // namespace mhsid

#endif
