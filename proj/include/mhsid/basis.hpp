#ifndef MHSID_BASIS_HPP
#define MHSID_BASIS_HPP

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mhsid/coefficients.hpp"

namespace mhsid {

enum class BasisKind { constant, monomial, reciprocal, exponential, sine, cosine };

/// One symbolic candidate term. Immutable after construction; evaluation and
/// partial derivatives are exact (no finite differencing).
struct BasisFunction {
    BasisKind kind = BasisKind::constant;
    std::vector<int> exponents;  // monomial only, length n_x, >=0, not all zero
    int target_state = -1;       // reciprocal / exponential / sine / cosine
    std::string label;

    static BasisFunction constant();
    static BasisFunction monomial(std::vector<int> exponents);
    static BasisFunction reciprocal(int state);
    static BasisFunction exponential(int state);
    static BasisFunction sine(int state);
    static BasisFunction cosine(int state);

    /// Parses a canonical label ("1", "x1^2*x2", "1/x2", "exp(x1)", "sin(x2)",
    /// "cos(x1)"). Throws std::invalid_argument on malformed input.
    static BasisFunction parse(const std::string &label, int n_x);

    double eval(const Eigen::VectorXd &x) const;
    double partial(const Eigen::VectorXd &x, int wrt) const;

    bool operator==(const BasisFunction &other) const { return label == other.label; }
};

/// Ordered per-state lists of candidate terms. The per-state form is
/// canonical; shared() is a convenience that replicates one list.
struct Dictionary {
    int n_x = 0;
    std::vector<std::vector<BasisFunction>> per_state;

    /// Built-in dictionaries for 2- and 3-state systems (14 and 22 terms per
    /// state). Throws for other dimensions; build a custom Dictionary instead.
    static Dictionary defaults(int n_x);
    static Dictionary shared(int n_x, std::vector<BasisFunction> terms);

    Eigen::Index terms(int state) const { return static_cast<Eigen::Index>(per_state[state].size()); }
    Eigen::Index total_terms() const;

    /// Row of all terms for one state evaluated at x. Reciprocal terms at
    /// x_target = 0 throw std::domain_error naming the term.
    Eigen::VectorXd eval_row(int state, const Eigen::VectorXd &x) const;

    /// terms(state) x n_x matrix of analytic partials at x.
    Eigen::MatrixXd eval_jacobian(int state, const Eigen::VectorXd &x) const;

    std::string to_json() const;
    static Dictionary from_json(const std::string &text);

    void validate() const;  // no duplicate labels per state, consistent n_x
};

/// RHS of dx/dt = f(x): component j sums active coefficients times their
/// basis terms.
Eigen::VectorXd model_rhs(const Dictionary &d, const CoefficientMatrix &xi,
                          const Eigen::VectorXd &x);

}  // namespace mhsid

#endif
