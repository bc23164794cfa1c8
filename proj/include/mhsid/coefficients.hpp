#ifndef MHSID_COEFFICIENTS_HPP
#define MHSID_COEFFICIENTS_HPP

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace mhsid {

/// Coefficient matrix with per-entry box bounds and an active mask, stored
/// column-wise (one column per state, sized to that state's dictionary).
/// Inactive entries are identically zero.
struct CoefficientMatrix {
    std::vector<Eigen::VectorXd> values;
    std::vector<Eigen::VectorXd> lower;
    std::vector<Eigen::VectorXd> upper;
    std::vector<std::vector<std::uint8_t>> active;

    int states() const { return static_cast<int>(values.size()); }
    Eigen::Index terms(int state) const { return values[static_cast<std::size_t>(state)].size(); }

    static CoefficientMatrix zeros(const std::vector<Eigen::Index> &terms_per_state);

    Eigen::Index n_active() const;
    /// Clamps active values into [lower, upper]; returns true if anything moved.
    bool clip_to_bounds();
    /// Zeroes inactive entries and checks bound ordering on active ones.
    void validate() const;
};

}  // namespace mhsid

#endif
