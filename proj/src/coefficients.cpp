#include "mhsid/coefficients.hpp"

#include <limits>
#include <stdexcept>

namespace mhsid {

CoefficientMatrix CoefficientMatrix::zeros(const std::vector<Eigen::Index> &terms_per_state) {
    CoefficientMatrix xi;
    const double inf = std::numeric_limits<double>::infinity();
    for (Eigen::Index n : terms_per_state) {
        xi.values.push_back(Eigen::VectorXd::Zero(n));
        xi.lower.push_back(Eigen::VectorXd::Constant(n, -inf));
        xi.upper.push_back(Eigen::VectorXd::Constant(n, inf));
        xi.active.emplace_back(static_cast<std::size_t>(n), std::uint8_t{1});
    }
    return xi;
}

Eigen::Index CoefficientMatrix::n_active() const {
    Eigen::Index n = 0;
    for (const auto &mask : active)
        for (auto flag : mask) n += flag ? 1 : 0;
    return n;
}

bool CoefficientMatrix::clip_to_bounds() {
    bool moved = false;
    for (std::size_t j = 0; j < values.size(); ++j) {
        for (Eigen::Index k = 0; k < values[j].size(); ++k) {
            if (!active[j][static_cast<std::size_t>(k)]) continue;
            const double clipped = std::min(std::max(values[j][k], lower[j][k]), upper[j][k]);
            moved = moved || clipped != values[j][k];
            values[j][k] = clipped;
        }
    }
    return moved;
}

void CoefficientMatrix::validate() const {
    for (std::size_t j = 0; j < values.size(); ++j) {
        for (Eigen::Index k = 0; k < values[j].size(); ++k) {
            if (!active[j][static_cast<std::size_t>(k)]) {
                if (values[j][k] != 0.0)
                    throw std::logic_error("CoefficientMatrix: inactive entry is nonzero");
                continue;
            }
            if (!(lower[j][k] <= values[j][k] && values[j][k] <= upper[j][k]))
                throw std::logic_error("CoefficientMatrix: value outside its bounds");
        }
    }
}

}  // namespace mhsid
