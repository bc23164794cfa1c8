#include "mhsid/discretize.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mhsid {

namespace {

// Legendre polynomial value and derivative at s via the three-term recurrence.
void legendre_eval(int n, double s, double &p, double &dp) {
    double p0 = 1.0, p1 = s;
    if (n == 0) {
        p = 1.0;
        dp = 0.0;
        return;
    }
    for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * s * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    p = p1;
    if (std::abs(s) == 1.0)
        dp = 0.5 * n * (n + 1.0) * (s > 0 ? 1.0 : (n % 2 == 0 ? -1.0 : 1.0));
    else
        dp = n * (p0 - s * p1) / (1.0 - s * s);
}

// Roots of f on (-1, 1), located by sign changes on a fine grid and polished
// with Newton iterations.
std::vector<double> interior_roots(int K, const auto &f, const auto &df) {
    std::vector<double> roots;
    const int grid = 4000 * K;
    double prev_s = -1.0;
    double prev_f = f(prev_s);
    for (int g = 1; g <= grid; ++g) {
        const double s = -1.0 + 2.0 * (static_cast<double>(g) / grid) * (1.0 - 1e-12);
        const double fs = f(s);
        if (prev_f == 0.0 || prev_f * fs < 0.0) {
            double r = 0.5 * (prev_s + s);
            for (int it = 0; it < 60; ++it) {
                const double step = f(r) / df(r);
                r -= step;
                if (std::abs(step) < 1e-15) break;
            }
            if (roots.empty() || std::abs(r - roots.back()) > 1e-10) roots.push_back(r);
        }
        prev_s = s;
        prev_f = fs;
    }
    return roots;
}

}  // namespace

Eigen::VectorXd radau_points(int K) {
    if (K < 1 || K > 15) throw std::invalid_argument("radau_points: K must be in [1, 15]");
    if (K == 1) return Eigen::VectorXd::Constant(1, 1.0);
    // Interior abscissae are the roots of P_K - P_{K-1} on (-1, 1); the right
    // endpoint is always an abscissa.
    auto f = [K](double s) {
        double pk, dpk, pk1, dpk1;
        legendre_eval(K, s, pk, dpk);
        legendre_eval(K - 1, s, pk1, dpk1);
        return pk - pk1;
    };
    auto df = [K](double s) {
        double pk, dpk, pk1, dpk1;
        legendre_eval(K, s, pk, dpk);
        legendre_eval(K - 1, s, pk1, dpk1);
        return dpk - dpk1;
    };
    const auto roots = interior_roots(K, f, df);
    if (static_cast<int>(roots.size()) != K - 1)
        throw std::runtime_error("radau_points: root search failed for K=" + std::to_string(K));
    Eigen::VectorXd tau(K);
    for (int k = 0; k < K - 1; ++k) tau[k] = 0.5 * (roots[static_cast<std::size_t>(k)] + 1.0);
    tau[K - 1] = 1.0;
    return tau;
}

Eigen::VectorXd legendre_points(int K) {
    if (K < 1 || K > 15) throw std::invalid_argument("legendre_points: K must be in [1, 15]");
    auto f = [K](double s) {
        double p, dp;
        legendre_eval(K, s, p, dp);
        return p;
    };
    auto df = [K](double s) {
        double p, dp;
        legendre_eval(K, s, p, dp);
        return dp;
    };
    const auto roots = interior_roots(K, f, df);
    if (static_cast<int>(roots.size()) != K)
        throw std::runtime_error("legendre_points: root search failed for K=" + std::to_string(K));
    Eigen::VectorXd tau(K);
    for (int k = 0; k < K; ++k) tau[k] = 0.5 * (roots[static_cast<std::size_t>(k)] + 1.0);
    return tau;
}

Eigen::MatrixXd lagrange_derivative_matrix(const Eigen::VectorXd &support) {
    const Eigen::Index n = support.size();
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = a + 1; b < n; ++b)
            if (support[a] == support[b])
                throw std::invalid_argument("lagrange_derivative_matrix: duplicate support points");

    Eigen::MatrixXd d(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == k) {
                double sum = 0.0;
                for (Eigen::Index m = 0; m < n; ++m)
                    if (m != k) sum += 1.0 / (support[k] - support[m]);
                d(k, j) = sum;
            } else {
                double num = 1.0, den = support[j] - support[k];
                for (Eigen::Index m = 0; m < n; ++m) {
                    if (m == j || m == k) continue;
                    num *= (support[k] - support[m]);
                    den *= (support[j] - support[m]);
                }
                d(k, j) = num / den;
            }
        }
    }
    return d;
}

Eigen::VectorXd lagrange_weights_at_one(const Eigen::VectorXd &support) {
    const Eigen::Index n = support.size();
    Eigen::VectorXd w(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double v = 1.0;
        for (Eigen::Index m = 0; m < n; ++m) {
            if (m == j) continue;
            v *= (1.0 - support[m]) / (support[j] - support[m]);
        }
        w[j] = v;
    }
    return w;
}

CollocationGrid build_grid(double horizon_start, double horizon_length, int n_elements, int K,
                           CollocationScheme scheme) {
    if (horizon_length <= 0.0) throw std::invalid_argument("build_grid: horizon length must be positive");
    if (n_elements < 1) throw std::invalid_argument("build_grid: need at least one element");

    CollocationGrid g;
    g.n_elements = n_elements;
    g.K = K;
    g.scheme = scheme;
    g.tau = scheme == CollocationScheme::radau ? radau_points(K) : legendre_points(K);

    Eigen::VectorXd support(K + 1);
    support[0] = 0.0;
    support.tail(K) = g.tau;
    g.deriv_matrix = lagrange_derivative_matrix(support);
    g.continuity_weights = lagrange_weights_at_one(support);

    const double h = horizon_length / n_elements;
    g.element_bounds.resize(n_elements + 1);
    g.element_width = Eigen::VectorXd::Constant(n_elements, h);
    for (int i = 0; i <= n_elements; ++i) g.element_bounds[i] = horizon_start + i * h;
    return g;
}

Eigen::VectorXd CollocationGrid::stamp_times() const {
    Eigen::VectorXd stamps(n_elements * K + 1);
    stamps[0] = element_bounds[0];
    Eigen::Index at = 1;
    for (int i = 0; i < n_elements; ++i)
        for (int k = 0; k < K; ++k)
            stamps[at++] = element_bounds[i] + tau[k] * element_width[i];
    return stamps;
}

CubicSpline::CubicSpline(const Eigen::VectorXd &times, const Eigen::VectorXd &values)
    : t_(times), y_(values) {
    const Eigen::Index n = times.size();
    if (n < 3 || values.size() != n)
        throw std::invalid_argument("CubicSpline: need >= 3 matching knots");
    // Natural end conditions: second derivative zero at both ends. Thomas
    // algorithm on the tridiagonal system for the interior second derivatives.
    Eigen::VectorXd diag(n), rhs(n), upper(n);
    m_.resize(n);
    diag[0] = 1.0;
    upper[0] = 0.0;
    rhs[0] = 0.0;
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
        const double h0 = t_[i] - t_[i - 1];
        const double h1 = t_[i + 1] - t_[i];
        if (h0 <= 0.0 || h1 <= 0.0) throw std::invalid_argument("CubicSpline: knots must increase");
        const double lower = h0;
        diag[i] = 2.0 * (h0 + h1);
        upper[i] = h1;
        rhs[i] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
        // forward elimination
        const double w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    m_[n - 1] = 0.0;
    for (Eigen::Index i = n - 2; i >= 1; --i) m_[i] = (rhs[i] - upper[i] * m_[i + 1]) / diag[i];
    m_[0] = 0.0;
}

double CubicSpline::operator()(double t) const {
    const Eigen::Index n = t_.size();
    const double lo = t_[0], hi = t_[n - 1];
    const double pad = 1e-9 * std::max(1.0, std::abs(hi - lo));
    if (t < lo - pad || t > hi + pad)
        throw std::out_of_range("CubicSpline: evaluation outside the data range");
    t = std::min(std::max(t, lo), hi);
    // binary search for the containing interval
    Eigen::Index a = 0, b = n - 1;
    while (b - a > 1) {
        const Eigen::Index mid = (a + b) / 2;
        (t_[mid] <= t ? a : b) = mid;
    }
    const double h = t_[a + 1] - t_[a];
    const double u = (t_[a + 1] - t) / h;
    const double v = (t - t_[a]) / h;
    return u * y_[a] + v * y_[a + 1] +
           ((u * u * u - u) * m_[a] + (v * v * v - v) * m_[a + 1]) * h * h / 6.0;
}

Eigen::MatrixXd spline_to_grid(const TimeSeries &ts, const CollocationGrid &grid) {
    const Eigen::VectorXd stamps = grid.stamp_times();
    Eigen::MatrixXd out(stamps.size(), ts.states());
    for (Eigen::Index j = 0; j < ts.states(); ++j) {
        const CubicSpline spline(ts.times, ts.values.col(j));
        for (Eigen::Index k = 0; k < stamps.size(); ++k) out(k, j) = spline(stamps[k]);
    }
    return out;
}

}  // namespace mhsid
