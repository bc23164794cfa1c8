#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mhsid/discretize.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

using namespace mhsid;

namespace {

// Legendre polynomial coefficients in the monomial basis via the three-term
// recurrence (n+1)P_{n+1} = (2n+1)x P_n - n P_{n-1}.
std::vector<double> legendre_coeffs(int n) {
    std::vector<std::vector<double>> p(n + 1);
    p[0] = {1.0};
    if (n >= 1) p[1] = {0.0, 1.0};
    for (int k = 1; k < n; ++k) {
        std::vector<double> next(k + 2, 0.0);
        for (std::size_t i = 0; i < p[k].size(); ++i)
            next[i + 1] += (2.0 * k + 1.0) / (k + 1.0) * p[k][i];
        for (std::size_t i = 0; i < p[k - 1].size(); ++i)
            next[i] -= static_cast<double>(k) / (k + 1.0) * p[k - 1][i];
        p[k + 1] = next;
    }
    return p[n];
}

// Roots of a polynomial (ascending monomial coefficients) via the companion
// matrix; returns real parts of the real roots, sorted.
std::vector<double> poly_roots(std::vector<double> c) {
    while (!c.empty() && std::abs(c.back()) < 1e-14) c.pop_back();
    const int deg = static_cast<int>(c.size()) - 1;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
    for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -c[i] / c[deg];
    for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
    const Eigen::EigenSolver<Eigen::MatrixXd> es(companion);
    std::vector<double> roots;
    for (int i = 0; i < deg; ++i)
        if (std::abs(es.eigenvalues()[i].imag()) < 1e-10)
            roots.push_back(es.eigenvalues()[i].real());
    std::sort(roots.begin(), roots.end());
    return roots;
}

// Right-Radau abscissae on (0,1]: roots of P_K(2t-1) - P_{K-1}(2t-1), mapped
// from [-1,1].
std::vector<double> radau_oracle(int K) {
    const std::vector<double> pk = legendre_coeffs(K);
    const std::vector<double> pk1 = legendre_coeffs(K - 1);
    std::vector<double> diff(pk.size(), 0.0);
    for (std::size_t i = 0; i < pk.size(); ++i) diff[i] = pk[i];
    for (std::size_t i = 0; i < pk1.size(); ++i) diff[i] -= pk1[i];
    std::vector<double> t;
    for (double x : poly_roots(diff)) t.push_back((x + 1.0) / 2.0);
    std::sort(t.begin(), t.end());
    return t;
}

}  // namespace

TEST_CASE("radau points match the companion-matrix root oracle") {
    for (int K : {1, 2, 3}) {
        const Eigen::VectorXd tau = radau_points(K);
        const std::vector<double> oracle = radau_oracle(K);
        REQUIRE(tau.size() == K);
        REQUIRE(static_cast<int>(oracle.size()) == K);
        for (int i = 0; i < K; ++i) CHECK(std::abs(tau[i] - oracle[i]) <= 1e-12);
        CHECK(tau[K - 1] == 1.0);  // right endpoint included exactly
        for (int i = 1; i < K; ++i) CHECK(tau[i] > tau[i - 1]);
    }
    CHECK(radau_points(1)[0] == 1.0);
    CHECK(std::abs(radau_points(2)[0] - 1.0 / 3.0) <= 1e-12);
    CHECK(std::abs(radau_points(3)[0] - 0.15505102572168219) <= 1e-12);
    CHECK(std::abs(radau_points(3)[1] - 0.6449489742783178) <= 1e-12);

    CHECK_THROWS_AS(radau_points(0), std::invalid_argument);
    CHECK_THROWS_AS(radau_points(16), std::invalid_argument);
}

TEST_CASE("radau points are defined up to K=15") {
    const Eigen::VectorXd tau = radau_points(15);
    REQUIRE(tau.size() == 15);
    CHECK(tau[14] == 1.0);
    for (int i = 1; i < 15; ++i) CHECK(tau[i] > tau[i - 1]);
    CHECK(tau[0] > 0.0);
}

TEST_CASE("lagrange derivative matrix differentiates low-degree polynomials") {
    for (int K : {1, 2, 3, 5}) {
        Eigen::VectorXd support(K + 1);
        support[0] = 0.0;
        support.tail(K) = radau_points(K);
        const Eigen::MatrixXd deriv = lagrange_derivative_matrix(support);
        REQUIRE(deriv.rows() == K + 1);
        REQUIRE(deriv.cols() == K + 1);

        // rows sum to zero: derivative of the constant 1
        for (int r = 0; r <= K; ++r) CHECK(std::abs(deriv.row(r).sum()) <= 1e-10);

        for (int p = 1; p <= K; ++p) {
            Eigen::VectorXd samples(K + 1);
            for (int j = 0; j <= K; ++j) samples[j] = std::pow(support[j], p);
            const Eigen::VectorXd dsamples = deriv * samples;
            for (int r = 0; r <= K; ++r)
                CHECK(std::abs(dsamples[r] - p * std::pow(support[r], p - 1)) <= 1e-10);
        }
    }
}

TEST_CASE("lagrange derivative matrix matches finite differences of the basis") {
    Eigen::VectorXd support(4);
    support[0] = 0.0;
    support.tail(3) = radau_points(3);
    const Eigen::MatrixXd deriv = lagrange_derivative_matrix(support);

    auto lagrange = [&](int j, double tau) {
        double v = 1.0;
        for (int k = 0; k < 4; ++k)
            if (k != j) v *= (tau - support[k]) / (support[j] - support[k]);
        return v;
    };
    const double h = 1e-7;
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j) {
            const double fd = (lagrange(j, support[k] + h) - lagrange(j, support[k] - h)) / (2 * h);
            CHECK(std::abs(deriv(k, j) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }

    Eigen::VectorXd dup(3);
    dup << 0.0, 0.5, 0.5;
    CHECK_THROWS_AS(lagrange_derivative_matrix(dup), std::invalid_argument);
}

TEST_CASE("interpolation weights at the element end form a partition of unity") {
    for (int K : {1, 2, 3}) {
        Eigen::VectorXd support(K + 1);
        support[0] = 0.0;
        support.tail(K) = radau_points(K);
        const Eigen::VectorXd w = lagrange_weights_at_one(support);
        CHECK(std::abs(w.sum() - 1.0) <= 1e-12);
        // the last support point IS 1, so the weights are a unit vector
        for (int j = 0; j < K; ++j) CHECK(std::abs(w[j]) <= 1e-12);
        CHECK(std::abs(w[K] - 1.0) <= 1e-12);
    }
}

TEST_CASE("grid construction lays out uniform elements and stamps") {
    const CollocationGrid g = build_grid(2.0, 6.0, 50, 3);
    CHECK(g.n_elements == 50);
    CHECK(g.K == 3);
    REQUIRE(g.element_width.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(g.element_width[i] == doctest::Approx(0.12));
    const Eigen::VectorXd stamps = g.stamp_times();
    REQUIRE(stamps.size() == 50 * 3 + 1);
    CHECK(stamps[0] == doctest::Approx(2.0));
    CHECK(stamps[stamps.size() - 1] == doctest::Approx(8.0));
    // stamp t_{ij} = element start + tau_j * h
    CHECK(stamps[1] == doctest::Approx(2.0 + g.tau[0] * 0.12));
    for (Eigen::Index i = 1; i < stamps.size(); ++i) CHECK(stamps[i] > stamps[i - 1]);

    const CollocationGrid one = build_grid(0.0, 5.0, 1, 1);
    const Eigen::VectorXd s1 = one.stamp_times();
    REQUIRE(s1.size() == 2);
    CHECK(s1[0] == 0.0);
    CHECK(s1[1] == doctest::Approx(5.0));
}

namespace {

// Element-end error of collocation applied to xdot = lambda*x on [0,1].
double collocation_decay_error(int K, int n_elements, double lambda) {
    const CollocationGrid g = build_grid(0.0, 1.0, n_elements, K);
    double x0 = 1.0;
    for (int e = 0; e < n_elements; ++e) {
        const double h = g.element_width[e];
        // unknowns x_1..x_K; collocation rows k=1..K:
        //   sum_j D(k,j) x_j = h*lambda*x_k
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(K, K);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(K);
        for (int k = 1; k <= K; ++k) {
            for (int j = 1; j <= K; ++j) a(k - 1, j - 1) = g.deriv_matrix(k, j);
            a(k - 1, k - 1) -= h * lambda;
            b[k - 1] = -g.deriv_matrix(k, 0) * x0;
        }
        const Eigen::VectorXd x = a.fullPivLu().solve(b);
        x0 = x[K - 1];  // Radau: last collocation point is the element end
    }
    return std::abs(x0 - std::exp(lambda));
}

}  // namespace

TEST_CASE("element-end superconvergence at the expected Radau order") {
    // halving h must shrink the end error by at least half the ideal 2^(2K-1)
    for (int K : {1, 2, 3}) {
        const double coarse = collocation_decay_error(K, 4, -2.0);
        const double fine = collocation_decay_error(K, 8, -2.0);
        CHECK(coarse / fine >= std::pow(2.0, 2 * K - 1) * 0.5);
    }
}

TEST_CASE("cubic spline interpolation is exact on cubics and at the knots") {
    const int m = 101;
    TimeSeries ts;
    ts.times = Eigen::VectorXd::LinSpaced(m, 0.0, 1.0);
    ts.values.resize(m, 1);
    for (int i = 0; i < m; ++i) {
        const double t = ts.times[i];
        ts.values(i, 0) = 1.0 + t + t * t + t * t * t;
    }
    // interior window to dodge the natural end conditions
    const CollocationGrid g = build_grid(0.3, 0.4, 10, 3);
    const Eigen::MatrixXd vals = spline_to_grid(ts, g);
    const Eigen::VectorXd stamps = g.stamp_times();
    for (Eigen::Index i = 0; i < stamps.size(); ++i) {
        const double t = stamps[i];
        const double exact = 1.0 + t + t * t + t * t * t;
        CHECK(std::abs(vals(i, 0) - exact) <= 1e-9);
    }

    // knots are matched exactly
    CubicSpline s(ts.times, ts.values.col(0));
    for (int i = 0; i < m; i += 10) CHECK(s(ts.times[i]) == doctest::Approx(ts.values(i, 0)));
    CHECK_THROWS_AS(s(-0.1), std::out_of_range);
    CHECK_THROWS_AS(s(1.1), std::out_of_range);
}

TEST_CASE("dense sampling keeps spline error at the quartic floor") {
    const double dt = 0.002;
    const int m = 2001;
    TimeSeries ts;
    ts.times = Eigen::VectorXd::LinSpaced(m, 0.0, dt * (m - 1));
    ts.values.resize(m, 1);
    for (int i = 0; i < m; ++i) ts.values(i, 0) = std::sin(ts.times[i]);
    const CollocationGrid g = build_grid(1.0, 2.0, 25, 3);
    const Eigen::MatrixXd vals = spline_to_grid(ts, g);
    const Eigen::VectorXd stamps = g.stamp_times();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < stamps.size(); ++i)
        worst = std::max(worst, std::abs(vals(i, 0) - std::sin(stamps[i])));
    CHECK(worst <= 1e-9);
}
