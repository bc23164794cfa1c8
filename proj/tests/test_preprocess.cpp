#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mhsid/bench.hpp>
#include <mhsid/preprocess.hpp>
#include <mhsid/smoothing.hpp>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <random>
#include <set>
#include <string>

using namespace mhsid;

namespace {

// Dense-matrix least squares via the Moore-Penrose pseudo-inverse built from
// a full SVD; independent of the factorization inside ols_fit.
Eigen::VectorXd pinv_solve(const Eigen::MatrixXd &a, const Eigen::VectorXd &b) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto &s = svd.singularValues();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > 1e-12 * s[0]) inv[i] = 1.0 / s[i];
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * b;
}

TimeSeries uniform_series(const Eigen::MatrixXd &values, double dt) {
    TimeSeries ts;
    ts.times = Eigen::VectorXd::LinSpaced(values.rows(), 0.0, dt * double(values.rows() - 1));
    ts.values = values;
    return ts;
}

}  // namespace

TEST_CASE("central differences are exact on quadratics and aligned to interior times") {
    const int m = 51;
    Eigen::MatrixXd v(m, 2);
    const double dt = 0.1;
    for (int i = 0; i < m; ++i) {
        const double t = dt * i;
        v(i, 0) = 3.0 + 2.0 * t + 0.5 * t * t;  // derivative 2 + t
        v(i, 1) = -1.0 + 4.0 * t;               // derivative 4
    }
    const TimeSeries ts = uniform_series(v, dt);
    const DerivativeMatrix d = central_differences(ts);
    REQUIRE(d.values.rows() == m - 2);
    REQUIRE(d.times.size() == m - 2);
    CHECK(d.times[0] == doctest::Approx(dt));
    CHECK(d.times[m - 3] == doctest::Approx(dt * (m - 2)));
    for (int i = 0; i < m - 2; ++i) {
        CHECK(d.values(i, 0) == doctest::Approx(2.0 + d.times[i]).epsilon(1e-12));
        CHECK(d.values(i, 1) == doctest::Approx(4.0).epsilon(1e-12));
    }
}

TEST_CASE("dictionary data matrix rows evaluate the terms at interior samples") {
    Eigen::MatrixXd v(5, 2);
    v << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
    const TimeSeries ts = uniform_series(v, 0.5);
    const Dictionary d = Dictionary::defaults(2);
    const Eigen::MatrixXd theta = dictionary_data_matrix(ts, d, 0);
    REQUIRE(theta.rows() == 3);
    REQUIRE(theta.cols() == d.terms(0));
    for (int i = 0; i < 3; ++i) {
        const Eigen::VectorXd row = d.eval_row(0, v.row(i + 1).transpose());
        for (Eigen::Index k = 0; k < row.size(); ++k)
            CHECK(theta(i, k) == doctest::Approx(row[k]).epsilon(1e-14));
    }
}

TEST_CASE("ols_fit matches the pseudo-inverse oracle on a random tall system") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int m = 120, k = 6;
    Eigen::MatrixXd theta(m, k);
    Eigen::VectorXd y(m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) theta(i, j) = gauss(rng);
        y[i] = gauss(rng);
    }
    // give the columns wildly different scales to exercise the equilibration
    for (int j = 0; j < k; ++j) theta.col(j) *= std::pow(10.0, j - 3);

    const OlsResult fit = ols_fit(theta, y);
    const Eigen::VectorXd oracle = pinv_solve(theta, y);
    REQUIRE(fit.coefficients.size() == k);
    for (int j = 0; j < k; ++j)
        CHECK(std::abs(fit.coefficients[j] - oracle[j]) <=
              1e-10 * std::max(1.0, std::abs(oracle[j])));
    CHECK(fit.collinear_columns.empty());
    CHECK(fit.dof == m - k);

    // textbook standard errors and t-test p-values, assembled independently
    const Eigen::VectorXd r = y - theta * oracle;
    const double s2 = r.squaredNorm() / double(m - k);
    const Eigen::MatrixXd cov = s2 * (theta.transpose() * theta).inverse();
    const boost::math::students_t dist(double(m - k));
    for (int j = 0; j < k; ++j) {
        const double se = std::sqrt(cov(j, j));
        CHECK(fit.std_errors[j] == doctest::Approx(se).epsilon(1e-8));
        const double t = oracle[j] / se;
        const double p = 2.0 * boost::math::cdf(dist, -std::abs(t));
        CHECK(fit.p_values[j] == doctest::Approx(p).epsilon(1e-8));
    }
    CHECK(fit.response_norm == doctest::Approx(y.norm()));
    for (int j = 0; j < k; ++j)
        CHECK(fit.column_norms[j] == doctest::Approx(theta.col(j).norm()));
}

TEST_CASE("ols_fit flags duplicated columns and returns the minimum-norm split") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int m = 60;
    Eigen::MatrixXd theta(m, 3);
    Eigen::VectorXd y(m);
    for (int i = 0; i < m; ++i) {
        theta(i, 0) = gauss(rng);
        theta(i, 2) = gauss(rng);
        y[i] = 2.0 * theta(i, 0) + gauss(rng) * 0.01;
    }
    theta.col(1) = theta.col(0);  // exact duplicate
    const OlsResult fit = ols_fit(theta, y);
    CHECK(!fit.collinear_columns.empty());
    // minimum-norm solution splits the weight equally between the twins
    CHECK(fit.coefficients[0] == doctest::Approx(fit.coefficients[1]).epsilon(1e-8));
    CHECK(fit.coefficients[0] + fit.coefficients[1] == doctest::Approx(2.0).epsilon(0.05));
    const Eigen::VectorXd oracle = pinv_solve(theta, y);
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(fit.coefficients[j] - oracle[j]) <= 1e-10 * std::max(1.0, oracle.norm()));
}

TEST_CASE("ols_fit separates strong regressors from noise by p-value") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int m = 200;
    Eigen::MatrixXd theta(m, 2);
    Eigen::VectorXd y(m);
    for (int i = 0; i < m; ++i) {
        theta(i, 0) = gauss(rng);
        theta(i, 1) = gauss(rng);
        y[i] = 3.0 * theta(i, 0) + 0.5 * gauss(rng);
    }
    const OlsResult fit = ols_fit(theta, y);
    CHECK(fit.p_values[0] < 1e-10);
    CHECK(fit.p_values[1] > 0.01);
}

TEST_CASE("lag test rejection rate under the null matches the significance level") {
    // y follows its own AR(1); the candidate term is an independent white
    // series, so "kept" is a false positive. Over many trials the keep rate
    // must sit near the significance level.
    const double alpha = 0.1;
    const int trials = 500, m = 150;
    std::mt19937_64 rng(2026);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Dictionary d = Dictionary::shared(
        2, {BasisFunction::monomial({0, 1})});  // single term: x2 in state 1's list
    int kept = 0;
    for (int t = 0; t < trials; ++t) {
        Eigen::MatrixXd v(m, 2);
        v(0, 0) = gauss(rng);
        v(0, 1) = gauss(rng);
        for (int i = 1; i < m; ++i) {
            v(i, 0) = 0.6 * v(i - 1, 0) + gauss(rng);
            v(i, 1) = gauss(rng);
        }
        const TimeSeries ts = uniform_series(v, 0.01);
        const GrangerResult g = granger_prune(ts, d, alpha, 1);
        if (g.kept[0][0]) ++kept;
    }
    const double rate = double(kept) / trials;
    CHECK(rate >= alpha - 0.05);
    CHECK(rate <= alpha + 0.05);
}

TEST_CASE("lag test keeps a genuinely predictive term") {
    const int m = 400;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd v(m, 2);
    v(0, 0) = 0.0;
    v(0, 1) = gauss(rng);
    for (int i = 1; i < m; ++i) {
        v(i, 1) = 0.8 * v(i - 1, 1) + gauss(rng);
        v(i, 0) = 0.3 * v(i - 1, 0) + 2.0 * v(i - 1, 1) + 0.1 * gauss(rng);
    }
    const TimeSeries ts = uniform_series(v, 0.01);
    const Dictionary d = Dictionary::shared(2, {BasisFunction::monomial({0, 1})});
    const GrangerResult g = granger_prune(ts, d, 0.1, 1);
    CHECK(g.kept[0][0] == 1);
    CHECK(g.p_values[0][0] < 1e-6);
}

TEST_CASE("prune_and_bound intersects the masks and orders the bounds") {
    const BenchmarkSystem sys = BenchmarkSystem::by_name("lotka_volterra");
    const TimeSeries clean = simulate(sys, 0.0, 20.0, 1.0 / sys.sampling_frequency);
    const Dictionary d = Dictionary::defaults(2);
    PreprocessConfig cfg;
    const PreprocessReport rep = run_preprocess(clean, d, cfg);

    for (int j = 0; j < 2; ++j) {
        REQUIRE(static_cast<Eigen::Index>(rep.kept[j].size()) == d.terms(j));
        for (Eigen::Index k = 0; k < d.terms(j); ++k) {
            if (!rep.kept[j][k]) continue;
            CHECK(rep.lower[j][k] < rep.upper[j][k]);
            CHECK(rep.ols_coefficients[j][k] >= rep.lower[j][k] - 1e-12);
            CHECK(rep.ols_coefficients[j][k] <= rep.upper[j][k] + 1e-12);
        }
    }
    // the true terms survive preprocessing on clean data
    auto kept_label = [&](int j, const std::string &label) {
        for (Eigen::Index k = 0; k < d.terms(j); ++k)
            if (d.per_state[j][k].label == label) return rep.kept[j][k] == 1;
        return false;
    };
    CHECK(kept_label(0, "x1"));
    CHECK(kept_label(0, "x1*x2"));
    CHECK(kept_label(1, "x2"));
    CHECK(kept_label(1, "x1*x2"));

    const CoefficientMatrix xi = rep.make_coefficients();
    xi.validate();
    CHECK(xi.n_active() > 0);
}

TEST_CASE("ols_bounds on the exact support brackets the true coefficients") {
    const BenchmarkSystem sys = BenchmarkSystem::by_name("lotka_volterra");
    const TimeSeries clean = simulate(sys, 0.0, 20.0, 1.0 / sys.sampling_frequency);
    const Dictionary d = Dictionary::defaults(2);
    const CoefficientMatrix truth = sys.truth_coefficients(d);
    const CoefficientMatrix refit = ols_bounds(clean, d, truth.active, 1e-6);
    for (int j = 0; j < 2; ++j)
        for (Eigen::Index k = 0; k < d.terms(j); ++k) {
            if (!truth.active[j][k]) {
                CHECK(refit.values[j][k] == 0.0);
                continue;
            }
            CHECK(refit.lower[j][k] <= truth.values[j][k]);
            CHECK(refit.upper[j][k] >= truth.values[j][k]);
            CHECK(refit.values[j][k] ==
                  doctest::Approx(truth.values[j][k]).epsilon(1e-3));
        }
}
