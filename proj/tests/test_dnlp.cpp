#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mhsid/bench.hpp>
#include <mhsid/dnlp.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

using namespace mhsid;

namespace {

// Four-term dictionary holding exactly the predator-prey support.
Dictionary exact_support_dictionary() {
    Dictionary d;
    d.n_x = 2;
    d.per_state = {{BasisFunction::monomial({1, 0}), BasisFunction::monomial({1, 1})},
                   {BasisFunction::monomial({0, 1}), BasisFunction::monomial({1, 1})}};
    d.validate();
    return d;
}

CoefficientMatrix loose_box(const Dictionary &d) {
    CoefficientMatrix xi = CoefficientMatrix::zeros({d.terms(0), d.terms(1)});
    for (int j = 0; j < 2; ++j) {
        xi.lower[j].setConstant(-10.0);
        xi.upper[j].setConstant(10.0);
    }
    return xi;
}

WindowProblem make_problem(int n_elements = 10, int K = 3, double lambda = 0.0,
                           Regularizer reg = Regularizer::none) {
    const BenchmarkSystem sys = BenchmarkSystem::by_name("lotka_volterra");
    static const TimeSeries data = simulate(sys, 0.0, 8.0, 1.0 / sys.sampling_frequency);
    const Dictionary d = exact_support_dictionary();
    const CoefficientMatrix xi = loose_box(d);
    const CollocationGrid grid = build_grid(1.0, 3.0, n_elements, K);
    return WindowProblem(data, d, xi, grid, lambda, reg);
}

// Uniformly random point inside the variable box, states jittered around the
// measured trajectory so the dictionary stays well scaled.
Eigen::VectorXd random_feasible_point(const WindowProblem &p, std::mt19937_64 &rng) {
    const CoefficientMatrix xi = loose_box(p.dictionary());
    Eigen::VectorXd z = p.initial_point(xi);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Eigen::Index n_state = (p.n_stamps() - 1) * p.n_x();
    for (Eigen::Index i = 0; i < n_state; ++i) z[i] *= 1.0 + 0.05 * u(rng);
    for (Eigen::Index i = n_state; i < p.dim(); ++i) z[i] = 0.5 * u(rng);
    return z;
}

}  // namespace

TEST_CASE("problem dimensions follow the grid and the active coefficients") {
    const WindowProblem p = make_problem(10, 3);
    CHECK(p.n_x() == 2);
    CHECK(p.n_stamps() == 10 * 3 + 1);
    CHECK(p.n_coefficients() == 4);
    CHECK(p.num_variables() == 31 * 2 + 4);
    CHECK(p.dim() == 30 * 2 + 4);
    // one collocation equation per state per collocation point
    CHECK(p.num_constraints() == 10 * 3 * 2);

    Eigen::VectorXd lo, hi;
    p.variable_bounds(lo, hi);
    REQUIRE(lo.size() == p.dim());
    REQUIRE(hi.size() == p.dim());
    // coefficient tail carries finite bounds, the state head is free
    CHECK(std::isinf(lo[0]));
    for (Eigen::Index i = p.dim() - 4; i < p.dim(); ++i) {
        CHECK(std::isfinite(lo[i]));
        CHECK(lo[i] < hi[i]);
    }
}

TEST_CASE("objective gradient matches central finite differences at random feasible points") {
    const WindowProblem p = make_problem(6, 3);
    std::mt19937_64 rng(17);
    const double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::VectorXd z = random_feasible_point(p, rng);
        const Eigen::VectorXd g = p.objective_gradient(z);
        // probe a handful of coordinates per point, always covering the
        // coefficient tail
        for (Eigen::Index i : {Eigen::Index(0), Eigen::Index(7), p.dim() - 4, p.dim() - 3,
                               p.dim() - 2, p.dim() - 1}) {
            Eigen::VectorXd zp = z, zm = z;
            zp[i] += h;
            zm[i] -= h;
            const double fd = (p.objective(zp) - p.objective(zm)) / (2 * h);
            CHECK(std::abs(g[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("constraint jacobian matches central finite differences") {
    const WindowProblem p = make_problem(4, 2);
    std::mt19937_64 rng(23);
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXd z = random_feasible_point(p, rng);
        const Eigen::MatrixXd jac = Eigen::MatrixXd(p.constraint_jacobian(z));
        REQUIRE(jac.rows() == p.num_constraints());
        REQUIRE(jac.cols() == p.dim());
        for (Eigen::Index i = 0; i < p.dim(); i += 3) {
            Eigen::VectorXd zp = z, zm = z;
            zp[i] += h;
            zm[i] -= h;
            const Eigen::VectorXd fd = (p.constraints(zp) - p.constraints(zm)) / (2 * h);
            for (Eigen::Index r = 0; r < jac.rows(); ++r)
                CHECK(std::abs(jac(r, i) - fd[r]) <= 1e-5 * std::max(1.0, std::abs(fd[r])));
        }
    }
}

TEST_CASE("collocation residual at the interpolated truth shrinks with the mesh") {
    auto residual_at_truth = [](int n_elements) {
        const WindowProblem p = make_problem(n_elements, 3);
        CoefficientMatrix xi = loose_box(p.dictionary());
        xi.values[0] << 1.0, -0.01;
        xi.values[1] << -1.0, 0.02;
        const Eigen::VectorXd z = p.initial_point(xi);
        // interpolating the data keeps the mismatch at the spline floor
        CHECK(p.objective(z) <= 1e-6);
        return p.constraints(z).lpNorm<Eigen::Infinity>();
    };
    const double coarse = residual_at_truth(10);
    const double fine = residual_at_truth(40);
    // quartic local error in the element width, half the ideal rate allowed
    CHECK(coarse / fine >= std::pow(4.0, 3) * 0.5);
}

TEST_CASE("initial_point clips out-of-box coefficients and reports it") {
    const WindowProblem p = make_problem(4, 2);
    CoefficientMatrix xi = loose_box(p.dictionary());
    xi.values[0] << 99.0, 0.0;  // above the +10 box
    bool clipped = false;
    const Eigen::VectorXd z = p.initial_point(xi, &clipped);
    CHECK(clipped);
    const CoefficientMatrix back = p.unpack_coefficients(z);
    CHECK(back.values[0][0] == doctest::Approx(10.0));
}

TEST_CASE("window solve recovers the predator-prey coefficients on clean data") {
    const BenchmarkSystem sys = BenchmarkSystem::by_name("lotka_volterra");
    const TimeSeries data = simulate(sys, 0.0, 8.0, 1.0 / sys.sampling_frequency);
    const Dictionary d = exact_support_dictionary();
    const CoefficientMatrix box = loose_box(d);
    const CollocationGrid grid = build_grid(1.0, 7.0, 50, 3);
    const WindowProblem p(data, d, box, grid);

    CoefficientMatrix init = box;
    init.values[0] << 0.5, 0.0;
    init.values[1] << -0.5, 0.0;
    const WindowSolution sol = solve(p, init);
    CHECK(sol.status == SolveStatus::converged);
    CHECK(sol.feasibility <= 1e-8);
    CHECK(sol.xi_hat.values[0][0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(sol.xi_hat.values[0][1] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(sol.xi_hat.values[1][0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(sol.xi_hat.values[1][1] == doctest::Approx(0.02).epsilon(1e-4));
}

TEST_CASE("solver is deterministic and its merit trace never increases") {
    const WindowProblem p = make_problem(10, 3);
    CoefficientMatrix init = loose_box(p.dictionary());
    const WindowSolution a = solve(p, init);
    const WindowSolution b = solve(p, init);
    REQUIRE(a.z.size() == b.z.size());
    for (Eigen::Index i = 0; i < a.z.size(); ++i) CHECK(a.z[i] == b.z[i]);
    REQUIRE(!a.merit_trace.empty());
    for (std::size_t i = 1; i < a.merit_trace.size(); ++i)
        CHECK(a.merit_trace[i] <= a.merit_trace[i - 1] + 1e-12);
}

TEST_CASE("solution respects coefficient bounds that exclude the truth") {
    const BenchmarkSystem sys = BenchmarkSystem::by_name("lotka_volterra");
    const TimeSeries data = simulate(sys, 0.0, 8.0, 1.0 / sys.sampling_frequency);
    const Dictionary d = exact_support_dictionary();
    CoefficientMatrix box = loose_box(d);
    box.lower[0][0] = 1.5;  // truth is 1.0; force the bound to pin
    box.upper[0][0] = 2.0;
    box.values[0][0] = 1.5;
    const CollocationGrid grid = build_grid(1.0, 3.0, 10, 3);
    const WindowProblem p(data, d, box, grid);
    const WindowSolution sol = solve(p, box);
    CHECK(sol.xi_hat.values[0][0] >= 1.5 - 1e-10);
    CHECK(sol.xi_hat.values[0][0] <= 2.0 + 1e-10);
}

TEST_CASE("l2 regularization shrinks the coefficient norm monotonically") {
    auto norm_at = [](double lambda) {
        const WindowProblem p = make_problem(10, 3, lambda, Regularizer::l2);
        CoefficientMatrix init = loose_box(p.dictionary());
        const WindowSolution sol = solve(p, init);
        double n2 = 0.0;
        for (const auto &v : sol.xi_hat.values) n2 += v.squaredNorm();
        return n2;
    };
    const double n0 = norm_at(0.0);
    const double n1 = norm_at(1e-2);
    const double n2 = norm_at(1.0);
    CHECK(n1 <= n0 + 1e-9);
    CHECK(n2 < n1);
}
