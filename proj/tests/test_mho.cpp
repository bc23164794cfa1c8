#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mhsid/bench.hpp>
#include <mhsid/mho.hpp>
#include <mhsid/preprocess.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

using namespace mhsid;

namespace {

// Two states, four terms each: 1, x1, x2, x1*x2.
Dictionary small_dictionary() {
    return Dictionary::shared(2, {BasisFunction::constant(), BasisFunction::monomial({1, 0}),
                                  BasisFunction::monomial({0, 1}),
                                  BasisFunction::monomial({1, 1})});
}

std::vector<std::vector<std::uint8_t>> full_mask(const Dictionary &d) {
    std::vector<std::vector<std::uint8_t>> mask;
    for (int j = 0; j < d.n_x; ++j)
        mask.emplace_back(static_cast<std::size_t>(d.terms(j)), std::uint8_t{1});
    return mask;
}

// estimates[w][state]; per_state[state][term][w] transposed in.
std::vector<std::vector<Eigen::VectorXd>> make_estimates(
    const std::vector<std::vector<std::vector<double>>> &per_state) {
    const std::size_t n_w = per_state[0][0].size();
    std::vector<std::vector<Eigen::VectorXd>> est(n_w);
    for (std::size_t w = 0; w < n_w; ++w)
        for (std::size_t j = 0; j < per_state.size(); ++j) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(per_state[j].size()));
            for (std::size_t k = 0; k < per_state[j].size(); ++k)
                v[static_cast<Eigen::Index>(k)] = per_state[j][k][w];
            est[w].push_back(v);
        }
    return est;
}

const std::vector<std::string> protect = {"1", "x_j"};

}  // namespace

TEST_CASE("window indices slide by the step while the horizon fits") {
    const auto w = window_indices(1001, 300, 200);
    REQUIRE(w.size() == 4);
    CHECK(w[0] == std::make_pair(Eigen::Index(0), Eigen::Index(300)));
    CHECK(w[1] == std::make_pair(Eigen::Index(200), Eigen::Index(500)));
    CHECK(w[3] == std::make_pair(Eigen::Index(600), Eigen::Index(900)));
    CHECK(window_indices(300, 300, 100).size() == 1);
    CHECK(window_indices(299, 300, 100).empty());
}

TEST_CASE("a term with mean 0.1 and deviation 0.5 is pruned, a constant term kept") {
    const Dictionary d = small_dictionary();
    // state 1: x1*x2 wanders (mean 0.1, sd 0.5); x1 is dead flat.
    // state 2: all flat.
    const auto est = make_estimates({{{0.0, 0.0}, {2.0, 2.0}, {0.0, 0.0}, {-0.4, 0.6}},
                                     {{0.0, 0.0}, {0.0, 0.0}, {-1.0, -1.0}, {0.5, 0.5}}});
    auto mask = full_mask(d);
    mask[0][0] = 0;  // "1" inactive; inactive entries must stay pruned
    mask[0][2] = 0;
    mask[1][0] = 0;
    mask[1][1] = 0;
    const auto out = threshold_round(est, mask, d, 1.0, 5, 2, protect);
    CHECK(out[0][1] == 1);  // flat x1 survives
    CHECK(out[0][3] == 0);  // wandering x1*x2 pruned
    CHECK(out[0][0] == 0);
    CHECK(out[0][2] == 0);
    CHECK(out[1][2] == 1);
    CHECK(out[1][3] == 1);
}

TEST_CASE("zero-mean estimates are pruned outright") {
    const Dictionary d = small_dictionary();
    const auto est = make_estimates({{{1.0, 1.0}, {2.0, 2.0}, {0.0, 0.0}, {0.5, 0.5}},
                                     {{1.0, 1.0}, {2.0, 2.0}, {1.0, 1.0}, {0.5, 0.5}}});
    const auto out = threshold_round(est, full_mask(d), d, 1.0, 5, 2, protect);
    CHECK(out[0][2] == 0);
    CHECK(out[1][2] == 1);
}

TEST_CASE("a drifting term shields moderately scattered terms in its state for one round") {
    const Dictionary d = small_dictionary();
    // x1*x2 drifts hard (mean 0.1, var/mean 2.5); x2 scatters moderately
    // (sd/|mean| = 1.5 but var/|mean| = 0.225). Same numbers in state 2, but
    // without any drifting companion.
    const auto est = make_estimates({{{1.0, 1.0}, {2.0, 2.0}, {-0.05, 0.25}, {-0.4, 0.6}},
                                     {{1.0, 1.0}, {2.0, 2.0}, {-0.05, 0.25}, {0.5, 0.5}}});
    const auto out = threshold_round(est, full_mask(d), d, 1.0, 5, 2, protect);
    CHECK(out[0][3] == 0);  // the drifter goes
    CHECK(out[0][2] == 1);  // its collateral stays for now
    CHECK(out[1][2] == 0);  // no drifter in state 2: ordinary dispersion pruning
    CHECK(out[1][3] == 1);
}

TEST_CASE("protected terms are immune only during the protected rounds") {
    const Dictionary d = small_dictionary();
    // "1" and the state's own linear term wander badly everywhere.
    const auto est = make_estimates({{{-0.4, 0.6}, {-0.4, 0.6}, {2.0, 2.0}, {1.0, 1.0}},
                                     {{-0.4, 0.6}, {-0.4, 0.6}, {-0.4, 0.6}, {1.0, 1.0}}});
    const auto early = threshold_round(est, full_mask(d), d, 1.0, 2, 2, protect);
    CHECK(early[0][0] == 1);  // "1" protected
    CHECK(early[0][1] == 1);  // x1 is state 1's own linear term
    CHECK(early[1][2] == 1);  // x2 is state 2's own linear term
    CHECK(early[1][1] == 0);  // x1 in state 2 is not protected

    const auto late = threshold_round(est, full_mask(d), d, 1.0, 3, 2, protect);
    CHECK(late[0][0] == 0);
    CHECK(late[0][1] == 0);
    CHECK(late[1][2] == 0);
}

TEST_CASE("the contribution floor removes tiny stable terms when scales are supplied") {
    const Dictionary d = small_dictionary();
    const auto est = make_estimates({{{1.0, 1.0}, {1e-3, 1e-3}, {1.0, 1.0}, {0.5, 0.5}},
                                     {{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {0.5, 0.5}}});
    std::vector<Eigen::VectorXd> scale(2, Eigen::VectorXd::Ones(4));
    scale[0][1] = 0.1;  // contribution 1e-3 * 0.1 = 1e-4 < floor
    const auto no_floor = threshold_round(est, full_mask(d), d, 1.0, 5, 2, protect);
    CHECK(no_floor[0][1] == 1);
    const auto floored = threshold_round(est, full_mask(d), d, 1.0, 5, 2, protect, &scale, 1e-3);
    CHECK(floored[0][1] == 0);
    CHECK(floored[0][0] == 1);  // contribution 1.0: untouched
}

TEST_CASE("contribution scales divide term RMS by the derivative RMS") {
    // x1(t) = 2t, x2(t) = 3: xdot1 = 2, xdot2 = 0 (derivative RMS floored).
    const int m = 11;
    TimeSeries ts;
    ts.times = Eigen::VectorXd::LinSpaced(m, 0.0, 1.0);
    ts.values.resize(m, 2);
    for (int i = 0; i < m; ++i) {
        ts.values(i, 0) = 2.0 * ts.times[i];
        ts.values(i, 1) = 3.0;
    }
    const Dictionary d = small_dictionary();
    const auto scales = contribution_scales(ts, d);
    REQUIRE(scales.size() == 2);
    REQUIRE(scales[0].size() == 4);

    // interior samples t = 0.1..0.9
    double sum_sq_x1 = 0.0;
    for (int i = 1; i < m - 1; ++i) sum_sq_x1 += std::pow(2.0 * ts.times[i], 2);
    const double rms_x1 = std::sqrt(sum_sq_x1 / (m - 2));
    CHECK(scales[0][0] == doctest::Approx(1.0 / 2.0).epsilon(1e-12));       // constant / xdot1
    CHECK(scales[0][1] == doctest::Approx(rms_x1 / 2.0).epsilon(1e-12));    // x1 / xdot1
    CHECK(scales[0][2] == doctest::Approx(3.0 / 2.0).epsilon(1e-12));       // x2 / xdot1
    CHECK(scales[0][3] == doctest::Approx(3.0 * rms_x1 / 2.0).epsilon(1e-12));
    // state 2's derivative is identically zero: scales blow up but stay finite
    // arithmetic (floored denominator), so the floor can never prune there
    for (int k = 0; k < 4; ++k) CHECK(scales[1][k] > 1e100);
}

TEST_CASE("discovery on clean data with a small dictionary converges to the truth") {
    const BenchmarkSystem sys = BenchmarkSystem::by_name("lotka_volterra");
    const TimeSeries data = simulate(sys, 0.0, 8.0, 1.0 / sys.sampling_frequency);
    const Dictionary d = small_dictionary();
    PreprocessConfig pre;
    const PreprocessReport report = run_preprocess(data, d, pre);

    MovingHorizonConfig cfg;
    cfg.horizon_time = 2.0;
    cfg.data_step = 500;
    cfg.threshold_every = 3;
    cfg.stable_rounds = 1;
    cfg.n_elements = 10;
    const auto [model, trace] = run_discovery(data, report, d, cfg);
    CHECK(model.converged);
    CHECK(model.rounds_used <= 10);
    const CoefficientMatrix truth = sys.truth_coefficients(d);
    for (int j = 0; j < 2; ++j)
        for (Eigen::Index k = 0; k < 4; ++k) {
            CHECK(int(model.active[j][k]) == int(truth.active[j][k]));
            if (truth.active[j][k])
                CHECK(model.coefficients[j][k] ==
                      doctest::Approx(truth.values[j][k]).epsilon(5e-3));
        }
    CHECK(!trace.windows.empty());
    CHECK(trace.converged);
}

TEST_CASE("discovered models serialize losslessly") {
    DiscoveredModel m;
    m.dictionary = small_dictionary();
    m.active = {{0, 1, 0, 1}, {0, 0, 1, 1}};
    m.coefficients = {Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4)};
    m.coefficients[0][1] = 1.0;
    m.coefficients[0][3] = -0.01;
    m.coefficients[1][2] = -1.0;
    m.coefficients[1][3] = 0.02;
    m.converged = true;
    m.rounds_used = 4;
    m.config_hash = "deadbeef";
    m.averaged_windows = {3, 4, 5};

    const std::string text = m.to_json();
    const DiscoveredModel back = DiscoveredModel::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.converged);
    CHECK(back.rounds_used == 4);
    CHECK(back.coefficients[0][3] == -0.01);
    CHECK(back.active == m.active);

    const CoefficientMatrix xi = back.to_coefficients();
    Eigen::Vector2d x(100.0, 15.0);
    const Eigen::VectorXd rhs = model_rhs(back.dictionary, xi, x);
    CHECK(rhs[0] == doctest::Approx(100.0 - 0.01 * 1500.0));
    CHECK(rhs[1] == doctest::Approx(-15.0 + 0.02 * 1500.0));
}
