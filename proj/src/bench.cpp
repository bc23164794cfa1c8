#include "mhsid/bench.hpp"

#include <boost/numeric/odeint.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>

#include "mhsid/rng.hpp"

namespace mhsid {

std::vector<std::string> BenchmarkSystem::names() {
    return {"lotka_volterra", "van_der_pol", "brusselator", "lorenz"};
}

BenchmarkSystem BenchmarkSystem::by_name(const std::string &name) {
    BenchmarkSystem s;
    s.name = name;
    if (name == "lotka_volterra") {
        s.n_x = 2;
        s.initial_condition = Eigen::Vector2d(100.0, 15.0);
        s.sampling_frequency = 500.0;
        s.t_end = 40.0;
        s.truth = {{{"x1", 1.0}, {"x1*x2", -0.01}}, {{"x2", -1.0}, {"x1*x2", 0.02}}};
    } else if (name == "van_der_pol") {
        s.n_x = 2;
        s.initial_condition = Eigen::Vector2d(1.0, -2.0);
        s.sampling_frequency = 500.0;
        s.t_end = 26.0;
        s.truth = {{{"x2", 1.0}}, {{"x2", 5.0}, {"x1^2*x2", -5.0}, {"x1", -1.0}}};
    } else if (name == "brusselator") {
        s.n_x = 2;
        s.initial_condition = Eigen::Vector2d(1.0, 1.0);
        s.sampling_frequency = 1000.0;
        s.t_end = 18.0;
        s.truth = {{{"1", 1.0}, {"x1^2*x2", 1.0}, {"x1", -4.0}}, {{"x1", 3.0}, {"x1^2*x2", -1.0}}};
    } else if (name == "lorenz") {
        s.n_x = 3;
        s.initial_condition = Eigen::Vector3d(-8.0, 8.0, 27.0);
        s.sampling_frequency = 1000.0;
        s.t_end = 10.0;
        s.truth = {{{"x2", 10.0}, {"x1", -10.0}},
                   {{"x1", 28.0}, {"x1*x3", -1.0}, {"x2", -1.0}},
                   {{"x1*x2", 1.0}, {"x3", -8.0 / 3.0}}};
    } else {
        throw std::invalid_argument("unknown benchmark system '" + name +
                                    "' (expected lotka_volterra, van_der_pol, brusselator, or "
                                    "lorenz)");
    }
    return s;
}

Eigen::VectorXd BenchmarkSystem::rhs(const Eigen::VectorXd &x) const {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(n_x);
    for (int j = 0; j < n_x; ++j)
        for (const auto &[label, coef] : truth[static_cast<std::size_t>(j)])
            dx[j] += coef * BasisFunction::parse(label, n_x).eval(x);
    return dx;
}

CoefficientMatrix BenchmarkSystem::truth_coefficients(const Dictionary &d) const {
    std::vector<Eigen::Index> terms;
    for (int j = 0; j < d.n_x; ++j) terms.push_back(d.terms(j));
    CoefficientMatrix xi = CoefficientMatrix::zeros(terms);
    for (auto &mask : xi.active) std::fill(mask.begin(), mask.end(), std::uint8_t{0});
    for (int j = 0; j < n_x; ++j) {
        for (const auto &[label, coef] : truth[static_cast<std::size_t>(j)]) {
            bool found = false;
            for (Eigen::Index k = 0; k < d.terms(j); ++k) {
                if (d.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].label ==
                    label) {
                    xi.values[static_cast<std::size_t>(j)][k] = coef;
                    xi.active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = 1;
                    xi.lower[static_cast<std::size_t>(j)][k] = coef - 1.0;
                    xi.upper[static_cast<std::size_t>(j)][k] = coef + 1.0;
                    found = true;
                    break;
                }
            }
            if (!found)
                throw std::invalid_argument("truth term '" + label +
                                            "' missing from the dictionary");
        }
    }
    return xi;
}

namespace {

using OdeState = std::vector<double>;

/// Integrates sample-to-sample; on divergence returns the trajectory up to the
/// last finite sample together with that sample's time.
std::pair<TimeSeries, std::optional<double>> integrate_samples(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd &)> &f, const Eigen::VectorXd &x0,
    double t0, double t_end, double dt_sample) {
    if (dt_sample <= 0.0) throw std::invalid_argument("simulate: dt_sample must be positive");
    if (t_end <= t0) throw std::invalid_argument("simulate: empty time span");
    const auto n = static_cast<Eigen::Index>(x0.size());
    const auto m = static_cast<Eigen::Index>(std::llround((t_end - t0) / dt_sample)) + 1;

    auto system = [&](const OdeState &x, OdeState &dxdt, double) {
        Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
        Eigen::VectorXd dv = f(xv);
        Eigen::Map<Eigen::VectorXd>(dxdt.data(), n) = dv;
    };
    namespace ode = boost::numeric::odeint;
    auto stepper = ode::make_controlled(1e-12, 1e-12, ode::runge_kutta_fehlberg78<OdeState>());

    TimeSeries ts;
    ts.times.resize(m);
    ts.values.resize(m, n);
    OdeState x(x0.data(), x0.data() + n);
    ts.times[0] = t0;
    ts.values.row(0) = x0.transpose();
    for (Eigen::Index i = 1; i < m; ++i) {
        const double ta = t0 + static_cast<double>(i - 1) * dt_sample;
        const double tb = t0 + static_cast<double>(i) * dt_sample;
        bool ok = true;
        try {
            ode::integrate_adaptive(stepper, system, x, ta, tb, dt_sample / 10.0);
        } catch (const std::exception &) {
            ok = false;
        }
        for (Eigen::Index j = 0; ok && j < n; ++j)
            if (!std::isfinite(x[static_cast<std::size_t>(j)]) ||
                std::abs(x[static_cast<std::size_t>(j)]) > 1e9)
                ok = false;
        if (!ok) {
            TimeSeries partial = ts.slice(0, i);
            return {partial, ts.times[i - 1]};
        }
        ts.times[i] = tb;
        ts.values.row(i) = Eigen::Map<const Eigen::VectorXd>(x.data(), n).transpose();
    }
    return {ts, std::nullopt};
}

}  // namespace

TimeSeries simulate_rhs(const std::function<Eigen::VectorXd(const Eigen::VectorXd &)> &f,
                        const Eigen::VectorXd &x0, double t0, double t_end, double dt_sample) {
    auto [ts, blowup] = integrate_samples(f, x0, t0, t_end, dt_sample);
    if (blowup)
        throw std::runtime_error("integration diverged; last valid time " +
                                 std::to_string(*blowup));
    return ts;
}

TimeSeries simulate(const BenchmarkSystem &system, double t0, double t_end, double dt_sample) {
    // Parse the truth terms once; the integrator evaluates the RHS millions of
    // times.
    std::vector<std::vector<std::pair<BasisFunction, double>>> parsed(
        static_cast<std::size_t>(system.n_x));
    for (int j = 0; j < system.n_x; ++j)
        for (const auto &[label, coef] : system.truth[static_cast<std::size_t>(j)])
            parsed[static_cast<std::size_t>(j)].emplace_back(BasisFunction::parse(label, system.n_x),
                                                             coef);
    auto f = [&parsed, n = system.n_x](const Eigen::VectorXd &x) {
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(n);
        for (int j = 0; j < n; ++j)
            for (const auto &[term, coef] : parsed[static_cast<std::size_t>(j)])
                dx[j] += coef * term.eval(x);
        return dx;
    };
    return simulate_rhs(f, system.initial_condition, t0, t_end, dt_sample);
}

TimeSeries contaminate(const TimeSeries &ts, const NoiseSpec &spec) {
    if (spec.sigma.size() != ts.states())
        throw std::invalid_argument("contaminate: sigma size does not match the state count");
    if ((spec.sigma.array() < 0.0).any())
        throw std::invalid_argument("contaminate: sigma must be non-negative");
    TimeSeries out = ts;
    const Eigen::Index n = ts.states();
    for (Eigen::Index i = 0; i < ts.samples(); ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (spec.sigma[j] == 0.0) continue;
            const auto idx = static_cast<std::uint64_t>(i * n + j);
            const double u1 =
                (static_cast<double>(CounterRng::mix(spec.seed, 2 * idx) >> 11) + 0.5) * 0x1.0p-53;
            const double u2 =
                (static_cast<double>(CounterRng::mix(spec.seed, 2 * idx + 1) >> 11) + 0.5) *
                0x1.0p-53;
            out.values(i, j) += spec.sigma[j] * std::sqrt(-2.0 * std::log(u1)) *
                                std::cos(6.283185307179586476925286766559 * u2);
        }
    }
    return out;
}

BaselineResult baseline_sparse_regression(const Eigen::MatrixXd &theta,
                                          const Eigen::VectorXd &xdot, double lambda, double rho,
                                          int max_sweeps) {
    if (lambda < 0.0) throw std::invalid_argument("baseline: lambda must be non-negative");
    if (rho < 0.0 || rho >= 1.0) throw std::invalid_argument("baseline: rho must be in [0,1)");
    if (theta.rows() != xdot.size())
        throw std::invalid_argument("baseline: row count mismatch between theta and xdot");
    const Eigen::Index m = theta.rows();
    const Eigen::Index p = theta.cols();
    const double inv_m = 1.0 / static_cast<double>(m);

    // Scale columns to unit RMS; penalties are re-weighted so the solution in
    // original variables minimizes the stated objective exactly.
    Eigen::VectorXd scale(p);
    Eigen::MatrixXd ts(m, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double s = std::sqrt(theta.col(j).squaredNorm() * inv_m);
        scale[j] = s > 0.0 ? s : 1.0;
        ts.col(j) = theta.col(j) / scale[j];
    }
    const Eigen::VectorXd l1 = lambda * rho / scale.array();
    const Eigen::VectorXd l2 = lambda * (1.0 - rho) / scale.array().square();

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd residual = xdot;  // xdot - ts * beta
    const double tol = 1e-8 * std::max(1.0, (inv_m * (ts.transpose() * xdot)).cwiseAbs().maxCoeff());

    int sweep = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (; sweep < max_sweeps && worst > tol; ++sweep) {
        for (Eigen::Index j = 0; j < p; ++j) {
            const double z = inv_m * ts.col(j).dot(residual) + beta[j];  // unit RMS columns
            const double shrunk = std::abs(z) <= l1[j] ? 0.0
                                                       : (z > 0.0 ? z - l1[j] : z + l1[j]) /
                                                             (1.0 + l2[j]);
            if (shrunk != beta[j]) {
                residual -= (shrunk - beta[j]) * ts.col(j);
                beta[j] = shrunk;
            }
        }
        worst = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double g = -inv_m * ts.col(j).dot(residual) + l2[j] * beta[j];
            const double v = beta[j] != 0.0 ? std::abs(g + (beta[j] > 0.0 ? l1[j] : -l1[j]))
                                            : std::max(0.0, std::abs(g) - l1[j]);
            worst = std::max(worst, v);
        }
    }
    if (worst > tol)
        throw std::runtime_error("baseline coordinate descent stalled; KKT gap " +
                                 std::to_string(worst) + " after " + std::to_string(sweep) +
                                 " sweeps");
    BaselineResult result;
    result.coefficients = beta.array() / scale.array();
    result.stationarity = worst;
    result.sweeps = sweep;
    return result;
}

ValidationReport validate(const DiscoveredModel &model, const BenchmarkSystem &reference,
                          double t0, double t_end) {
    const double dt = 1.0 / reference.sampling_frequency;
    ValidationReport report;
    report.reference_trajectory = simulate(reference, t0, t_end, dt);

    const CoefficientMatrix xi = model.to_coefficients();
    auto model_f = [&](const Eigen::VectorXd &x) { return model_rhs(model.dictionary, xi, x); };
    auto guarded = [&](const Eigen::VectorXd &x) -> Eigen::VectorXd {
        try {
            return model_f(x);
        } catch (const std::domain_error &) {
            return Eigen::VectorXd::Constant(x.size(), std::numeric_limits<double>::quiet_NaN());
        }
    };
    auto [traj, blowup] = integrate_samples(guarded, reference.initial_condition, t0, t_end, dt);
    report.model_trajectory = traj;
    if (blowup) {
        report.blew_up = true;
        report.blowup_time = *blowup;
        report.mse = Eigen::VectorXd::Constant(reference.n_x,
                                               std::numeric_limits<double>::infinity());
    } else {
        const Eigen::Index m = report.reference_trajectory.samples();
        report.mse = (report.reference_trajectory.values - traj.values)
                         .array()
                         .square()
                         .colwise()
                         .mean()
                         .transpose();
        (void)m;
    }

    // Coefficient comparison on the true support; a missing term counts as a
    // zero estimate.
    double err = 0.0;
    for (int j = 0; j < reference.n_x; ++j) {
        std::set<std::string> truth_labels;
        for (const auto &[label, coef] : reference.truth[static_cast<std::size_t>(j)]) {
            truth_labels.insert(label);
            double estimate = 0.0;
            bool found_active = false;
            for (Eigen::Index k = 0; k < model.dictionary.terms(j); ++k) {
                const auto &term =
                    model.dictionary.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
                if (term.label != label) continue;
                if (model.active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) {
                    estimate = model.coefficients[static_cast<std::size_t>(j)][k];
                    found_active = true;
                }
                break;
            }
            err += std::abs(estimate - coef) / std::abs(coef) * 100.0;
            if (!found_active)
                report.missing.push_back("state " + std::to_string(j + 1) + ": " + label);
        }
        for (Eigen::Index k = 0; k < model.dictionary.terms(j); ++k) {
            if (!model.active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) continue;
            const std::string &label =
                model.dictionary.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]
                    .label;
            if (!truth_labels.count(label))
                report.spurious.push_back("state " + std::to_string(j + 1) + ": " + label);
        }
    }
    report.coefficient_error_pct = err;
    return report;
}

std::string ValidationReport::to_json() const {
    nlohmann::json out;
    out["mse"] = nlohmann::json::array();
    for (Eigen::Index j = 0; j < mse.size(); ++j)
        out["mse"].push_back(std::isfinite(mse[j]) ? nlohmann::json(mse[j])
                                                   : nlohmann::json("inf"));
    out["coefficient_error_pct"] = coefficient_error_pct;
    out["spurious"] = spurious;
    out["missing"] = missing;
    out["blew_up"] = blew_up;
    if (blew_up) out["blowup_time"] = blowup_time;
    return out.dump(2);
}

void write_comparison_csv(const ValidationReport &report, const std::string &path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const Eigen::Index n = report.reference_trajectory.states();
    out << "t";
    for (Eigen::Index j = 0; j < n; ++j) out << ",x" << (j + 1) << "_true";
    for (Eigen::Index j = 0; j < n; ++j) out << ",x" << (j + 1) << "_model";
    out << "\n";
    const Eigen::Index rows =
        std::min(report.reference_trajectory.samples(), report.model_trajectory.samples());
    char buf[32];
    for (Eigen::Index i = 0; i < rows; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", report.reference_trajectory.times[i]);
        out << buf;
        for (Eigen::Index j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", report.reference_trajectory.values(i, j));
            out << ',' << buf;
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", report.model_trajectory.values(i, j));
            out << ',' << buf;
        }
        out << "\n";
    }
}

}  // namespace mhsid
