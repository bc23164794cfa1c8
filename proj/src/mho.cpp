#include "mhsid/mho.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>
#include <stdexcept>

namespace mhsid {

std::vector<std::pair<Eigen::Index, Eigen::Index>> window_indices(Eigen::Index m,
                                                                  Eigen::Index h_samples,
                                                                  Eigen::Index step) {
    if (h_samples > m) throw std::invalid_argument("window_indices: horizon exceeds data length");
    if (h_samples < 2 || step < 1) throw std::invalid_argument("window_indices: bad parameters");
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    for (Eigen::Index i = 0;; ++i) {
        const Eigen::Index start = i * step;
        const Eigen::Index end = start + h_samples;
        if (end > m) break;
        out.emplace_back(start, end);
    }
    return out;
}

namespace {

std::set<std::string> protected_labels_for_state(const std::vector<std::string> &protected_terms,
                                                 int state) {
    std::set<std::string> labels;
    for (const auto &term : protected_terms) {
        if (term == "x_j")
            labels.insert("x" + std::to_string(state + 1));
        else
            labels.insert(term);
    }
    return labels;
}

Eigen::Index mask_count(const std::vector<std::vector<std::uint8_t>> &mask) {
    Eigen::Index n = 0;
    for (const auto &col : mask)
        for (auto flag : col) n += flag ? 1 : 0;
    return n;
}

}  // namespace

std::vector<std::vector<std::uint8_t>> threshold_round(
    const std::vector<std::vector<Eigen::VectorXd>> &estimates,
    const std::vector<std::vector<std::uint8_t>> &mask, const Dictionary &d, double gamma,
    int round_index, int protected_steps, const std::vector<std::string> &protected_terms,
    const std::vector<Eigen::VectorXd> *term_scale, double contribution_floor) {
    if (estimates.size() < 2)
        throw std::invalid_argument("threshold_round: need at least two estimates");
    if (gamma <= 0.0) throw std::invalid_argument("threshold_round: gamma must be positive");

    const double n = static_cast<double>(estimates.size());
    auto out = mask;
    for (int j = 0; j < d.n_x; ++j) {
        const auto protected_set = protected_labels_for_state(protected_terms, j);
        const Eigen::Index n_terms = d.terms(j);
        std::vector<std::uint8_t> flag_sd(static_cast<std::size_t>(n_terms), 0);
        std::vector<std::uint8_t> flag_drift(static_cast<std::size_t>(n_terms), 0);
        std::vector<std::uint8_t> flag_floor(static_cast<std::size_t>(n_terms), 0);
        std::vector<std::uint8_t> eligible(static_cast<std::size_t>(n_terms), 0);
        bool drift_round = false;
        for (Eigen::Index k = 0; k < n_terms; ++k) {
            if (!mask[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) continue;
            const std::string &label = d.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].label;
            if (round_index <= protected_steps && protected_set.count(label)) continue;
            eligible[static_cast<std::size_t>(k)] = 1;

            double mean = 0.0;
            for (const auto &est : estimates) mean += est[static_cast<std::size_t>(j)][k];
            mean /= n;
            double var = 0.0;
            for (const auto &est : estimates) {
                const double dev = est[static_cast<std::size_t>(j)][k] - mean;
                var += dev * dev;
            }
            var /= n;  // population variance over the span

            if (mean == 0.0) {
                // never moved off zero, or unbounded dispersion
                flag_sd[static_cast<std::size_t>(k)] = 1;
                flag_drift[static_cast<std::size_t>(k)] = 1;
            } else {
                flag_sd[static_cast<std::size_t>(k)] = std::abs(std::sqrt(var) / mean) >= gamma;
                flag_drift[static_cast<std::size_t>(k)] =
                    flag_sd[static_cast<std::size_t>(k)] && std::abs(var / mean) >= gamma;
            }
            if (contribution_floor > 0.0 && term_scale)
                flag_floor[static_cast<std::size_t>(k)] =
                    std::abs(mean) * (*term_scale)[static_cast<std::size_t>(j)][k] <
                    contribution_floor;
            drift_round = drift_round || flag_drift[static_cast<std::size_t>(k)];
        }
        for (Eigen::Index k = 0; k < n_terms; ++k) {
            if (!eligible[static_cast<std::size_t>(k)]) continue;
            const bool prune = flag_floor[static_cast<std::size_t>(k)] ||
                               (drift_round ? flag_drift[static_cast<std::size_t>(k)]
                                            : flag_sd[static_cast<std::size_t>(k)]);
            if (prune) out[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = 0;
        }
    }
    return out;
}

std::vector<Eigen::VectorXd> contribution_scales(const TimeSeries &smoothed, const Dictionary &d) {
    const DerivativeMatrix xdot = central_differences(smoothed);
    std::vector<Eigen::VectorXd> scales;
    for (int j = 0; j < d.n_x; ++j) {
        const Eigen::MatrixXd theta = dictionary_data_matrix(smoothed, d, j);
        const double rows = static_cast<double>(theta.rows());
        const double deriv_rms =
            std::max(xdot.values.col(j).norm() / std::sqrt(rows), 1e-300);
        Eigen::VectorXd col(d.terms(j));
        for (Eigen::Index k = 0; k < d.terms(j); ++k) {
            const double term_rms =
                theta.col(k).allFinite() ? theta.col(k).norm() / std::sqrt(rows)
                                         : std::numeric_limits<double>::infinity();
            col[k] = term_rms / deriv_rms;
        }
        scales.push_back(std::move(col));
    }
    return scales;
}

namespace {

std::vector<Eigen::VectorXd> full_size_values(const CoefficientMatrix &xi) {
    std::vector<Eigen::VectorXd> out;
    for (const auto &col : xi.values) out.push_back(col);
    return out;
}

std::vector<Eigen::VectorXd> span_cv(const std::vector<std::vector<Eigen::VectorXd>> &estimates,
                                     const Dictionary &d,
                                     const std::vector<std::vector<std::uint8_t>> &mask) {
    std::vector<Eigen::VectorXd> cv;
    const double n = static_cast<double>(estimates.size());
    for (int j = 0; j < d.n_x; ++j) {
        Eigen::VectorXd col =
            Eigen::VectorXd::Constant(d.terms(j), std::numeric_limits<double>::infinity());
        for (Eigen::Index k = 0; k < d.terms(j); ++k) {
            if (!mask[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) continue;
            double mean = 0.0;
            for (const auto &est : estimates) mean += est[static_cast<std::size_t>(j)][k];
            mean /= n;
            double var = 0.0;
            for (const auto &est : estimates) {
                const double dev = est[static_cast<std::size_t>(j)][k] - mean;
                var += dev * dev;
            }
            if (mean != 0.0) col[k] = std::abs(std::sqrt(var / n) / mean);
        }
        cv.push_back(std::move(col));
    }
    return cv;
}

std::string hash_config(const MovingHorizonConfig &cfg, const Dictionary &d) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "H=%.12g;dD=%d;w=%d;W=%d;g=%.12g;cf=%.6g;ps=%d;ne=%d;K=%d;ia=%.3g;l=%.6g;r=%d;nx=%d",
                  cfg.horizon_time, cfg.data_step, cfg.threshold_every, cfg.stable_rounds,
                  cfg.cv_tolerance, cfg.contribution_floor, cfg.protected_steps, cfg.n_elements,
                  cfg.collocation_points, cfg.interval_alpha, cfg.dnlp.lambda,
                  static_cast<int>(cfg.dnlp.regularizer), d.n_x);
    std::uint64_t h = 1469598103934665603ull;
    for (const char *c = buf; *c; ++c) {
        h ^= static_cast<unsigned char>(*c);
        h *= 1099511628211ull;
    }
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace

std::pair<DiscoveredModel, DiscoveryTrace> run_discovery(const TimeSeries &smoothed,
                                                         const PreprocessReport &report,
                                                         const Dictionary &d,
                                                         const MovingHorizonConfig &cfg) {
    smoothed.validate();
    const double dt = smoothed.dt();
    const Eigen::Index h_samples = static_cast<Eigen::Index>(std::llround(cfg.horizon_time / dt));
    const auto windows = window_indices(smoothed.samples(), h_samples, cfg.data_step);
    const int omega = cfg.threshold_every;
    if (omega < 2) throw std::invalid_argument("run_discovery: threshold_every must be >= 2");

    DiscoveryTrace trace;
    DiscoveredModel model;
    model.dictionary = d;
    model.config_hash = hash_config(cfg, d);

    auto mask = report.kept;
    for (const auto &col : mask)
        if (std::count(col.begin(), col.end(), std::uint8_t{1}) == 0)
            throw std::invalid_argument("run_discovery: preprocess mask empty for some state");

    CoefficientMatrix bounds_template = report.make_coefficients();
    CoefficientMatrix warm = bounds_template;
    const std::vector<Eigen::VectorXd> term_scale = contribution_scales(smoothed, d);

    std::vector<std::vector<Eigen::VectorXd>> span_estimates;  // successes in current span
    int span_failures = 0;
    int round_index = 0;
    int stable = 0;
    bool converged = false;
    int converge_at = -1;

    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto [start, end] = windows[i];
        const TimeSeries window = smoothed.slice(start, end);
        DiscoveryTrace::WindowRecord rec;
        rec.index = static_cast<int>(i);
        rec.start = start;
        rec.end = end;
        try {
            const CollocationGrid grid =
                build_grid(window.times[0], window.times[window.samples() - 1] - window.times[0],
                           cfg.n_elements, cfg.collocation_points, cfg.scheme);
            const WindowProblem problem(window, d, bounds_template, grid, cfg.dnlp.lambda,
                                        cfg.dnlp.regularizer);
            // The previous window's coefficients usually warm-start well, but
            // a term that is benign on one window can blow up the constraint
            // residuals on the next (shifted data range); fall back to the
            // regression-centered start when it scores better.
            auto start_score = [&problem](const CoefficientMatrix &xi) {
                try {
                    const Eigen::VectorXd z0 = problem.initial_point(xi);
                    const double s = problem.objective(z0) + problem.constraints(z0).squaredNorm();
                    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
                } catch (const std::domain_error &) {
                    return std::numeric_limits<double>::infinity();
                }
            };
            const char *cold = std::getenv("MHSID_COLD");
            const CoefficientMatrix &init =
                (cold && std::atoi(cold) > 0) || start_score(warm) > start_score(bounds_template)
                    ? bounds_template
                    : warm;
            const WindowSolution sol = solve(problem, init, cfg.dnlp);
            rec.objective = sol.objective;
            rec.feasibility = sol.feasibility;
            rec.message = sol.message;
            if (sol.status == SolveStatus::converged) {
                rec.solved = true;
                rec.xi = full_size_values(sol.xi_hat);
                span_estimates.push_back(rec.xi);
                warm = sol.xi_hat;
            } else {
                ++span_failures;
            }
        } catch (const std::exception &e) {
            rec.message = e.what();
            ++span_failures;
        }
        trace.windows.push_back(rec);
        if (const char *lg = std::getenv("MHSID_LOG"); lg && std::atoi(lg) >= 2) {
            std::fprintf(stderr, "window %d [%lld,%lld) %s obj=%.3e feas=%.3e %s\n", rec.index,
                         static_cast<long long>(start), static_cast<long long>(end),
                         rec.solved ? "solved" : "FAILED", rec.objective, rec.feasibility,
                         rec.message.c_str());
            if (rec.solved && std::atoi(lg) >= 3)
                for (int j = 0; j < d.n_x; ++j)
                    for (Eigen::Index k = 0; k < d.terms(j); ++k)
                        if (mask[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)])
                            std::fprintf(stderr, "  w%d s%d %-12s %+.6e\n", rec.index, j + 1,
                                         d.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]
                                             .label.c_str(),
                                         rec.xi[static_cast<std::size_t>(j)][k]);
        }
        if (span_failures >= (omega + 1) / 2)
            throw std::runtime_error("run_discovery: " + std::to_string(span_failures) +
                                     " window failures within one thresholding span (last: " +
                                     trace.windows.back().message + ")");

        if ((i + 1) % static_cast<std::size_t>(omega) != 0) continue;

        // Thresholding round over this span.
        ++round_index;
        DiscoveryTrace::RoundRecord round;
        round.round = round_index;
        round.kept_before = mask_count(mask);
        round.cv = span_cv(span_estimates, d, mask);
        const auto pruned = threshold_round(span_estimates, mask, d, cfg.cv_tolerance, round_index,
                                            cfg.protected_steps, cfg.protected_terms, &term_scale,
                                            cfg.contribution_floor);
        round.kept_after = mask_count(pruned);
        trace.rounds.push_back(round);
        if (const char *lg = std::getenv("MHSID_LOG"); lg && std::atoi(lg) >= 2) {
            for (int j = 0; j < d.n_x; ++j)
                for (Eigen::Index k = 0; k < d.terms(j); ++k) {
                    if (!mask[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) continue;
                    double mean = 0.0;
                    for (const auto &est : span_estimates)
                        mean += est[static_cast<std::size_t>(j)][k];
                    mean /= static_cast<double>(span_estimates.size());
                    std::fprintf(stderr,
                                 "round %d state %d %-12s mean=%+.4e cv=%.3e contrib=%.2e %s\n",
                                 round_index, j + 1,
                                 d.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]
                                     .label.c_str(),
                                 mean, round.cv[static_cast<std::size_t>(j)][k],
                                 std::abs(mean) * term_scale[static_cast<std::size_t>(j)][k],
                                 pruned[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]
                                     ? "kept"
                                     : "PRUNED");
                }
        }

        if (round.kept_after == round.kept_before) {
            // Rounds that still shield protected terms never count toward
            // convergence; those terms have not faced pruning yet.
            if (round_index > cfg.protected_steps) {
                ++stable;
                if (stable == cfg.stable_rounds) {
                    converged = true;
                    converge_at = static_cast<int>(i);
                }
            }
        } else {
            mask = pruned;
            bounds_template = ols_bounds(smoothed, d, mask, cfg.interval_alpha);
            warm = bounds_template;
            stable = 0;
        }
        span_estimates.clear();
        span_failures = 0;
        if (converged) break;
    }

    model.active = mask;
    model.converged = converged;
    model.rounds_used = round_index;
    trace.converged = converged;
    trace.convergence_window = converge_at;

    // Average the final stable span of estimates over the surviving terms.
    const int tail_windows = omega * cfg.stable_rounds;
    const int first_avg = converged ? std::max(0, converge_at - tail_windows + 1) : 0;
    std::vector<Eigen::VectorXd> sum;
    for (int j = 0; j < d.n_x; ++j) sum.push_back(Eigen::VectorXd::Zero(d.terms(j)));
    Eigen::Index n_used = 0;
    for (const auto &rec : trace.windows) {
        if (!rec.solved) continue;
        if (converged && (rec.index < first_avg || rec.index > converge_at)) continue;
        if (!converged && rec.index + tail_windows <= static_cast<int>(trace.windows.size()) - tail_windows)
            continue;  // not converged: average whatever the trailing span holds
        for (int j = 0; j < d.n_x; ++j) sum[static_cast<std::size_t>(j)] += rec.xi[static_cast<std::size_t>(j)];
        model.averaged_windows.push_back(rec.index);
        ++n_used;
    }
    for (int j = 0; j < d.n_x; ++j) {
        Eigen::VectorXd col = n_used > 0 ? Eigen::VectorXd((sum[static_cast<std::size_t>(j)] / static_cast<double>(n_used)))
                                         : Eigen::VectorXd::Zero(d.terms(j));
        for (Eigen::Index k = 0; k < d.terms(j); ++k)
            if (!mask[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) col[k] = 0.0;
        model.coefficients.push_back(std::move(col));
    }
    if (!converged)
        trace.note =
            "not converged before the data were exhausted; consider collecting a larger data set, "
            "extending the dictionary of basis functions, or deriving tighter coefficient bounds";
    return {model, trace};
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd &v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        arr.push_back(std::isfinite(v[i]) ? nlohmann::json(v[i]) : nlohmann::json("inf"));
    return arr;
}

}  // namespace

std::string DiscoveryTrace::to_json() const {
    nlohmann::json out;
    out["converged"] = converged;
    out["convergence_window"] = convergence_window;
    out["note"] = note;
    out["windows"] = nlohmann::json::array();
    for (const auto &w : windows) {
        nlohmann::json rec{{"index", w.index}, {"start", w.start},       {"end", w.end},
                           {"solved", w.solved}, {"objective", w.objective}, {"feasibility", w.feasibility},
                           {"message", w.message}};
        if (w.solved) {
            rec["xi"] = nlohmann::json::array();
            for (const auto &col : w.xi) rec["xi"].push_back(vec_json(col));
        }
        out["windows"].push_back(rec);
    }
    out["rounds"] = nlohmann::json::array();
    for (const auto &r : rounds) {
        nlohmann::json rec{{"round", r.round},
                           {"kept_before", r.kept_before},
                           {"kept_after", r.kept_after}};
        rec["cv"] = nlohmann::json::array();
        for (const auto &col : r.cv) rec["cv"].push_back(vec_json(col));
        out["rounds"].push_back(rec);
    }
    return out.dump(2);
}

std::string DiscoveredModel::to_json() const {
    nlohmann::json out;
    out["dictionary"] = nlohmann::json::parse(dictionary.to_json());
    out["active"] = active;
    out["coefficients"] = nlohmann::json::array();
    for (const auto &col : coefficients) out["coefficients"].push_back(vec_json(col));
    out["converged"] = converged;
    out["rounds_used"] = rounds_used;
    out["config_hash"] = config_hash;
    out["averaged_windows"] = averaged_windows;
    out["equations"] = equations_text();
    return out.dump(2);
}

DiscoveredModel DiscoveredModel::from_json(const std::string &text) {
    const auto in = nlohmann::json::parse(text);
    DiscoveredModel model;
    model.dictionary = Dictionary::from_json(in.at("dictionary").dump());
    model.active = in.at("active").get<std::vector<std::vector<std::uint8_t>>>();
    for (const auto &col : in.at("coefficients")) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(col.size()));
        for (std::size_t i = 0; i < col.size(); ++i) v[static_cast<Eigen::Index>(i)] = col[i].get<double>();
        model.coefficients.push_back(std::move(v));
    }
    model.converged = in.at("converged").get<bool>();
    model.rounds_used = in.value("rounds_used", 0);
    model.config_hash = in.value("config_hash", "");
    model.averaged_windows = in.value("averaged_windows", std::vector<int>{});
    return model;
}

std::string DiscoveredModel::equations_text() const {
    std::string out;
    char buf[64];
    for (int j = 0; j < dictionary.n_x; ++j) {
        out += "dx" + std::to_string(j + 1) + "/dt =";
        bool first = true;
        for (Eigen::Index k = 0; k < dictionary.terms(j); ++k) {
            if (!active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]) continue;
            const double c = coefficients[static_cast<std::size_t>(j)][k];
            std::snprintf(buf, sizeof buf, "%.4f", std::abs(c));
            out += first ? (c < 0 ? " -" : " ") : (c < 0 ? " - " : " + ");
            out += buf;
            const std::string &label = dictionary.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].label;
            if (label != "1") out += "*" + label;
            first = false;
        }
        if (first) out += " 0";
        out += "\n";
    }
    return out;
}

CoefficientMatrix DiscoveredModel::to_coefficients() const {
    std::vector<Eigen::Index> terms;
    for (int j = 0; j < dictionary.n_x; ++j) terms.push_back(dictionary.terms(j));
    CoefficientMatrix xi = CoefficientMatrix::zeros(terms);
    for (int j = 0; j < dictionary.n_x; ++j) {
        xi.active[static_cast<std::size_t>(j)] = active[static_cast<std::size_t>(j)];
        for (Eigen::Index k = 0; k < terms[static_cast<std::size_t>(j)]; ++k) {
            if (active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)])
                xi.values[static_cast<std::size_t>(j)][k] = coefficients[static_cast<std::size_t>(j)][k];
            else
                xi.lower[static_cast<std::size_t>(j)][k] = xi.upper[static_cast<std::size_t>(j)][k] = 0.0;
        }
    }
    return xi;
}

}  // namespace mhsid
