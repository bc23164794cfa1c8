#include "mhsid/preprocess.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mhsid {

DerivativeMatrix central_differences(const TimeSeries &ts) {
    ts.validate();
    const Eigen::Index m = ts.samples();
    if (m < 3) throw std::invalid_argument("central_differences: need at least three samples");
    DerivativeMatrix out;
    out.times = ts.times.segment(1, m - 2);
    out.values.resize(m - 2, ts.states());
    for (Eigen::Index k = 1; k + 1 < m; ++k)
        out.values.row(k - 1) =
            (ts.values.row(k + 1) - ts.values.row(k - 1)) / (ts.times[k + 1] - ts.times[k - 1]);
    return out;
}

Eigen::MatrixXd dictionary_data_matrix(const TimeSeries &ts, const Dictionary &d, int state) {
    const Eigen::Index m = ts.samples();
    if (m < 3) throw std::invalid_argument("dictionary_data_matrix: need at least three samples");
    Eigen::MatrixXd theta(m - 2, d.terms(state));
    for (Eigen::Index k = 1; k + 1 < m; ++k)
        theta.row(k - 1) = d.eval_row(state, ts.values.row(k).transpose()).transpose();
    return theta;
}

OlsResult ols_fit(const Eigen::MatrixXd &theta, const Eigen::VectorXd &xdot) {
    if (theta.rows() != xdot.size())
        throw std::invalid_argument("ols_fit: row count mismatch");
    if (theta.cols() < 1) throw std::invalid_argument("ols_fit: need at least one column");
    const Eigen::Index p = theta.cols();

    // Equilibrate columns to unit norm so the rank decision and the
    // pseudo-inverse are not dominated by large-magnitude terms (exponentials
    // of large states dwarf everything else by hundreds of orders). The fit,
    // the t statistics, and the p-values are invariant under column scaling.
    // Columns that overflowed to non-finite values cannot be part of a finite
    // model on this data; they are zeroed out and reported as degenerate.
    Eigen::MatrixXd scaled = theta;
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
    Eigen::VectorXd norms = Eigen::VectorXd::Zero(p);
    std::vector<int> degenerate;
    for (Eigen::Index i = 0; i < p; ++i) {
        if (!scaled.col(i).allFinite()) {
            scaled.col(i).setZero();
            degenerate.push_back(static_cast<int>(i));
            continue;
        }
        const double s = scaled.col(i).norm();
        norms[i] = s;
        if (s > 0.0) {
            scale[i] = s;
            scaled.col(i) /= s;
        }
    }

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(scaled);
    cod.setThreshold(1e-12);
    const Eigen::Index rank = cod.rank();

    OlsResult out;
    out.column_norms = norms;
    out.response_norm = xdot.norm();
    const Eigen::VectorXd beta = cod.solve(xdot);
    out.coefficients = beta.array() / scale.array();
    const Eigen::VectorXd residuals = xdot - scaled * beta;
    out.dof = theta.rows() - rank;
    out.residual_variance =
        out.dof > 0 ? residuals.squaredNorm() / static_cast<double>(out.dof) : 0.0;

    if (rank < p) {
        const auto perm = cod.colsPermutation().indices();
        for (Eigen::Index i = rank; i < p; ++i)
            out.collinear_columns.push_back(static_cast<int>(perm[i]));
    }

    // Covariance of the estimates from the pseudo-inverse, scaled by the
    // residual variance.
    const Eigen::MatrixXd pinv = cod.pseudoInverse();
    out.std_errors.resize(p);
    out.p_values.resize(p);
    const double dof_for_test = out.dof > 0 ? static_cast<double>(out.dof) : 1.0;
    boost::math::students_t_distribution<double> tdist(dof_for_test);
    for (Eigen::Index i = 0; i < p; ++i) {
        const double var = out.residual_variance * pinv.row(i).squaredNorm();
        out.std_errors[i] = std::sqrt(std::max(var, 0.0)) / scale[i];
        if (out.std_errors[i] > 0.0) {
            const double t = std::abs(out.coefficients[i]) / out.std_errors[i];
            out.p_values[i] = 2.0 * boost::math::cdf(boost::math::complement(tdist, t));
        } else {
            out.p_values[i] = out.coefficients[i] == 0.0 ? 1.0 : 0.0;
        }
    }
    for (int i : degenerate) {
        // Already rank-deficient as a zero column, so usually flagged above.
        out.coefficients[i] = 0.0;
        out.std_errors[i] = std::numeric_limits<double>::infinity();
        out.p_values[i] = 1.0;
        if (std::find(out.collinear_columns.begin(), out.collinear_columns.end(), i) ==
            out.collinear_columns.end())
            out.collinear_columns.push_back(i);
    }
    return out;
}

namespace {

// Residual sum of squares of y regressed on X via normal equations with a
// tiny ridge fallback; returns a negative value on numerical failure.
double regression_rss(const Eigen::MatrixXd &x, const Eigen::VectorXd &y) {
    const Eigen::MatrixXd gram = x.transpose() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) return -1.0;
    const Eigen::VectorXd beta = ldlt.solve(x.transpose() * y);
    if (!beta.allFinite()) return -1.0;
    return (y - x * beta).squaredNorm();
}

Eigen::VectorXd maybe_difference(const Eigen::VectorXd &y, bool difference) {
    if (!difference) return y;
    return y.tail(y.size() - 1) - y.head(y.size() - 1);
}

}  // namespace

GrangerResult granger_prune(const TimeSeries &ts, const Dictionary &d, double significance,
                            int restricted_lag, bool enforce_stationarity) {
    if (significance <= 0.0 || significance >= 1.0)
        throw std::invalid_argument("granger_prune: significance must lie in (0,1)");
    if (restricted_lag < 1) throw std::invalid_argument("granger_prune: restricted_lag must be >= 1");

    GrangerResult result;
    const int p = restricted_lag;
    for (int j = 0; j < d.n_x; ++j) {
        const Eigen::VectorXd x = maybe_difference(ts.values.col(j), enforce_stationarity);
        const Eigen::Index m = x.size();
        const Eigen::Index lag = std::max<Eigen::Index>(p, 1);
        const Eigen::Index n = m - lag;
        if (n < p + 5)
            throw std::invalid_argument("granger_prune: series too short for the AR fits");

        const auto &terms = d.per_state[static_cast<std::size_t>(j)];
        Eigen::VectorXd pvals(static_cast<Eigen::Index>(terms.size()));
        std::vector<std::uint8_t> kept(terms.size(), 0);

        // Restricted model: intercept plus the state's own lags.
        Eigen::MatrixXd restricted(n, p + 1);
        Eigen::VectorXd target(n);
        for (Eigen::Index t = 0; t < n; ++t) {
            target[t] = x[lag + t];
            restricted(t, 0) = 1.0;
            for (int l = 1; l <= p; ++l) restricted(t, l) = x[lag + t - l];
        }
        const double rss_restricted = regression_rss(restricted, target);

        boost::math::fisher_f_distribution<double> fdist(1.0, static_cast<double>(n - p - 2));
        boost::math::chi_squared_distribution<double> chi2dist(1.0);

        for (std::size_t k = 0; k < terms.size(); ++k) {
            const Eigen::Index ki = static_cast<Eigen::Index>(k);
            if (terms[k].kind == BasisKind::constant) {
                // Zero-variance regressor: the test is undefined; pass through.
                pvals[ki] = std::numeric_limits<double>::quiet_NaN();
                kept[k] = 1;
                continue;
            }
            // One lagged value of the evaluated basis function.
            Eigen::VectorXd theta_series(ts.samples());
            bool finite = true;
            for (Eigen::Index r = 0; r < ts.samples(); ++r) {
                double v = std::numeric_limits<double>::quiet_NaN();
                try {
                    v = terms[k].eval(ts.values.row(r).transpose());
                } catch (const std::domain_error &) {
                }
                theta_series[r] = v;
                finite = finite && std::isfinite(v);
            }
            if (!finite || rss_restricted < 0.0) {
                result.warnings.push_back("granger: degenerate regression for state " +
                                          std::to_string(j + 1) + " term '" + terms[k].label +
                                          "', kept by default");
                pvals[ki] = std::numeric_limits<double>::quiet_NaN();
                kept[k] = 1;
                continue;
            }
            const Eigen::VectorXd theta_col = maybe_difference(theta_series, enforce_stationarity);
            Eigen::MatrixXd augmented(n, p + 2);
            augmented.leftCols(p + 1) = restricted;
            for (Eigen::Index t = 0; t < n; ++t) augmented(t, p + 1) = theta_col[lag + t - 1];

            if ((augmented.col(p + 1).array() - augmented.col(p + 1).mean()).abs().maxCoeff() == 0.0) {
                result.warnings.push_back("granger: zero-variance regressor for state " +
                                          std::to_string(j + 1) + " term '" + terms[k].label +
                                          "', kept by default");
                pvals[ki] = std::numeric_limits<double>::quiet_NaN();
                kept[k] = 1;
                continue;
            }
            const double rss_augmented = regression_rss(augmented, target);
            if (rss_augmented <= 0.0) {
                result.warnings.push_back("granger: singular augmented regression for state " +
                                          std::to_string(j + 1) + " term '" + terms[k].label +
                                          "', kept by default");
                pvals[ki] = std::numeric_limits<double>::quiet_NaN();
                kept[k] = 1;
                continue;
            }
            const double gain = std::max(rss_restricted - rss_augmented, 0.0);
            const double f_stat = gain / (rss_augmented / static_cast<double>(n - p - 2));
            const double chi2_stat = static_cast<double>(n) * gain / rss_augmented;
            const double p_f = boost::math::cdf(boost::math::complement(fdist, f_stat));
            const double p_chi2 = boost::math::cdf(boost::math::complement(chi2dist, chi2_stat));
            pvals[ki] = 0.5 * (p_f + p_chi2);
            kept[k] = pvals[ki] < significance ? 1 : 0;
        }
        result.p_values.push_back(std::move(pvals));
        result.kept.push_back(std::move(kept));
    }
    return result;
}

namespace {

// Confidence half-width with a floor of 1% of the term's natural coefficient
// scale (response norm over column norm). On near-exact fits the raw interval
// collapses around the differentiation bias of the estimate, which can pin a
// spurious term in a box that excludes zero; the floor keeps zero reachable
// and leaves room for the variability test to act across windows.
double interval_half_width(double se, double coefficient, double dof, double interval_alpha,
                           double natural_scale) {
    boost::math::students_t_distribution<double> tdist(dof > 0 ? dof : 1.0);
    const double quantile = boost::math::quantile(boost::math::complement(tdist, interval_alpha / 2.0));
    // Both terms are proportional to the column scale: an absolute floor
    // would be wildly out of scale for terms with huge data columns (even a
    // 1e-12 box on an exponential of a 100-scale state admits constraint
    // residuals of astronomical size). The fallback only guards degenerate
    // zero-scale columns so lower < upper stays strict.
    const double half = std::max(se * quantile, 1e-2 * natural_scale);
    return half > 0.0 ? half : 1e-12 * (1.0 + std::abs(coefficient));
}

double natural_scale(const OlsResult &fit, Eigen::Index k) {
    if (fit.column_norms.size() <= k || fit.column_norms[k] <= 0.0) return 0.0;
    return fit.response_norm / fit.column_norms[k];
}

}  // namespace

PreprocessReport prune_and_bound(const GrangerResult &granger, const std::vector<OlsResult> &ols,
                                 const Dictionary &d, double ols_significance,
                                 double interval_alpha) {
    if (ols_significance <= 0.0 || ols_significance >= 1.0)
        throw std::invalid_argument("prune_and_bound: ols_significance must lie in (0,1)");
    if (interval_alpha <= 0.0 || interval_alpha >= 1.0)
        throw std::invalid_argument("prune_and_bound: interval_alpha must lie in (0,1)");

    PreprocessReport report;
    report.warnings = granger.warnings;
    for (int j = 0; j < d.n_x; ++j) {
        const auto &fit = ols[static_cast<std::size_t>(j)];
        const Eigen::Index n_terms = d.terms(j);
        std::vector<std::uint8_t> kept(static_cast<std::size_t>(n_terms), 0);
        Eigen::VectorXd lower = Eigen::VectorXd::Zero(n_terms);
        Eigen::VectorXd upper = Eigen::VectorXd::Zero(n_terms);
        Eigen::Index n_kept = 0;
        for (Eigen::Index k = 0; k < n_terms; ++k) {
            const bool granger_keep = granger.kept[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            const bool ols_keep = fit.p_values[k] <= ols_significance;  // ties kept
            if (granger_keep && ols_keep) {
                kept[static_cast<std::size_t>(k)] = 1;
                const double half =
                    interval_half_width(fit.std_errors[k], fit.coefficients[k],
                                        static_cast<double>(fit.dof), interval_alpha,
                                        natural_scale(fit, k));
                lower[k] = fit.coefficients[k] - half;
                upper[k] = fit.coefficients[k] + half;
                ++n_kept;
            }
        }
        if (n_kept == 0) {
            std::ostringstream msg;
            msg << "dictionary exhausted before optimization for state " << (j + 1)
                << " (granger kept ";
            Eigen::Index g = 0;
            for (auto flag : granger.kept[static_cast<std::size_t>(j)]) g += flag ? 1 : 0;
            msg << g << "/" << n_terms << " terms, min OLS p-value "
                << fit.p_values.minCoeff() << " vs threshold " << ols_significance << ")";
            throw std::runtime_error(msg.str());
        }
        report.granger_pvalues.push_back(granger.p_values[static_cast<std::size_t>(j)]);
        report.ols_coefficients.push_back(fit.coefficients);
        report.ols_std_errors.push_back(fit.std_errors);
        report.ols_pvalues.push_back(fit.p_values);
        report.kept.push_back(std::move(kept));
        report.lower.push_back(std::move(lower));
        report.upper.push_back(std::move(upper));
        for (int c : fit.collinear_columns)
            report.warnings.push_back("ols: collinear column " + std::to_string(c) + " for state " +
                                      std::to_string(j + 1));
    }
    return report;
}

PreprocessReport run_preprocess(const TimeSeries &smoothed, const Dictionary &d,
                                const PreprocessConfig &cfg) {
    const GrangerResult granger = granger_prune(smoothed, d, cfg.granger_significance,
                                                cfg.restricted_lag, cfg.enforce_stationarity);
    const DerivativeMatrix xdot = central_differences(smoothed);
    std::vector<OlsResult> ols;
    for (int j = 0; j < d.n_x; ++j)
        ols.push_back(ols_fit(dictionary_data_matrix(smoothed, d, j), xdot.values.col(j)));
    return prune_and_bound(granger, ols, d, cfg.ols_significance, cfg.interval_alpha);
}

CoefficientMatrix PreprocessReport::make_coefficients() const {
    std::vector<Eigen::Index> terms;
    for (const auto &col : ols_coefficients) terms.push_back(col.size());
    CoefficientMatrix xi = CoefficientMatrix::zeros(terms);
    for (std::size_t j = 0; j < kept.size(); ++j) {
        for (Eigen::Index k = 0; k < terms[j]; ++k) {
            if (!kept[j][static_cast<std::size_t>(k)]) {
                xi.active[j][static_cast<std::size_t>(k)] = 0;
                xi.lower[j][k] = xi.upper[j][k] = 0.0;
                continue;
            }
            xi.values[j][k] = ols_coefficients[j][k];
            xi.lower[j][k] = lower[j][k];
            xi.upper[j][k] = upper[j][k];
        }
    }
    xi.clip_to_bounds();
    return xi;
}

CoefficientMatrix ols_bounds(const TimeSeries &smoothed, const Dictionary &d,
                             const std::vector<std::vector<std::uint8_t>> &mask,
                             double interval_alpha) {
    const DerivativeMatrix xdot = central_differences(smoothed);
    std::vector<Eigen::Index> terms;
    for (int j = 0; j < d.n_x; ++j) terms.push_back(d.terms(j));
    CoefficientMatrix xi = CoefficientMatrix::zeros(terms);

    for (int j = 0; j < d.n_x; ++j) {
        const auto &state_mask = mask[static_cast<std::size_t>(j)];
        std::vector<Eigen::Index> active_idx;
        for (Eigen::Index k = 0; k < d.terms(j); ++k)
            if (state_mask[static_cast<std::size_t>(k)]) active_idx.push_back(k);
        if (active_idx.empty())
            throw std::runtime_error("ols_bounds: no active terms for state " + std::to_string(j + 1));

        const Eigen::MatrixXd theta = dictionary_data_matrix(smoothed, d, j);
        Eigen::MatrixXd reduced(theta.rows(), static_cast<Eigen::Index>(active_idx.size()));
        for (std::size_t c = 0; c < active_idx.size(); ++c)
            reduced.col(static_cast<Eigen::Index>(c)) = theta.col(active_idx[c]);
        const OlsResult fit = ols_fit(reduced, xdot.values.col(j));

        for (Eigen::Index k = 0; k < d.terms(j); ++k) {
            xi.active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = 0;
            xi.lower[static_cast<std::size_t>(j)][k] = xi.upper[static_cast<std::size_t>(j)][k] = 0.0;
        }
        for (std::size_t c = 0; c < active_idx.size(); ++c) {
            const Eigen::Index k = active_idx[c];
            const Eigen::Index ci = static_cast<Eigen::Index>(c);
            const double half =
                interval_half_width(fit.std_errors[ci], fit.coefficients[ci],
                                    static_cast<double>(fit.dof), interval_alpha,
                                    natural_scale(fit, ci));
            xi.active[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = 1;
            xi.values[static_cast<std::size_t>(j)][k] = fit.coefficients[ci];
            xi.lower[static_cast<std::size_t>(j)][k] = fit.coefficients[ci] - half;
            xi.upper[static_cast<std::size_t>(j)][k] = fit.coefficients[ci] + half;
        }
    }
    return xi;
}

std::string PreprocessReport::to_json() const {
    nlohmann::json out;
    auto vec = [](const Eigen::VectorXd &v) {
        std::vector<double> plain(v.data(), v.data() + v.size());
        return plain;
    };
    for (std::size_t j = 0; j < kept.size(); ++j) {
        nlohmann::json state;
        state["granger_pvalues"] = vec(granger_pvalues[j]);
        state["ols_coefficients"] = vec(ols_coefficients[j]);
        state["ols_std_errors"] = vec(ols_std_errors[j]);
        state["ols_pvalues"] = vec(ols_pvalues[j]);
        state["kept"] = kept[j];
        state["lower"] = vec(lower[j]);
        state["upper"] = vec(upper[j]);
        out["states"].push_back(state);
    }
    out["warnings"] = warnings;
    return out.dump(2);
}

}  // namespace mhsid
