#include "mhsid/smoothing.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace mhsid {

MinMaxScaled minmax_scale(const Eigen::VectorXd &y) {
    MinMaxScaled out;
    out.min = y.minCoeff();
    out.max = y.maxCoeff();
    if (out.max <= out.min) throw std::domain_error("minmax_scale: degenerate signal (max == min)");
    out.scaled = (y.array() - out.min) / (out.max - out.min);
    return out;
}

Eigen::VectorXd first_difference(const Eigen::VectorXd &y) {
    if (y.size() < 2) throw std::invalid_argument("first_difference: need at least two samples");
    return y.tail(y.size() - 1) - y.head(y.size() - 1);
}

namespace {

double sample_std(const Eigen::VectorXd &y) {
    const double mean = y.mean();
    if (y.size() < 2) return 0.0;
    return std::sqrt((y.array() - mean).square().sum() / static_cast<double>(y.size() - 1));
}

// Least-squares polynomial fit over positions 0..window-1, returned as the
// window x window "hat" rows: row r gives the fitted value at position r.
Eigen::MatrixXd fit_matrix(int window, int poly_order) {
    Eigen::MatrixXd vand(window, poly_order + 1);
    for (int r = 0; r < window; ++r) {
        double p = 1.0;
        for (int c = 0; c <= poly_order; ++c) {
            vand(r, c) = p;
            p *= static_cast<double>(r);
        }
    }
    // hat = V (V^T V)^-1 V^T
    return vand * (vand.transpose() * vand).ldlt().solve(vand.transpose());
}

}  // namespace

Eigen::VectorXd savgol(const Eigen::VectorXd &y, int window, int poly_order) {
    if (window % 2 == 0) throw std::invalid_argument("savgol: window must be odd");
    if (window <= poly_order) throw std::invalid_argument("savgol: window must exceed poly_order");
    if (window > y.size()) throw std::invalid_argument("savgol: window exceeds series length");

    const Eigen::MatrixXd hat = fit_matrix(window, poly_order);
    const int half = window / 2;
    const Eigen::Index m = y.size();
    Eigen::VectorXd out(m);
    for (Eigen::Index k = half; k + half < m; ++k)
        out[k] = hat.row(half).dot(y.segment(k - half, window));
    // Edges: evaluate the first/last full-window fit at the edge positions.
    for (int r = 0; r < half; ++r) {
        out[r] = hat.row(r).dot(y.head(window));
        out[m - 1 - r] = hat.row(window - 1 - r).dot(y.tail(window));
    }
    return out;
}

SmoothingResult iterative_smooth(const TimeSeries &ts, const SmoothingConfig &cfg) {
    ts.validate();
    if (cfg.poly_order < 1 || cfg.step < 1 || cfg.alpha <= 0.0)
        throw std::invalid_argument("iterative_smooth: bad configuration");
    int ws0 = cfg.initial_window;
    if (ws0 % 2 == 0) ++ws0;
    if (ws0 <= cfg.poly_order) throw std::invalid_argument("iterative_smooth: window must exceed poly_order");
    if (ts.samples() < 2 * static_cast<Eigen::Index>(ws0) + 1)
        throw std::invalid_argument("iterative_smooth: insufficient data for smoothing");

    SmoothingResult result;
    result.smoothed.times = ts.times;
    result.smoothed.values.resizeLike(ts.values);
    for (Eigen::Index j = 0; j < ts.states(); ++j) {
        const Eigen::VectorXd raw = ts.values.col(j);
        const Eigen::VectorXd scaled = minmax_scale(raw).scaled;
        double sigma_prev = sample_std(first_difference(scaled));
        std::vector<double> trace{sigma_prev};

        int ws_prev = ws0;
        int ws = ws0;
        while (true) {
            if (ws > ts.samples()) {
                throw std::runtime_error("iterative_smooth: insufficient data for smoothing (window " +
                                         std::to_string(ws) + " exceeds " +
                                         std::to_string(ts.samples()) + " samples)");
            }
            const double sigma = sample_std(first_difference(savgol(scaled, ws, cfg.poly_order)));
            trace.push_back(sigma);
            if (std::abs(sigma_prev - sigma) / std::abs(sigma_prev) < cfg.alpha) break;
            sigma_prev = sigma;
            ws_prev = ws;
            ws += cfg.step;
            if (ws % 2 == 0) ++ws;
        }
        result.smoothed.values.col(j) = savgol(raw, ws_prev, cfg.poly_order);
        result.final_window.push_back(ws_prev);
        result.sigma_trace.push_back(std::move(trace));
    }
    return result;
}

}  // namespace mhsid
