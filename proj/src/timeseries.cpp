#include "mhsid/timeseries.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mhsid {

void TimeSeries::validate() const {
    if (times.size() != values.rows())
        throw std::invalid_argument("TimeSeries: times/values row mismatch");
    if (times.size() < 2) throw std::invalid_argument("TimeSeries: need at least two samples");
    const double h = times[1] - times[0];
    if (h <= 0.0) throw std::invalid_argument("TimeSeries: time stamps must be strictly increasing");
    for (Eigen::Index k = 1; k < times.size(); ++k) {
        const double step = times[k] - times[k - 1];
        if (step <= 0.0)
            throw std::invalid_argument("TimeSeries: time stamps must be strictly increasing");
        if (std::abs(step - h) > 1e-9 * std::max(1.0, std::abs(h)))
            throw std::invalid_argument("TimeSeries: non-uniform sampling grid");
    }
}

TimeSeries TimeSeries::slice(Eigen::Index start, Eigen::Index end) const {
    if (start < 0 || end > times.size() || start >= end)
        throw std::out_of_range("TimeSeries::slice: bad range");
    TimeSeries out;
    out.times = times.segment(start, end - start);
    out.values = values.middleRows(start, end - start);
    return out;
}

TimeSeries read_csv(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    // Header row: t,x1,..,xn
    Eigen::Index n_cols = 1;
    for (char c : line) n_cols += c == ',' ? 1 : 0;
    if (n_cols < 2) throw std::runtime_error(path + ": expected header 't,x1,..'");

    std::vector<double> flat;
    Eigen::Index rows = 0;
    Eigen::Index line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        Eigen::Index col = 0;
        while (std::getline(row, cell, ',')) {
            ++col;
            char *endp = nullptr;
            const double v = std::strtod(cell.c_str(), &endp);
            if (endp == cell.c_str() || *endp != '\0')
                throw std::runtime_error(path + ": non-numeric cell at row " +
                                         std::to_string(line_no) + ", column " + std::to_string(col));
            flat.push_back(v);
        }
        if (col != n_cols)
            throw std::runtime_error(path + ": row " + std::to_string(line_no) + " has " +
                                     std::to_string(col) + " cells, expected " + std::to_string(n_cols));
        ++rows;
    }
    if (rows < 2) throw std::runtime_error(path + ": need at least two data rows");

    TimeSeries ts;
    ts.times.resize(rows);
    ts.values.resize(rows, n_cols - 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
        ts.times[r] = flat[static_cast<std::size_t>(r * n_cols)];
        for (Eigen::Index c = 0; c + 1 < n_cols; ++c)
            ts.values(r, c) = flat[static_cast<std::size_t>(r * n_cols + c + 1)];
    }
    ts.validate();
    return ts;
}

void write_csv(const TimeSeries &ts, const std::string &path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "t";
    for (Eigen::Index c = 0; c < ts.values.cols(); ++c) out << ",x" << (c + 1);
    out << "\n";
    char buf[32];
    for (Eigen::Index r = 0; r < ts.times.size(); ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", ts.times[r]);
        out << buf;
        for (Eigen::Index c = 0; c < ts.values.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ts.values(r, c));
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace mhsid
