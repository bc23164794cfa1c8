#include "mhsid/basis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mhsid {

namespace {

std::string monomial_label(const std::vector<int> &exponents) {
    std::ostringstream out;
    bool first = true;
    for (std::size_t i = 0; i < exponents.size(); ++i) {
        if (exponents[i] == 0) continue;
        if (!first) out << "*";
        out << "x" << (i + 1);
        if (exponents[i] > 1) out << "^" << exponents[i];
        first = false;
    }
    return out.str();
}

int parse_state_name(const std::string &token, int n_x) {
    if (token.size() < 2 || token[0] != 'x')
        throw std::invalid_argument("basis label: expected state name, got '" + token + "'");
    int idx = 0;
    for (std::size_t i = 1; i < token.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(token[i])))
            throw std::invalid_argument("basis label: bad state name '" + token + "'");
        idx = idx * 10 + (token[i] - '0');
    }
    if (idx < 1 || idx > n_x)
        throw std::invalid_argument("basis label: state '" + token + "' out of range for n_x=" +
                                    std::to_string(n_x));
    return idx - 1;
}

}  // namespace

BasisFunction BasisFunction::constant() {
    BasisFunction b;
    b.kind = BasisKind::constant;
    b.label = "1";
    return b;
}

BasisFunction BasisFunction::monomial(std::vector<int> exponents) {
    bool any_positive = false;
    for (int e : exponents) {
        if (e < 0) throw std::invalid_argument("monomial exponents must be non-negative");
        any_positive = any_positive || e > 0;
    }
    if (!any_positive) throw std::invalid_argument("monomial needs at least one positive exponent");
    BasisFunction b;
    b.kind = BasisKind::monomial;
    b.exponents = std::move(exponents);
    b.label = monomial_label(b.exponents);
    return b;
}

BasisFunction BasisFunction::reciprocal(int state) {
    BasisFunction b;
    b.kind = BasisKind::reciprocal;
    b.target_state = state;
    b.label = "1/x" + std::to_string(state + 1);
    return b;
}

BasisFunction BasisFunction::exponential(int state) {
    BasisFunction b;
    b.kind = BasisKind::exponential;
    b.target_state = state;
    b.label = "exp(x" + std::to_string(state + 1) + ")";
    return b;
}

BasisFunction BasisFunction::sine(int state) {
    BasisFunction b;
    b.kind = BasisKind::sine;
    b.target_state = state;
    b.label = "sin(x" + std::to_string(state + 1) + ")";
    return b;
}

BasisFunction BasisFunction::cosine(int state) {
    BasisFunction b;
    b.kind = BasisKind::cosine;
    b.target_state = state;
    b.label = "cos(x" + std::to_string(state + 1) + ")";
    return b;
}

BasisFunction BasisFunction::parse(const std::string &label, int n_x) {
    if (label == "1") return constant();
    if (label.rfind("1/", 0) == 0)
        return reciprocal(parse_state_name(label.substr(2), n_x));
    for (const char *fn : {"exp", "sin", "cos"}) {
        const std::string prefix = std::string(fn) + "(";
        if (label.rfind(prefix, 0) == 0) {
            if (label.back() != ')')
                throw std::invalid_argument("basis label: missing ')' in '" + label + "'");
            const int s = parse_state_name(label.substr(prefix.size(), label.size() - prefix.size() - 1), n_x);
            if (fn[0] == 'e') return exponential(s);
            if (fn[0] == 's') return sine(s);
            return cosine(s);
        }
    }
    // Monomial: '*'-separated factors "xi" or "xi^k".
    std::vector<int> exponents(static_cast<std::size_t>(n_x), 0);
    std::stringstream stream(label);
    std::string factor;
    while (std::getline(stream, factor, '*')) {
        if (factor.empty()) throw std::invalid_argument("basis label: empty factor in '" + label + "'");
        int power = 1;
        const auto caret = factor.find('^');
        std::string name = factor;
        if (caret != std::string::npos) {
            name = factor.substr(0, caret);
            try {
                power = std::stoi(factor.substr(caret + 1));
            } catch (const std::exception &) {
                throw std::invalid_argument("basis label: bad exponent in '" + label + "'");
            }
            if (power < 1) throw std::invalid_argument("basis label: exponent must be positive in '" + label + "'");
        }
        exponents[static_cast<std::size_t>(parse_state_name(name, n_x))] += power;
    }
    return monomial(std::move(exponents));
}

double BasisFunction::eval(const Eigen::VectorXd &x) const {
    switch (kind) {
        case BasisKind::constant:
            return 1.0;
        case BasisKind::monomial: {
            double v = 1.0;
            for (std::size_t i = 0; i < exponents.size(); ++i)
                for (int e = 0; e < exponents[i]; ++e) v *= x[static_cast<Eigen::Index>(i)];
            return v;
        }
        case BasisKind::reciprocal: {
            const double t = x[target_state];
            if (t == 0.0)
                throw std::domain_error("basis term '" + label + "' undefined at x" +
                                        std::to_string(target_state + 1) + " = 0");
            return 1.0 / t;
        }
        case BasisKind::exponential:
            return std::exp(x[target_state]);
        case BasisKind::sine:
            return std::sin(x[target_state]);
        case BasisKind::cosine:
            return std::cos(x[target_state]);
    }
    throw std::logic_error("unreachable basis kind");
}

double BasisFunction::partial(const Eigen::VectorXd &x, int wrt) const {
    switch (kind) {
        case BasisKind::constant:
            return 0.0;
        case BasisKind::monomial: {
            const int e_wrt = exponents[static_cast<std::size_t>(wrt)];
            if (e_wrt == 0) return 0.0;
            double v = static_cast<double>(e_wrt);
            for (std::size_t i = 0; i < exponents.size(); ++i) {
                const int e = exponents[i] - (static_cast<int>(i) == wrt ? 1 : 0);
                for (int k = 0; k < e; ++k) v *= x[static_cast<Eigen::Index>(i)];
            }
            return v;
        }
        case BasisKind::reciprocal: {
            if (wrt != target_state) return 0.0;
            const double t = x[target_state];
            if (t == 0.0)
                throw std::domain_error("basis term '" + label + "' undefined at x" +
                                        std::to_string(target_state + 1) + " = 0");
            return -1.0 / (t * t);
        }
        case BasisKind::exponential:
            return wrt == target_state ? std::exp(x[target_state]) : 0.0;
        case BasisKind::sine:
            return wrt == target_state ? std::cos(x[target_state]) : 0.0;
        case BasisKind::cosine:
            return wrt == target_state ? -std::sin(x[target_state]) : 0.0;
    }
    throw std::logic_error("unreachable basis kind");
}

namespace {

std::vector<int> expo(int n_x, std::initializer_list<std::pair<int, int>> powers) {
    std::vector<int> e(static_cast<std::size_t>(n_x), 0);
    for (auto [state, p] : powers) e[static_cast<std::size_t>(state)] = p;
    return e;
}

std::vector<BasisFunction> default_terms_2d(int own) {
    const int oth = 1 - own;
    std::vector<BasisFunction> t;
    t.push_back(BasisFunction::constant());
    t.push_back(BasisFunction::monomial(expo(2, {{own, 1}})));
    t.push_back(BasisFunction::monomial(expo(2, {{oth, 1}})));
    t.push_back(BasisFunction::monomial(expo(2, {{own, 1}, {oth, 1}})));
    t.push_back(BasisFunction::monomial(expo(2, {{own, 2}})));
    t.push_back(BasisFunction::monomial(expo(2, {{oth, 2}})));
    t.push_back(BasisFunction::monomial(expo(2, {{own, 2}, {oth, 1}})));
    t.push_back(BasisFunction::monomial(expo(2, {{own, 1}, {oth, 2}})));
    t.push_back(BasisFunction::monomial(expo(2, {{own, 3}})));
    t.push_back(BasisFunction::monomial(expo(2, {{own, 4}})));
    t.push_back(BasisFunction::reciprocal(own));
    t.push_back(BasisFunction::exponential(own));
    t.push_back(BasisFunction::sine(own));
    t.push_back(BasisFunction::cosine(own));
    return t;
}

std::vector<BasisFunction> default_terms_3d(int own, int trig) {
    int a = -1, b = -1;  // the two other states, ascending
    for (int s = 0; s < 3; ++s) {
        if (s == own) continue;
        (a < 0 ? a : b) = s;
    }
    std::vector<BasisFunction> t;
    t.push_back(BasisFunction::constant());
    t.push_back(BasisFunction::monomial(expo(3, {{own, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{a, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{b, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 1}, {a, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 1}, {b, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{a, 1}, {b, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 2}})));
    t.push_back(BasisFunction::monomial(expo(3, {{a, 2}})));
    t.push_back(BasisFunction::monomial(expo(3, {{b, 2}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 2}, {a, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 1}, {a, 2}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 2}, {b, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 1}, {b, 2}})));
    t.push_back(BasisFunction::monomial(expo(3, {{a, 2}, {b, 1}})));
    t.push_back(BasisFunction::monomial(expo(3, {{a, 1}, {b, 2}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 3}})));
    t.push_back(BasisFunction::monomial(expo(3, {{own, 4}})));
    t.push_back(BasisFunction::reciprocal(own));
    t.push_back(BasisFunction::exponential(own));
    t.push_back(BasisFunction::sine(trig));
    t.push_back(BasisFunction::cosine(trig));
    return t;
}

}  // namespace

Dictionary Dictionary::defaults(int n_x) {
    Dictionary d;
    d.n_x = n_x;
    if (n_x == 2) {
        d.per_state.push_back(default_terms_2d(0));
        d.per_state.push_back(default_terms_2d(1));
    } else if (n_x == 3) {
        // Trig pair targets: x1 for state 1, x3 for states 2 and 3.
        d.per_state.push_back(default_terms_3d(0, 0));
        d.per_state.push_back(default_terms_3d(1, 2));
        d.per_state.push_back(default_terms_3d(2, 2));
    } else {
        throw std::invalid_argument(
            "no built-in dictionary for n_x=" + std::to_string(n_x) +
            "; supported dimensions are 2 and 3 -- construct a custom Dictionary");
    }
    d.validate();
    return d;
}

Dictionary Dictionary::shared(int n_x, std::vector<BasisFunction> terms) {
    Dictionary d;
    d.n_x = n_x;
    d.per_state.assign(static_cast<std::size_t>(n_x), terms);
    d.validate();
    return d;
}

Eigen::Index Dictionary::total_terms() const {
    Eigen::Index n = 0;
    for (const auto &list : per_state) n += static_cast<Eigen::Index>(list.size());
    return n;
}

Eigen::VectorXd Dictionary::eval_row(int state, const Eigen::VectorXd &x) const {
    if (!x.allFinite()) throw std::domain_error("eval_row: non-finite state vector");
    const auto &list = per_state[static_cast<std::size_t>(state)];
    Eigen::VectorXd row(static_cast<Eigen::Index>(list.size()));
    for (std::size_t k = 0; k < list.size(); ++k)
        row[static_cast<Eigen::Index>(k)] = list[k].eval(x);
    return row;
}

Eigen::MatrixXd Dictionary::eval_jacobian(int state, const Eigen::VectorXd &x) const {
    if (!x.allFinite()) throw std::domain_error("eval_jacobian: non-finite state vector");
    const auto &list = per_state[static_cast<std::size_t>(state)];
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(list.size()), n_x);
    for (std::size_t k = 0; k < list.size(); ++k)
        for (int i = 0; i < n_x; ++i)
            jac(static_cast<Eigen::Index>(k), i) = list[k].partial(x, i);
    return jac;
}

void Dictionary::validate() const {
    if (static_cast<int>(per_state.size()) != n_x)
        throw std::invalid_argument("Dictionary: per_state size does not match n_x");
    for (const auto &list : per_state) {
        std::set<std::string> labels;
        for (const auto &term : list)
            if (!labels.insert(term.label).second)
                throw std::invalid_argument("Dictionary: duplicate term '" + term.label + "'");
    }
}

std::string Dictionary::to_json() const {
    nlohmann::json out;
    out["n_x"] = n_x;
    out["per_state"] = nlohmann::json::array();
    for (const auto &list : per_state) {
        nlohmann::json labels = nlohmann::json::array();
        for (const auto &term : list) labels.push_back(term.label);
        out["per_state"].push_back(labels);
    }
    return out.dump(2);
}

Dictionary Dictionary::from_json(const std::string &text) {
    const auto in = nlohmann::json::parse(text);
    Dictionary d;
    d.n_x = in.at("n_x").get<int>();
    for (const auto &labels : in.at("per_state")) {
        std::vector<BasisFunction> list;
        for (const auto &label : labels)
            list.push_back(BasisFunction::parse(label.get<std::string>(), d.n_x));
        d.per_state.push_back(std::move(list));
    }
    d.validate();
    return d;
}

Eigen::VectorXd model_rhs(const Dictionary &d, const CoefficientMatrix &xi,
                          const Eigen::VectorXd &x) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(d.n_x);
    for (int j = 0; j < d.n_x; ++j) {
        const auto &list = d.per_state[static_cast<std::size_t>(j)];
        const auto &col = xi.values[static_cast<std::size_t>(j)];
        const auto &mask = xi.active[static_cast<std::size_t>(j)];
        double acc = 0.0;
        for (std::size_t k = 0; k < list.size(); ++k)
            if (mask[k]) acc += col[static_cast<Eigen::Index>(k)] * list[k].eval(x);
        out[j] = acc;
    }
    return out;
}

}  // namespace mhsid
