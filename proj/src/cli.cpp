#include "mhsid/cli.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mhsid {

namespace {

int verbosity() {
    const char *env = std::getenv("MHSID_LOG");
    return env ? std::atoi(env) : 1;
}

void log_line(const std::string &msg) {
    if (verbosity() > 0) std::fprintf(stderr, "%s\n", msg.c_str());
}

std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
}

std::string fnv_hash(const std::string &content) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : content) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace

RunConfig RunConfig::defaults_for(const std::string &system) {
    RunConfig cfg;
    cfg.system = system;
    cfg.smoothing = SmoothingConfig{11, 10, 2, 0.1};
    cfg.preprocess.granger_significance = 0.1;
    cfg.preprocess.restricted_lag = 1;
    cfg.preprocess.interval_alpha = 1e-6;
    cfg.mho.threshold_every = 10;
    cfg.mho.stable_rounds = 40;
    cfg.mho.cv_tolerance = 1.0;
    cfg.mho.collocation_points = 3;
    if (system == "lotka_volterra") {
        cfg.preprocess.ols_significance = 0.9;
        cfg.mho.horizon_time = 6.0;
        cfg.mho.data_step = 100;
        cfg.mho.n_elements = 50;
    } else if (system == "van_der_pol") {
        cfg.preprocess.ols_significance = 0.8;
        cfg.mho.horizon_time = 20.0;
        cfg.mho.data_step = 50;
        cfg.mho.n_elements = 80;
    } else if (system == "brusselator") {
        cfg.preprocess.ols_significance = 0.8;
        cfg.mho.horizon_time = 10.0;
        cfg.mho.data_step = 100;
        cfg.mho.n_elements = 60;
    } else if (system == "lorenz") {
        cfg.preprocess.ols_significance = 0.7;
        cfg.mho.horizon_time = 2.0;
        cfg.mho.data_step = 100;
        cfg.mho.n_elements = 50;
    } else {
        throw std::invalid_argument("unknown benchmark system '" + system + "'");
    }
    return cfg;
}

double RunConfig::horizon_end() const {
    if (t_end > 0.0) return t_end;
    return BenchmarkSystem::by_name(system).t_end;
}

Eigen::VectorXd RunConfig::sigma_vector(int n_x) const {
    if (!sigma_per_state.empty()) {
        if (static_cast<int>(sigma_per_state.size()) != n_x)
            throw std::invalid_argument("sigma_per_state length does not match the state count");
        return Eigen::Map<const Eigen::VectorXd>(sigma_per_state.data(), n_x);
    }
    return Eigen::VectorXd::Constant(n_x, sigma);
}

std::string RunConfig::to_json() const {
    nlohmann::json out;
    out["system"] = system;
    out["input_csv"] = input_csv;
    out["out_dir"] = out_dir;
    out["t_end"] = t_end;
    out["smoothing"] = {{"initial_window", smoothing.initial_window},
                        {"step", smoothing.step},
                        {"poly_order", smoothing.poly_order},
                        {"alpha", smoothing.alpha}};
    out["preprocess"] = {{"granger_significance", preprocess.granger_significance},
                         {"restricted_lag", preprocess.restricted_lag},
                         {"enforce_stationarity", preprocess.enforce_stationarity},
                         {"ols_significance", preprocess.ols_significance},
                         {"interval_alpha", preprocess.interval_alpha}};
    out["mho"] = {{"horizon_time", mho.horizon_time},
                  {"data_step", mho.data_step},
                  {"threshold_every", mho.threshold_every},
                  {"stable_rounds", mho.stable_rounds},
                  {"cv_tolerance", mho.cv_tolerance},
                  {"contribution_floor", mho.contribution_floor},
                  {"protected_steps", mho.protected_steps},
                  {"protected_terms", mho.protected_terms},
                  {"n_elements", mho.n_elements},
                  {"collocation_points", mho.collocation_points},
                  {"scheme", mho.scheme == CollocationScheme::radau ? "radau" : "legendre"},
                  {"interval_alpha", mho.interval_alpha}};
    out["dnlp"] = {{"lambda", mho.dnlp.lambda},
                   {"regularizer", mho.dnlp.regularizer == Regularizer::none
                                       ? "none"
                                       : (mho.dnlp.regularizer == Regularizer::l2 ? "l2"
                                                                                  : "smooth_l1")},
                   {"tol_feas", mho.dnlp.tol_feas},
                   {"tol_opt", mho.dnlp.tol_opt},
                   {"max_outer", mho.dnlp.max_outer},
                   {"max_inner", mho.dnlp.max_inner}};
    out["noise"] = {{"sigma", sigma},
                    {"sigma_per_state", sigma_per_state},
                    {"seed", seed},
                    {"replications", replications}};
    out["baseline"] = {{"lambda", baseline_lambda}, {"rho", baseline_rho}};
    return out.dump(2);
}

RunConfig RunConfig::from_json(const std::string &text) {
    const auto in = nlohmann::json::parse(text);
    RunConfig cfg = defaults_for(in.value("system", std::string("lotka_volterra")));
    cfg.input_csv = in.value("input_csv", cfg.input_csv);
    cfg.out_dir = in.value("out_dir", cfg.out_dir);
    cfg.t_end = in.value("t_end", cfg.t_end);
    if (in.contains("smoothing")) {
        const auto &s = in["smoothing"];
        cfg.smoothing.initial_window = s.value("initial_window", cfg.smoothing.initial_window);
        cfg.smoothing.step = s.value("step", cfg.smoothing.step);
        cfg.smoothing.poly_order = s.value("poly_order", cfg.smoothing.poly_order);
        cfg.smoothing.alpha = s.value("alpha", cfg.smoothing.alpha);
    }
    if (in.contains("preprocess")) {
        const auto &p = in["preprocess"];
        cfg.preprocess.granger_significance =
            p.value("granger_significance", cfg.preprocess.granger_significance);
        cfg.preprocess.restricted_lag = p.value("restricted_lag", cfg.preprocess.restricted_lag);
        cfg.preprocess.enforce_stationarity =
            p.value("enforce_stationarity", cfg.preprocess.enforce_stationarity);
        cfg.preprocess.ols_significance =
            p.value("ols_significance", cfg.preprocess.ols_significance);
        cfg.preprocess.interval_alpha = p.value("interval_alpha", cfg.preprocess.interval_alpha);
    }
    if (in.contains("mho")) {
        const auto &m = in["mho"];
        cfg.mho.horizon_time = m.value("horizon_time", cfg.mho.horizon_time);
        cfg.mho.data_step = m.value("data_step", cfg.mho.data_step);
        cfg.mho.threshold_every = m.value("threshold_every", cfg.mho.threshold_every);
        cfg.mho.stable_rounds = m.value("stable_rounds", cfg.mho.stable_rounds);
        cfg.mho.cv_tolerance = m.value("cv_tolerance", cfg.mho.cv_tolerance);
        cfg.mho.contribution_floor = m.value("contribution_floor", cfg.mho.contribution_floor);
        cfg.mho.protected_steps = m.value("protected_steps", cfg.mho.protected_steps);
        cfg.mho.protected_terms = m.value("protected_terms", cfg.mho.protected_terms);
        cfg.mho.n_elements = m.value("n_elements", cfg.mho.n_elements);
        cfg.mho.collocation_points = m.value("collocation_points", cfg.mho.collocation_points);
        const std::string scheme = m.value("scheme", std::string("radau"));
        if (scheme == "radau")
            cfg.mho.scheme = CollocationScheme::radau;
        else if (scheme == "legendre")
            cfg.mho.scheme = CollocationScheme::legendre;
        else
            throw std::invalid_argument("unknown collocation scheme '" + scheme + "'");
        cfg.mho.interval_alpha = m.value("interval_alpha", cfg.mho.interval_alpha);
    }
    if (in.contains("dnlp")) {
        const auto &d = in["dnlp"];
        cfg.mho.dnlp.lambda = d.value("lambda", cfg.mho.dnlp.lambda);
        const std::string reg = d.value("regularizer", std::string("none"));
        if (reg == "none")
            cfg.mho.dnlp.regularizer = Regularizer::none;
        else if (reg == "l2")
            cfg.mho.dnlp.regularizer = Regularizer::l2;
        else if (reg == "smooth_l1")
            cfg.mho.dnlp.regularizer = Regularizer::smooth_l1;
        else
            throw std::invalid_argument("unknown regularizer '" + reg + "'");
        cfg.mho.dnlp.tol_feas = d.value("tol_feas", cfg.mho.dnlp.tol_feas);
        cfg.mho.dnlp.tol_opt = d.value("tol_opt", cfg.mho.dnlp.tol_opt);
        cfg.mho.dnlp.max_outer = d.value("max_outer", cfg.mho.dnlp.max_outer);
        cfg.mho.dnlp.max_inner = d.value("max_inner", cfg.mho.dnlp.max_inner);
    }
    if (in.contains("noise")) {
        const auto &n = in["noise"];
        cfg.sigma = n.value("sigma", cfg.sigma);
        cfg.sigma_per_state = n.value("sigma_per_state", cfg.sigma_per_state);
        cfg.seed = n.value("seed", cfg.seed);
        cfg.replications = n.value("replications", cfg.replications);
    }
    if (in.contains("baseline")) {
        cfg.baseline_lambda = in["baseline"].value("lambda", cfg.baseline_lambda);
        cfg.baseline_rho = in["baseline"].value("rho", cfg.baseline_rho);
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string &path) { return from_json(read_file(path)); }

void RunConfig::save(const std::string &path) const { write_file(path, to_json() + "\n"); }

namespace {

TimeSeries generate_data(const RunConfig &cfg, std::uint64_t seed) {
    const auto system = BenchmarkSystem::by_name(cfg.system);
    const double dt = 1.0 / system.sampling_frequency;
    TimeSeries clean = simulate(system, 0.0, cfg.horizon_end(), dt);
    NoiseSpec spec{cfg.sigma_vector(system.n_x), seed};
    return contaminate(clean, spec);
}

TimeSeries obtain_data(const RunConfig &cfg, std::uint64_t seed) {
    if (!cfg.input_csv.empty()) return read_csv(cfg.input_csv);
    return generate_data(cfg, seed);
}

/// One smoothing → preprocessing → discovery pass into out_dir. Returns the
/// command exit code.
int discover_one(const RunConfig &cfg, const TimeSeries &raw, const std::string &out_dir) {
    std::filesystem::create_directories(out_dir);
    const SmoothingResult smooth = iterative_smooth(raw, cfg.smoothing);
    const Dictionary d = Dictionary::defaults(static_cast<int>(raw.states()));
    const PreprocessReport report = run_preprocess(smooth.smoothed, d, cfg.preprocess);
    write_file(out_dir + "/preprocess.json", report.to_json() + "\n");
    auto [model, trace] = run_discovery(smooth.smoothed, report, d, cfg.mho);
    write_file(out_dir + "/model.json", model.to_json() + "\n");
    write_file(out_dir + "/trace.json", trace.to_json() + "\n");
    write_file(out_dir + "/equations.txt", model.equations_text());
    log_line("discover: " + out_dir + (model.converged ? " converged" : " not converged"));
    return model.converged ? exit_ok : exit_not_converged;
}

}  // namespace

int cmd_simulate(const RunConfig &cfg) {
    BenchmarkSystem system;
    try {
        system = BenchmarkSystem::by_name(cfg.system);
    } catch (const std::invalid_argument &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_input_error;
    }
    try {
        std::filesystem::create_directories(cfg.out_dir);
        const double dt = 1.0 / system.sampling_frequency;
        const TimeSeries clean = simulate(system, 0.0, cfg.horizon_end(), dt);
        const std::string clean_path = cfg.out_dir + "/" + cfg.system + "_clean.csv";
        write_csv(clean, clean_path);

        nlohmann::json manifest;
        manifest["system"] = cfg.system;
        manifest["sigma"] = cfg.sigma;
        manifest["files"] = nlohmann::json::object();
        manifest["files"][cfg.system + "_clean.csv"] = fnv_hash(read_file(clean_path));
        manifest["seeds"] = nlohmann::json::array();
        for (int r = 0; r < cfg.replications; ++r) {
            const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
            NoiseSpec spec{cfg.sigma_vector(system.n_x), seed};
            const TimeSeries noisy = contaminate(clean, spec);
            const std::string name =
                cfg.system + "_noisy_seed" + std::to_string(seed) + ".csv";
            write_csv(noisy, cfg.out_dir + "/" + name);
            manifest["seeds"].push_back(seed);
            manifest["files"][name] = fnv_hash(read_file(cfg.out_dir + "/" + name));
        }
        write_file(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");
        return exit_ok;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_internal;
    }
}

int cmd_discover(const RunConfig &cfg) {
    if (cfg.replications <= 1) {
        TimeSeries raw;
        try {
            raw = obtain_data(cfg, cfg.seed);
        } catch (const std::exception &e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return exit_input_error;
        }
        try {
            return discover_one(cfg, raw, cfg.out_dir);
        } catch (const std::invalid_argument &e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return exit_input_error;
        } catch (const std::exception &e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return exit_internal;
        }
    }

    if (!cfg.input_csv.empty()) {
        std::fprintf(stderr, "error: --replications needs simulated data, not an input CSV\n");
        return exit_input_error;
    }
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<int> codes(static_cast<std::size_t>(cfg.replications), exit_internal);
    std::vector<std::string> errors(static_cast<std::size_t>(cfg.replications));
    const unsigned n_workers =
        std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                           static_cast<unsigned>(cfg.replications));
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < n_workers; ++w) {
        workers.emplace_back([&, w] {
            for (int r = static_cast<int>(w); r < cfg.replications;
                 r += static_cast<int>(n_workers)) {
                const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
                const std::string dir = cfg.out_dir + "/rep_" + std::to_string(r);
                try {
                    const TimeSeries raw = generate_data(cfg, seed);
                    codes[static_cast<std::size_t>(r)] = discover_one(cfg, raw, dir);
                } catch (const std::exception &e) {
                    errors[static_cast<std::size_t>(r)] = e.what();
                }
            }
        });
    }
    for (auto &t : workers) t.join();

    nlohmann::json summary;
    summary["replications"] = cfg.replications;
    summary["runs"] = nlohmann::json::array();
    int worst = exit_ok;
    for (int r = 0; r < cfg.replications; ++r) {
        nlohmann::json run{{"replication", r},
                           {"seed", cfg.seed + static_cast<std::uint64_t>(r)},
                           {"exit_code", codes[static_cast<std::size_t>(r)]}};
        if (!errors[static_cast<std::size_t>(r)].empty())
            run["error"] = errors[static_cast<std::size_t>(r)];
        summary["runs"].push_back(run);
        worst = std::max(worst, codes[static_cast<std::size_t>(r)]);
    }
    write_file(cfg.out_dir + "/summary.json", summary.dump(2) + "\n");
    return worst;
}

int cmd_validate(const RunConfig &cfg, const std::string &model_json_path) {
    DiscoveredModel model;
    BenchmarkSystem reference;
    try {
        model = DiscoveredModel::from_json(read_file(model_json_path));
        reference = BenchmarkSystem::by_name(cfg.system);
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_input_error;
    }
    try {
        std::filesystem::create_directories(cfg.out_dir);
        const ValidationReport report = validate(model, reference, 0.0, cfg.horizon_end());
        write_file(cfg.out_dir + "/report.json", report.to_json() + "\n");
        write_comparison_csv(report, cfg.out_dir + "/comparison.csv");
        if (report.blew_up)
            log_line("validate: model trajectory diverged at t=" +
                     std::to_string(report.blowup_time));
        return exit_ok;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_internal;
    }
}

int cmd_baseline(const RunConfig &cfg) {
    TimeSeries raw;
    try {
        raw = obtain_data(cfg, cfg.seed);
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_input_error;
    }
    try {
        std::filesystem::create_directories(cfg.out_dir);
        const SmoothingResult smooth = iterative_smooth(raw, cfg.smoothing);
        const Dictionary d = Dictionary::defaults(static_cast<int>(raw.states()));
        const DerivativeMatrix deriv = central_differences(smooth.smoothed);

        nlohmann::json out;
        out["lambda"] = cfg.baseline_lambda;
        out["rho"] = cfg.baseline_rho;
        out["states"] = nlohmann::json::array();
        for (int j = 0; j < d.n_x; ++j) {
            const Eigen::MatrixXd theta = dictionary_data_matrix(smooth.smoothed, d, j);
            const BaselineResult res = baseline_sparse_regression(
                theta, deriv.values.col(j), cfg.baseline_lambda, cfg.baseline_rho);
            nlohmann::json state;
            state["labels"] = nlohmann::json::array();
            state["coefficients"] = nlohmann::json::array();
            for (Eigen::Index k = 0; k < d.terms(j); ++k) {
                state["labels"].push_back(
                    d.per_state[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].label);
                state["coefficients"].push_back(res.coefficients[k]);
            }
            state["stationarity"] = res.stationarity;
            state["sweeps"] = res.sweeps;
            out["states"].push_back(state);
        }
        write_file(cfg.out_dir + "/baseline.json", out.dump(2) + "\n");
        return exit_ok;
    } catch (const std::invalid_argument &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_input_error;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_internal;
    }
}

}  // namespace mhsid
