#ifndef MHSID_MHO_HPP
#define MHSID_MHO_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mhsid/dnlp.hpp"
#include "mhsid/preprocess.hpp"

namespace mhsid {

struct MovingHorizonConfig {
    double horizon_time = 6.0;  // H, time units; converts to samples via the grid spacing
    int data_step = 100;        // window shift, samples
    int threshold_every = 10;   // windows per thresholding round
    int stable_rounds = 40;     // rounds with unchanged dictionary size for convergence
    double cv_tolerance = 1.0;  // coefficient-of-variation pruning threshold
    // Minimum fraction of the state's derivative RMS a term must account for
    // (|mean coefficient| x term RMS / derivative RMS); terms below it are
    // pruned regardless of dispersion. Dispersion alone cannot remove a term
    // whose estimates are tiny but reproducible, which is exactly how
    // spurious terms behave on clean data.
    double contribution_floor = 1e-3;
    int protected_steps = 2;    // rounds during which protected terms are immune
    // Protected labels; the placeholder "x_j" expands to each state's own
    // linear term.
    std::vector<std::string> protected_terms = {"1", "x_j"};
    int n_elements = 50;
    int collocation_points = 3;
    CollocationScheme scheme = CollocationScheme::radau;
    double interval_alpha = 1e-6;  // bound recomputation after pruning
    DnlpOptions dnlp;
};

/// Sliding sample ranges [i*step, H_samples + i*step) while the end fits.
std::vector<std::pair<Eigen::Index, Eigen::Index>> window_indices(Eigen::Index m,
                                                                  Eigen::Index h_samples,
                                                                  Eigen::Index step);

/// Per-(term, state) dispersion pruning over one span of window estimates.
/// estimates[w][state] are full-size coefficient vectors; entries outside the
/// current mask stay pruned. Returns the updated mask.
///
/// Two dispersion regimes per state: a term whose estimates drift with
/// absolute spread on the order of the coefficient itself (both sd/|mean| and
/// var/|mean| at or above gamma) marks a "drift" round, in which only such
/// terms are pruned. Large drifting terms destabilize every estimate that is
/// collinear with them, so pruning by relative dispersion alone in that state
/// would also remove well-determined small-magnitude terms whose scatter is
/// collateral. Once no drifting terms remain, relative dispersion sd/|mean|
/// >= gamma prunes. Terms whose contribution falls below contribution_floor
/// (see term_scale) are pruned in either regime.
std::vector<std::vector<std::uint8_t>> threshold_round(
    const std::vector<std::vector<Eigen::VectorXd>> &estimates,
    const std::vector<std::vector<std::uint8_t>> &mask, const Dictionary &d, double gamma,
    int round_index, int protected_steps, const std::vector<std::string> &protected_terms,
    const std::vector<Eigen::VectorXd> *term_scale = nullptr, double contribution_floor = 0.0);

/// Per-state contribution scale of each dictionary term: RMS of the evaluated
/// term column over the data divided by the RMS of the state's differenced
/// derivative. Multiplying a coefficient by this scale gives the fraction of
/// the state's dynamics the term accounts for.
std::vector<Eigen::VectorXd> contribution_scales(const TimeSeries &smoothed, const Dictionary &d);

struct DiscoveryTrace {
    struct WindowRecord {
        int index = 0;
        Eigen::Index start = 0, end = 0;
        bool solved = false;
        double objective = 0.0;
        double feasibility = 0.0;
        std::string message;
        std::vector<Eigen::VectorXd> xi;  // full-size per state (solved windows)
    };
    struct RoundRecord {
        int round = 0;
        Eigen::Index kept_before = 0, kept_after = 0;
        std::vector<Eigen::VectorXd> cv;  // per state, +inf where undefined
    };
    std::vector<WindowRecord> windows;
    std::vector<RoundRecord> rounds;
    bool converged = false;
    int convergence_window = -1;
    std::string note;

    std::string to_json() const;
};

struct DiscoveredModel {
    Dictionary dictionary;
    std::vector<std::vector<std::uint8_t>> active;
    std::vector<Eigen::VectorXd> coefficients;  // averaged; zero on inactive entries
    bool converged = false;
    int rounds_used = 0;
    std::string config_hash;
    std::vector<int> averaged_windows;

    std::string to_json() const;
    static DiscoveredModel from_json(const std::string &text);
    std::string equations_text() const;
    CoefficientMatrix to_coefficients() const;
};

/// The moving-horizon loop: solve the window NLP, threshold every
/// threshold_every windows, retighten bounds after each pruning, stop after
/// stable_rounds unchanged rounds (averaging the final span of estimates) or
/// when the data run out.
std::pair<DiscoveredModel, DiscoveryTrace> run_discovery(const TimeSeries &smoothed,
                                                         const PreprocessReport &report,
                                                         const Dictionary &d,
                                                         const MovingHorizonConfig &cfg);

}  // namespace mhsid

#endif
