#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionshuttle {

enum class Tag { Dark, Bright, Discard };

/// counts < dark -> dark, counts > bright -> bright, otherwise discarded.
/// dark == bright + 1 leaves no discard window.
struct Thresholds {
    int dark = 0;  // t_d
    int bright = 0;  // t_b

    void validate() const;
};

Tag classify(int count, const Thresholds& t);

enum class PreparedState { Dark = 0, Bright = 1 };

struct CalibrationTrial {
    std::int64_t id = 0;
    PreparedState prepared = PreparedState::Dark;
    std::int64_t transports = 0;  // M
    int count = 0;  // photons
    bool veto = false;  // rejected by the cooling-fluorescence monitor
};

/// Calibration runs with prepared |0> (dark) or |1> (bright).
struct PreparedStateRecord {
    std::vector<CalibrationTrial> trials;

    std::vector<int> counts(PreparedState s) const;  // vetoed trials excluded
    void validate() const;
};

using Histogram = std::vector<std::uint64_t>;  // index = photon count

Histogram make_histogram(const std::vector<int>& counts);

/// Identification probabilities of one histogram pair at fixed thresholds. The
/// probabilities are conditional on the trial not being discarded.
struct ThresholdCandidate {
    Thresholds thresholds;
    double p_bb = 0.0;
    double p_db = 0.0;
    double discard_fraction = 0.0;  // over both histograms
};

ThresholdCandidate evaluate_thresholds(const Histogram& dark, const Histogram& bright, const Thresholds& t);

struct DetectionCalibration {
    Histogram dark_hist;
    Histogram bright_hist;
    Thresholds thresholds;
    double p_bb = 0.0;
    double p_db = 0.0;
    double discard_fraction = 0.0;
};

/// Feasible threshold pairs satisfy p_bb >= min_p_bb, p_db >= min_p_db and
/// (1 - p_bb) + (1 - p_db) <= max_total_error; among them the smallest discard
/// fraction wins (ties: smaller t_d, then smaller t_b).
struct ThresholdObjective {
    double min_p_bb = 0.0;
    double min_p_db = 0.0;
    double max_total_error = 2.0;

    static ThresholdObjective targets(double p_bb, double p_db) { return {p_bb, p_db, 2.0}; }
    static ThresholdObjective total_error(double e) { return {0.0, 0.0, e}; }
};

class ThresholdObjectiveError : public std::runtime_error {
public:
    ThresholdObjectiveError(const std::string& what, std::vector<ThresholdCandidate> frontier)
        : std::runtime_error(what), frontier_(std::move(frontier)) {}
    /// Pairs not dominated in (p_bb, p_db, -discard).
    const std::vector<ThresholdCandidate>& frontier() const noexcept { return frontier_; }

private:
    std::vector<ThresholdCandidate> frontier_;
};

DetectionCalibration calibrate_thresholds(const PreparedStateRecord& record, const ThresholdObjective& objective);

/// Probability of a bright tag given bright probability p_b.
inline double tagged_bright_probability(double p_b, double p_bb, double p_db) {
    return p_b * p_bb + (1.0 - p_b) * (1.0 - p_db);
}

struct Density {
    std::vector<double> x;
    std::vector<double> value;

    double mode() const;
    double integral() const;  // trapezoid
};

/// rho(p_b | b, N) on `points` equally spaced nodes of [0, 1], uniform prior.
Density posterior_density(std::int64_t bright, std::int64_t trials, double p_bb, double p_db,
                          std::size_t points = 2001);

struct IdCell {
    double p_bb = 0.0;
    double p_db = 0.0;
    double weight = 0.0;
};

struct IdGrid {
    std::vector<IdCell> cells;
    std::size_t bins_bb = 0;  // marginal bins after merging identical ones
    std::size_t bins_db = 0;
    std::size_t resamples = 0;
    std::size_t redrawn = 0;  // degenerate resamples that were replaced
    std::vector<double> samples_bb;  // per resample, in resample order
    std::vector<double> samples_db;

    double total_weight() const;
};

/// Resamples each prepared-state trial set with replacement `resamples` times and
/// bins the resulting (p_bb, p_db) marginals into `bins` equal-count bins each.
IdGrid bootstrap_id_grid(const PreparedStateRecord& record, const Thresholds& thresholds,
                         std::size_t resamples, std::uint64_t seed, std::size_t bins = 10, int jobs = 1);

struct BiasCorrected {
    double p_bb = 0.0;
    double p_db = 0.0;
};

/// Unbiased identification probabilities given preparation fidelity F_p and
/// pi-pulse fidelity F_pi.
BiasCorrected bias_correct(double p_bb, double p_db, double f_prep, double f_pi);

/// Inverse of the biased pair: p_bb, p_db that unbiased values produce after
/// imperfect preparation.
BiasCorrected bias_forward(double pbar_bb, double pbar_db, double f_prep, double f_pi);

struct Unfolded {
    double bright = 0.0;
    double dark = 0.0;
};

/// (b, d) = M^-1 (b~, d~) with M = [[p_bb, 1 - p_db], [1 - p_bb, p_db]].
Unfolded unfold_counts(double bright_tagged, double dark_tagged, double p_bb, double p_db);

}  // namespace ionshuttle
