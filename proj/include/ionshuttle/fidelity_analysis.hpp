#pragma once

// Likelihood analysis of Ramsey fringes and fluorescence tracking data.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ionshuttle/detection_stats.hpp"

namespace ionshuttle {

struct RamseyPoint {
    double phase = 0.0;  // rad
    std::int64_t bright = 0;  // b~, bright-tagged trials
    std::int64_t trials = 0;  // N, non-discarded trials
};

struct RamseyDataset {
    std::vector<RamseyPoint> points;
    std::int64_t transports = 0;  // M
    double precession_time = 0.0;  // s

    void validate() const;
};

/// p_b(phi) = B + A sin(phi - Phi).
struct RamseyFit {
    double amplitude = 0.0;
    double offset = 0.0;
    double phase = 0.0;
    /// sum_k b~ log q + (N - b~) log(1 - q), the log posterior up to a data-only constant.
    double log_likelihood = 0.0;
};

/// Binomial log-likelihood kernel of the fringe parameters.
double ramsey_log_likelihood(const RamseyDataset& data, double p_bb, double p_db, double amplitude,
                             double offset, double phase);

RamseyFit fit_ramsey(const RamseyDataset& data, double p_bb, double p_db);

/// Best (B, Phi) at fixed A. `start` seeds the local search.
RamseyFit fit_ramsey_fixed_amplitude(const RamseyDataset& data, double p_bb, double p_db, double amplitude,
                                     const std::optional<RamseyFit>& start = std::nullopt);

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
};

/// Log-likelihood on a strictly increasing grid, normalized so that exp(values)
/// integrates to one (trapezoid rule).
struct LikelihoodCurve {
    std::vector<double> grid;
    std::vector<double> log_likelihood;
    double log_normalization = 0.0;  // subtracted from the raw log-likelihood
    double mode = 0.0;
    ConfidenceInterval interval;  // log-likelihood within 0.5 of its maximum

    static LikelihoodCurve from_log(std::vector<double> grid, std::vector<double> log_values);
    static LikelihoodCurve from_density(std::vector<double> grid, const std::vector<double>& density);

    /// Normalized density at x, linear between nodes and zero outside the grid.
    double density(double x) const;
    std::vector<double> densities() const;
};

/// n equally spaced amplitudes on [0, 0.5].
std::vector<double> amplitude_grid(std::size_t n = 2001);

LikelihoodCurve profile_likelihood_A(const RamseyDataset& data, double p_bb, double p_db,
                                     const std::vector<double>& a_grid);

/// Weighted mixture of the per-cell profile likelihoods.
LikelihoodCurve average_likelihood(const RamseyDataset& data, const IdGrid& grid, const std::vector<double>& a_grid,
                                   int jobs = 1);

struct FidelityGridOptions {
    std::size_t points = 4001;
    double half_width_sigmas = 12.0;
};

/// Likelihood of F = (A_hi / A_lo)^(1 / (M_hi - M_lo)).
LikelihoodCurve fidelity_likelihood(const LikelihoodCurve& lo, const LikelihoodCurve& hi, std::int64_t m_lo,
                                    std::int64_t m_hi, const FidelityGridOptions& options = {});

struct FailureAdjusted {
    double fidelity = 0.0;
    double sigma = 0.0;
};

/// Rescales F for M_f transports that did not happen.
FailureAdjusted adjust_for_failures(double fidelity, double failed, std::int64_t m_lo, std::int64_t m_hi,
                                    double sigma);

// Dephasing relations.
struct DephasingParams {
    double decay_rate = 0.0;  // lambda, 1/s^2
    double phase_width = 0.0;  // sigma_phi, rad
    double frequency_per_field = 0.0;  // dnu/dB, Hz/T
    double field_gradient = 0.0;  // dB/dx, T/m
    double field = 0.0;  // B, T
    double transport_time = 0.0;  // s

    void validate() const;
};

double contrast_factor(double phase_width);
/// sqrt(-2 ln F); F must lie in (0, 1].
double phase_width_from_fidelity(double fidelity);
double position_sensitivity(double frequency_per_field, double field_gradient);  // Hz/m
double transition_shift(double sensitivity, double distance);  // Hz
double ramsey_phase(double detuning, double time);  // rad
/// Spread of transport positions that produces the phase spread sigma_phi.
double position_width(double phase_width, double time, double sensitivity);  // m
double static_decay_amplitude(double decay_rate, double time);

struct DephasingReport {
    double contrast_factor = 0.0;
    double sensitivity = 0.0;  // Hz/m
    double position_width = 0.0;  // m, from phase_width over transport_time
    double shift_over_distance = 0.0;  // Hz, for the distance passed in
};

DephasingReport dephasing_toolbox(const DephasingParams& params, double distance);

struct TrackingRun {
    std::int64_t skipped = 0;  // M_s round trips skipped on purpose
    double photons = 0.0;  // total over the run
};

struct GaussianPrior {
    double mean = 0.0;
    double sigma = 0.0;
};

struct TrackingDataset {
    std::vector<TrackingRun> runs;
    std::int64_t transports = 0;  // M
    GaussianPrior dark_total;  // prior on F_d * M, photons per run

    void validate() const;
};

/// Expected photons per run for per-flash rates F_b, F_d.
double expected_tracking_photons(double f_s, double f_bright, double f_dark, std::int64_t m, std::int64_t m_s);

struct LinearFit {
    double slope = 0.0;
    double offset = 0.0;
    double slope_error = 0.0;
    double offset_error = 0.0;
};

struct TrackingFit {
    double failure = 0.0;  // f_s
    ConfidenceInterval failure_interval;
    double fidelity = 0.0;  // 1 - f_s
    ConfidenceInterval fidelity_interval;
    double bright_rate = 0.0;  // F_b
    double dark_rate = 0.0;  // F_d
    double log_likelihood = 0.0;
    LinearFit linear;  // mean photons against M_s
    double linear_failure = 0.0;  // f_s implied by the linear fit and the prior
    double linear_failure_error = 0.0;
};

TrackingFit fit_transport_fidelity(const TrackingDataset& data);

/// f_s from the slope and offset of mean fluorescence against M_s, given F_d * M.
struct LinearCrossCheck {
    double failure = 0.0;
    double error = 0.0;
};

LinearCrossCheck failure_from_linear_fit(const LinearFit& fit, const GaussianPrior& dark_total, std::int64_t m);

}  // namespace ionshuttle
