#pragma once

// Synthetic measurement records with known ground truth, and classical ion
// motion under a voltage ramp.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ionshuttle/detection_stats.hpp"
#include "ionshuttle/errors.hpp"
#include "ionshuttle/fidelity_analysis.hpp"
#include "ionshuttle/trap_model.hpp"
#include "ionshuttle/waveform_synth.hpp"

namespace ionshuttle {

/// Photon-count distribution of one state: Poisson(mean), except that with
/// probability `leakage` the state changes at a uniformly distributed moment of
/// the detection window and the rate switches to the other state's mean.
struct CountShape {
    double mean = 0.0;
    double leakage = 0.0;
};

struct GroundTruth {
    double fidelity = 1.0;  // per transport
    double offset = 0.5;  // B
    double phase = 0.0;  // Phi, rad
    double decay_rate = 0.0;  // lambda, 1/s^2
    double precession_time = 0.0;  // t_p, s
    double p_bb = 1.0;
    double p_db = 1.0;
    CountShape dark{1.0, 0.0};
    CountShape bright{12.0, 0.0};
    /// When set, Ramsey tags come from simulated photon counts classified with
    /// these thresholds; otherwise tags are flipped with p_bb and p_db directly.
    std::optional<Thresholds> thresholds;
    double f_prep = 1.0;
    double f_pi = 1.0;
    std::size_t calibration_trials = 1000;  // per prepared state

    /// 1/2 exp(-lambda t_p^2) F^M
    double amplitude(std::int64_t transports) const;
    void validate() const;
};

struct RamseySimulation {
    RamseyDataset dataset;
    PreparedStateRecord calibration;
};

/// K phases 2 pi k / K, N repetitions each.
RamseySimulation simulate_ramsey(const GroundTruth& truth, std::int64_t transports, std::size_t phases,
                                 std::int64_t repetitions, std::uint64_t seed);

/// Photon count drawn from `own`, with leakage toward `other`.
int draw_count(const CountShape& own, const CountShape& other, std::mt19937_64& rng);

struct TrackingTruth {
    double failure = 0.0;  // f_s
    double bright_rate = 0.0;  // F_b, photons per flash
    double dark_rate = 0.0;  // F_d
    std::int64_t transports = 0;  // M
    std::vector<std::int64_t> skipped;  // M_s values
    std::size_t runs_per_point = 125;
    double dark_total_sigma = 0.3;  // uncertainty of the absent-ion calibration, photons per run
};

/// Per run, Poisson photons with the expected tracking mean. The absent-ion prior
/// mean is itself drawn around F_d M with the stated sigma.
TrackingDataset simulate_tracking(const TrackingTruth& truth, std::uint64_t seed);

struct MotionState {
    Vec3 position = Vec3::Zero();  // m
    Vec3 velocity = Vec3::Zero();  // m/s
    double time = 0.0;  // s
    double energy = 0.0;  // J above the instantaneous potential minimum
};

class EscapeError : public NumericalError {
public:
    EscapeError(const std::string& what, MotionState last) : NumericalError(what), last_(last) {}
    const MotionState& last() const noexcept { return last_; }

private:
    MotionState last_;
};

struct MotionOptions {
    std::size_t substeps = 32;  // integrator steps per ramp sample
    /// The ion counts as escaped when it leaves this box (when set) or a grid basis.
    std::optional<std::pair<Vec3, Vec3>> bounds;
    /// Extra time at the final voltages after the last sample.
    double hold_time = 0.0;
};

struct MotionResult {
    std::vector<MotionState> samples;  // one per ramp sample (and one after the hold)
    MotionState final;
    Vec3 final_minimum = Vec3::Zero();
    double final_energy = 0.0;  // J
};

/// Classical motion m r'' = -q grad Phi(r, t) with the electrode voltages
/// interpolated linearly between samples, fourth-order Runge-Kutta.
MotionResult integrate_motion(const Eigen::MatrixXd& electrode_voltages, double dt, const TrapModel& model,
                              const MotionState& init, const MotionOptions& options = {});

MotionResult integrate_motion(const VoltageRamp& ramp, const TrapModel& model, const MotionState& init,
                              std::size_t substeps);

/// Energy above the minimum reached from `start` at fixed voltages.
double energy_above_minimum(const TrapModel& model, const Eigen::VectorXd& voltages, const Vec3& position,
                            const Vec3& velocity, const Vec3& start, Vec3* minimum = nullptr);

}  // namespace ionshuttle
