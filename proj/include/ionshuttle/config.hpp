#pragma once

// Run configuration shared by the CLI and the Python module. Every section has
// defaults at the reference parameters; unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ionshuttle/detection_stats.hpp"
#include "ionshuttle/experiment_simulator.hpp"
#include "ionshuttle/filter_chain.hpp"
#include "ionshuttle/trajectory.hpp"
#include "ionshuttle/trap_model.hpp"
#include "ionshuttle/waveform_synth.hpp"

namespace ionshuttle {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TrapSection {
    std::string kind = "toy";  // toy | grid
    ToyTrapParams toy;
    std::string grid_file;
};

struct TrajectorySection {
    double distance = 280e-6;  // m
    double duration = 12.8e-6;  // s
    double step = 80e-9;  // s
    Profile profile = Profile::Poly5;
    double axial_frequency_hz = 230e3;
    Vec3 start{560e-6, 0.0, 0.0};
};

struct FilterSection {
    double cutoff_hz = 63.2e3;  // used when no explicit stages are given
    std::optional<AnalogChain> chain;
    Discretization method = Discretization::MatchedDelay;
};

struct SynthesisSection {
    SynthesisConfig config;
    std::vector<double> offsets_first;  // micromotion offsets at A, empty = zero
    std::vector<double> offsets_last;
};

struct DetectionSection {
    // identification probabilities at the low and high transport count
    double p_bb_lo = 0.959;
    double p_db_lo = 0.978;
    double p_bb_hi = 0.964;
    double p_db_hi = 0.985;
    std::optional<Thresholds> thresholds;  // fixed thresholds; otherwise calibrated
    ThresholdObjective objective{0.0, 0.0, 0.08};
    std::size_t resamples = 10000;
    std::size_t bins = 10;
    double f_prep = 1.0;  // bias correction of p's
    double f_pi = 1.0;
};

struct AnalysisSection {
    std::size_t amplitude_points = 2001;
    std::size_t fidelity_points = 4001;
    bool bootstrap = false;  // average over the calibration bootstrap grid
    double failed_transports = 0.0;  // M_f
    DephasingParams dephasing{4.0, 0.0, 39.7e6, 10.0e-3, 640e-6, 12.8e-6};
};

struct SimulationSection {
    GroundTruth truth;
    std::int64_t m_lo = 2;
    std::int64_t m_hi = 4000;
    std::size_t phases = 19;
    std::int64_t repetitions = 100;
    TrackingTruth tracking;
    std::size_t substeps = 32;

    SimulationSection();
};

struct RunConfig {
    TrapSection trap;
    TrajectorySection trajectory;
    FilterSection filter;
    SynthesisSection synthesis;
    DetectionSection detection;
    AnalysisSection analysis;
    SimulationSection simulation;
    std::uint64_t seed = 1;
    std::string output;  // empty: CLI default

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    /// Fully resolved configuration, including defaults.
    nlohmann::json to_json() const;
    /// Hash of the resolved configuration without the output directory.
    std::string hash() const;

    TrapModel build_trap() const;
    TransportPlan build_plan() const;
    AnalogChain build_chain() const;
    FilterSpec build_filter() const;
    MicromotionOffsets build_offsets(std::size_t electrodes) const;
};

}  // namespace ionshuttle
