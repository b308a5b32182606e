#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ionshuttle/filter_chain.hpp"
#include "ionshuttle/trajectory.hpp"
#include "ionshuttle/trap_model.hpp"

namespace ionshuttle {

/// Row order of the potential conditions.
enum ConstraintRow : int { RowGradX = 0, RowGradY, RowGradZ, RowCurvX, RowXZ, RowPhi, RowCount };

struct RowWeights {
    double gradient = 1.0;
    double curvature = 1.0;
    double xz = 0.1;
    double phi = 0.01;

    std::array<double, RowCount> as_array() const {
        return {gradient, gradient, gradient, curvature, xz, phi};
    }
};

struct ConstraintTarget {
    Vec3 position = Vec3::Zero();
    double curvature = 0.0;  // m w_x^2 / q, V/m^2
    double phi0 = 0.0;  // V
    std::array<double, RowCount> weights{1.0, 1.0, 1.0, 1.0, 0.1, 0.01};
};

/// Six rows linear in the dc voltages: P_row[sum_j U_j Phi_j] = rhs_row with the
/// fixed (pseudopotential) contribution moved to the right-hand side.
struct ConstraintRows {
    Eigen::MatrixXd matrix;  // RowCount x electrodes
    Eigen::VectorXd rhs;  // RowCount
};

ConstraintRows constraint_rows(const TrapModel& model, const ConstraintTarget& target);

struct StepSolution {
    Eigen::VectorXd voltages;
    Eigen::VectorXd residuals;  // rows * voltages - rhs, unweighted
    std::size_t iterations = 0;
    std::size_t active_bounds = 0;
};

/// Weighted box-constrained least squares for one step:
///   min sum_r w_r (rows_r U - rhs_r)^2 + reg |U - previous|^2,  lo <= U <= hi.
/// `step` only labels errors.
StepSolution solve_step(const Eigen::MatrixXd& rows, const Eigen::VectorXd& rhs,
                        const Eigen::VectorXd& weights, const Eigen::VectorXd& lo,
                        const Eigen::VectorXd& hi, const Eigen::VectorXd& previous, double reg,
                        std::size_t step = 0);

struct MicromotionOffsets {
    Eigen::VectorXd first;  // at step 0 (position A)
    Eigen::VectorXd last;  // at step L (position B)

    static MicromotionOffsets zero(std::size_t electrodes);
};

Eigen::VectorXd interpolate_offsets(const MicromotionOffsets& offsets, std::size_t i, std::size_t L);

struct SynthesisConfig {
    double slew = 0.5;  // max source change per step, V
    double v_min = -10.0;  // source and electrode range, V
    double v_max = 10.0;
    RowWeights weights;
    double tie_weight = 1e-3;
    double loop_weight_end = 1e-2;
    double loop_weight_mid = 1e-4;
    double regularization = 1e-2;  // pull toward the previous step's voltages, V^-2
    std::optional<double> phi0;  // default: value of the step-0 solution
    std::optional<std::size_t> settle_steps;  // default: filter order n_a
    double position_scale = 1e-6;  // m, normalizes gradient rows
    double curvature_scale = 1e-2;  // relative, normalizes curvature and xz rows
};

/// Loop weight at step i: geometric interpolation between the endpoint and
/// mid-trajectory values with sin(pi i / L).
double loop_weight(const SynthesisConfig& config, std::size_t i, std::size_t L);

/// Per-direction voltage tables. Row i holds the electrode voltage U_i and the
/// source value Ut_i applied at step i, which sets U_{i+1}. Rows 0..L follow the
/// trajectory; the remaining rows hold the endpoint while the filter settles.
struct RampSeries {
    Eigen::MatrixXd source;  // samples x electrodes
    Eigen::MatrixXd electrode;  // samples x electrodes

    std::size_t samples() const { return static_cast<std::size_t>(source.rows()); }
    std::size_t electrodes() const { return static_cast<std::size_t>(source.cols()); }
};

struct VoltageRamp {
    double dt = 0.0;
    std::size_t transport_steps = 0;  // L
    RampSeries forward;  // A to B
    RampSeries backward;  // B to A
    std::string trajectory;  // description of the plan
    std::string filter_id;
};

/// Maps the electrode voltage of every row index to the planned ion position.
Vec3 planned_position(const TransportPlan& plan, std::size_t sample, bool backward);

VoltageRamp synthesize(const TrapModel& model, const TransportPlan& plan, const FilterSpec& spec,
                       const MicromotionOffsets& offsets, const SynthesisConfig& config);

/// Endpoint solutions of `synthesize` joined by straight source ramps of L steps
/// without filter compensation, followed by the same settle period.
VoltageRamp linear_ramp(const TrapModel& model, const TransportPlan& plan, const FilterSpec& spec,
                        const MicromotionOffsets& offsets, const SynthesisConfig& config);

/// Ion position found by damped Newton descent on the potential.
struct MinimumSearch {
    Vec3 position = Vec3::Zero();
    PotentialProbe probe;
    std::size_t iterations = 0;
    bool converged = false;
};

MinimumSearch find_minimum(const TrapModel& model, const Eigen::VectorXd& voltages, const Vec3& start,
                           std::size_t max_iterations = 50);

/// Dwell pattern for the mean ion position over one Ramsey period: M transports
/// alternate A to B and B to A within `precession_time`; the remaining time is
/// split evenly between the settled endpoints.
struct DwellPattern {
    double precession_time = 0.0;  // s
    std::size_t m_lo = 2;
    std::size_t m_hi = 4000;
    /// Filter actually present per electrode, when it differs from the one used
    /// for synthesis; empty means the design filter is exact.
    std::vector<FilterSpec> actual_filters;
    /// Extra hold samples appended to each ramp before the ion counts as settled.
    std::size_t tail_samples = 0;
};

struct RampDiagnostics {
    double max_position_error = 0.0;  // m
    double max_frequency_error = 0.0;  // relative
    double max_xz = 0.0;  // V/m^2
    std::size_t slew_violations = 0;
    double loop_closure_error = 0.0;  // V
    double mean_position_asymmetry = 0.0;  // m, mean(m_hi) - mean(m_lo) along x
    std::vector<std::size_t> unconverged_steps;  // forward samples first, then backward
};

RampDiagnostics verify_ramp(const VoltageRamp& ramp, const TrapModel& model, const TransportPlan& plan,
                            double slew, const std::optional<DwellPattern>& dwell = std::nullopt);

/// Mean x position over M transports minus the same for the lower count.
double mean_position_asymmetry(const VoltageRamp& ramp, const TrapModel& model,
                               const TransportPlan& plan, const DwellPattern& dwell);

}  // namespace ionshuttle
