#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "ionshuttle/waveform_synth.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const double kOmega = constants::two_pi * 230e3;

TransportPlan plan() { return generate_trajectory(280e-6, 12.8e-6, 80e-9, Profile::Poly5, kOmega, Vec3(560e-6, 0, 0)); }

}  // namespace

TEST_CASE("constraint rows are linear in the voltages") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    ConstraintTarget t;
    t.position = Vec3(600e-6, 0, 0);
    t.curvature = m.curvature_for(kOmega);
    const ConstraintRows rows = constraint_rows(m, t);
    REQUIRE(rows.matrix.rows() == RowCount);
    REQUIRE(rows.matrix.cols() == static_cast<Eigen::Index>(m.electrode_count()));
    Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(m.electrode_count(), -1.0, 1.0);
    const PotentialProbe p = m.probe(std::span<const double>(u.data(), u.size()), t.position);
    const Eigen::VectorXd lhs = rows.matrix * u - rows.rhs;
    // Gradient rows: residual equals the total gradient; curvature row: total curvature minus target.
    CHECK_THAT(lhs[RowGradX], WithinAbs(p.gradient.x(), 1e-6 * std::abs(p.gradient.x()) + 1e-9));
    CHECK_THAT(lhs[RowGradZ], WithinAbs(p.gradient.z(), 1e-6 * std::abs(p.gradient.z()) + 1e-9));
    CHECK_THAT(lhs[RowCurvX], WithinAbs(p.hessian(0, 0) - t.curvature, 1e-6 * t.curvature));
    CHECK_THAT(lhs[RowXZ], WithinAbs(p.hessian(0, 2), 1e-6 * t.curvature));
}

TEST_CASE("solve_step honours bounds and fits a feasible target exactly") {
    Eigen::MatrixXd A(2, 3);
    A << 1, 1, 0, 0, 1, 1;
    Eigen::VectorXd rhs(2);
    rhs << 1, 1;
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(3, -2), hi = Eigen::VectorXd::Constant(3, 2);
    const StepSolution s = solve_step(A, rhs, w, lo, hi, Eigen::VectorXd::Zero(3), 1e-9);
    CHECK(s.residuals.norm() < 1e-6);
    const Eigen::VectorXd hi2 = Eigen::VectorXd::Constant(3, 0.2);
    const StepSolution c = solve_step(A, rhs, w, -hi2, hi2, Eigen::VectorXd::Zero(3), 1e-9);
    CHECK(c.voltages.maxCoeff() <= 0.2 + 1e-12);
    CHECK(c.active_bounds > 0);
}

TEST_CASE("offsets interpolate linearly between the end points") {
    MicromotionOffsets o = MicromotionOffsets::zero(2);
    o.first << 0.0, 1.0;
    o.last << 1.0, -1.0;
    const Eigen::VectorXd mid = interpolate_offsets(o, 40, 160);
    CHECK_THAT(mid[0], WithinAbs(0.25, 1e-15));
    CHECK_THAT(mid[1], WithinAbs(0.5, 1e-15));
}

TEST_CASE("loop weight is large at the ends") {
    SynthesisConfig c;
    CHECK_THAT(loop_weight(c, 0, 160), WithinRel(c.loop_weight_end, 1e-12));
    CHECK_THAT(loop_weight(c, 160, 160), WithinRel(c.loop_weight_end, 1e-12));
    CHECK(loop_weight(c, 80, 160) <= c.loop_weight_end);
}

TEST_CASE("find_minimum locates a harmonic well center") {
    std::vector<ElectrodeBasis> e;
    for (int j = 0; j < 6; ++j) e.push_back({j, 1.0, HarmonicWell{Vec3(3e-6, -1e-6, 2e-6), Mat3(Vec3(4e6, 9e6, 9e6).asDiagonal())}});
    ElectrodeBasis pseudo{-1, 1.0, HarmonicWell{Vec3::Zero(), Mat3::Zero()}};
    const TrapModel m(e, pseudo);
    const MinimumSearch s = find_minimum(m, Eigen::VectorXd::Ones(6), Vec3::Zero());
    CHECK(s.converged);
    CHECK_THAT(s.position.x(), WithinAbs(3e-6, 1e-12));
    CHECK_THAT(s.position.y(), WithinAbs(-1e-6, 1e-12));
}

TEST_CASE("synthesized ramp tracks the plan and respects the slew limit") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    const TransportPlan p = plan();
    const FilterSpec spec = discretize(default_chain(), 80e-9);
    SynthesisConfig cfg;
    const VoltageRamp r = synthesize(m, p, spec, MicromotionOffsets::zero(m.electrode_count()), cfg);
    CHECK(r.transport_steps == 160);
    CHECK(r.forward.samples() == r.backward.samples());
    CHECK(r.forward.samples() >= 161);
    const RampDiagnostics d = verify_ramp(r, m, p, cfg.slew);
    CHECK(d.max_position_error < 1e-6);
    CHECK(d.max_frequency_error < 0.01);
    CHECK(d.slew_violations == 0);
    CHECK(d.unconverged_steps.empty());
    for (Eigen::Index i = 1; i < r.forward.source.rows(); ++i)
        CHECK((r.forward.source.row(i) - r.forward.source.row(i - 1)).cwiseAbs().maxCoeff() <= cfg.slew + 1e-9);
    // Backward ramp starts where the forward one ends.
    CHECK((r.backward.electrode.row(0) - r.forward.electrode.row(r.forward.electrode.rows() - 1)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("electrode voltages are the filtered source voltages") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    const FilterSpec spec = discretize(default_chain(), 80e-9);
    const VoltageRamp r = synthesize(m, plan(), spec, MicromotionOffsets::zero(m.electrode_count()), SynthesisConfig{});
    for (Eigen::Index j = 0; j < r.forward.source.cols(); ++j) {
        std::vector<double> src(r.forward.source.rows());
        for (Eigen::Index i = 0; i < r.forward.source.rows(); ++i) src[i] = r.forward.source(i, j);
        const auto out = apply_forward(spec, src, FilterState::steady(spec, r.forward.electrode(0, j)));
        for (Eigen::Index i = 1; i < r.forward.source.rows(); ++i) REQUIRE_THAT(out[i], WithinAbs(r.forward.electrode(i, j), 1e-9));
    }
}

TEST_CASE("an impossible slew limit is reported") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    SynthesisConfig cfg;
    cfg.slew = 1e-6;
    const TransportPlan p = plan();
    const FilterSpec spec = discretize(default_chain(), 80e-9);
    const VoltageRamp r = synthesize(m, p, spec, MicromotionOffsets::zero(m.electrode_count()), cfg);
    const RampDiagnostics d = verify_ramp(r, m, p, cfg.slew);
    CHECK(d.max_position_error > 1e-6);
}

TEST_CASE("find_minimum stays inside a gridded model") {
    // toy trap sampled on a small box; at x = 560 um the well of these voltages lies outside it
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    const Eigen::VectorXd u = synthesize(m, plan(), discretize(default_chain(), 80e-9),
                                         MicromotionOffsets::zero(m.electrode_count()), SynthesisConfig{})
                                  .forward.electrode.row(0)
                                  .transpose();
    GridSpec spec;
    spec.origin = Vec3(580e-6, -4e-6, -4e-6);
    spec.spacing = Vec3::Constant(1e-6);
    spec.shape = {41, 9, 9};
    const auto path = (std::filesystem::temp_directory_path() / "ionshuttle_fm_grid.bin").string();
    export_basis_grids(m, path, spec);
    const TrapModel g = load_basis_grids(path);
    std::filesystem::remove(path);
    MinimumSearch s;
    REQUIRE_NOTHROW(s = find_minimum(g, u, Vec3(600e-6, 0, 1e-6)));
    CHECK(s.position.x() >= 580e-6 - 1e-12);
    CHECK(s.position.x() < 600e-6);
}
