#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "ionshuttle/experiment_simulator.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GroundTruth truth() {
    GroundTruth t;
    t.fidelity = 0.9999;
    t.decay_rate = 4.0;
    t.precession_time = 69.44e-3;
    t.p_bb = 0.96;
    t.p_db = 0.98;
    t.phase = 0.4;
    return t;
}

}  // namespace

TEST_CASE("ground-truth amplitude") {
    const GroundTruth t = truth();
    CHECK_THAT(t.amplitude(100), WithinRel(0.5 * std::exp(-4.0 * 69.44e-3 * 69.44e-3) * std::pow(0.9999, 100), 1e-14));
    GroundTruth bad = t;
    bad.fidelity = 1.2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("Ramsey simulation is deterministic per seed") {
    const auto a = simulate_ramsey(truth(), 2, 19, 100, 9);
    const auto b = simulate_ramsey(truth(), 2, 19, 100, 9);
    const auto c = simulate_ramsey(truth(), 2, 19, 100, 10);
    REQUIRE(a.dataset.points.size() == 19);
    bool differs = false;
    for (std::size_t k = 0; k < 19; ++k) {
        CHECK(a.dataset.points[k].bright == b.dataset.points[k].bright);
        differs = differs || a.dataset.points[k].bright != c.dataset.points[k].bright;
        CHECK_THAT(a.dataset.points[k].phase, WithinAbs(constants::two_pi * k / 19.0, 1e-15));
    }
    CHECK(differs);
    CHECK(a.dataset.transports == 2);
}

TEST_CASE("tagged bright fraction matches its expectation") {
    const GroundTruth t = truth();
    const std::int64_t n = 200000;
    const auto s = simulate_ramsey(t, 500, 4, n, 3);
    for (const auto& p : s.dataset.points) {
        REQUIRE(p.trials == n);
        const double pb = t.offset + t.amplitude(500) * std::sin(p.phase - t.phase);
        const double q = pb * t.p_bb + (1 - pb) * (1 - t.p_db);
        CHECK_THAT(static_cast<double>(p.bright) / n, WithinAbs(q, 5.0 * std::sqrt(q * (1 - q) / n)));
    }
}

TEST_CASE("photon-count path yields calibration trials") {
    GroundTruth t = truth();
    t.thresholds = Thresholds{2, 5};
    t.calibration_trials = 500;
    const auto s = simulate_ramsey(t, 2, 5, 50, 4);
    CHECK(s.calibration.trials.size() == 1000);
    const auto dark = s.calibration.counts(PreparedState::Dark);
    const double mean = std::accumulate(dark.begin(), dark.end(), 0.0) / dark.size();
    CHECK_THAT(mean, WithinAbs(t.dark.mean, 0.2));
    for (const auto& p : s.dataset.points) CHECK(p.trials <= 50);
}

TEST_CASE("count draws have the configured mean") {
    std::mt19937_64 rng(1);
    double sum = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += draw_count({12.0, 0.0}, {1.0, 0.0}, rng);
    CHECK_THAT(sum / n, WithinAbs(12.0, 0.05));
    // full leakage: rate uniform between own and other, mean halfway
    sum = 0;
    for (int i = 0; i < n; ++i) sum += draw_count({12.0, 1.0}, {2.0, 0.0}, rng);
    CHECK_THAT(sum / n, WithinAbs(7.0, 0.08));
}

TEST_CASE("tracking simulation shape and mean") {
    TrackingTruth t;
    t.failure = 2e-3;
    t.transports = 4000;
    t.dark_rate = 23.5 / 4000;
    t.bright_rate = t.dark_rate + 0.113;
    t.skipped = {0, 100, 200, 300};
    t.runs_per_point = 400;
    const TrackingDataset d = simulate_tracking(t, 5);
    CHECK(d.runs.size() == 1600);
    CHECK(d.transports == 4000);
    double sum = 0;
    int n = 0;
    for (const auto& r : d.runs)
        if (r.skipped == 200) {
            sum += r.photons;
            ++n;
        }
    const double expect = expected_tracking_photons(t.failure, t.bright_rate, t.dark_rate, 4000, 200);
    CHECK_THAT(sum / n, WithinAbs(expect, 5 * std::sqrt(expect / n)));
}

TEST_CASE("static potential conserves energy over 1e4 steps") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    // hold the voltages that put a 230 kHz well near x = 560 um
    const TransportPlan plan = generate_trajectory(280e-6, 12.8e-6, 80e-9, Profile::Poly5, constants::two_pi * 230e3,
                                                   Vec3(560e-6, 0, 0));
    const VoltageRamp ramp = synthesize(m, plan, discretize(default_chain(), 80e-9),
                                        MicromotionOffsets::zero(m.electrode_count()), SynthesisConfig{});
    const Eigen::RowVectorXd u = ramp.forward.electrode.row(0);
    const std::size_t substeps = 32, rows = 10000 / substeps + 1;
    const Eigen::MatrixXd held = u.replicate(static_cast<Eigen::Index>(rows), 1);
    const Vec3 r0 = find_minimum(m, u.transpose(), plan.start()).position;
    MotionState init;
    init.position = r0 + Vec3(0.5e-6, 0, 0);
    MotionOptions o;
    o.substeps = substeps;
    const MotionResult res = integrate_motion(held, 80e-9, m, init, o);
    const double e0 = res.samples.front().energy;
    REQUIRE(e0 > 0);
    double drift = 0;
    for (const auto& s : res.samples) drift = std::max(drift, std::abs(s.energy - e0) / e0);
    CHECK(drift < 1e-9);
    // harmonic estimate of the initial energy
    const double k = m.probe(std::span<const double>(u.data(), u.size()), r0).hessian(0, 0);
    CHECK_THAT(e0, WithinRel(0.5 * m.charge() * k * 0.25e-12, 1e-2));
}

TEST_CASE("leaving the bounding box raises EscapeError") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(20, m.electrode_count());
    MotionState init;
    init.position = Vec3(560e-6, 0, 0);
    init.velocity = Vec3(100.0, 0, 0);
    MotionOptions o;
    o.bounds = std::make_pair(Vec3(550e-6, -1e-5, -1e-5), Vec3(570e-6, 1e-5, 1e-5));
    CHECK_THROWS_AS(integrate_motion(zero, 80e-9, m, init, o), EscapeError);
}
