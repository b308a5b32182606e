#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ionshuttle/constants.hpp"
#include "ionshuttle/errors.hpp"
#include "ionshuttle/fidelity_analysis.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Fringe with bright counts set to their expectation (rounded).
RamseyDataset expected_fringe(double a, double b, double phi0, double pbb, double pdb, std::int64_t n, std::size_t k = 19) {
    RamseyDataset d;
    d.transports = 2;
    d.precession_time = 0.07;
    for (std::size_t i = 0; i < k; ++i) {
        const double phi = constants::two_pi * static_cast<double>(i) / static_cast<double>(k);
        const double p = b + a * std::sin(phi - phi0);
        const double q = p * pbb + (1 - p) * (1 - pdb);
        d.points.push_back({phi, static_cast<std::int64_t>(std::llround(q * n)), n});
    }
    return d;
}

LikelihoodCurve gaussian(double mode, double sigma) {
    const auto grid = amplitude_grid(2001);
    std::vector<double> lv(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) lv[i] = -0.5 * std::pow((grid[i] - mode) / sigma, 2);
    return LikelihoodCurve::from_log(grid, lv);
}

}  // namespace

TEST_CASE("log-likelihood kernel matches the binomial sum") {
    const RamseyDataset d = expected_fringe(0.4, 0.5, 0.3, 0.96, 0.98, 100, 7);
    double ref = 0.0;
    for (const auto& p : d.points) {
        const double pb = 0.45 + 0.35 * std::sin(p.phase - 0.2);
        const double q = pb * 0.96 + (1 - pb) * 0.02;
        ref += p.bright * std::log(q) + (p.trials - p.bright) * std::log1p(-q);
    }
    CHECK_THAT(ramsey_log_likelihood(d, 0.96, 0.98, 0.35, 0.45, 0.2), WithinRel(ref, 1e-12));
}

TEST_CASE("global fit recovers noise-free fringe parameters") {
    const RamseyDataset d = expected_fringe(0.42, 0.51, 0.7, 0.96, 0.98, 1000000);
    const RamseyFit f = fit_ramsey(d, 0.96, 0.98);
    CHECK_THAT(f.amplitude, WithinAbs(0.42, 1e-4));
    CHECK_THAT(f.offset, WithinAbs(0.51, 1e-4));
    CHECK_THAT(f.phase, WithinAbs(0.7, 1e-3));
}

TEST_CASE("fit respects the physical region") {
    // counts demand a fringe larger than allowed by detection
    const RamseyDataset d = expected_fringe(0.5, 0.5, 0.0, 1.0, 1.0, 1000);
    const RamseyFit f = fit_ramsey(d, 0.9, 0.9);
    CHECK(f.amplitude <= f.offset + 1e-9);
    CHECK(f.offset + f.amplitude <= 1.0 + 1e-9);
}

TEST_CASE("fixed-amplitude fit is never better than the global fit") {
    const RamseyDataset d = expected_fringe(0.3, 0.5, 1.0, 0.96, 0.98, 100);
    const RamseyFit g = fit_ramsey(d, 0.96, 0.98);
    for (double a : {0.1, 0.25, 0.3, 0.35, 0.45}) {
        const RamseyFit f = fit_ramsey_fixed_amplitude(d, 0.96, 0.98, a);
        CHECK(f.log_likelihood <= g.log_likelihood + 1e-9);
        CHECK(f.amplitude == a);
    }
    const RamseyFit at = fit_ramsey_fixed_amplitude(d, 0.96, 0.98, g.amplitude, g);
    CHECK_THAT(at.log_likelihood, WithinAbs(g.log_likelihood, 1e-8));
}

TEST_CASE("profile likelihood is normalized and peaks at the fit") {
    const RamseyDataset d = expected_fringe(0.3, 0.5, 1.0, 0.96, 0.98, 100);
    const auto grid = amplitude_grid(1001);
    const LikelihoodCurve c = profile_likelihood_A(d, 0.96, 0.98, grid);
    double integral = 0.0;
    const auto dens = c.densities();
    for (std::size_t i = 1; i < grid.size(); ++i) integral += 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
    CHECK_THAT(integral, WithinAbs(1.0, 1e-9));
    CHECK_THAT(c.mode, WithinAbs(fit_ramsey(d, 0.96, 0.98).amplitude, 2e-4));
    CHECK(c.interval.lo < c.mode);
    CHECK(c.interval.hi > c.mode);
}

TEST_CASE("curve interval uses the half-unit drop") {
    const LikelihoodCurve g = gaussian(0.3, 0.02);
    CHECK_THAT(g.mode, WithinAbs(0.3, 1e-9));
    CHECK_THAT(g.interval.lo, WithinAbs(0.28, 2e-6));
    CHECK_THAT(g.interval.hi, WithinAbs(0.32, 2e-6));
    CHECK(g.density(-1.0) == 0.0);
}

TEST_CASE("fidelity likelihood follows the amplitude ratio") {
    const LikelihoodCurve lo = gaussian(0.49, 0.001);
    const LikelihoodCurve hi = gaussian(0.45, 0.001);
    const LikelihoodCurve f = fidelity_likelihood(lo, hi, 2, 4000);
    const double ratio = std::pow(0.45 / 0.49, 1.0 / 3998.0);
    CHECK_THAT(f.mode, WithinAbs(ratio, 1e-8));
    // linear error propagation
    const double sigma = ratio / 3998.0 * std::hypot(0.001 / 0.49, 0.001 / 0.45);
    CHECK_THAT(0.5 * f.interval.width(), WithinRel(sigma, 0.03));
}

TEST_CASE("failure adjustment rescales the exponent") {
    const FailureAdjusted a = adjust_for_failures(0.999994, 68.0, 2, 4000, 6e-6);
    const double scale = 3998.0 / (3998.0 - 68.0);
    CHECK_THAT(a.fidelity, WithinRel(std::pow(0.999994, scale), 1e-14));
    // dF_adj/dF
    CHECK_THAT(a.sigma, WithinRel(6e-6 * scale * std::pow(0.999994, scale - 1.0), 1e-12));
    CHECK_THROWS_AS(adjust_for_failures(0.99, 4000.0, 2, 4000, 1e-6), std::invalid_argument);
}

TEST_CASE("dephasing relations") {
    CHECK_THAT(contrast_factor(0.1), WithinRel(std::exp(-0.005), 1e-14));
    CHECK_THAT(contrast_factor(phase_width_from_fidelity(0.98)), WithinRel(0.98, 1e-14));
    CHECK_THAT(position_sensitivity(39.7e6, 0.01), WithinRel(397e3, 1e-14));
    CHECK_THAT(transition_shift(397e3, 280e-6), WithinRel(111.16, 1e-12));
    CHECK_THAT(ramsey_phase(10.0, 0.05), WithinRel(constants::two_pi * 0.5, 1e-14));
    CHECK_THAT(position_width(1e-3, 1e-5, 1e5), WithinRel(1e-3 / (constants::two_pi * 1e-5 * 1e5), 1e-14));
    CHECK_THAT(static_decay_amplitude(4.0, 0.1), WithinRel(0.5 * std::exp(-0.04), 1e-14));
    CHECK_THROWS_AS(phase_width_from_fidelity(1.5), std::invalid_argument);
}

TEST_CASE("expected tracking photons") {
    const double fs = 0.01, fb = 0.05, fd = 0.005;
    const std::int64_t m = 1000, ms = 100;
    const double ref = fb * (ms + fs * (m - 2 * ms)) + fd * ((m - ms) - fs * (m - 2 * ms));
    CHECK_THAT(expected_tracking_photons(fs, fb, fd, m, ms), WithinRel(ref, 1e-14));
}

TEST_CASE("tracking fit recovers noise-free rates") {
    TrackingDataset d;
    d.transports = 4000;
    d.dark_total = {23.5, 0.3};
    const double fd = 23.5 / 4000.0, fb = fd + 0.12, fs = 2e-3;
    for (std::int64_t ms : {0, 100, 200, 300})
        for (int r = 0; r < 50; ++r) d.runs.push_back({ms, expected_tracking_photons(fs, fb, fd, 4000, ms)});
    const TrackingFit f = fit_transport_fidelity(d);
    CHECK_THAT(f.failure, WithinAbs(fs, 2e-4));
    CHECK_THAT(f.fidelity, WithinAbs(1 - f.failure, 1e-15));
    CHECK(f.failure_interval.lo <= f.failure);
    CHECK(f.failure_interval.hi >= f.failure);
    CHECK_THAT(f.linear.slope, WithinRel((fb - fd) * (1 - 2 * fs), 1e-9));
    CHECK_THAT(f.linear_failure, WithinAbs(fs, 1e-9));
}

TEST_CASE("tracking fit needs three distinct skip counts") {
    TrackingDataset d;
    d.transports = 4000;
    d.dark_total = {23.5, 0.3};
    for (std::int64_t ms : {0, 100})
        for (int r = 0; r < 5; ++r) d.runs.push_back({ms, 30.0 + ms * 0.1});
    CHECK_THROWS_AS(fit_transport_fidelity(d), UnidentifiableError);
}

TEST_CASE("linear cross-check inverts slope and offset") {
    const double fs = 3e-3, fb = 0.2, fd = 0.01;
    const std::int64_t m = 1000;
    LinearFit lf;
    lf.slope = (fb - fd) * (1 - 2 * fs);
    lf.offset = m * fd + fs * m * (fb - fd);
    const LinearCrossCheck c = failure_from_linear_fit(lf, {m * fd, 0.0}, m);
    CHECK_THAT(c.failure, WithinAbs(fs, 1e-12));
}
