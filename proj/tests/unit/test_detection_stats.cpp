#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "ionshuttle/detection_stats.hpp"
#include "ionshuttle/errors.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PreparedStateRecord record_from(const std::vector<int>& dark, const std::vector<int>& bright) {
    PreparedStateRecord r;
    std::int64_t id = 0;
    for (int c : dark) r.trials.push_back({id++, PreparedState::Dark, 2, c, false});
    for (int c : bright) r.trials.push_back({id++, PreparedState::Bright, 2, c, false});
    return r;
}

PreparedStateRecord poisson_record(std::uint64_t seed, int n) {
    std::mt19937_64 rng(seed);
    std::poisson_distribution<int> d(1.0), b(12.0);
    std::vector<int> dc(n), bc(n);
    for (auto& c : dc) c = d(rng);
    for (auto& c : bc) c = b(rng);
    return record_from(dc, bc);
}

}  // namespace

TEST_CASE("classification uses strict thresholds with a discard window") {
    const Thresholds t{2, 4};
    CHECK(classify(0, t) == Tag::Dark);
    CHECK(classify(1, t) == Tag::Dark);
    CHECK(classify(2, t) == Tag::Discard);
    CHECK(classify(4, t) == Tag::Discard);
    CHECK(classify(5, t) == Tag::Bright);
    const Thresholds single{3, 2};
    for (int c = 0; c < 8; ++c) CHECK(classify(c, single) != Tag::Discard);
    CHECK_THROWS_AS(classify(1, Thresholds{5, 2}), std::invalid_argument);
}

TEST_CASE("threshold evaluation counts by hand") {
    // dark counts 0,0,1,2,3,7 ; bright counts 1,3,5,6,8,9
    const auto r = record_from({0, 0, 1, 2, 3, 7}, {1, 3, 5, 6, 8, 9});
    const auto c = evaluate_thresholds(make_histogram(r.counts(PreparedState::Dark)),
                                       make_histogram(r.counts(PreparedState::Bright)), {2, 4});
    // dark: tagged dark {0,0,1}=3, discard {2,3}=2, bright {7}=1 -> p_db = 3/4
    // bright: dark {1}=1, discard {3}=1, bright {5,6,8,9}=4 -> p_bb = 4/5
    CHECK_THAT(c.p_db, WithinAbs(0.75, 1e-15));
    CHECK_THAT(c.p_bb, WithinAbs(0.8, 1e-15));
    CHECK_THAT(c.discard_fraction, WithinAbs(3.0 / 12.0, 1e-15));
}

TEST_CASE("vetoed trials are excluded") {
    auto r = record_from({0, 9}, {9});
    r.trials[1].veto = true;
    CHECK(r.counts(PreparedState::Dark) == std::vector<int>{0});
}

TEST_CASE("calibration picks the feasible pair with least discard") {
    const auto r = poisson_record(5, 4000);
    const auto cal = calibrate_thresholds(r, ThresholdObjective::targets(0.95, 0.95));
    CHECK(cal.p_bb >= 0.95);
    CHECK(cal.p_db >= 0.95);
    // brute-force oracle over the same search range
    double best = 2.0;
    for (int td = 0; td <= 40; ++td)
        for (int tb = std::max(td - 1, 0); tb <= 40; ++tb) {
            const auto c = evaluate_thresholds(cal.dark_hist, cal.bright_hist, {td, tb});
            if (c.p_bb >= 0.95 && c.p_db >= 0.95) best = std::min(best, c.discard_fraction);
        }
    CHECK_THAT(cal.discard_fraction, WithinAbs(best, 1e-15));
}

TEST_CASE("an infeasible objective reports the trade-off frontier") {
    // identical count distributions for both states
    const auto r = record_from({0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5});
    try {
        calibrate_thresholds(r, ThresholdObjective::targets(0.9, 0.9));
        FAIL("expected ThresholdObjectiveError");
    } catch (const ThresholdObjectiveError& e) {
        CHECK_FALSE(e.frontier().empty());
    }
}

TEST_CASE("posterior with perfect detection is a beta density") {
    const Density d = posterior_density(30, 100, 1.0, 1.0, 2001);
    CHECK_THAT(d.integral(), WithinAbs(1.0, 1e-9));
    CHECK_THAT(d.mode(), WithinAbs(0.3, 5e-4));
    const double x = d.x[700];
    const double beta = std::exp(std::lgamma(102.0) - std::lgamma(31.0) - std::lgamma(71.0) + 30 * std::log(x) + 70 * std::log1p(-x));
    CHECK_THAT(d.value[700], WithinRel(beta, 1e-5));
}

TEST_CASE("posterior mode moves outward under detection errors") {
    const Density d = posterior_density(30, 100, 0.95, 0.95, 4001);
    // q = 0.95 p + 0.05 (1 - p) = 0.3  ->  p = 0.25 / 0.9
    CHECK_THAT(d.mode(), WithinAbs(0.25 / 0.9, 5e-4));
    CHECK_THROWS_AS(posterior_density(101, 100, 0.9, 0.9), std::invalid_argument);
}

TEST_CASE("bootstrap grid weights and determinism") {
    const auto r = poisson_record(8, 2000);
    const Thresholds t{2, 5};
    const IdGrid a = bootstrap_id_grid(r, t, 2000, 42, 10, 1);
    const IdGrid b = bootstrap_id_grid(r, t, 2000, 42, 10, 3);
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].p_bb == b.cells[i].p_bb);
        CHECK(a.cells[i].weight == b.cells[i].weight);
    }
    CHECK_THAT(a.total_weight(), WithinAbs(1.0, 1e-12));
    CHECK(a.cells.size() == a.bins_bb * a.bins_db);
    const double mean_bb = std::accumulate(a.samples_bb.begin(), a.samples_bb.end(), 0.0) / a.samples_bb.size();
    const auto point = evaluate_thresholds(make_histogram(r.counts(PreparedState::Dark)),
                                           make_histogram(r.counts(PreparedState::Bright)), t);
    CHECK_THAT(mean_bb, WithinAbs(point.p_bb, 2e-3));
    CHECK_THROWS_AS(bootstrap_id_grid(r, t, 10, 1), std::invalid_argument);
}

TEST_CASE("bias correction inverts the forward bias model") {
    const double fp = 0.999, fpi = 0.998;
    const BiasCorrected meas = bias_forward(0.964, 0.985, fp, fpi);
    const BiasCorrected back = bias_correct(meas.p_bb, meas.p_db, fp, fpi);
    CHECK_THAT(back.p_bb, WithinAbs(0.964, 1e-12));
    CHECK_THAT(back.p_db, WithinAbs(0.985, 1e-12));
    const BiasCorrected id = bias_correct(0.9, 0.8, 1.0, 1.0);
    CHECK_THAT(id.p_bb, WithinAbs(0.9, 1e-15));
    CHECK_THAT(id.p_db, WithinAbs(0.8, 1e-15));
    CHECK_THROWS_AS(bias_correct(0.9, 0.9, 0.5, 1.0), SingularInputError);
}

TEST_CASE("unfolding inverts the tag mixing") {
    const double nb = 60, nd = 40, pbb = 0.95, pdb = 0.9;
    const double bt = nb * pbb + nd * (1 - pdb);
    const double dt = nd * pdb + nb * (1 - pbb);
    const Unfolded u = unfold_counts(bt, dt, pbb, pdb);
    CHECK_THAT(u.bright, WithinAbs(nb, 1e-12));
    CHECK_THAT(u.dark, WithinAbs(nd, 1e-12));
    CHECK_THROWS_AS(unfold_counts(1, 1, 0.5, 0.5), SingularInputError);
    // (50 - 100 * 0.015) / (0.964 + 0.985 - 1)
    CHECK_THAT(unfold_counts(50, 50, 0.964, 0.985).bright, WithinRel(48.5 / 0.949, 1e-12));
}
