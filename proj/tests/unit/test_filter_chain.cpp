#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ionshuttle/filter_chain.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const double dt = 80e-9;
}

TEST_CASE("default chain has the requested analog cutoff") {
    const AnalogChain c = default_chain(63.2e3);
    CHECK_THAT(analog_cutoff(c), WithinRel(63.2e3, 1e-6));
    CHECK_THROWS_AS(AnalogChain{}.validate(), std::invalid_argument);
}

TEST_CASE("single RC stage discretizes to exp(-dt/tau)") {
    AnalogChain c;
    c.stages = {{1e3, 1e-9}};
    const FilterSpec s = discretize(c, dt);
    const double p = std::exp(-dt / 1e-6);
    REQUIRE(s.na() == 1);
    CHECK_THAT(-s.a()[1] / s.a()[0], WithinRel(p, 1e-12));
    CHECK_THAT(s.dc_gain(), WithinRel(1.0, 1e-12));
}

TEST_CASE("discrete filters keep unit dc gain and a low-pass shape") {
    for (Discretization m : {Discretization::MatchedDelay, Discretization::ZeroOrderHold}) {
        const FilterSpec s = discretize(default_chain(), dt, m);
        CHECK_THAT(s.dc_gain(), WithinRel(1.0, 1e-10));
        CHECK_THAT(std::abs(s.response(1.0)), WithinRel(1.0, 1e-6));
        CHECK(std::abs(s.response(1e6)) < 0.2);
        const double fc = cutoff_frequency(s);
        CHECK_THAT(std::abs(s.response(fc)), WithinRel(1.0 / std::sqrt(2.0), 1e-6));
    }
    CHECK_THAT(cutoff_frequency(discretize(default_chain(), dt)), WithinRel(63.2e3, 0.02));
}

TEST_CASE("bode reports magnitude in dB") {
    const FilterSpec s = discretize(default_chain(), dt);
    const double f = 40e3;
    CHECK_THAT(bode(s, f).magnitude_db, WithinAbs(20 * std::log10(std::abs(s.response(f))), 1e-12));
}

TEST_CASE("steady state is a fixed point") {
    const FilterSpec s = discretize(default_chain(), dt);
    FilterState st = FilterState::steady(s, 2.5);
    for (int i = 0; i < 10; ++i) CHECK_THAT(static_cast<double>(st.commit(s, 2.5L)), WithinAbs(2.5, 1e-15));
}

TEST_CASE("forward filter matches the direct difference equation") {
    const FilterSpec s = discretize(default_chain(), dt);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> x(50);
    for (auto& v : x) v = u(rng);
    const auto y = apply_forward(s, x, FilterState::zero(s));
    // a0 y[n] = sum b_k x[n-k] - sum_{k>=1} a_k y[n-k], zero history
    std::vector<double> ref(x.size(), 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
        double acc = 0.0;
        for (std::size_t k = 0; k < s.b().size(); ++k) if (n >= k) acc += s.b()[k] * x[n - k];
        for (std::size_t k = 1; k < s.a().size(); ++k) if (n >= k) acc -= s.a()[k] * ref[n - k];
        ref[n] = acc / s.a()[0];
    }
    for (std::size_t n = 0; n < x.size(); ++n) CHECK_THAT(y[n], WithinAbs(ref[n], 1e-12));
}

TEST_CASE("precompensation inverts the filter") {
    const FilterSpec s = discretize(default_chain(), dt);
    std::vector<double> target(160);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = std::sin(0.05 * i) + 0.01 * i;
    const FilterState init = FilterState::steady(s, target[0]);
    const auto src = precompensate(s, target, init);
    const auto out = apply_forward(s, src, init);
    for (std::size_t i = 0; i < target.size(); ++i) CHECK_THAT(out[i], WithinAbs(target[i], 1e-10));
}

TEST_CASE("reachable interval is the slew window mapped through the filter") {
    const FilterSpec s = discretize(default_chain(), dt);
    FilterState st = FilterState::steady(s, 0.0);
    st.commit(s, 0.3L);
    st.commit(s, 0.1L);
    const double slew = 0.5;
    const Interval iv = reachable_interval(s, st, slew);
    CHECK(static_cast<double>(iv.lo) == Catch::Approx(static_cast<double>(st.next_output(s, st.last_input() - slew))).epsilon(1e-14));
    CHECK(static_cast<double>(iv.hi) == Catch::Approx(static_cast<double>(st.next_output(s, st.last_input() + slew))).epsilon(1e-14));
    CHECK_THAT(static_cast<double>(st.back_solve(s, iv.hi) - st.last_input()), WithinAbs(slew, 1e-12));

    const Interval clipped = reachable_interval(s, st, slew, 0.0, Interval{-0.2L, 0.2L});
    CHECK(clipped.width() < iv.width());
    CHECK_THAT(static_cast<double>(st.back_solve(s, clipped.hi)), WithinAbs(0.2, 1e-12));
}

TEST_CASE("filter spec validation") {
    CHECK_THROWS_AS(FilterSpec({1.0, -0.5}, {0.5}, dt), std::invalid_argument);
    CHECK_THROWS_AS(FilterSpec({0.0, -0.5}, {0.0, 0.5}, dt), std::invalid_argument);
    CHECK_THROWS_AS(parse_discretization("tustin-ish"), std::invalid_argument);
}
