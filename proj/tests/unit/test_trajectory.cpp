#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ionshuttle/trajectory.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("profiles run from 0 to 1 with zero end velocity") {
    for (Profile p : {Profile::Poly5, Profile::Sine}) {
        CHECK_THAT(profile_value(p, 0.0), WithinAbs(0.0, 1e-15));
        CHECK_THAT(profile_value(p, 1.0), WithinAbs(1.0, 1e-15));
        CHECK_THAT(profile_value(p, 0.5), WithinAbs(0.5, 1e-15));
        CHECK_THAT(profile_velocity(p, 0.0), WithinAbs(0.0, 1e-15));
        CHECK_THAT(profile_velocity(p, 1.0), WithinAbs(0.0, 1e-15));
    }
    CHECK_THAT(profile_acceleration(Profile::Poly5, 0.0), WithinAbs(0.0, 1e-15));
    CHECK_THAT(profile_acceleration(Profile::Poly5, 1.0), WithinAbs(0.0, 1e-12));
}

TEST_CASE("poly5 matches 10t^3 - 15t^4 + 6t^5 and its derivatives") {
    for (double t : {0.1, 0.37, 0.8}) {
        CHECK_THAT(profile_value(Profile::Poly5, t), WithinAbs(10 * std::pow(t, 3) - 15 * std::pow(t, 4) + 6 * std::pow(t, 5), 1e-14));
        CHECK_THAT(profile_velocity(Profile::Poly5, t), WithinAbs(30 * t * t - 60 * std::pow(t, 3) + 30 * std::pow(t, 4), 1e-13));
        const double h = 1e-5;
        const double fd = (profile_velocity(Profile::Poly5, t + h) - profile_velocity(Profile::Poly5, t - h)) / (2 * h);
        CHECK_THAT(profile_acceleration(Profile::Poly5, t), WithinAbs(fd, 1e-6));
    }
}

TEST_CASE("sampled trajectory covers the distance") {
    const Vec3 start(560e-6, 0, 0);
    const TransportPlan p = generate_trajectory(280e-6, 12.8e-6, 80e-9, Profile::Poly5, 1.0, start);
    REQUIRE(p.steps == 160);
    REQUIRE(p.positions.size() == 161);
    CHECK_THAT(p.start().x(), WithinAbs(560e-6, 1e-18));
    CHECK_THAT(p.end().x(), WithinAbs(840e-6, 1e-15));
    CHECK_THAT(p.positions[80].x(), WithinAbs(700e-6, 1e-15));
    CHECK_THAT(p.time(160), WithinRel(12.8e-6, 1e-12));
    for (std::size_t i = 1; i < p.positions.size(); ++i) CHECK(p.positions[i].x() >= p.positions[i - 1].x());
}

TEST_CASE("reversed plan runs backward") {
    const TransportPlan p = generate_trajectory(280e-6, 12.8e-6, 80e-9, Profile::Sine, 1.0);
    const TransportPlan r = reversed(p);
    REQUIRE(r.positions.size() == p.positions.size());
    CHECK_THAT(r.start().x(), WithinAbs(p.end().x(), 1e-18));
    CHECK_THAT(r.positions[10].x(), WithinAbs(p.positions[150].x(), 1e-18));
    CHECK_THAT(r.distance, WithinAbs(-p.distance, 1e-18));
}

TEST_CASE("invalid trajectory inputs are rejected") {
    CHECK_THROWS_AS(generate_trajectory(280e-6, 12.8e-6, 0.0, Profile::Poly5, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(generate_trajectory(280e-6, 12.8e-6, 70e-9, Profile::Poly5, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(parse_profile("cubic"), std::invalid_argument);
    CHECK(parse_profile(to_string(Profile::Sine)) == Profile::Sine);
}
