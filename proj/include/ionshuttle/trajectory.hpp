#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ionshuttle/trap_model.hpp"

namespace ionshuttle {

enum class Profile { Poly5, Sine };

Profile parse_profile(const std::string& name);
std::string to_string(Profile p);

/// Normalized displacement s(tau)/dx for tau in [0, 1], and its first two tau-derivatives.
double profile_value(Profile p, double tau);
double profile_velocity(Profile p, double tau);
double profile_acceleration(Profile p, double tau);

struct TransportPlan {
    double distance = 0.0;  // m, signed
    double duration = 0.0;  // s
    double step = 0.0;  // s
    std::size_t steps = 0;  // L
    Profile profile = Profile::Poly5;
    double axial_frequency = 0.0;  // rad/s
    std::vector<Vec3> positions;  // L + 1 samples

    const Vec3& start() const { return positions.front(); }
    const Vec3& end() const { return positions.back(); }
    double time(std::size_t i) const { return static_cast<double>(i) * step; }
};

/// Samples r_i = start + s(i dt / T) e_x for i = 0..L. T must be an integer
/// multiple of dt (relative tolerance 1e-9). A zero distance yields a static plan.
TransportPlan generate_trajectory(double distance, double duration, double dt, Profile profile,
                                  double axial_frequency, const Vec3& start = Vec3::Zero());

/// Same plan traversed in the opposite direction (B to A).
TransportPlan reversed(const TransportPlan& plan);

}  // namespace ionshuttle
