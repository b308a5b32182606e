#include "ionshuttle/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ionshuttle {

Profile parse_profile(const std::string& name) {
    if (name == "poly5") return Profile::Poly5;
    if (name == "sine") return Profile::Sine;
    throw std::invalid_argument("unknown trajectory profile '" + name + "' (poly5|sine)");
}

std::string to_string(Profile p) { return p == Profile::Poly5 ? "poly5" : "sine"; }

double profile_value(Profile p, double t) {
    if (p == Profile::Poly5) return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    return t - std::sin(constants::two_pi * t) / constants::two_pi;
}

double profile_velocity(Profile p, double t) {
    if (p == Profile::Poly5) return 30.0 * t * t * (1.0 - t) * (1.0 - t);
    return 1.0 - std::cos(constants::two_pi * t);
}

double profile_acceleration(Profile p, double t) {
    if (p == Profile::Poly5) return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    return constants::two_pi * std::sin(constants::two_pi * t);
}

TransportPlan generate_trajectory(double distance, double duration, double dt, Profile profile,
                                  double axial_frequency, const Vec3& start) {
    if (!(dt > 0.0) || !(duration > 0.0)) {
        throw std::invalid_argument("duration and time step must be positive");
    }
    if (!std::isfinite(distance)) throw std::invalid_argument("transport distance must be finite");
    const double ratio = duration / dt;
    const double n = std::round(ratio);
    if (n < 1.0 || std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio)) {
        throw std::invalid_argument("transport duration is not an integer multiple of the time step");
    }

    TransportPlan plan;
    plan.distance = distance;
    plan.steps = static_cast<std::size_t>(n);
    plan.step = dt;
    plan.duration = n * dt;
    plan.profile = profile;
    plan.axial_frequency = axial_frequency;
    plan.positions.reserve(plan.steps + 1);
    for (std::size_t i = 0; i <= plan.steps; ++i) {
        double s = 0.0;
        if (i == plan.steps) {
            s = 1.0;
        } else if (i > 0) {
            s = profile_value(profile, static_cast<double>(i) / n);
        }
        plan.positions.push_back(start + Vec3(distance * s, 0.0, 0.0));
    }
    return plan;
}

TransportPlan reversed(const TransportPlan& plan) {
    TransportPlan out = plan;
    out.distance = -plan.distance;
    std::reverse(out.positions.begin(), out.positions.end());
    return out;
}

}  // namespace ionshuttle
