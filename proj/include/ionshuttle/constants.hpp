#pragma once

namespace ionshuttle::constants {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double hbar = 1.054571817e-34;  // J s

inline constexpr double yb171_mass = 170.936323 * atomic_mass_unit;
inline constexpr double yb172_mass = 171.936382 * atomic_mass_unit;

}  // namespace ionshuttle::constants
