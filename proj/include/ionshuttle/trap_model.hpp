#pragma once

// Electrostatic environment of a segmented linear trap: one basis potential per
// dc electrode plus the rf pseudopotential, combined linearly in the electrode
// voltages.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ionshuttle/constants.hpp"

namespace ionshuttle {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Value, gradient and Hessian of a potential at one point (volts, V/m, V/m^2).
struct PotentialProbe {
    double value = 0.0;
    Vec3 gradient = Vec3::Zero();
    Mat3 hessian = Mat3::Zero();

    void add_scaled(const PotentialProbe& other, double scale);
    PotentialProbe& operator+=(const PotentialProbe& other);
    friend PotentialProbe operator*(double scale, const PotentialProbe& p);
};

/// Separable surrogate electrode:
///   Phi(r) = exp(-(x-center)^2 / (2 width^2)) * (U0 + k_t (y^2 - z^2) / 2 + t_z z)
/// It does not satisfy the Laplace equation; it exists so that every derivative
/// is available in closed form.
struct GaussianSegment {
    double center = 0.0;
    double width = 0.0;
    double transverse_curvature = 0.0;  // k_t, V/m^2 at the reference voltage
    double vertical_tilt = 0.0;  // t_z, V/m at the reference voltage
};

/// Phi(r) = offset + field . r (volts at the reference voltage).
struct UniformField {
    Vec3 field = Vec3::Zero();
    double offset = 0.0;
};

/// Phi(r) = (r - center)^T K (r - center) / 2.
struct HarmonicWell {
    Vec3 center = Vec3::Zero();
    Mat3 curvature = Mat3::Zero();
};

/// Scalar field sampled on a rectilinear grid. Derivatives are precomputed at the
/// nodes with second-order finite differences and interpolated trilinearly.
class GridField {
public:
    GridField(const Vec3& origin, const Vec3& spacing, std::array<std::size_t, 3> shape,
              std::vector<double> values);

    const Vec3& origin() const noexcept { return origin_; }
    const Vec3& spacing() const noexcept { return spacing_; }
    const std::array<std::size_t, 3>& shape() const noexcept { return shape_; }
    std::span<const double> values() const noexcept { return channels_[0]; }

    bool contains(const Vec3& r) const noexcept;
    PotentialProbe probe(const Vec3& r) const;

    std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz) const noexcept {
        return (ix * shape_[1] + iy) * shape_[2] + iz;
    }

private:
    Vec3 origin_;
    Vec3 spacing_;
    std::array<std::size_t, 3> shape_;
    // value, dx, dy, dz, dxx, dyy, dzz, dxy, dxz, dyz
    std::array<std::vector<double>, 10> channels_;
};

using BasisShape = std::variant<GaussianSegment, UniformField, HarmonicWell, std::shared_ptr<const GridField>>;

/// One basis potential. `shape` describes the field produced with the electrode at
/// `reference_voltage` and every other electrode grounded.
struct ElectrodeBasis {
    int id = 0;
    double reference_voltage = 1.0;
    BasisShape shape;

    /// Potential per applied volt.
    PotentialProbe probe(const Vec3& r) const;
    /// Potential at the reference voltage.
    PotentialProbe probe_reference(const Vec3& r) const;
    bool is_grid() const noexcept;
};

class TrapModel {
public:
    struct FixedTerm {
        ElectrodeBasis basis;
        double weight = 1.0;
    };

    TrapModel(std::vector<ElectrodeBasis> electrodes, ElectrodeBasis pseudopotential,
              double mass = constants::yb171_mass, double charge = constants::elementary_charge);

    std::size_t electrode_count() const noexcept { return electrodes_.size(); }
    const ElectrodeBasis& electrode(std::size_t j) const { return electrodes_.at(j); }
    const std::vector<ElectrodeBasis>& electrodes() const noexcept { return electrodes_; }
    const ElectrodeBasis& pseudopotential() const noexcept { return fixed_.front().basis; }
    const std::vector<FixedTerm>& fixed_terms() const noexcept { return fixed_; }

    double mass() const noexcept { return mass_; }
    double charge() const noexcept { return charge_; }

    /// m w^2 / q, the axial curvature (V/m^2) that produces angular frequency w.
    double curvature_for(double angular_frequency) const noexcept {
        return mass_ * angular_frequency * angular_frequency / charge_;
    }
    double frequency_for(double curvature) const;

    PotentialProbe probe(std::span<const double> voltages, const Vec3& r) const;
    PotentialProbe probe_electrode(std::size_t j, const Vec3& r) const;
    /// Pseudopotential plus any additional fixed-weight terms.
    PotentialProbe probe_fixed(const Vec3& r) const;

    /// Copy of this model with an extra fixed-weight contribution (e.g. a stray field).
    TrapModel with_fixed_term(ElectrodeBasis basis, double weight) const;

private:
    std::vector<ElectrodeBasis> electrodes_;
    std::vector<FixedTerm> fixed_;
    double mass_;
    double charge_;
};

struct ToyTrapParams {
    std::size_t segments = 6;
    double pitch = 280e-6;
    double width = 170e-6;
    double transverse_curvature = 2.0e7;  // V/m^2 per volt
    double vertical_tilt = 2.0e3;  // V/m per volt
    double pseudopotential_curvature = 1.6e8;  // V/m^2, radial
    double correction_field = 2.0e3;  // V/m per volt, along z
    double mass = constants::yb171_mass;
    double charge = constants::elementary_charge;
};

/// Analytic surrogate trap. Segment s carries two electrodes (ids 2s and 2s+1)
/// centered at x = s * pitch with opposite vertical tilt; the last electrode is a
/// correction electrode producing a uniform vertical field.
TrapModel make_toy_trap(const ToyTrapParams& params);
TrapModel make_toy_trap(std::size_t segments, double pitch, double width, double curvature,
                        double tilt);

inline double segment_center(const ToyTrapParams& params, std::size_t segment) {
    return static_cast<double>(segment) * params.pitch;
}

/// Sampling lattice used when exporting basis grids.
struct GridSpec {
    Vec3 origin = Vec3::Zero();
    Vec3 spacing = Vec3::Constant(1e-5);
    std::array<std::size_t, 3> shape{4, 4, 4};
};

/// Binary grid file. Layout (little-endian):
///   char[8]  magic "IONGRID1"
///   uint32   format version (1)
///   uint32   dc electrode count n
///   float64  origin[3], spacing[3]   (m)
///   uint64   shape[3]
///   float64  mass (kg), charge (C)
///   then n + 1 records, each:
///     uint32  kind (0 = dc electrode, 1 = pseudopotential)
///     int32   electrode id
///     float64 reference voltage (V)
///     float64 field[shape0 * shape1 * shape2], index (ix * shape1 + iy) * shape2 + iz
TrapModel load_basis_grids(const std::string& path);
void export_basis_grids(const TrapModel& model, const std::string& path, const GridSpec& spec);

}  // namespace ionshuttle
