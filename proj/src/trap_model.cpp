#include "ionshuttle/trap_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "ionshuttle/errors.hpp"

namespace ionshuttle {

void PotentialProbe::add_scaled(const PotentialProbe& other, double scale) {
    value += scale * other.value;
    gradient += scale * other.gradient;
    hessian += scale * other.hessian;
}

PotentialProbe& PotentialProbe::operator+=(const PotentialProbe& other) {
    add_scaled(other, 1.0);
    return *this;
}

PotentialProbe operator*(double scale, const PotentialProbe& p) {
    PotentialProbe out;
    out.add_scaled(p, scale);
    return out;
}

// ---------------------------------------------------------------------------
// Analytic shapes

namespace {

PotentialProbe probe_shape(const GaussianSegment& s, const Vec3& r, double u0) {
    const double dx = r.x() - s.center;
    const double w2 = s.width * s.width;
    const double g = std::exp(-dx * dx / (2.0 * w2));
    const double g1 = -dx / w2 * g;
    const double g2 = (dx * dx / w2 - 1.0) / w2 * g;

    const double y = r.y();
    const double z = r.z();
    const double h = u0 + 0.5 * s.transverse_curvature * (y * y - z * z) + s.vertical_tilt * z;
    const double hy = s.transverse_curvature * y;
    const double hz = -s.transverse_curvature * z + s.vertical_tilt;

    PotentialProbe p;
    p.value = g * h;
    p.gradient = Vec3(g1 * h, g * hy, g * hz);
    Mat3& H = p.hessian;
    H(0, 0) = g2 * h;
    H(1, 1) = g * s.transverse_curvature;
    H(2, 2) = -g * s.transverse_curvature;
    H(0, 1) = H(1, 0) = g1 * hy;
    H(0, 2) = H(2, 0) = g1 * hz;
    H(1, 2) = H(2, 1) = 0.0;
    return p;
}

PotentialProbe probe_shape(const UniformField& s, const Vec3& r, double) {
    PotentialProbe p;
    p.value = s.offset + s.field.dot(r);
    p.gradient = s.field;
    return p;
}

PotentialProbe probe_shape(const HarmonicWell& s, const Vec3& r, double) {
    const Vec3 d = r - s.center;
    const Mat3 K = 0.5 * (s.curvature + s.curvature.transpose());
    PotentialProbe p;
    p.value = 0.5 * d.dot(K * d);
    p.gradient = K * d;
    p.hessian = K;
    return p;
}

PotentialProbe probe_shape(const std::shared_ptr<const GridField>& g, const Vec3& r, double) {
    return g->probe(r);
}

}  // namespace

PotentialProbe ElectrodeBasis::probe_reference(const Vec3& r) const {
    return std::visit([&](const auto& s) { return probe_shape(s, r, reference_voltage); }, shape);
}

PotentialProbe ElectrodeBasis::probe(const Vec3& r) const {
    return (1.0 / reference_voltage) * probe_reference(r);
}

bool ElectrodeBasis::is_grid() const noexcept {
    return std::holds_alternative<std::shared_ptr<const GridField>>(shape);
}

// ---------------------------------------------------------------------------
// Grid field

namespace {

// First and second derivative of samples f[0..n) with unit spacing along a stride.
void differentiate_line(const double* f, std::size_t stride, std::size_t n, double h, double* d1,
                        double* d2) {
    auto at = [&](std::size_t i) { return f[i * stride]; };
    for (std::size_t i = 0; i < n; ++i) {
        double first = 0.0;
        double second = 0.0;
        if (i == 0) {
            first = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
            second = n >= 4 ? (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) / (h * h)
                            : (at(0) - 2.0 * at(1) + at(2)) / (h * h);
        } else if (i == n - 1) {
            first = (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h);
            second = n >= 4 ? (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) / (h * h)
                            : (at(n - 1) - 2.0 * at(n - 2) + at(n - 3)) / (h * h);
        } else {
            first = (at(i + 1) - at(i - 1)) / (2.0 * h);
            second = (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h);
        }
        if (d1) d1[i * stride] = first;
        if (d2) d2[i * stride] = second;
    }
}

}  // namespace

GridField::GridField(const Vec3& origin, const Vec3& spacing, std::array<std::size_t, 3> shape,
                     std::vector<double> values)
    : origin_(origin), spacing_(spacing), shape_(shape) {
    for (int a = 0; a < 3; ++a) {
        if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) {
            throw std::invalid_argument("grid spacing must be positive on every axis");
        }
        if (shape_[a] < 3) {
            throw std::invalid_argument("grid needs at least 3 nodes per axis");
        }
    }
    const std::size_t total = shape_[0] * shape_[1] * shape_[2];
    if (values.size() != total) {
        throw std::invalid_argument("grid value count does not match its shape");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("grid field contains non-finite values");
    }

    channels_[0] = std::move(values);
    for (std::size_t c = 1; c < channels_.size(); ++c) channels_[c].assign(total, 0.0);

    const std::array<std::size_t, 3> strides{shape_[1] * shape_[2], shape_[2], 1};
    // Lines along `axis` through every node of the remaining two axes.
    auto for_each_line = [&](int axis, auto&& fn) {
        const int a1 = (axis + 1) % 3;
        const int a2 = (axis + 2) % 3;
        for (std::size_t i = 0; i < shape_[a1]; ++i) {
            for (std::size_t j = 0; j < shape_[a2]; ++j) {
                fn(i * strides[a1] + j * strides[a2]);
            }
        }
    };

    const std::array<int, 3> grad_channel{1, 2, 3};
    const std::array<int, 3> second_channel{4, 5, 6};
    for (int axis = 0; axis < 3; ++axis) {
        for_each_line(axis, [&](std::size_t base) {
            differentiate_line(channels_[0].data() + base, strides[axis], shape_[axis], spacing_[axis],
                               channels_[grad_channel[axis]].data() + base,
                               channels_[second_channel[axis]].data() + base);
        });
    }
    // Mixed derivatives: d/dx of dy, d/dx of dz, d/dy of dz.
    struct Mixed {
        int outer_axis;
        int source;
        int target;
    };
    for (const Mixed m : {Mixed{0, 2, 7}, Mixed{0, 3, 8}, Mixed{1, 3, 9}}) {
        for_each_line(m.outer_axis, [&](std::size_t base) {
            differentiate_line(channels_[m.source].data() + base, strides[m.outer_axis],
                               shape_[m.outer_axis], spacing_[m.outer_axis],
                               channels_[m.target].data() + base, nullptr);
        });
    }
}

bool GridField::contains(const Vec3& r) const noexcept {
    for (int a = 0; a < 3; ++a) {
        const double extent = spacing_[a] * static_cast<double>(shape_[a] - 1);
        const double u = r[a] - origin_[a];
        const double slack = 1e-9 * spacing_[a];
        if (!(u >= -slack && u <= extent + slack)) return false;
    }
    return true;
}

PotentialProbe GridField::probe(const Vec3& r) const {
    if (!contains(r)) {
        std::ostringstream os;
        os << "probe point (" << r.x() << ", " << r.y() << ", " << r.z() << ") outside grid";
        throw OutOfBoundsError(os.str());
    }
    std::array<std::size_t, 3> i0{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
        const double u = (r[a] - origin_[a]) / spacing_[a];
        const double cell = std::clamp(std::floor(u), 0.0, static_cast<double>(shape_[a] - 2));
        i0[a] = static_cast<std::size_t>(cell);
        t[a] = std::clamp(u - cell, 0.0, 1.0);
    }

    std::array<double, 10> acc{};
    for (int corner = 0; corner < 8; ++corner) {
        const std::size_t dx = corner & 1;
        const std::size_t dy = (corner >> 1) & 1;
        const std::size_t dz = (corner >> 2) & 1;
        const double w = (dx ? t[0] : 1.0 - t[0]) * (dy ? t[1] : 1.0 - t[1]) * (dz ? t[2] : 1.0 - t[2]);
        if (w == 0.0) continue;
        const std::size_t idx = index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += w * channels_[c][idx];
    }

    PotentialProbe p;
    p.value = acc[0];
    p.gradient = Vec3(acc[1], acc[2], acc[3]);
    Mat3& H = p.hessian;
    H(0, 0) = acc[4];
    H(1, 1) = acc[5];
    H(2, 2) = acc[6];
    H(0, 1) = H(1, 0) = acc[7];
    H(0, 2) = H(2, 0) = acc[8];
    H(1, 2) = H(2, 1) = acc[9];
    return p;
}

// ---------------------------------------------------------------------------
// Trap model

TrapModel::TrapModel(std::vector<ElectrodeBasis> electrodes, ElectrodeBasis pseudopotential,
                     double mass, double charge)
    : electrodes_(std::move(electrodes)), mass_(mass), charge_(charge) {
    if (electrodes_.size() < 6) {
        throw std::invalid_argument("a trap model needs at least 6 dc electrodes");
    }
    if (!(mass_ > 0.0) || charge_ == 0.0) {
        throw std::invalid_argument("ion mass must be positive and charge nonzero");
    }
    for (const auto& e : electrodes_) {
        if (e.reference_voltage == 0.0 || !std::isfinite(e.reference_voltage)) {
            throw std::invalid_argument("electrode reference voltage must be finite and nonzero");
        }
    }
    pseudopotential.reference_voltage = 1.0;
    fixed_.push_back({std::move(pseudopotential), 1.0});
}

double TrapModel::frequency_for(double curvature) const {
    if (curvature <= 0.0) return 0.0;
    return std::sqrt(charge_ * curvature / mass_);
}

PotentialProbe TrapModel::probe_electrode(std::size_t j, const Vec3& r) const {
    return electrodes_.at(j).probe(r);
}

PotentialProbe TrapModel::probe_fixed(const Vec3& r) const {
    PotentialProbe p;
    for (const auto& term : fixed_) p.add_scaled(term.basis.probe_reference(r), term.weight);
    return p;
}

PotentialProbe TrapModel::probe(std::span<const double> voltages, const Vec3& r) const {
    if (voltages.size() != electrodes_.size()) {
        throw std::invalid_argument("voltage vector length does not match electrode count");
    }
    PotentialProbe p = probe_fixed(r);
    for (std::size_t j = 0; j < electrodes_.size(); ++j) {
        if (std::isnan(voltages[j])) throw std::invalid_argument("NaN electrode voltage");
        if (voltages[j] == 0.0) continue;
        p.add_scaled(electrodes_[j].probe(r), voltages[j]);
    }
    return p;
}

TrapModel TrapModel::with_fixed_term(ElectrodeBasis basis, double weight) const {
    TrapModel copy = *this;
    copy.fixed_.push_back({std::move(basis), weight});
    return copy;
}

TrapModel make_toy_trap(const ToyTrapParams& params) {
    if (params.segments < 6) {
        throw std::invalid_argument("toy trap needs at least 6 segments");
    }
    if (!(params.pitch > 0.0) || !(params.width > 0.0)) {
        throw std::invalid_argument("toy trap pitch and width must be positive");
    }
    std::vector<ElectrodeBasis> electrodes;
    int id = 0;
    for (std::size_t s = 0; s < params.segments; ++s) {
        for (double side : {1.0, -1.0}) {
            GaussianSegment g;
            g.center = segment_center(params, s);
            g.width = params.width;
            g.transverse_curvature = params.transverse_curvature;
            g.vertical_tilt = side * params.vertical_tilt;
            electrodes.push_back({id++, 1.0, g});
        }
    }
    electrodes.push_back({id++, 1.0, UniformField{Vec3(0.0, 0.0, params.correction_field), 0.0}});

    HarmonicWell ps;
    ps.curvature = Vec3(0.0, params.pseudopotential_curvature, params.pseudopotential_curvature)
                       .asDiagonal();
    return TrapModel(std::move(electrodes), ElectrodeBasis{-1, 1.0, ps}, params.mass, params.charge);
}

TrapModel make_toy_trap(std::size_t segments, double pitch, double width, double curvature,
                        double tilt) {
    ToyTrapParams p;
    p.segments = segments;
    p.pitch = pitch;
    p.width = width;
    p.transverse_curvature = curvature;
    p.vertical_tilt = tilt;
    return make_toy_trap(p);
}

// ---------------------------------------------------------------------------
// Grid file IO

namespace {

constexpr char kMagic[8] = {'I', 'O', 'N', 'G', 'R', 'I', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
T byteswap_value(T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    std::reverse(buf, buf + sizeof(T));
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw ParseError(std::string("grid file truncated while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    return v;
}

}  // namespace

TrapModel load_basis_grids(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open grid file " + path);

    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw ParseError("grid header: bad magic");
    }
    if (read_le<std::uint32_t>(in, "version") != kVersion) {
        throw ParseError("grid header: unsupported version");
    }
    const auto count = read_le<std::uint32_t>(in, "electrode count");
    Vec3 origin, spacing;
    for (int a = 0; a < 3; ++a) origin[a] = read_le<double>(in, "origin");
    for (int a = 0; a < 3; ++a) spacing[a] = read_le<double>(in, "spacing");
    std::array<std::size_t, 3> shape{};
    for (int a = 0; a < 3; ++a) shape[a] = static_cast<std::size_t>(read_le<std::uint64_t>(in, "shape"));
    const double mass = read_le<double>(in, "mass");
    const double charge = read_le<double>(in, "charge");

    for (int a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw ParseError("grid header: spacing must be positive");
        }
        if (shape[a] < 3 || shape[a] > (1u << 20)) throw ParseError("grid header: invalid shape");
    }
    if (!(mass > 0.0) || !std::isfinite(mass) || charge == 0.0 || !std::isfinite(charge)) {
        throw ParseError("grid header: invalid mass or charge");
    }
    const std::size_t total = shape[0] * shape[1] * shape[2];

    std::vector<ElectrodeBasis> electrodes;
    std::optional<ElectrodeBasis> pseudo;
    for (std::uint32_t rec = 0;; ++rec) {
        if (in.peek() == std::char_traits<char>::eof()) break;
        const std::string tag = "record " + std::to_string(rec);
        const auto kind = read_le<std::uint32_t>(in, tag.c_str());
        const auto id = read_le<std::int32_t>(in, tag.c_str());
        const double u0 = read_le<double>(in, tag.c_str());
        if (kind > 1) throw ParseError(tag + ": unknown record kind");
        if (u0 == 0.0 || !std::isfinite(u0)) throw ParseError(tag + ": invalid reference voltage");
        std::vector<double> values(total);
        for (std::size_t i = 0; i < total; ++i) {
            values[i] = read_le<double>(in, tag.c_str());
            if (!std::isfinite(values[i])) {
                throw ParseError(tag + " (electrode " + std::to_string(id) + "): non-finite value");
            }
        }
        auto field = std::make_shared<const GridField>(origin, spacing, shape, std::move(values));
        ElectrodeBasis basis{id, u0, field};
        if (kind == 1) {
            if (pseudo) throw ParseError(tag + ": duplicate pseudopotential record");
            pseudo = std::move(basis);
        } else {
            electrodes.push_back(std::move(basis));
        }
    }
    if (!pseudo) throw ParseError("pseudopotential record absent");
    if (electrodes.size() != count) {
        throw ParseError("grid header declares " + std::to_string(count) + " electrodes, file holds " +
                         std::to_string(electrodes.size()));
    }
    try {
        return TrapModel(std::move(electrodes), std::move(*pseudo), mass, charge);
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("grid file: ") + e.what());
    }
}

void export_basis_grids(const TrapModel& model, const std::string& path, const GridSpec& spec) {
    for (int a = 0; a < 3; ++a) {
        if (!(spec.spacing[a] > 0.0) || spec.shape[a] < 3) {
            throw std::invalid_argument("export grid needs positive spacing and >= 3 nodes per axis");
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");

    out.write(kMagic, 8);
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.electrode_count()));
    for (int a = 0; a < 3; ++a) write_le<double>(out, spec.origin[a]);
    for (int a = 0; a < 3; ++a) write_le<double>(out, spec.spacing[a]);
    for (int a = 0; a < 3; ++a) write_le<std::uint64_t>(out, spec.shape[a]);
    write_le<double>(out, model.mass());
    write_le<double>(out, model.charge());

    auto write_field = [&](auto&& sample) {
        for (std::size_t ix = 0; ix < spec.shape[0]; ++ix) {
            for (std::size_t iy = 0; iy < spec.shape[1]; ++iy) {
                for (std::size_t iz = 0; iz < spec.shape[2]; ++iz) {
                    const Vec3 r = spec.origin + Vec3(ix * spec.spacing[0], iy * spec.spacing[1],
                                                      iz * spec.spacing[2]);
                    write_le<double>(out, sample(r));
                }
            }
        }
    };

    for (const auto& e : model.electrodes()) {
        write_le<std::uint32_t>(out, 0);
        write_le<std::int32_t>(out, e.id);
        write_le<double>(out, e.reference_voltage);
        write_field([&](const Vec3& r) { return e.probe_reference(r).value; });
    }
    write_le<std::uint32_t>(out, 1);
    write_le<std::int32_t>(out, model.pseudopotential().id);
    write_le<double>(out, 1.0);
    write_field([&](const Vec3& r) { return model.probe_fixed(r).value; });
    if (!out) throw std::runtime_error("failed writing grid file " + path);
}

}  // namespace ionshuttle
