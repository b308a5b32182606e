#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <memory>

#include "ionshuttle/errors.hpp"
#include "ionshuttle/trap_model.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Central differences of probe().value around r.
PotentialProbe numeric_probe(const ElectrodeBasis& e, const Vec3& r, double h) {
    PotentialProbe p;
    auto f = [&](const Vec3& x) { return e.probe(x).value; };
    p.value = f(r);
    for (int i = 0; i < 3; ++i) {
        Vec3 d = Vec3::Zero();
        d[i] = h;
        p.gradient[i] = (f(r + d) - f(r - d)) / (2 * h);
        for (int j = 0; j < 3; ++j) {
            Vec3 e2 = Vec3::Zero();
            e2[j] = h;
            p.hessian(i, j) = (f(r + d + e2) - f(r + d - e2) - f(r - d + e2) + f(r - d - e2)) / (4 * h * h);
        }
    }
    return p;
}

}  // namespace

TEST_CASE("gaussian segment derivatives match finite differences") {
    ElectrodeBasis e{0, 1.0, GaussianSegment{100e-6, 170e-6, 2e7, 2e3}};
    const Vec3 r(150e-6, 3e-6, -2e-6);
    const PotentialProbe a = e.probe(r);
    const PotentialProbe n = numeric_probe(e, r, 1e-7);
    CHECK_THAT(a.value, WithinRel(n.value, 1e-12));
    for (int i = 0; i < 3; ++i) {
        CHECK_THAT(a.gradient[i], WithinAbs(n.gradient[i], 1e-6 * (1 + std::abs(n.gradient[i]))));
        for (int j = 0; j < 3; ++j) CHECK_THAT(a.hessian(i, j), WithinAbs(n.hessian(i, j), 1e-4 * (1 + std::abs(n.hessian(i, j)))));
    }
    CHECK_THAT(a.hessian(0, 1), WithinAbs(a.hessian(1, 0), 1e-9));
}

TEST_CASE("probe scales with reference voltage") {
    ElectrodeBasis e{3, 2.0, UniformField{Vec3(0, 0, 4.0), 1.0}};
    const Vec3 r(0, 0, 0.5);
    CHECK_THAT(e.probe_reference(r).value, WithinAbs(3.0, 1e-15));
    CHECK_THAT(e.probe(r).value, WithinAbs(1.5, 1e-15));
    CHECK_THAT(e.probe(r).gradient.z(), WithinAbs(2.0, 1e-15));
}

TEST_CASE("model combines electrodes linearly") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    REQUIRE(m.electrode_count() == 13);
    const Vec3 r(300e-6, 1e-6, 2e-6);
    std::vector<double> u(m.electrode_count(), 0.0);
    u[4] = 1.5;
    u[12] = -0.7;
    const PotentialProbe total = m.probe(u, r);
    PotentialProbe sum = m.probe_fixed(r);
    sum.add_scaled(m.probe_electrode(4, r), 1.5);
    sum.add_scaled(m.probe_electrode(12, r), -0.7);
    CHECK_THAT(total.value, WithinRel(sum.value, 1e-12));
    CHECK_THAT(total.hessian(0, 0), WithinRel(sum.hessian(0, 0), 1e-12));
}

TEST_CASE("curvature and frequency are inverse") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    const double w = constants::two_pi * 230e3;
    const double k = m.curvature_for(w);
    CHECK_THAT(k, WithinRel(constants::yb171_mass * w * w / constants::elementary_charge, 1e-14));
    CHECK_THAT(m.frequency_for(k), WithinRel(w, 1e-12));
    CHECK_THAT(k, WithinRel(3.6999e6, 1e-3));
}

TEST_CASE("grid field reproduces quadratic nodes and derivatives") {
    const Vec3 origin(-1e-5, -1e-5, -1e-5);
    const Vec3 h = Vec3::Constant(1e-6);
    std::array<std::size_t, 3> shape{21, 21, 21};
    auto f = [](const Vec3& r) { return 1.0 + 3e4 * r.x() + 2e9 * r.x() * r.x() - 1e9 * r.y() * r.z(); };
    std::vector<double> v(shape[0] * shape[1] * shape[2]);
    for (std::size_t i = 0; i < shape[0]; ++i)
        for (std::size_t j = 0; j < shape[1]; ++j)
            for (std::size_t k = 0; k < shape[2]; ++k)
                v[(i * shape[1] + j) * shape[2] + k] = f(origin + Vec3(i * h.x(), j * h.y(), k * h.z()));
    GridField g(origin, h, shape, v);
    const Vec3 node = origin + Vec3(7e-6, 12e-6, 3e-6);
    const PotentialProbe p = g.probe(node);
    CHECK_THAT(p.value, WithinRel(f(node), 1e-12));
    CHECK_THAT(p.gradient.x(), WithinRel(3e4 + 4e9 * node.x(), 1e-9));
    CHECK_THAT(p.hessian(0, 0), WithinRel(4e9, 1e-9));
    CHECK_THAT(p.hessian(1, 2), WithinRel(-1e9, 1e-9));
    CHECK(g.contains(Vec3::Zero()));
    CHECK_FALSE(g.contains(Vec3(2e-5, 0, 0)));
    CHECK_THROWS_AS(g.probe(Vec3(2e-5, 0, 0)), OutOfBoundsError);
}

TEST_CASE("basis grid export and load round trip") {
    const TrapModel m = make_toy_trap(ToyTrapParams{});
    GridSpec spec;
    spec.origin = Vec3(200e-6, -10e-6, -10e-6);
    spec.spacing = Vec3::Constant(5e-6);
    spec.shape = {41, 5, 5};
    const auto path = (std::filesystem::temp_directory_path() / "ionshuttle_grid_test.bin").string();
    export_basis_grids(m, path, spec);
    const TrapModel g = load_basis_grids(path);
    std::filesystem::remove(path);
    REQUIRE(g.electrode_count() == m.electrode_count());
    CHECK_THAT(g.mass(), WithinRel(m.mass(), 1e-15));
    const Vec3 node = spec.origin + Vec3(20 * 5e-6, 2 * 5e-6, 2 * 5e-6);
    for (std::size_t j = 0; j < m.electrode_count(); ++j) {
        CHECK_THAT(g.probe_electrode(j, node).value, WithinAbs(m.probe_electrode(j, node).value, 1e-12));
    }
    CHECK_THAT(g.probe_fixed(node).value, WithinAbs(m.probe_fixed(node).value, 1e-12));
}

TEST_CASE("loading a malformed grid file fails") {
    const auto path = (std::filesystem::temp_directory_path() / "ionshuttle_bad_grid.bin").string();
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("NOTAGRID", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_basis_grids(path), ParseError);
    std::filesystem::remove(path);
}
