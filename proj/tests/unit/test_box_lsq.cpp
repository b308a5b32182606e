#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ionshuttle/box_lsq.hpp"

using namespace ionshuttle;
using Catch::Matchers::WithinAbs;

namespace {

Eigen::VectorXd normal_solution(const Eigen::MatrixXd& A, const Eigen::VectorXd& r, const Eigen::VectorXd& prior, double reg) {
    const Eigen::MatrixXd H = A.transpose() * A + reg * Eigen::MatrixXd::Identity(A.cols(), A.cols());
    return H.ldlt().solve(A.transpose() * r + reg * prior);
}

}  // namespace

TEST_CASE("inactive bounds give the regularized normal-equation solution") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd A(6, 4);
    Eigen::VectorXd r(6), prior(4);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
    for (int i = 0; i < 6; ++i) r[i] = n(rng);
    for (int i = 0; i < 4; ++i) prior[i] = 0.1 * n(rng);
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(4, -100), hi = Eigen::VectorXd::Constant(4, 100);
    const BoxLsqResult res = solve_box_lsq(A, r, lo, hi, prior, 1e-3);
    const Eigen::VectorXd ref = normal_solution(A, r, prior, 1e-3);
    for (int i = 0; i < 4; ++i) CHECK_THAT(res.x[i], WithinAbs(ref[i], 1e-10));
    CHECK(res.active == 0);
}

TEST_CASE("active bounds satisfy the KKT conditions") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0, 1);
    const double reg = 1e-2;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd A(8, 5);
        Eigen::VectorXd r(8);
        for (int i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
        for (int i = 0; i < 8; ++i) r[i] = 3 * n(rng);
        const Eigen::VectorXd prior = Eigen::VectorXd::Zero(5);
        const Eigen::VectorXd lo = Eigen::VectorXd::Constant(5, -0.3), hi = Eigen::VectorXd::Constant(5, 0.3);
        const BoxLsqResult res = solve_box_lsq(A, r, lo, hi, prior, reg);
        // gradient of 0.5|Ax - r|^2 + 0.5 reg |x - prior|^2
        const Eigen::VectorXd g = A.transpose() * (A * res.x - r) + reg * (res.x - prior);
        for (int i = 0; i < 5; ++i) {
            REQUIRE(res.x[i] >= lo[i] - 1e-12);
            REQUIRE(res.x[i] <= hi[i] + 1e-12);
            if (res.x[i] <= lo[i] + 1e-10) CHECK(g[i] >= -1e-8);
            else if (res.x[i] >= hi[i] - 1e-10) CHECK(g[i] <= 1e-8);
            else CHECK_THAT(g[i], WithinAbs(0.0, 1e-8));
        }
    }
}

TEST_CASE("inconsistent bounds are rejected") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd r = Eigen::VectorXd::Ones(2), p = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd lo(2), hi(2);
    lo << 0, 1;
    hi << 1, 0;
    CHECK_THROWS_AS(solve_box_lsq(A, r, lo, hi, p, 0.0), std::invalid_argument);
}
