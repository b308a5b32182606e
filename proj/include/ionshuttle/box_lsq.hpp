#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace ionshuttle {

struct BoxLsqResult {
    Eigen::VectorXd x;
    std::size_t iterations = 0;
    std::size_t active = 0;  // variables held at a bound
};

/// Minimizes |A x - r|^2 + reg |x - prior|^2 subject to lo <= x <= hi with a
/// primal active-set method. Rows of A are expected to carry their weights
/// already. Working-set changes are taken in index order so the result is
/// deterministic. Requires reg > 0 or A of full column rank.
BoxLsqResult solve_box_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& r,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                           const Eigen::VectorXd& prior, double reg);

}  // namespace ionshuttle
