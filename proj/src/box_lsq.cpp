#include "ionshuttle/box_lsq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ionshuttle/errors.hpp"

namespace ionshuttle {

BoxLsqResult solve_box_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& r,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                           const Eigen::VectorXd& prior, double reg) {
    const Eigen::Index n = A.cols();
    if (r.size() != A.rows() || lo.size() != n || hi.size() != n || prior.size() != n) {
        throw std::invalid_argument("box least squares: dimension mismatch");
    }
    if (reg < 0.0) throw std::invalid_argument("box least squares: negative regularization");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(lo[i] <= hi[i])) throw std::invalid_argument("box least squares: empty box");
    }

    const double sreg = std::sqrt(reg);

    // 0 free, -1 at lower bound, +1 at upper bound
    std::vector<int> state(static_cast<std::size_t>(n), 0);
    Eigen::VectorXd x = prior.cwiseMax(lo).cwiseMin(hi);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (lo[i] == hi[i]) state[i] = -1;
    }

    const double scale = std::max(1.0, A.colwise().squaredNorm().maxCoeff() + reg);
    const double tol = 1e-13 * scale;
    const std::size_t max_iter = 20 * static_cast<std::size_t>(n) + 100;

    BoxLsqResult result;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        result.iterations = iter + 1;
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (state[i] == 0) free.push_back(i);
        }

        Eigen::VectorXd target = x;
        if (!free.empty()) {
            // Subspace problem as a stacked least-squares system, solved by QR to
            // avoid squaring the condition number.
            const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
            const Eigen::Index m = A.rows();
            Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m + nf, nf);
            Eigen::VectorXd t(m + nf);
            Eigen::VectorXd fixed_part = r;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (state[j] != 0) fixed_part -= A.col(j) * x[j];
            }
            t.head(m) = fixed_part;
            for (Eigen::Index a = 0; a < nf; ++a) {
                S.col(a).head(m) = A.col(free[a]);
                S(m + a, a) = sreg;
                t[m + a] = sreg * prior[free[a]];
            }
            const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(S);
            if (qr.rank() < nf) throw NumericalError("box least squares: rank-deficient subproblem");
            const Eigen::VectorXd xf = qr.solve(t);
            for (Eigen::Index a = 0; a < nf; ++a) target[free[a]] = xf[a];
        }

        // Longest feasible step toward the subspace minimizer.
        double alpha = 1.0;
        Eigen::Index blocking = -1;
        int blocking_side = 0;
        for (Eigen::Index i : free) {
            const double p = target[i] - x[i];
            if (p < 0.0 && target[i] < lo[i]) {
                const double a = (lo[i] - x[i]) / p;
                if (a < alpha) {
                    alpha = a;
                    blocking = i;
                    blocking_side = -1;
                }
            } else if (p > 0.0 && target[i] > hi[i]) {
                const double a = (hi[i] - x[i]) / p;
                if (a < alpha) {
                    alpha = a;
                    blocking = i;
                    blocking_side = 1;
                }
            }
        }
        alpha = std::clamp(alpha, 0.0, 1.0);
        for (Eigen::Index i : free) x[i] += alpha * (target[i] - x[i]);
        if (blocking >= 0) {
            x[blocking] = blocking_side < 0 ? lo[blocking] : hi[blocking];
            state[blocking] = blocking_side;
            continue;
        }
        for (Eigen::Index i : free) x[i] = std::clamp(target[i], lo[i], hi[i]);

        // Stationary on the working set; release the bound with the most
        // negative multiplier, if any.
        const Eigen::VectorXd grad = A.transpose() * (A * x - r) + reg * (x - prior);
        Eigen::Index release = -1;
        double worst = -tol;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (state[i] == 0 || lo[i] == hi[i]) continue;
            const double multiplier = state[i] < 0 ? grad[i] : -grad[i];
            if (multiplier < worst) {
                worst = multiplier;
                release = i;
            }
        }
        if (release < 0) {
            result.x = x;
            result.active = static_cast<std::size_t>(std::count_if(state.begin(), state.end(), [](int s) { return s != 0; }));
            return result;
        }
        state[release] = 0;
    }
    throw NumericalError("box least squares: active-set iteration did not terminate");
}

}  // namespace ionshuttle
