#include "ionshuttle/fidelity_analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "ionshuttle/constants.hpp"
#include "ionshuttle/errors.hpp"
#include "ionshuttle/parallel.hpp"

namespace ionshuttle {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

using Eval = std::function<bool(const Eigen::VectorXd&, double&, Eigen::VectorXd&, Eigen::MatrixXd&)>;

// Damped Newton ascent. `eval` returns false outside the domain.
Eigen::VectorXd newton_maximize(const Eval& eval, Eigen::VectorXd x, std::size_t max_iterations = 200) {
    const auto n = x.size();
    double f = 0.0;
    Eigen::VectorXd g(n);
    Eigen::MatrixXd h(n, n);
    if (!eval(x, f, g, h)) throw std::logic_error("newton_maximize: infeasible start");
    Eigen::VectorXd g_try(n);
    Eigen::MatrixXd h_try(n, n);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        Eigen::MatrixXd neg = -h;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(neg);
        const double emax = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        const double floor = 1e-10 * emax;
        const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
        const Eigen::VectorXd d = es.eigenvectors() * ((es.eigenvectors().transpose() * g).cwiseQuotient(ev));
        const double dec = g.dot(d);
        if (!(dec > 1e-14 * std::max(1.0, std::abs(f)))) break;
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            const Eigen::VectorXd xt = x + t * d;
            if ((t * d).norm() <= 1e-15 * (1.0 + x.norm())) break;
            double ft = 0.0;
            if (eval(xt, ft, g_try, h_try) && ft >= f + 1e-4 * t * dec) {
                x = xt;
                f = ft;
                g = g_try;
                h = h_try;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    return x;
}

// Binomial kernel terms at tag probability q: value, d/dq, d2/dq2.
bool kernel(double b, double n, double q, double& v, double& d1, double& d2) {
    v = d1 = d2 = 0.0;
    const double nb = n - b;
    if (b > 0.0) {
        if (!(q > 0.0)) return false;
        v += b * std::log(q);
        d1 += b / q;
        d2 -= b / (q * q);
    }
    if (nb > 0.0) {
        if (!(q < 1.0)) return false;
        v += nb * std::log1p(-q);
        d1 -= nb / (1.0 - q);
        d2 -= nb / ((1.0 - q) * (1.0 - q));
    }
    return true;
}

double total_trials(const RamseyDataset& data) {
    double n = 0.0;
    for (const auto& p : data.points) n += static_cast<double>(p.trials);
    return n;
}

void check_detection(double p_bb, double p_db) {
    if (!(p_bb >= 0.0 && p_bb <= 1.0 && p_db >= 0.0 && p_db <= 1.0)) {
        throw std::invalid_argument("identification probabilities must lie in [0, 1]");
    }
    if (p_bb + p_db - 1.0 == 0.0) throw SingularInputError("p_bb + p_db = 1 carries no state information");
}

const double barrier_start = 1.0;
const double barrier_end = 1e-12;

}  // namespace

void RamseyDataset::validate() const {
    std::set<double> phases;
    for (const auto& p : points) {
        if (!std::isfinite(p.phase)) throw std::invalid_argument("non-finite Ramsey phase");
        if (p.trials < 0 || p.bright < 0 || p.bright > p.trials) {
            throw std::invalid_argument("Ramsey points need 0 <= b <= N");
        }
        phases.insert(std::remainder(p.phase, constants::two_pi));
    }
    if (phases.size() < 3) throw std::invalid_argument("a fringe fit needs at least 3 distinct phases");
    if (transports < 0) throw std::invalid_argument("transport count must be nonnegative");
    if (precession_time < 0.0) throw std::invalid_argument("precession time must be nonnegative");
}

double ramsey_log_likelihood(const RamseyDataset& data, double p_bb, double p_db, double amplitude, double offset,
                             double phase) {
    const double g = p_bb + p_db - 1.0;
    double acc = 0.0;
    for (const auto& pt : data.points) {
        const double p = offset + amplitude * std::sin(pt.phase - phase);
        const double q = (1.0 - p_db) + g * p;
        double v, d1, d2;
        if (!kernel(static_cast<double>(pt.bright), static_cast<double>(pt.trials), q, v, d1, d2)) return neg_inf;
        acc += v;
    }
    return acc;
}

RamseyFit fit_ramsey(const RamseyDataset& data, double p_bb, double p_db) {
    data.validate();
    check_detection(p_bb, p_db);
    if (total_trials(data) <= 0.0) throw InsufficientDataError("every Ramsey trial was discarded");
    const double g = p_bb + p_db - 1.0;

    // Concave in (B, c, s) with p = B + c sin(phi) + s cos(phi); the constraints
    // |(c, s)| <= B and |(c, s)| <= 1 - B are second-order cones.
    double mu = barrier_start;
    const Eval eval = [&](const Eigen::VectorXd& x, double& f, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
        const double b0 = x[0], c = x[1], s = x[2];
        const double r2 = c * c + s * s;
        const double t = 1.0 - b0;
        const double d1 = b0 * b0 - r2;
        const double d2 = t * t - r2;
        if (!(b0 > 0.0 && t > 0.0 && d1 > 0.0 && d2 > 0.0)) return false;
        f = 0.0;
        grad.setZero();
        hess.setZero();
        for (const auto& pt : data.points) {
            const Eigen::Vector3d v(1.0, std::sin(pt.phase), std::cos(pt.phase));
            const double p = v.dot(x.head<3>());
            const double q = (1.0 - p_db) + g * p;
            double k, k1, k2;
            if (!kernel(static_cast<double>(pt.bright), static_cast<double>(pt.trials), q, k, k1, k2)) return false;
            f += k;
            grad += (k1 * g) * v;
            hess += (k2 * g * g) * (v * v.transpose());
        }
        const Eigen::Vector3d u1(2.0 * b0, -2.0 * c, -2.0 * s);
        const Eigen::Vector3d u2(-2.0 * t, -2.0 * c, -2.0 * s);
        const Eigen::Matrix3d diag = Eigen::Vector3d(2.0, -2.0, -2.0).asDiagonal();
        f += mu * (std::log(d1) + std::log(d2));
        grad += mu * (u1 / d1 + u2 / d2);
        hess += mu * (diag / d1 - u1 * u1.transpose() / (d1 * d1) + diag / d2 - u2 * u2.transpose() / (d2 * d2));
        return true;
    };

    RamseyFit best;
    best.log_likelihood = neg_inf;
    for (int j = 0; j < 8; ++j) {
        const double phi0 = constants::two_pi * j / 8.0;
        Eigen::VectorXd x(3);
        x << 0.5, 0.25 * std::cos(phi0), -0.25 * std::sin(phi0);
        for (mu = barrier_start; mu >= barrier_end * 0.999; mu *= 0.1) x = newton_maximize(eval, x);
        RamseyFit fit;
        fit.offset = x[0];
        fit.amplitude = std::hypot(x[1], x[2]);
        fit.phase = fit.amplitude > 0.0 ? std::atan2(-x[2], x[1]) : 0.0;
        fit.log_likelihood = ramsey_log_likelihood(data, p_bb, p_db, fit.amplitude, fit.offset, fit.phase);
        if (fit.log_likelihood > best.log_likelihood) best = fit;
    }
    if (!std::isfinite(best.log_likelihood)) throw DegenerateLikelihoodError("fringe likelihood vanishes everywhere");
    return best;
}

RamseyFit fit_ramsey_fixed_amplitude(const RamseyDataset& data, double p_bb, double p_db, double amplitude,
                                     const std::optional<RamseyFit>& start) {
    if (!(amplitude >= 0.0 && amplitude <= 0.5)) throw std::invalid_argument("amplitude must lie in [0, 0.5]");
    check_detection(p_bb, p_db);
    const double g = p_bb + p_db - 1.0;
    const double room = 1.0 - 2.0 * amplitude;
    const bool pinned = room < 1e-12;  // only B = 1/2 is feasible
    const double a = amplitude;

    double mu = barrier_start;
    const Eval eval = [&](const Eigen::VectorXd& x, double& f, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
        const double b0 = pinned ? 0.5 : x[0];
        const double phi = pinned ? x[0] : x[1];
        f = 0.0;
        grad.setZero();
        hess.setZero();
        double fb = 0.0, fbb = 0.0, fp = 0.0, fpp = 0.0, fbp = 0.0;
        for (const auto& pt : data.points) {
            const double sn = std::sin(pt.phase - phi);
            const double cs = std::cos(pt.phase - phi);
            const double q = (1.0 - p_db) + g * (b0 + a * sn);
            double k, k1, k2;
            if (!kernel(static_cast<double>(pt.bright), static_cast<double>(pt.trials), q, k, k1, k2)) return false;
            const double dp = -a * cs;  // dp/dPhi
            const double dpp = -a * sn;
            f += k;
            fb += k1 * g;
            fbb += k2 * g * g;
            fp += k1 * g * dp;
            fpp += k2 * g * g * dp * dp + k1 * g * dpp;
            fbp += k2 * g * g * dp;
        }
        if (pinned) {
            grad[0] = fp;
            hess(0, 0) = fpp;
            return true;
        }
        const double l1 = b0 - a;
        const double l2 = 1.0 - a - b0;
        if (!(l1 > 0.0 && l2 > 0.0)) return false;
        f += mu * (std::log(l1) + std::log(l2));
        grad[0] = fb + mu * (1.0 / l1 - 1.0 / l2);
        grad[1] = fp;
        hess(0, 0) = fbb - mu * (1.0 / (l1 * l1) + 1.0 / (l2 * l2));
        hess(0, 1) = hess(1, 0) = fbp;
        hess(1, 1) = fpp;
        return true;
    };

    auto solve_from = [&](double b_start, double phi_start) {
        Eigen::VectorXd x(pinned ? 1 : 2);
        if (pinned) {
            x[0] = phi_start;
            x = newton_maximize(eval, x);
        } else {
            const double margin = 0.1 * room;
            x << std::clamp(b_start, a + margin, 1.0 - a - margin), phi_start;
            for (mu = barrier_start; mu >= barrier_end * 0.999; mu *= 0.1) x = newton_maximize(eval, x);
        }
        RamseyFit fit;
        fit.amplitude = a;
        fit.offset = pinned ? 0.5 : x[0];
        fit.phase = std::remainder(pinned ? x[0] : x[1], constants::two_pi);
        fit.log_likelihood = ramsey_log_likelihood(data, p_bb, p_db, a, fit.offset, fit.phase);
        return fit;
    };

    RamseyFit best;
    best.log_likelihood = neg_inf;
    std::vector<std::pair<double, double>> starts;
    if (start) starts.emplace_back(start->offset, start->phase);
    if (starts.empty()) {
        for (int j = 0; j < 8; ++j) starts.emplace_back(0.5, constants::two_pi * j / 8.0);
    }
    for (const auto& [b0, phi0] : starts) {
        RamseyFit fit;
        try {
            fit = solve_from(b0, phi0);
        } catch (const std::logic_error&) {
            continue;  // start point outside the likelihood's domain
        }
        if (fit.log_likelihood > best.log_likelihood) best = fit;
    }
    if (!std::isfinite(best.log_likelihood)) {
        best.amplitude = a;
        best.offset = 0.5;
        best.phase = start ? start->phase : 0.0;
    }
    return best;
}

LikelihoodCurve LikelihoodCurve::from_log(std::vector<double> grid, std::vector<double> log_values) {
    if (grid.size() != log_values.size() || grid.size() < 2) {
        throw std::invalid_argument("likelihood curve needs matching grid and values of length >= 2");
    }
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("likelihood grid must be strictly increasing");
    }
    const auto top = std::max_element(log_values.begin(), log_values.end());
    const double peak = *top;
    if (!std::isfinite(peak)) throw DegenerateLikelihoodError("likelihood vanishes on the whole grid");
    double integral = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        integral += 0.5 * (std::exp(log_values[i] - peak) + std::exp(log_values[i - 1] - peak)) * (grid[i] - grid[i - 1]);
    }
    LikelihoodCurve c;
    c.log_normalization = peak + std::log(integral);
    for (double& v : log_values) v -= c.log_normalization;
    const std::size_t k = static_cast<std::size_t>(top - log_values.begin());
    c.mode = grid[k];
    if (k > 0 && k + 1 < grid.size() && std::isfinite(log_values[k - 1]) && std::isfinite(log_values[k + 1])) {
        // vertex of the parabola through the three nodes around the maximum
        const double x0 = grid[k - 1], x1 = grid[k], x2 = grid[k + 1];
        const double y0 = log_values[k - 1], y1 = log_values[k], y2 = log_values[k + 1];
        const double num = (x1 - x0) * (x1 - x0) * (y1 - y2) - (x1 - x2) * (x1 - x2) * (y1 - y0);
        const double den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
        if (den != 0.0) {
            const double v = x1 - 0.5 * num / den;
            if (v > x0 && v < x2) c.mode = v;
        }
    }
    const double thr = log_values[k] - 0.5;
    auto crossing = [&](std::size_t inside, std::size_t outside) {
        const double yi = log_values[inside], yo = log_values[outside];
        if (!std::isfinite(yo)) return grid[inside];
        return grid[outside] + (thr - yo) / (yi - yo) * (grid[inside] - grid[outside]);
    };
    std::size_t i = k;
    while (i > 0 && log_values[i - 1] >= thr) --i;
    c.interval.lo = i == 0 ? grid.front() : crossing(i, i - 1);
    std::size_t j = k;
    while (j + 1 < grid.size() && log_values[j + 1] >= thr) ++j;
    c.interval.hi = j + 1 == grid.size() ? grid.back() : crossing(j, j + 1);
    c.interval.lo = std::min(c.interval.lo, c.mode);
    c.interval.hi = std::max(c.interval.hi, c.mode);
    c.grid = std::move(grid);
    c.log_likelihood = std::move(log_values);
    return c;
}

LikelihoodCurve LikelihoodCurve::from_density(std::vector<double> grid, const std::vector<double>& density) {
    std::vector<double> logs(density.size());
    for (std::size_t i = 0; i < density.size(); ++i) {
        if (density[i] < 0.0 || !std::isfinite(density[i])) throw std::invalid_argument("density must be finite and >= 0");
        logs[i] = density[i] > 0.0 ? std::log(density[i]) : neg_inf;
    }
    return from_log(std::move(grid), std::move(logs));
}

double LikelihoodCurve::density(double x) const {
    if (grid.empty() || x < grid.front() || x > grid.back()) return 0.0;
    auto it = std::upper_bound(grid.begin(), grid.end(), x);
    if (it == grid.end()) return std::exp(log_likelihood.back());
    const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    const std::size_t lo = hi - 1;
    const double w = (x - grid[lo]) / (grid[hi] - grid[lo]);
    return (1.0 - w) * std::exp(log_likelihood[lo]) + w * std::exp(log_likelihood[hi]);
}

std::vector<double> LikelihoodCurve::densities() const {
    std::vector<double> out(log_likelihood.size());
    std::transform(log_likelihood.begin(), log_likelihood.end(), out.begin(), [](double v) { return std::exp(v); });
    return out;
}

std::vector<double> amplitude_grid(std::size_t n) {
    if (n < 2) throw std::invalid_argument("amplitude grid needs at least 2 points");
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = 0.5 * static_cast<double>(i) / static_cast<double>(n - 1);
    g.back() = 0.5;
    return g;
}

LikelihoodCurve profile_likelihood_A(const RamseyDataset& data, double p_bb, double p_db,
                                     const std::vector<double>& a_grid) {
    const RamseyFit global = fit_ramsey(data, p_bb, p_db);
    if (a_grid.empty() || a_grid.front() > 1e-12 || a_grid.back() < 0.5 - 1e-12) {
        throw std::invalid_argument("amplitude grid must cover [0, 0.5]");
    }
    std::vector<double> values(a_grid.size(), neg_inf);
    // sweep outward from the global optimum so each point starts next to its neighbor's solution
    const std::size_t k = static_cast<std::size_t>(
        std::lower_bound(a_grid.begin(), a_grid.end(), global.amplitude) - a_grid.begin());
    auto sweep = [&](std::size_t i, RamseyFit& warm) {
        RamseyFit best = fit_ramsey_fixed_amplitude(data, p_bb, p_db, a_grid[i], warm);
        const RamseyFit alt = fit_ramsey_fixed_amplitude(data, p_bb, p_db, a_grid[i], global);
        if (alt.log_likelihood > best.log_likelihood) best = alt;
        values[i] = best.log_likelihood;
        if (std::isfinite(best.log_likelihood)) warm = best;
    };
    RamseyFit warm = global;
    for (std::size_t i = k; i < a_grid.size(); ++i) sweep(i, warm);
    warm = global;
    for (std::size_t i = k; i-- > 0;) sweep(i, warm);
    return LikelihoodCurve::from_log(a_grid, std::move(values));
}

LikelihoodCurve average_likelihood(const RamseyDataset& data, const IdGrid& grid, const std::vector<double>& a_grid,
                                   int jobs) {
    if (grid.cells.empty()) throw std::invalid_argument("identification grid has no cells");
    std::vector<std::vector<double>> per_cell(grid.cells.size());
    parallel_for(grid.cells.size(), jobs, [&](std::size_t c) {
        const auto& cell = grid.cells[c];
        per_cell[c] = profile_likelihood_A(data, cell.p_bb, cell.p_db, a_grid).densities();
    });
    std::vector<double> mix(a_grid.size(), 0.0);
    for (std::size_t c = 0; c < grid.cells.size(); ++c) {
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += grid.cells[c].weight * per_cell[c][i];
    }
    return LikelihoodCurve::from_density(a_grid, mix);
}

LikelihoodCurve fidelity_likelihood(const LikelihoodCurve& lo, const LikelihoodCurve& hi, std::int64_t m_lo,
                                    std::int64_t m_hi, const FidelityGridOptions& options) {
    if (!(m_hi > m_lo && m_lo >= 0)) throw std::invalid_argument("need M_hi > M_lo >= 0");
    if (options.points < 3 || !(options.half_width_sigmas > 0.0)) throw std::invalid_argument("bad fidelity grid");
    const double dm = static_cast<double>(m_hi - m_lo);
    if (!(lo.mode > 0.0)) throw DegenerateLikelihoodError("low-M amplitude curve peaks at zero");
    if (!(hi.mode > 0.0)) throw DegenerateLikelihoodError("high-M amplitude curve peaks at zero");

    auto rel_sigma = [](const LikelihoodCurve& c) {
        double spacing = 0.0;
        for (std::size_t i = 1; i < c.grid.size(); ++i) spacing = std::max(spacing, c.grid[i] - c.grid[i - 1]);
        return std::max(0.5 * c.interval.width(), spacing) / c.mode;
    };
    const double center = std::pow(hi.mode / lo.mode, 1.0 / dm);
    const double sigma = center / dm * std::hypot(rel_sigma(lo), rel_sigma(hi));
    const double f_lo = std::max(center - options.half_width_sigmas * sigma, center * 1e-3);
    const double f_hi = center + options.half_width_sigmas * sigma;

    const std::vector<double> dens_lo = lo.densities();
    const std::vector<double> dens_hi = hi.densities();
    auto hi_density = [&](double x) {
        if (x < hi.grid.front() || x > hi.grid.back()) return 0.0;
        const auto it = std::upper_bound(hi.grid.begin(), hi.grid.end(), x);
        if (it == hi.grid.end()) return dens_hi.back();
        const std::size_t j = static_cast<std::size_t>(it - hi.grid.begin());
        const double w = (x - hi.grid[j - 1]) / (hi.grid[j] - hi.grid[j - 1]);
        return (1.0 - w) * dens_hi[j - 1] + w * dens_hi[j];
    };
    const double negligible = 1e-17 * *std::max_element(dens_lo.begin(), dens_lo.end());
    std::vector<double> trap(lo.grid.size(), 0.0);
    for (std::size_t i = 1; i < lo.grid.size(); ++i) {
        const double h = 0.5 * (lo.grid[i] - lo.grid[i - 1]);
        trap[i - 1] += h;
        trap[i] += h;
    }
    std::vector<double> f_grid(options.points);
    std::vector<double> value(options.points, 0.0);
    for (std::size_t k = 0; k < options.points; ++k) {
        const double f = f_lo + (f_hi - f_lo) * static_cast<double>(k) / static_cast<double>(options.points - 1);
        f_grid[k] = f;
        const double scale = std::exp(dm * std::log(f));  // F^dM
        const double jac = dm * scale / f;  // dM F^(dM - 1)
        double acc = 0.0;
        for (std::size_t i = 0; i < lo.grid.size(); ++i) {
            if (dens_lo[i] < negligible) continue;
            const double a = lo.grid[i];
            acc += trap[i] * dens_lo[i] * hi_density(a * scale) * a * jac;
        }
        value[k] = acc;
    }
    if (std::all_of(value.begin(), value.end(), [](double v) { return v == 0.0; })) {
        throw DegenerateLikelihoodError("amplitude likelihoods do not overlap for any fidelity on the grid");
    }
    return LikelihoodCurve::from_density(std::move(f_grid), value);
}

FailureAdjusted adjust_for_failures(double fidelity, double failed, std::int64_t m_lo, std::int64_t m_hi,
                                    double sigma) {
    if (!(m_hi > m_lo)) throw std::invalid_argument("need M_hi > M_lo");
    const double dm = static_cast<double>(m_hi - m_lo);
    if (!(failed >= 0.0) || failed >= dm) throw std::invalid_argument("failed transports must lie in [0, M_hi - M_lo)");
    if (!(fidelity > 0.0) || !(sigma >= 0.0)) throw std::invalid_argument("need F > 0 and sigma >= 0");
    const double done = dm - failed;
    FailureAdjusted out;
    out.fidelity = std::pow(fidelity, dm / done);
    out.sigma = dm / done * std::pow(fidelity, failed / done) * sigma;
    return out;
}

void DephasingParams::validate() const {
    const double all[] = {decay_rate, phase_width, frequency_per_field, field_gradient, field, transport_time};
    for (double v : all) {
        if (!std::isfinite(v)) throw std::invalid_argument("dephasing parameters must be finite");
    }
    if (decay_rate < 0.0) throw std::invalid_argument("decay rate must be nonnegative");
    if (phase_width < 0.0) throw std::invalid_argument("phase width must be nonnegative");
    if (transport_time < 0.0) throw std::invalid_argument("transport time must be nonnegative");
}

double contrast_factor(double phase_width) { return std::exp(-0.5 * phase_width * phase_width); }

double phase_width_from_fidelity(double fidelity) {
    if (!(fidelity > 0.0) || fidelity > 1.0) throw std::invalid_argument("fidelity must lie in (0, 1]");
    return std::sqrt(-2.0 * std::log(fidelity));
}

double position_sensitivity(double frequency_per_field, double field_gradient) {
    return frequency_per_field * field_gradient;
}

double transition_shift(double sensitivity, double distance) { return sensitivity * distance; }

double ramsey_phase(double detuning, double time) { return constants::two_pi * detuning * time; }

double position_width(double phase_width, double time, double sensitivity) {
    const double den = constants::two_pi * time * sensitivity;
    if (den == 0.0) throw std::invalid_argument("position width needs nonzero time and sensitivity");
    return phase_width / std::abs(den);
}

double static_decay_amplitude(double decay_rate, double time) {
    if (decay_rate < 0.0) throw std::invalid_argument("decay rate must be nonnegative");
    return 0.5 * std::exp(-decay_rate * time * time);
}

DephasingReport dephasing_toolbox(const DephasingParams& params, double distance) {
    params.validate();
    DephasingReport r;
    r.contrast_factor = contrast_factor(params.phase_width);
    r.sensitivity = position_sensitivity(params.frequency_per_field, params.field_gradient);
    r.position_width = (params.transport_time > 0.0 && r.sensitivity != 0.0)
                           ? position_width(params.phase_width, params.transport_time, r.sensitivity)
                           : std::numeric_limits<double>::infinity();
    r.shift_over_distance = transition_shift(r.sensitivity, distance);
    return r;
}

void TrackingDataset::validate() const {
    if (transports <= 0) throw std::invalid_argument("tracking runs need M > 0");
    for (const auto& r : runs) {
        if (r.skipped < 0 || 2 * r.skipped > transports) throw std::invalid_argument("need 0 <= M_s <= M/2");
        if (!(r.photons >= 0.0) || !std::isfinite(r.photons)) throw std::invalid_argument("photon totals must be >= 0");
    }
    if (!(dark_total.sigma > 0.0) || !std::isfinite(dark_total.mean)) {
        throw std::invalid_argument("absent-ion prior needs a finite mean and positive sigma");
    }
}

double expected_tracking_photons(double f_s, double f_bright, double f_dark, std::int64_t m, std::int64_t m_s) {
    const double mm = static_cast<double>(m), ms = static_cast<double>(m_s);
    const double moved = f_s * (mm - 2.0 * ms);
    return f_bright * (ms + moved) + f_dark * ((mm - ms) - moved);
}

LinearCrossCheck failure_from_linear_fit(const LinearFit& fit, const GaussianPrior& dark_total, std::int64_t m) {
    const double mm = static_cast<double>(m);
    const double delta = fit.offset - dark_total.mean;
    const double den = mm * fit.slope + 2.0 * delta;
    if (den == 0.0) throw SingularInputError("slope and offset give no contrast");
    LinearCrossCheck out;
    out.failure = delta / den;
    const double d_delta = mm * fit.slope / (den * den);
    const double d_slope = -delta * mm / (den * den);
    out.error = std::sqrt(d_delta * d_delta * (fit.offset_error * fit.offset_error + dark_total.sigma * dark_total.sigma) +
                          d_slope * d_slope * fit.slope_error * fit.slope_error);
    return out;
}

namespace {

struct TrackingGroup {
    double skipped = 0.0;
    double runs = 0.0;
    double photons = 0.0;
};

struct TrackingProfile {
    double log_likelihood = neg_inf;
    double bright = 0.0;
    double dark = 0.0;
};

TrackingProfile profile_tracking(const std::vector<TrackingGroup>& groups, double m, const GaussianPrior& prior,
                                 double f, const Eigen::Vector2d& start) {
    const Eval eval = [&](const Eigen::VectorXd& x, double& value, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
        value = 0.0;
        grad.setZero();
        hess.setZero();
        for (const auto& gr : groups) {
            const double moved = f * (m - 2.0 * gr.skipped);
            const Eigen::Vector2d v(gr.skipped + moved, (m - gr.skipped) - moved);
            const double mu = v.dot(x.head<2>());
            if (!(mu > 0.0)) return false;
            value += gr.photons * std::log(mu) - gr.runs * mu;
            grad += (gr.photons / mu - gr.runs) * v;
            hess -= (gr.photons / (mu * mu)) * (v * v.transpose());
        }
        const double r = (m * x[1] - prior.mean) / prior.sigma;
        value -= 0.5 * r * r;
        grad[1] -= r * m / prior.sigma;
        hess(1, 1) -= m * m / (prior.sigma * prior.sigma);
        return true;
    };
    Eigen::VectorXd x = start;
    double value = 0.0;
    Eigen::VectorXd g(2);
    Eigen::MatrixXd h(2, 2);
    if (!eval(x, value, g, h)) {
        x << 1.0, 1.0;
        if (!eval(x, value, g, h)) return {};
    }
    x = newton_maximize(eval, x);
    eval(x, value, g, h);
    return {value, x[0], x[1]};
}

}  // namespace

TrackingFit fit_transport_fidelity(const TrackingDataset& data) {
    data.validate();
    std::map<std::int64_t, TrackingGroup> by_skip;
    for (const auto& r : data.runs) {
        auto& g = by_skip[r.skipped];
        g.skipped = static_cast<double>(r.skipped);
        g.runs += 1.0;
        g.photons += r.photons;
    }
    if (by_skip.size() < 3) throw UnidentifiableError("tracking fit needs at least 3 distinct M_s values");
    std::vector<TrackingGroup> groups;
    for (const auto& [k, g] : by_skip) groups.push_back(g);
    const double m = static_cast<double>(data.transports);

    TrackingFit out;
    // ordinary least squares of per-run photons on M_s
    {
        const double n = static_cast<double>(data.runs.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& r : data.runs) {
            const double x = static_cast<double>(r.skipped);
            sx += x;
            sy += r.photons;
            sxx += x * x;
            sxy += x * r.photons;
        }
        const double det = n * sxx - sx * sx;
        out.linear.slope = (n * sxy - sx * sy) / det;
        out.linear.offset = (sy - out.linear.slope * sx) / n;
        double rss = 0.0;
        for (const auto& r : data.runs) {
            const double e = r.photons - out.linear.offset - out.linear.slope * static_cast<double>(r.skipped);
            rss += e * e;
        }
        const double s2 = data.runs.size() > 2 ? rss / (n - 2.0) : 0.0;
        out.linear.slope_error = std::sqrt(s2 * n / det);
        out.linear.offset_error = std::sqrt(s2 * sxx / det);
        const LinearCrossCheck cc = failure_from_linear_fit(out.linear, data.dark_total, data.transports);
        out.linear_failure = cc.failure;
        out.linear_failure_error = cc.error;
    }

    const Eigen::Vector2d start(std::max(out.linear.slope, 1e-6) + std::max(data.dark_total.mean, 1e-6) / m,
                                std::max(data.dark_total.mean, 1e-6) / m);
    auto profile = [&](double f) { return profile_tracking(groups, m, data.dark_total, f, start); };

    // coarse scan of f_s in [0, 1/2], then golden-section refinement
    const double f_max = 0.5;
    const std::size_t scan = 501;
    std::vector<double> ll(scan);
    std::size_t k = 0;
    for (std::size_t i = 0; i < scan; ++i) {
        ll[i] = profile(f_max * static_cast<double>(i) / static_cast<double>(scan - 1)).log_likelihood;
        if (ll[i] > ll[k]) k = i;
    }
    const double step = f_max / static_cast<double>(scan - 1);
    double a = std::max(0.0, (static_cast<double>(k) - 1.0) * step);
    double b = std::min(f_max, (static_cast<double>(k) + 1.0) * step);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = profile(c).log_likelihood, fd = profile(d).log_likelihood;
    for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = profile(c).log_likelihood;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = profile(d).log_likelihood;
        }
    }
    double f_hat = 0.5 * (a + b);
    TrackingProfile best = profile(f_hat);
    const TrackingProfile at_zero = profile(0.0);
    if (at_zero.log_likelihood >= best.log_likelihood) {
        f_hat = 0.0;
        best = at_zero;
    }
    if (!std::isfinite(best.log_likelihood)) throw DegenerateLikelihoodError("tracking likelihood vanishes");

    const double thr = best.log_likelihood - 0.5;
    auto bisect = [&](double inside, double outside) {
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (inside + outside);
            if (profile(mid).log_likelihood >= thr) inside = mid; else outside = mid;
        }
        return 0.5 * (inside + outside);
    };
    out.failure = f_hat;
    out.failure_interval.lo = profile(0.0).log_likelihood >= thr ? 0.0 : bisect(f_hat, 0.0);
    out.failure_interval.hi = profile(f_max).log_likelihood >= thr ? f_max : bisect(f_hat, f_max);
    out.fidelity = 1.0 - f_hat;
    out.fidelity_interval = {1.0 - out.failure_interval.hi, 1.0 - out.failure_interval.lo};
    out.bright_rate = best.bright;
    out.dark_rate = best.dark;
    out.log_likelihood = best.log_likelihood;
    return out;
}

}  // namespace ionshuttle
