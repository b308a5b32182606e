#include "ionshuttle/experiment_simulator.hpp"

#include <cmath>
#include <stdexcept>

#include "ionshuttle/constants.hpp"

namespace ionshuttle {

double GroundTruth::amplitude(std::int64_t transports) const {
    return 0.5 * std::exp(-decay_rate * precession_time * precession_time) *
           std::pow(fidelity, static_cast<double>(transports));
}

void GroundTruth::validate() const {
    if (!(fidelity > 0.0 && fidelity <= 1.0)) throw std::invalid_argument("true fidelity must lie in (0, 1]");
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
    };
    prob(offset, "offset");
    prob(p_bb, "p_bb");
    prob(p_db, "p_db");
    prob(f_prep, "preparation fidelity");
    prob(f_pi, "pi-pulse fidelity");
    prob(dark.leakage, "dark leakage");
    prob(bright.leakage, "bright leakage");
    if (decay_rate < 0.0 || precession_time < 0.0) throw std::invalid_argument("decay rate and t_p must be >= 0");
    if (dark.mean < 0.0 || bright.mean < 0.0) throw std::invalid_argument("count means must be >= 0");
    if (thresholds) thresholds->validate();
}

int draw_count(const CountShape& own, const CountShape& other, std::mt19937_64& rng) {
    double rate = own.mean;
    if (own.leakage > 0.0 && std::bernoulli_distribution(own.leakage)(rng)) {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        rate = u * own.mean + (1.0 - u) * other.mean;
    }
    if (rate <= 0.0) return 0;
    return std::poisson_distribution<int>(rate)(rng);
}

RamseySimulation simulate_ramsey(const GroundTruth& truth, std::int64_t transports, std::size_t phases,
                                 std::int64_t repetitions, std::uint64_t seed) {
    truth.validate();
    if (phases < 3) throw std::invalid_argument("need K >= 3 phases");
    if (repetitions < 1) throw std::invalid_argument("need N >= 1 repetitions");
    if (transports < 0) throw std::invalid_argument("transport count must be >= 0");
    const double a = truth.amplitude(transports);
    if (a > truth.offset || truth.offset + a > 1.0) {
        throw std::invalid_argument("fringe leaves [0, 1]: need A <= B <= 1 - A");
    }
    std::mt19937_64 rng(seed);
    RamseySimulation out;
    out.dataset.transports = transports;
    out.dataset.precession_time = truth.precession_time;
    for (std::size_t k = 0; k < phases; ++k) {
        RamseyPoint pt;
        pt.phase = constants::two_pi * static_cast<double>(k) / static_cast<double>(phases);
        const double p = std::clamp(truth.offset + a * std::sin(pt.phase - truth.phase), 0.0, 1.0);
        const auto bright = std::binomial_distribution<std::int64_t>(repetitions, p)(rng);
        const std::int64_t dark = repetitions - bright;
        if (truth.thresholds) {
            for (std::int64_t i = 0; i < repetitions; ++i) {
                const bool is_bright = i < bright;
                const int c = is_bright ? draw_count(truth.bright, truth.dark, rng) : draw_count(truth.dark, truth.bright, rng);
                const Tag t = classify(c, *truth.thresholds);
                if (t == Tag::Discard) continue;
                ++pt.trials;
                if (t == Tag::Bright) ++pt.bright;
            }
        } else {
            pt.trials = repetitions;
            pt.bright = std::binomial_distribution<std::int64_t>(bright, truth.p_bb)(rng) +
                        std::binomial_distribution<std::int64_t>(dark, 1.0 - truth.p_db)(rng);
        }
        out.dataset.points.push_back(pt);
    }
    const double bright_after_pi = truth.f_prep * truth.f_pi + (1.0 - truth.f_prep) * (1.0 - truth.f_pi);
    std::int64_t id = 0;
    for (PreparedState s : {PreparedState::Dark, PreparedState::Bright}) {
        const double p_bright = s == PreparedState::Dark ? 1.0 - truth.f_prep : bright_after_pi;
        std::bernoulli_distribution actual(p_bright);
        for (std::size_t i = 0; i < truth.calibration_trials; ++i) {
            CalibrationTrial t;
            t.id = id++;
            t.prepared = s;
            t.transports = transports;
            t.count = actual(rng) ? draw_count(truth.bright, truth.dark, rng) : draw_count(truth.dark, truth.bright, rng);
            out.calibration.trials.push_back(t);
        }
    }
    return out;
}

TrackingDataset simulate_tracking(const TrackingTruth& truth, std::uint64_t seed) {
    if (truth.failure < 0.0 || truth.bright_rate < 0.0 || truth.dark_rate < 0.0) {
        throw std::invalid_argument("tracking rates must be nonnegative");
    }
    if (truth.transports <= 0) throw std::invalid_argument("need M > 0");
    if (!(truth.dark_total_sigma > 0.0)) throw std::invalid_argument("absent-ion calibration sigma must be > 0");
    std::mt19937_64 rng(seed);
    TrackingDataset out;
    out.transports = truth.transports;
    const double dark_total = truth.dark_rate * static_cast<double>(truth.transports);
    out.dark_total = {std::normal_distribution<double>(dark_total, truth.dark_total_sigma)(rng), truth.dark_total_sigma};
    for (std::int64_t ms : truth.skipped) {
        if (ms < 0 || 2 * ms > truth.transports) throw std::invalid_argument("need 0 <= M_s <= M/2");
        const double mean =
            expected_tracking_photons(truth.failure, truth.bright_rate, truth.dark_rate, truth.transports, ms);
        std::poisson_distribution<std::int64_t> photons(mean);
        for (std::size_t r = 0; r < truth.runs_per_point; ++r) {
            out.runs.push_back({ms, mean > 0.0 ? static_cast<double>(photons(rng)) : 0.0});
        }
    }
    return out;
}

double energy_above_minimum(const TrapModel& model, const Eigen::VectorXd& voltages, const Vec3& position,
                            const Vec3& velocity, const Vec3& start, Vec3* minimum) {
    const MinimumSearch min = find_minimum(model, voltages, start);
    if (minimum) *minimum = min.position;
    const std::span<const double> v(voltages.data(), static_cast<std::size_t>(voltages.size()));
    const double phi = model.probe(v, position).value;
    return 0.5 * model.mass() * velocity.squaredNorm() + model.charge() * (phi - min.probe.value);
}

namespace {

struct Derivative {
    Vec3 dr;
    Vec3 dv;
};

}  // namespace

MotionResult integrate_motion(const Eigen::MatrixXd& electrode_voltages, double dt, const TrapModel& model,
                              const MotionState& init, const MotionOptions& options) {
    const auto samples = static_cast<std::size_t>(electrode_voltages.rows());
    if (samples == 0) throw std::invalid_argument("ramp has no samples");
    if (static_cast<std::size_t>(electrode_voltages.cols()) != model.electrode_count()) {
        throw std::invalid_argument("ramp electrode count does not match the trap");
    }
    if (!(dt > 0.0) || options.substeps == 0) throw std::invalid_argument("need dt > 0 and substeps >= 1");
    if (options.hold_time < 0.0) throw std::invalid_argument("hold time must be >= 0");
    if (!init.position.allFinite() || !init.velocity.allFinite()) throw std::invalid_argument("non-finite initial state");

    const double qm = model.charge() / model.mass();
    const double h = dt / static_cast<double>(options.substeps);
    Eigen::VectorXd u(electrode_voltages.cols());

    auto voltages_at = [&](std::size_t row, double frac) {
        if (row + 1 >= samples) {
            u = electrode_voltages.row(static_cast<Eigen::Index>(samples - 1)).transpose();
        } else {
            u = (1.0 - frac) * electrode_voltages.row(static_cast<Eigen::Index>(row)).transpose() +
                frac * electrode_voltages.row(static_cast<Eigen::Index>(row + 1)).transpose();
        }
    };
    MotionState state = init;
    auto inside = [&](const Vec3& r) {
        if (!r.allFinite()) return false;
        if (options.bounds) {
            const auto& [lo, hi] = *options.bounds;
            if ((r.array() < lo.array()).any() || (r.array() > hi.array()).any()) return false;
        }
        return true;
    };
    auto deriv = [&](const Vec3& r, const Vec3& v) -> Derivative {
        if (!inside(r)) throw EscapeError("ion left the allowed region", state);
        try {
            const std::span<const double> span(u.data(), static_cast<std::size_t>(u.size()));
            return {v, -qm * model.probe(span, r).gradient};
        } catch (const OutOfBoundsError&) {
            throw EscapeError("ion left the sampled potential", state);
        }
    };
    auto rk4_step = [&](std::size_t row, double frac0) {
        const Vec3 r = state.position, v = state.velocity;
        const double df = 1.0 / static_cast<double>(options.substeps);
        voltages_at(row, frac0);
        const Derivative k1 = deriv(r, v);
        voltages_at(row, frac0 + 0.5 * df);
        const Derivative k2 = deriv(r + 0.5 * h * k1.dr, v + 0.5 * h * k1.dv);
        const Derivative k3 = deriv(r + 0.5 * h * k2.dr, v + 0.5 * h * k2.dv);
        voltages_at(row, frac0 + df);
        const Derivative k4 = deriv(r + h * k3.dr, v + h * k3.dv);
        state.position = r + h / 6.0 * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
        state.velocity = v + h / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
        state.time += h;
        if (!inside(state.position) || !state.velocity.allFinite()) throw EscapeError("ion left the allowed region", state);
    };

    MotionResult out;
    Vec3 minimum = init.position;
    auto record = [&](std::size_t row) {
        voltages_at(row, 0.0);
        state.energy = energy_above_minimum(model, u, state.position, state.velocity, minimum, &minimum);
        out.samples.push_back(state);
    };
    record(0);
    for (std::size_t row = 0; row + 1 < samples; ++row) {
        for (std::size_t s = 0; s < options.substeps; ++s) {
            rk4_step(row, static_cast<double>(s) / static_cast<double>(options.substeps));
        }
        state.time = init.time + static_cast<double>(row + 1) * dt;
        record(row + 1);
    }
    if (options.hold_time > 0.0) {
        const auto steps = static_cast<std::size_t>(std::ceil(options.hold_time / h - 1e-9));
        for (std::size_t s = 0; s < steps; ++s) rk4_step(samples - 1, 0.0);
        record(samples - 1);
    }
    out.final = state;
    out.final_minimum = minimum;
    out.final_energy = state.energy;
    return out;
}

MotionResult integrate_motion(const VoltageRamp& ramp, const TrapModel& model, const MotionState& init,
                              std::size_t substeps) {
    MotionOptions options;
    options.substeps = substeps;
    return integrate_motion(ramp.forward.electrode, ramp.dt, model, init, options);
}

}  // namespace ionshuttle
