#include "ionshuttle/waveform_synth.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "ionshuttle/box_lsq.hpp"
#include "ionshuttle/errors.hpp"

namespace ionshuttle {

ConstraintRows constraint_rows(const TrapModel& model, const ConstraintTarget& target) {
    const std::size_t n = model.electrode_count();
    ConstraintRows rows;
    rows.matrix.resize(RowCount, static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        const PotentialProbe p = model.probe_electrode(j, target.position);
        const auto c = static_cast<Eigen::Index>(j);
        rows.matrix(RowGradX, c) = p.gradient.x();
        rows.matrix(RowGradY, c) = p.gradient.y();
        rows.matrix(RowGradZ, c) = p.gradient.z();
        rows.matrix(RowCurvX, c) = p.hessian(0, 0);
        rows.matrix(RowXZ, c) = p.hessian(0, 2);
        rows.matrix(RowPhi, c) = p.value;
    }
    const PotentialProbe f = model.probe_fixed(target.position);
    rows.rhs.resize(RowCount);
    rows.rhs << -f.gradient.x(), -f.gradient.y(), -f.gradient.z(), target.curvature - f.hessian(0, 0),
        -f.hessian(0, 2), target.phi0 - f.value;
    return rows;
}

StepSolution solve_step(const Eigen::MatrixXd& rows, const Eigen::VectorXd& rhs,
                        const Eigen::VectorXd& weights, const Eigen::VectorXd& lo,
                        const Eigen::VectorXd& hi, const Eigen::VectorXd& previous, double reg,
                        std::size_t step) {
    if (rhs.size() != rows.rows() || weights.size() != rows.rows()) {
        throw std::invalid_argument("solve_step: row, rhs and weight counts differ");
    }
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
        if (!(lo[j] <= hi[j])) {
            std::ostringstream os;
            os << "infeasible step " << step << ": electrode " << j << " box [" << lo[j] << ", " << hi[j]
               << "] is empty";
            throw InfeasibleStepError(step, static_cast<std::size_t>(j), os.str());
        }
    }
    Eigen::VectorXd sw(weights.size());
    for (Eigen::Index r = 0; r < weights.size(); ++r) {
        if (!(weights[r] >= 0.0)) throw std::invalid_argument("solve_step: negative row weight");
        sw[r] = std::sqrt(weights[r]);
    }
    const Eigen::MatrixXd A = sw.asDiagonal() * rows;
    const Eigen::VectorXd b = sw.cwiseProduct(rhs);
    const BoxLsqResult res = solve_box_lsq(A, b, lo, hi, previous, reg);

    StepSolution out;
    out.voltages = res.x;
    out.residuals = rows * res.x - rhs;
    out.iterations = res.iterations;
    out.active_bounds = res.active;
    return out;
}

MicromotionOffsets MicromotionOffsets::zero(std::size_t electrodes) {
    const auto n = static_cast<Eigen::Index>(electrodes);
    return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
}

Eigen::VectorXd interpolate_offsets(const MicromotionOffsets& offsets, std::size_t i, std::size_t L) {
    if (offsets.first.size() != offsets.last.size()) {
        throw std::invalid_argument("offset sets differ in length");
    }
    if (i > L) throw std::invalid_argument("offset step index beyond L");
    if (L == 0) return offsets.first;
    if (i == L) return offsets.last;
    const double t = static_cast<double>(i) / static_cast<double>(L);
    return offsets.first + t * (offsets.last - offsets.first);
}

double loop_weight(const SynthesisConfig& config, std::size_t i, std::size_t L) {
    if (L == 0) return config.loop_weight_end;
    const double s = std::sin(constants::pi * static_cast<double>(i) / static_cast<double>(L));
    if (config.loop_weight_end <= 0.0 || config.loop_weight_mid <= 0.0) {
        return config.loop_weight_end + (config.loop_weight_mid - config.loop_weight_end) * s;
    }
    return std::exp(std::log(config.loop_weight_end) +
                    (std::log(config.loop_weight_mid) - std::log(config.loop_weight_end)) * s);
}

Vec3 planned_position(const TransportPlan& plan, std::size_t sample, bool backward) {
    const std::size_t i = std::min(sample, plan.steps);
    return backward ? plan.positions[plan.steps - i] : plan.positions[i];
}

namespace {

void validate_inputs(const TrapModel& model, const TransportPlan& plan, const FilterSpec& spec,
                     const MicromotionOffsets& offsets, const SynthesisConfig& config) {
    const auto n = static_cast<Eigen::Index>(model.electrode_count());
    if (offsets.first.size() != n || offsets.last.size() != n) {
        throw std::invalid_argument("offset vectors must match the electrode count");
    }
    if (plan.positions.size() != plan.steps + 1) throw std::invalid_argument("malformed transport plan");
    if (std::abs(plan.step - spec.dt()) > 1e-12 * spec.dt()) {
        throw std::invalid_argument("trajectory and filter time steps differ");
    }
    if (!(config.slew >= 0.0)) throw std::invalid_argument("slew limit must be nonnegative");
    if (!(config.v_min < config.v_max)) throw std::invalid_argument("voltage range is empty");
    if (!(config.position_scale > 0.0) || !(config.curvature_scale > 0.0)) {
        throw std::invalid_argument("row scales must be positive");
    }
    if (config.tie_weight < 0.0 || config.loop_weight_end < 0.0 || config.loop_weight_mid < 0.0 ||
        config.regularization < 0.0) {
        throw std::invalid_argument("synthesis weights must be nonnegative");
    }
    const auto w = config.weights.as_array();
    for (double v : w) {
        if (v < 0.0) throw std::invalid_argument("row weights must be nonnegative");
    }
    if (!(w[RowGradX] > 0.0)) throw std::invalid_argument("gradient rows need positive weight");
    if (!(plan.axial_frequency > 0.0)) throw std::invalid_argument("plan axial frequency must be positive");
}

struct Synthesizer {
    const TrapModel& model;
    const TransportPlan& plan;
    const FilterSpec& spec;
    const MicromotionOffsets& offsets;
    const SynthesisConfig& config;
    std::size_t n = 0;
    double kappa = 0.0;
    double phi0 = 0.0;
    Eigen::VectorXd row_scale;  // divides each physics row

    Synthesizer(const TrapModel& m, const TransportPlan& p, const FilterSpec& s,
                const MicromotionOffsets& o, const SynthesisConfig& c)
        : model(m), plan(p), spec(s), offsets(o), config(c), n(m.electrode_count()) {
        kappa = model.curvature_for(plan.axial_frequency);
        row_scale.resize(RowCount);
        const double g = kappa * config.position_scale;
        const double h = kappa * config.curvature_scale;
        row_scale << g, g, g, h, h, 1.0;
    }

    std::size_t settle() const { return config.settle_steps.value_or(spec.na()); }
    std::size_t samples() const { return plan.steps + 1 + settle(); }

    Eigen::VectorXd offset_at(std::size_t sample, bool backward) const {
        const std::size_t i = std::min(sample, plan.steps);
        return interpolate_offsets(offsets, backward ? plan.steps - i : i, plan.steps);
    }

    ConstraintRows physics(const Vec3& r) const {
        ConstraintTarget t;
        t.position = r;
        t.curvature = kappa;
        t.phi0 = phi0;
        ConstraintRows rows = constraint_rows(model, t);
        for (Eigen::Index k = 0; k < RowCount; ++k) {
            rows.matrix.row(k) /= row_scale[k];
            rows.rhs[k] /= row_scale[k];
        }
        return rows;
    }

    Eigen::VectorXd physics_weights(bool with_phi) const {
        const auto w = config.weights.as_array();
        Eigen::VectorXd out(RowCount);
        for (int k = 0; k < RowCount; ++k) out[k] = w[k];
        if (!with_phi) out[RowPhi] = 0.0;
        return out;
    }

    /// Static solution at r without filter constraints, ideal (offset-free) voltages.
    StepSolution static_solve(const Vec3& r, const Eigen::VectorXd& offset, const Eigen::VectorXd& prior,
                              bool with_phi, std::size_t step) const {
        const ConstraintRows rows = physics(r);
        const auto ne = static_cast<Eigen::Index>(n);
        Eigen::VectorXd lo(ne), hi(ne);
        for (Eigen::Index j = 0; j < ne; ++j) {
            lo[j] = config.v_min - offset[j];
            hi[j] = config.v_max - offset[j];
        }
        return solve_step(rows.matrix, rows.rhs, physics_weights(with_phi), lo, hi, prior,
                          config.regularization, step);
    }

    /// Electrode voltages at A including offsets; also fixes phi0.
    Eigen::VectorXd initial_solution() {
        const Eigen::VectorXd off = offset_at(0, false);
        const auto ne = static_cast<Eigen::Index>(n);
        const StepSolution s0 = static_solve(plan.positions.front(), off, Eigen::VectorXd::Zero(ne), false, 0);
        if (config.phi0) {
            phi0 = *config.phi0;
        } else {
            phi0 = model.probe(std::span<const double>(s0.voltages.data(), n), plan.positions.front()).value;
        }
        return s0.voltages + off;
    }

    static double to_double_inside(long double v, long double lo, long double hi) {
        double d = static_cast<double>(v);
        if (d < lo) d = std::nextafter(d, HUGE_VAL);
        if (d > hi) d = std::nextafter(d, -HUGE_VAL);
        return d;
    }

    /// Source value realizing `target` clamped to the slew band and source range.
    long double clamp_source(const FilterState& s, long double ut) const {
        const long double lo = std::max<long double>(s.last_input() - config.slew, config.v_min);
        const long double hi = std::min<long double>(s.last_input() + config.slew, config.v_max);
        return std::clamp(ut, lo, std::max(lo, hi));
    }

    double commit(FilterState& s, long double target) const {
        const long double ut = clamp_source(s, s.back_solve(spec, target));
        const long double lo = std::max<long double>(s.last_input() - config.slew, config.v_min);
        const long double hi = std::min<long double>(s.last_input() + config.slew, config.v_max);
        const double d = to_double_inside(ut, lo, std::max(lo, hi));
        s.commit(spec, d);
        return d;
    }

    RampSeries run(const Eigen::VectorXd& start, bool backward, const RampSeries* reference) const {
        const std::size_t N = samples();
        const std::size_t L = plan.steps;
        const auto ne = static_cast<Eigen::Index>(n);
        const long double alpha = static_cast<long double>(spec.a()[0]) / spec.b()[1];

        RampSeries out;
        out.source.resize(static_cast<Eigen::Index>(N), ne);
        out.electrode.resize(static_cast<Eigen::Index>(N), ne);
        std::vector<FilterState> states;
        for (std::size_t j = 0; j < n; ++j) states.push_back(FilterState::steady(spec, start[j]));
        out.electrode.row(0) = start.transpose();

        const std::optional<Interval> source_range = Interval{config.v_min, config.v_max};
        Eigen::VectorXd prev_ideal = start - offset_at(0, backward);

        for (std::size_t k = 1; k <= L; ++k) {
            const Eigen::VectorXd off = offset_at(k, backward);
            const ConstraintRows phys = physics(planned_position(plan, k, backward));
            const bool with_loop = reference != nullptr;
            const Eigen::Index extra = ne * (with_loop ? 2 : 1);
            Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(RowCount + extra, ne);
            Eigen::VectorXd rhs(RowCount + extra);
            Eigen::VectorXd w(RowCount + extra);
            rows.topRows(RowCount) = phys.matrix;
            rhs.head(RowCount) = phys.rhs;
            w.head(RowCount) = physics_weights(true);

            Eigen::VectorXd lo(ne), hi(ne);
            for (Eigen::Index j = 0; j < ne; ++j) {
                const FilterState& s = states[static_cast<std::size_t>(j)];
                Interval box = reachable_interval(spec, s, config.slew, off[j], source_range);
                box.lo = std::max<long double>(box.lo, config.v_min - off[j]);
                box.hi = std::min<long double>(box.hi, config.v_max - off[j]);
                if (box.empty()) {
                    std::ostringstream os;
                    os << "infeasible step " << k << (backward ? " (backward)" : "") << ": electrode " << j
                       << " has no reachable voltage inside the allowed range";
                    throw InfeasibleStepError(k, static_cast<std::size_t>(j), os.str());
                }
                lo[j] = to_double_inside(box.lo, box.lo, box.hi);
                hi[j] = to_double_inside(box.hi, box.lo, box.hi);
                if (lo[j] > hi[j]) lo[j] = hi[j];

                // Tie (Ut - U) / alpha with Ut = alpha (U + off) + beta: the source
                // excess expressed in electrode volts.
                const long double beta = s.back_solve(spec, 0.0L);
                const Eigen::Index r = RowCount + j;
                rows(r, j) = static_cast<double>((alpha - 1.0L) / alpha);
                rhs[r] = static_cast<double>(-(beta + (alpha - 1.0L) * off[j]) / alpha);
                w[r] = config.tie_weight;
                if (with_loop) {
                    const Eigen::Index q = RowCount + ne + j;
                    rows(q, j) = 1.0;
                    rhs[q] = reference->electrode(static_cast<Eigen::Index>(L - k), j) - off[j];
                    w[q] = loop_weight(config, k, L);
                }
            }

            const StepSolution sol = solve_step(rows, rhs, w, lo, hi, prev_ideal, config.regularization, k);
            for (Eigen::Index j = 0; j < ne; ++j) {
                FilterState& s = states[static_cast<std::size_t>(j)];
                const long double target = static_cast<long double>(sol.voltages[j]) + off[j];
                out.source(static_cast<Eigen::Index>(k - 1), j) = commit(s, target);
                out.electrode(static_cast<Eigen::Index>(k), j) = static_cast<double>(s.current_output());
            }
            prev_ideal = out.electrode.row(static_cast<Eigen::Index>(k)).transpose() - off;
        }

        // Hold the final electrode voltages while the filter settles.
        std::vector<long double> hold(n);
        for (std::size_t j = 0; j < n; ++j) hold[j] = states[j].current_output();
        for (std::size_t k = L + 1; k <= N; ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                const double ut = commit(states[j], hold[j]);
                out.source(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(j)) = ut;
                if (k < N) {
                    out.electrode(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                        static_cast<double>(states[j].current_output());
                }
            }
        }
        return out;
    }
};

std::string describe(const TransportPlan& plan) {
    std::ostringstream os;
    os << to_string(plan.profile) << " dx=" << plan.distance << " T=" << plan.duration << " L=" << plan.steps;
    return os.str();
}

std::string describe(const FilterSpec& spec) {
    std::ostringstream os;
    os.precision(10);
    os << "iir na=" << spec.na() << " nb=" << spec.nb() << " dt=" << spec.dt() << " fc=" << cutoff_frequency(spec);
    return os.str();
}

}  // namespace

VoltageRamp synthesize(const TrapModel& model, const TransportPlan& plan, const FilterSpec& spec,
                       const MicromotionOffsets& offsets, const SynthesisConfig& config) {
    validate_inputs(model, plan, spec, offsets, config);
    Synthesizer syn(model, plan, spec, offsets, config);
    const Eigen::VectorXd start = syn.initial_solution();

    VoltageRamp ramp;
    ramp.dt = plan.step;
    ramp.transport_steps = plan.steps;
    ramp.trajectory = describe(plan);
    ramp.filter_id = describe(spec);
    ramp.forward = syn.run(start, false, nullptr);
    const Eigen::VectorXd turn = ramp.forward.source.bottomRows(1).transpose();
    ramp.backward = syn.run(turn, true, &ramp.forward);
    return ramp;
}

VoltageRamp linear_ramp(const TrapModel& model, const TransportPlan& plan, const FilterSpec& spec,
                        const MicromotionOffsets& offsets, const SynthesisConfig& config) {
    validate_inputs(model, plan, spec, offsets, config);
    Synthesizer syn(model, plan, spec, offsets, config);
    const Eigen::VectorXd ua = syn.initial_solution();
    const Eigen::VectorXd off_b = syn.offset_at(plan.steps, false);
    const Eigen::VectorXd ub =
        syn.static_solve(plan.positions.back(), off_b, ua - syn.offset_at(0, false), true, plan.steps).voltages +
        off_b;

    const std::size_t N = syn.samples();
    const std::size_t L = plan.steps;
    const auto ne = static_cast<Eigen::Index>(model.electrode_count());
    auto build = [&](const Eigen::VectorXd& from, const Eigen::VectorXd& to) {
        RampSeries s;
        s.source.resize(static_cast<Eigen::Index>(N), ne);
        s.electrode.resize(static_cast<Eigen::Index>(N), ne);
        for (std::size_t i = 0; i < N; ++i) {
            const double t = L == 0 ? 1.0 : std::min(1.0, static_cast<double>(i + 1) / static_cast<double>(L));
            s.source.row(static_cast<Eigen::Index>(i)) = (from + t * (to - from)).transpose();
        }
        for (Eigen::Index j = 0; j < ne; ++j) {
            const Eigen::VectorXd col = s.source.col(j);
            const auto u = apply_forward(spec, std::span<const double>(col.data(), N),
                                         FilterState::steady(spec, from[j]));
            for (std::size_t i = 0; i < N; ++i) s.electrode(static_cast<Eigen::Index>(i), j) = u[i];
        }
        return s;
    };

    VoltageRamp ramp;
    ramp.dt = plan.step;
    ramp.transport_steps = L;
    ramp.trajectory = describe(plan) + " linear";
    ramp.filter_id = describe(spec);
    ramp.forward = build(ua, ub);
    ramp.backward = build(ub, ua);
    return ramp;
}

MinimumSearch find_minimum(const TrapModel& model, const Eigen::VectorXd& voltages, const Vec3& start,
                           std::size_t max_iterations) {
    const std::span<const double> u(voltages.data(), static_cast<std::size_t>(voltages.size()));
    constexpr double max_step = 20e-6;
    MinimumSearch out;
    Vec3 r = start;
    PotentialProbe p = model.probe(u, r);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        out.iterations = it + 1;
        Vec3 step;
        const Eigen::LLT<Mat3> llt(p.hessian);
        if (llt.info() == Eigen::Success) {
            step = -llt.solve(p.gradient);
        } else {
            const double h = std::max(p.hessian.diagonal().cwiseAbs().maxCoeff(), 1.0);
            step = -p.gradient / h;
        }
        const double len = step.norm();
        if (len > max_step) step *= max_step / len;

        // Points outside a gridded model count as uphill so the step shrinks back inside.
        auto try_probe = [&](double t) -> std::optional<PotentialProbe> {
            try {
                return model.probe(u, r + t * step);
            } catch (const OutOfBoundsError&) {
                return std::nullopt;
            }
        };
        auto uphill = [&](const std::optional<PotentialProbe>& q) {
            return !q || q->value > p.value + 1e-15 * std::abs(p.value) + 1e-18;
        };
        double t = 1.0;
        std::optional<PotentialProbe> trial = try_probe(t);
        for (int halve = 0; halve < 30 && uphill(trial); ++halve) {
            t *= 0.5;
            trial = try_probe(t);
        }
        if (!trial) break;
        r += t * step;
        p = *trial;
        if (t * step.norm() < 1e-13) {
            out.converged = true;
            break;
        }
    }
    out.position = r;
    out.probe = p;
    return out;
}

namespace {

/// Ion positions along the rows of `electrode`, seeded with the planned positions.
std::vector<MinimumSearch> track_minima(const TrapModel& model, const Eigen::MatrixXd& electrode,
                                        const TransportPlan& plan, bool backward) {
    std::vector<MinimumSearch> out;
    for (Eigen::Index i = 0; i < electrode.rows(); ++i) {
        const Eigen::VectorXd u = electrode.row(i).transpose();
        out.push_back(find_minimum(model, u, planned_position(plan, static_cast<std::size_t>(i), backward)));
    }
    return out;
}

}  // namespace

RampDiagnostics verify_ramp(const VoltageRamp& ramp, const TrapModel& model, const TransportPlan& plan,
                            double slew, const std::optional<DwellPattern>& dwell) {
    const auto ne = static_cast<Eigen::Index>(model.electrode_count());
    if (ramp.forward.source.cols() != ne || ramp.backward.source.cols() != ne) {
        throw std::invalid_argument("ramp and model electrode counts differ");
    }
    RampDiagnostics d;
    const double kappa = model.curvature_for(plan.axial_frequency);
    std::size_t offset = 0;
    for (bool backward : {false, true}) {
        const RampSeries& s = backward ? ramp.backward : ramp.forward;
        const auto minima = track_minima(model, s.electrode, plan, backward);
        for (std::size_t i = 0; i < minima.size(); ++i) {
            const auto& m = minima[i];
            if (!m.converged) d.unconverged_steps.push_back(offset + i);
            const Vec3 target = planned_position(plan, i, backward);
            d.max_position_error = std::max(d.max_position_error, (m.position - target).norm());
            const double hxx = m.probe.hessian(0, 0);
            const double ferr = hxx > 0.0 ? std::abs(std::sqrt(hxx / kappa) - 1.0) : 1.0;
            d.max_frequency_error = std::max(d.max_frequency_error, ferr);
            d.max_xz = std::max(d.max_xz, std::abs(m.probe.hessian(0, 2)));
        }
        offset += minima.size();

        const double tol = slew + 1e-12;
        for (Eigen::Index i = 0; i < s.source.rows(); ++i) {
            for (Eigen::Index j = 0; j < ne; ++j) {
                const double prev = i > 0 ? s.source(i - 1, j) : s.electrode(0, j);
                if (std::abs(s.source(i, j) - prev) > tol) ++d.slew_violations;
            }
        }
    }
    const auto& f = ramp.forward.electrode;
    const auto& b = ramp.backward.electrode;
    d.loop_closure_error = std::max((b.bottomRows(1) - f.topRows(1)).cwiseAbs().maxCoeff(),
                                    (b.topRows(1) - f.bottomRows(1)).cwiseAbs().maxCoeff());
    if (dwell) d.mean_position_asymmetry = mean_position_asymmetry(ramp, model, plan, *dwell);
    return d;
}

double mean_position_asymmetry(const VoltageRamp& ramp, const TrapModel& model, const TransportPlan& plan,
                               const DwellPattern& dwell) {
    const auto ne = static_cast<Eigen::Index>(model.electrode_count());
    if (!dwell.actual_filters.empty() && dwell.actual_filters.size() != static_cast<std::size_t>(ne)) {
        throw std::invalid_argument("one actual filter per electrode is required");
    }
    // Electrode voltages actually present: source played through the actual filters,
    // followed by `tail_samples` of holding the final source value.
    auto realized = [&](const RampSeries& s) {
        const Eigen::Index n = s.source.rows();
        const Eigen::Index total = n + static_cast<Eigen::Index>(dwell.tail_samples);
        Eigen::MatrixXd u(total, ne);
        for (Eigen::Index j = 0; j < ne; ++j) {
            std::vector<double> src(static_cast<std::size_t>(total));
            for (Eigen::Index i = 0; i < total; ++i) src[static_cast<std::size_t>(i)] = s.source(std::min(i, n - 1), j);
            if (dwell.actual_filters.empty()) {
                for (Eigen::Index i = 0; i < n; ++i) u(i, j) = s.electrode(i, j);
                for (Eigen::Index i = n; i < total; ++i) u(i, j) = s.source(n - 1, j);
            } else {
                const FilterSpec& fs = dwell.actual_filters[static_cast<std::size_t>(j)];
                const auto out = apply_forward(fs, src, FilterState::steady(fs, s.electrode(0, j)));
                for (Eigen::Index i = 0; i < total; ++i) u(i, j) = out[static_cast<std::size_t>(i)];
            }
        }
        return u;
    };
    auto sum_x = [&](const Eigen::MatrixXd& u, bool backward) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            const Eigen::VectorXd v = u.row(i).transpose();
            acc += find_minimum(model, v, planned_position(plan, static_cast<std::size_t>(i), backward)).position.x();
        }
        return acc;
    };
    const Eigen::MatrixXd uab = realized(ramp.forward);
    const Eigen::MatrixXd uba = realized(ramp.backward);
    const double s_ab = sum_x(uab, false);
    const double s_ba = sum_x(uba, true);
    const Eigen::VectorXd settled_b = ramp.forward.source.bottomRows(1).transpose();
    const Eigen::VectorXd settled_a = ramp.backward.source.bottomRows(1).transpose();
    const double xb = find_minimum(model, settled_b, plan.positions.back()).position.x();
    const double xa = find_minimum(model, settled_a, plan.positions.front()).position.x();

    const double k_time = static_cast<double>(uab.rows()) * ramp.dt;
    auto mean = [&](std::size_t m) {
        const double md = static_cast<double>(m);
        const double rest = dwell.precession_time - md * k_time;
        if (rest < 0.0) throw std::invalid_argument("transports do not fit in the precession time");
        return (0.5 * md * (s_ab + s_ba) * ramp.dt + 0.5 * rest * (xa + xb)) / dwell.precession_time;
    };
    if (!(dwell.precession_time > 0.0)) throw std::invalid_argument("precession time must be positive");
    return mean(dwell.m_hi) - mean(dwell.m_lo);
}

}  // namespace ionshuttle
