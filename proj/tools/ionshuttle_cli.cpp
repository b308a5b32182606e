// ionshuttle: command-line front end for waveform synthesis, simulation and analysis.
//
// Exit status: 0 success, 2 invalid input or configuration, 3 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ionshuttle/config.hpp"
#include "ionshuttle/detection_stats.hpp"
#include "ionshuttle/errors.hpp"
#include "ionshuttle/experiment_simulator.hpp"
#include "ionshuttle/fidelity_analysis.hpp"
#include "ionshuttle/io.hpp"
#include "ionshuttle/parallel.hpp"
#include "ionshuttle/waveform_synth.hpp"

namespace fs = std::filesystem;
using namespace ionshuttle;
using io::json;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out;
    std::string format = "json";
    // command specific
    std::string ramp;
    std::string ramsey;
    std::string calibration;
    std::string tracking;
    std::string export_grid;
    double grid_step = 1e-6;
    bool heating = false;
    std::optional<double> fidelity;
};

// Files written by the running command; removed again if it fails.
class Artifacts {
public:
    explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {}

    std::string path(const std::string& name) {
        const fs::path p = dir_ / name;
        written_.push_back(p);
        return p.string();
    }
    void json_file(const std::string& name, const json& j) { io::write_text(path(name), j.dump(2) + "\n"); }
    void discard() noexcept {
        for (const auto& p : written_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
        written_.clear();
    }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<fs::path> written_;
};

struct Context {
    Options opt;
    RunConfig config;
    std::string hash;
    Artifacts* out = nullptr;
    json summary;

    json stamp(json j) const {
        j["config_hash"] = hash;
        j["seed"] = config.seed;
        return j;
    }
    std::string input(const std::string& given, const std::string& fallback) const {
        return given.empty() ? (out->dir() / fallback).string() : given;
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void cmd_trap(Context& c) {
    const TrapModel model = c.config.build_trap();
    const TransportPlan plan = c.config.build_plan();
    json electrodes = json::array();
    for (std::size_t j = 0; j < model.electrode_count(); ++j) {
        const auto& e = model.electrode(j);
        json info{{"id", e.id}, {"reference_voltage", e.reference_voltage}, {"grid", e.is_grid()}};
        if (const auto* g = std::get_if<GaussianSegment>(&e.shape)) {
            info["kind"] = "gaussian";
            info["center"] = g->center;
            info["width"] = g->width;
        } else if (std::holds_alternative<UniformField>(e.shape)) {
            info["kind"] = "uniform";
        } else if (e.is_grid()) {
            info["kind"] = "grid";
        }
        electrodes.push_back(info);
    }
    const double kappa = model.curvature_for(plan.axial_frequency);
    json report{{"electrodes", electrodes},
                {"electrode_count", model.electrode_count()},
                {"mass_kg", model.mass()},
                {"charge_C", model.charge()},
                {"target_curvature_V_per_m2", kappa}};
    if (!c.opt.export_grid.empty()) {
        GridSpec spec;
        const double lo = std::min(plan.start().x(), plan.end().x()) - 150e-6;
        const double hi = std::max(plan.start().x(), plan.end().x()) + 150e-6;
        const double h = c.opt.grid_step;
        if (!(h > 0.0)) throw std::invalid_argument("--grid-step must be positive");
        spec.origin = Vec3(lo, -4.0 * h, -4.0 * h);
        spec.spacing = Vec3::Constant(h);
        spec.shape = {static_cast<std::size_t>(std::ceil((hi - lo) / h)) + 1, 9, 9};
        export_basis_grids(model, c.out->path(c.opt.export_grid), spec);
        report["grid_file"] = c.opt.export_grid;
        report["grid_shape"] = spec.shape;
    }
    c.out->json_file("trap.json", c.stamp(report));
    c.summary = {{"electrodes", model.electrode_count()}, {"target_curvature_V_per_m2", kappa}};
}

void cmd_traj(Context& c) {
    const TransportPlan plan = c.config.build_plan();
    std::ofstream csv(c.out->path("trajectory.csv"));
    csv << "# config_hash=" << c.hash << "\nstep,time,x,y,z\n";
    for (std::size_t i = 0; i < plan.positions.size(); ++i) {
        const auto& r = plan.positions[i];
        csv << i << ',' << io::format_number(plan.time(i)) << ',' << io::format_number(r.x()) << ','
            << io::format_number(r.y()) << ',' << io::format_number(r.z()) << '\n';
    }
    json report{{"steps", plan.steps},
                {"duration_s", plan.duration},
                {"step_s", plan.step},
                {"distance_m", plan.distance},
                {"profile", to_string(plan.profile)},
                {"axial_frequency_hz", plan.axial_frequency / constants::two_pi}};
    c.out->json_file("traj.json", c.stamp(report));
    c.summary = report;
}

void cmd_filter(Context& c) {
    const AnalogChain chain = c.config.build_chain();
    const FilterSpec spec = c.config.build_filter();
    const double nyquist = 0.5 / spec.dt();
    io::SvgPlot plot{"Filter response", "frequency (Hz)", "magnitude (dB)", {}, "config " + c.hash};
    io::SvgSeries mag{"discrete", {}, {}, false};
    std::ofstream csv(c.out->path("bode.csv"));
    csv << "# config_hash=" << c.hash << "\nfrequency_hz,magnitude_db,phase_deg\n";
    const int n = 400;
    for (int k = 1; k < n; ++k) {
        const double f = std::pow(10.0, 2.0 + (std::log10(nyquist) - 2.0) * k / n);
        const BodePoint b = bode(spec, f);
        csv << io::format_number(f) << ',' << io::format_number(b.magnitude_db) << ',' << io::format_number(b.phase_deg) << '\n';
        mag.x.push_back(std::log10(f));
        mag.y.push_back(b.magnitude_db);
    }
    plot.x_label = "log10 frequency (Hz)";
    plot.series.push_back(mag);
    io::write_text(c.out->path("bode.svg"), io::render_svg(plot));
    json report{{"a", spec.a()},
                {"b", spec.b()},
                {"dt_s", spec.dt()},
                {"method", to_string(c.config.filter.method)},
                {"time_constants_s", chain.time_constants()},
                {"analog_cutoff_hz", analog_cutoff(chain)},
                {"discrete_cutoff_hz", cutoff_frequency(spec)},
                {"inverse_gain", spec.inverse_gain()},
                {"dc_gain", spec.dc_gain()}};
    c.out->json_file("filter.json", c.stamp(report));
    c.summary = {{"discrete_cutoff_hz", cutoff_frequency(spec)}, {"inverse_gain", spec.inverse_gain()}};
}

void cmd_synth(Context& c) {
    const TrapModel model = c.config.build_trap();
    const TransportPlan plan = c.config.build_plan();
    const FilterSpec spec = c.config.build_filter();
    const auto offsets = c.config.build_offsets(model.electrode_count());
    const auto t0 = std::chrono::steady_clock::now();
    const VoltageRamp ramp = synthesize(model, plan, spec, offsets, c.config.synthesis.config);
    const double elapsed = seconds_since(t0);
    io::write_ramp_csv(ramp, c.out->path("ramp.csv"), c.hash);
    c.out->json_file("ramp.json", io::ramp_manifest(ramp, "ramp.csv", c.hash));
    const RampDiagnostics d = verify_ramp(ramp, model, plan, c.config.synthesis.config.slew);
    json report{{"runtime_s", elapsed}, {"samples", ramp.forward.samples()}, {"diagnostics", io::to_json(d)}};
    c.out->json_file("synth.json", c.stamp(report));

    io::SvgPlot plot{"Source voltages (A to B)", "step", "voltage (V)", {}, "config " + c.hash};
    for (Eigen::Index j = 0; j < ramp.forward.source.cols(); ++j) {
        io::SvgSeries s{"electrode " + std::to_string(j), {}, {}, false};
        for (Eigen::Index i = 0; i < ramp.forward.source.rows(); ++i) {
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(ramp.forward.source(i, j));
        }
        plot.series.push_back(s);
    }
    io::write_text(c.out->path("ramp.svg"), io::render_svg(plot));
    c.summary = {{"runtime_s", elapsed}, {"max_position_error_m", d.max_position_error}, {"slew_violations", d.slew_violations}};
}

json heating_audit(const Context& c, const VoltageRamp& ramp, const TrapModel& model, const TransportPlan& plan) {
    const VoltageRamp lin = linear_ramp(model, plan, c.config.build_filter(), c.config.build_offsets(model.electrode_count()),
                                        c.config.synthesis.config);
    auto energy = [&](const VoltageRamp& r, std::size_t substeps) {
        const Eigen::VectorXd u0 = r.forward.electrode.row(0).transpose();
        MotionState init;
        init.position = find_minimum(model, u0, plan.start()).position;
        MotionOptions o;
        o.substeps = substeps;
        return integrate_motion(r.forward.electrode, r.dt, model, init, o).final_energy;
    };
    const std::size_t sub = c.config.simulation.substeps;
    const double e_syn = energy(ramp, sub);
    const double e_syn_half = energy(ramp, 2 * sub);
    const double e_lin = energy(lin, sub);
    const double quantum = constants::hbar * plan.axial_frequency;
    return json{{"synthesized_energy_J", e_syn},
                {"synthesized_energy_quanta", e_syn / quantum},
                {"linear_energy_J", e_lin},
                {"linear_energy_quanta", e_lin / quantum},
                {"ratio_linear_over_synthesized", e_lin / e_syn},
                {"step_halving_change_rel", std::abs(e_syn_half - e_syn) / e_syn}};
}

void cmd_verify(Context& c) {
    const TrapModel model = c.config.build_trap();
    const TransportPlan plan = c.config.build_plan();
    const VoltageRamp ramp = io::read_ramp(c.input(c.opt.ramp, "ramp.json"));
    if (ramp.forward.electrodes() != model.electrode_count()) {
        throw std::invalid_argument("ramp electrode count does not match the configured trap");
    }
    const RampDiagnostics d = verify_ramp(ramp, model, plan, c.config.synthesis.config.slew);
    json report{{"diagnostics", io::to_json(d)}};
    if (c.opt.heating) report["heating"] = heating_audit(c, ramp, model, plan);
    c.out->json_file("verify.json", c.stamp(report));
    c.summary = report;
}

GroundTruth truth_for(const RunConfig& cfg, bool high) {
    GroundTruth t = cfg.simulation.truth;
    t.p_bb = high ? cfg.detection.p_bb_hi : cfg.detection.p_bb_lo;
    t.p_db = high ? cfg.detection.p_db_hi : cfg.detection.p_db_lo;
    t.thresholds = cfg.detection.thresholds;
    return t;
}

void cmd_sim_ramsey(Context& c) {
    const auto& s = c.config.simulation;
    std::vector<RamseyDataset> sets;
    PreparedStateRecord calibration;
    json truth = json::array();
    for (int k = 0; k < 2; ++k) {
        const GroundTruth t = truth_for(c.config, k == 1);
        const std::int64_t m = k == 0 ? s.m_lo : s.m_hi;
        const RamseySimulation sim =
            simulate_ramsey(t, m, s.phases, s.repetitions, derive_seed(c.config.seed, static_cast<std::uint64_t>(k)));
        calibration.trials.insert(calibration.trials.end(), sim.calibration.trials.begin(), sim.calibration.trials.end());
        sets.push_back(sim.dataset);
        truth.push_back({{"transports", m}, {"amplitude", t.amplitude(m)}, {"p_bb", t.p_bb}, {"p_db", t.p_db}});
    }
    for (std::size_t i = 0; i < calibration.trials.size(); ++i) calibration.trials[i].id = static_cast<std::int64_t>(i);
    io::write_ramsey_csv(sets, c.out->path("ramsey.csv"), c.hash);
    io::write_calibration_csv(calibration, c.out->path("calibration.csv"), c.hash);
    json report{{"truth", truth}, {"fidelity", s.truth.fidelity}, {"phases", s.phases}, {"repetitions", s.repetitions}};
    c.out->json_file("sim_ramsey.json", c.stamp(report));
    c.summary = report;
}

void cmd_sim_tracking(Context& c) {
    const TrackingDataset d = simulate_tracking(c.config.simulation.tracking, derive_seed(c.config.seed, 2));
    io::write_tracking_csv(d, c.out->path("tracking.csv"), c.hash);
    const auto& t = c.config.simulation.tracking;
    json report{{"failure", t.failure},
                {"bright_rate", t.bright_rate},
                {"dark_rate", t.dark_rate},
                {"transports", t.transports},
                {"runs", d.runs.size()},
                {"dark_total_prior", {d.dark_total.mean, d.dark_total.sigma}}};
    c.out->json_file("sim_tracking.json", c.stamp(report));
    c.summary = report;
}

void cmd_sim_motion(Context& c) {
    const TrapModel model = c.config.build_trap();
    const TransportPlan plan = c.config.build_plan();
    const std::string manifest = c.input(c.opt.ramp, "ramp.json");
    const VoltageRamp ramp = fs::exists(manifest)
                                 ? io::read_ramp(manifest)
                                 : synthesize(model, plan, c.config.build_filter(),
                                              c.config.build_offsets(model.electrode_count()), c.config.synthesis.config);
    const Eigen::VectorXd u0 = ramp.forward.electrode.row(0).transpose();
    MotionState init;
    init.position = find_minimum(model, u0, plan.start()).position;
    MotionOptions o;
    o.substeps = c.config.simulation.substeps;
    const MotionResult r = integrate_motion(ramp.forward.electrode, ramp.dt, model, init, o);
    std::ofstream csv(c.out->path("motion.csv"));
    csv << "# config_hash=" << c.hash << "\ntime,x,y,z,vx,vy,vz,energy\n";
    for (const auto& s : r.samples) {
        csv << io::format_number(s.time);
        for (int k = 0; k < 3; ++k) csv << ',' << io::format_number(s.position[k]);
        for (int k = 0; k < 3; ++k) csv << ',' << io::format_number(s.velocity[k]);
        csv << ',' << io::format_number(s.energy) << '\n';
    }
    json report{{"final_energy_J", r.final_energy},
                {"final_energy_quanta", r.final_energy / (constants::hbar * plan.axial_frequency)},
                {"final_position_m", {r.final.position.x(), r.final.position.y(), r.final.position.z()}},
                {"final_minimum_m", {r.final_minimum.x(), r.final_minimum.y(), r.final_minimum.z()}}};
    c.out->json_file("sim_motion.json", c.stamp(report));
    c.summary = report;
}

std::pair<double, double> detection_for(const RunConfig& cfg, bool high) {
    double pbb = high ? cfg.detection.p_bb_hi : cfg.detection.p_bb_lo;
    double pdb = high ? cfg.detection.p_db_hi : cfg.detection.p_db_lo;
    if (cfg.detection.f_prep != 1.0 || cfg.detection.f_pi != 1.0) {
        const BiasCorrected b = bias_correct(pbb, pdb, cfg.detection.f_prep, cfg.detection.f_pi);
        pbb = b.p_bb;
        pdb = b.p_db;
    }
    return {pbb, pdb};
}

PreparedStateRecord records_for(const PreparedStateRecord& all, std::int64_t m) {
    PreparedStateRecord r;
    for (const auto& t : all.trials) {
        if (t.transports == m) r.trials.push_back(t);
    }
    return r;
}

void cmd_analyze_fidelity(Context& c) {
    const auto sets = io::read_ramsey_csv(c.input(c.opt.ramsey, "ramsey.csv"));
    if (sets.size() != 2) throw std::invalid_argument("fidelity analysis needs Ramsey data at exactly two transport counts");
    const RamseyDataset& lo = sets[0].transports < sets[1].transports ? sets[0] : sets[1];
    const RamseyDataset& hi = sets[0].transports < sets[1].transports ? sets[1] : sets[0];
    const auto grid = amplitude_grid(c.config.analysis.amplitude_points);
    const std::string cal_path = c.input(c.opt.calibration, "calibration.csv");
    const bool bootstrap = c.config.analysis.bootstrap;
    std::optional<PreparedStateRecord> calibration;
    if (bootstrap) calibration = io::read_calibration_csv(cal_path);

    json per_m = json::array();
    std::vector<LikelihoodCurve> curves;
    io::SvgPlot fringe{"Ramsey fringes", "phase (rad)", "bright fraction", {}, "config " + c.hash};
    io::SvgPlot amp{"Amplitude likelihood", "A", "density", {}, "config " + c.hash};
    int k = 0;
    for (const RamseyDataset* d : {&lo, &hi}) {
        const bool high = d == &hi;
        auto [pbb, pdb] = detection_for(c.config, high);
        json entry{{"transports", d->transports}};
        LikelihoodCurve curve;
        if (bootstrap) {
            const PreparedStateRecord rec = records_for(*calibration, d->transports);
            Thresholds th;
            if (c.config.detection.thresholds) {
                th = *c.config.detection.thresholds;
            } else {
                th = calibrate_thresholds(rec, c.config.detection.objective).thresholds;
            }
            const ThresholdCandidate point = evaluate_thresholds(make_histogram(rec.counts(PreparedState::Dark)),
                                                                 make_histogram(rec.counts(PreparedState::Bright)), th);
            pbb = point.p_bb;
            pdb = point.p_db;
            const IdGrid idg = bootstrap_id_grid(rec, th, c.config.detection.resamples,
                                                 derive_seed(c.config.seed, 10 + static_cast<std::uint64_t>(k)),
                                                 c.config.detection.bins, c.opt.jobs);
            c.out->json_file("idgrid_M" + std::to_string(d->transports) + ".json", c.stamp(io::to_json(idg)));
            curve = average_likelihood(*d, idg, grid, c.opt.jobs);
            entry["thresholds"] = {th.dark, th.bright};
        } else {
            curve = profile_likelihood_A(*d, pbb, pdb, grid);
        }
        const RamseyFit fit = fit_ramsey(*d, pbb, pdb);
        entry["p_bb"] = pbb;
        entry["p_db"] = pdb;
        entry["fit"] = io::to_json(fit);
        entry["amplitude"] = io::to_json(curve);
        per_m.push_back(entry);
        io::write_curve_csv(curve, c.out->path("amplitude_M" + std::to_string(d->transports) + ".csv"), c.hash);
        io::SvgSeries pts{"M = " + std::to_string(d->transports), {}, {}, true};
        io::SvgSeries line{"fit M = " + std::to_string(d->transports), {}, {}, false};
        for (const auto& p : d->points) {
            pts.x.push_back(p.phase);
            pts.y.push_back(p.trials > 0 ? static_cast<double>(p.bright) / static_cast<double>(p.trials) : NAN);
        }
        for (int i = 0; i <= 200; ++i) {
            const double phi = constants::two_pi * i / 200.0;
            line.x.push_back(phi);
            line.y.push_back(tagged_bright_probability(fit.offset + fit.amplitude * std::sin(phi - fit.phase), pbb, pdb));
        }
        fringe.series.push_back(pts);
        fringe.series.push_back(line);
        amp.series.push_back({"M = " + std::to_string(d->transports), curve.grid, curve.densities(), false});
        curves.push_back(std::move(curve));
        ++k;
    }
    FidelityGridOptions fopt;
    fopt.points = c.config.analysis.fidelity_points;
    const LikelihoodCurve f = fidelity_likelihood(curves[0], curves[1], lo.transports, hi.transports, fopt);
    io::write_curve_csv(f, c.out->path("fidelity.csv"), c.hash);
    io::write_text(c.out->path("fringes.svg"), io::render_svg(fringe));
    io::write_text(c.out->path("amplitude.svg"), io::render_svg(amp));
    io::SvgPlot fplot{"Fidelity likelihood", "F", "density", {{"L(F)", f.grid, f.densities(), false}}, "config " + c.hash};
    io::write_text(c.out->path("fidelity.svg"), io::render_svg(fplot));

    const double sigma = 0.5 * f.interval.width();
    json report{{"datasets", per_m},
                {"fidelity", io::to_json(f)},
                {"bootstrap", bootstrap},
                {"delta_M", hi.transports - lo.transports}};
    if (c.config.analysis.failed_transports > 0.0) {
        const FailureAdjusted adj =
            adjust_for_failures(f.mode, c.config.analysis.failed_transports, lo.transports, hi.transports, sigma);
        report["failure_adjusted"] = {{"fidelity", adj.fidelity}, {"sigma", adj.sigma}, {"failed", c.config.analysis.failed_transports}};
    }
    if (f.mode <= 1.0) report["phase_width_rad"] = phase_width_from_fidelity(f.mode);
    c.out->json_file("analysis_fidelity.json", c.stamp(report));
    c.summary = {{"fidelity_mode", f.mode}, {"interval", {f.interval.lo, f.interval.hi}}};
}

void cmd_analyze_tracking(Context& c) {
    const TrackingDataset d = io::read_tracking_csv(c.input(c.opt.tracking, "tracking.csv"));
    const TrackingFit fit = fit_transport_fidelity(d);
    json report{{"failure", fit.failure},
                {"failure_interval", {fit.failure_interval.lo, fit.failure_interval.hi}},
                {"transport_fidelity", fit.fidelity},
                {"transport_fidelity_interval", {fit.fidelity_interval.lo, fit.fidelity_interval.hi}},
                {"bright_rate", fit.bright_rate},
                {"dark_rate", fit.dark_rate},
                {"linear_fit",
                 {{"slope", fit.linear.slope},
                  {"slope_error", fit.linear.slope_error},
                  {"offset", fit.linear.offset},
                  {"offset_error", fit.linear.offset_error},
                  {"failure", fit.linear_failure},
                  {"failure_error", fit.linear_failure_error}}}};
    c.out->json_file("analysis_tracking.json", c.stamp(report));
    c.summary = {{"transport_fidelity", fit.fidelity}, {"interval", {fit.fidelity_interval.lo, fit.fidelity_interval.hi}}};
}

void cmd_analyze_detection(Context& c) {
    const PreparedStateRecord all = io::read_calibration_csv(c.input(c.opt.calibration, "calibration.csv"));
    std::vector<std::int64_t> ms;
    for (const auto& t : all.trials) {
        if (std::find(ms.begin(), ms.end(), t.transports) == ms.end()) ms.push_back(t.transports);
    }
    json per_m = json::array();
    for (std::size_t k = 0; k < ms.size(); ++k) {
        const PreparedStateRecord rec = records_for(all, ms[k]);
        DetectionCalibration cal;
        if (c.config.detection.thresholds) {
            cal.dark_hist = make_histogram(rec.counts(PreparedState::Dark));
            cal.bright_hist = make_histogram(rec.counts(PreparedState::Bright));
            const auto cand = evaluate_thresholds(cal.dark_hist, cal.bright_hist, *c.config.detection.thresholds);
            cal.thresholds = cand.thresholds;
            cal.p_bb = cand.p_bb;
            cal.p_db = cand.p_db;
            cal.discard_fraction = cand.discard_fraction;
        } else {
            cal = calibrate_thresholds(rec, c.config.detection.objective);
        }
        const IdGrid grid = bootstrap_id_grid(rec, cal.thresholds, c.config.detection.resamples,
                                              derive_seed(c.config.seed, 10 + k), c.config.detection.bins, c.opt.jobs);
        c.out->json_file("idgrid_M" + std::to_string(ms[k]) + ".json", c.stamp(io::to_json(grid)));
        per_m.push_back({{"transports", ms[k]},
                         {"thresholds", {cal.thresholds.dark, cal.thresholds.bright}},
                         {"p_bb", cal.p_bb},
                         {"p_db", cal.p_db},
                         {"discard_fraction", cal.discard_fraction},
                         {"dark_histogram", cal.dark_hist},
                         {"bright_histogram", cal.bright_hist},
                         {"grid_cells", grid.cells.size()},
                         {"grid_total_weight", grid.total_weight()}});
    }
    c.out->json_file("analysis_detection.json", c.stamp({{"calibrations", per_m}}));
    c.summary = {{"calibrations", per_m.size()}};
}

void cmd_analyze_dephasing(Context& c) {
    DephasingParams p = c.config.analysis.dephasing;
    json report;
    if (c.opt.fidelity) {
        p.phase_width = phase_width_from_fidelity(*c.opt.fidelity);
        report["fidelity"] = *c.opt.fidelity;
    }
    const DephasingReport r = dephasing_toolbox(p, c.config.trajectory.distance);
    report["phase_width_rad"] = p.phase_width;
    report["contrast_factor"] = r.contrast_factor;
    report["sensitivity_Hz_per_m"] = r.sensitivity;
    report["position_width_m"] = r.position_width;
    report["shift_over_distance_Hz"] = r.shift_over_distance;
    report["static_amplitude"] = static_decay_amplitude(p.decay_rate, c.config.simulation.truth.precession_time);
    c.out->json_file("analysis_dephasing.json", c.stamp(report));
    c.summary = report;
}

void cmd_report(Context& c) {
    json report = json::object();
    const char* names[] = {"trap.json", "traj.json", "filter.json", "synth.json", "verify.json", "sim_ramsey.json",
                           "sim_tracking.json", "sim_motion.json", "analysis_fidelity.json", "analysis_tracking.json",
                           "analysis_detection.json", "analysis_dephasing.json"};
    std::string md = "# ionshuttle report\n\nconfig hash: `" + c.hash + "`\n\n";
    for (const char* n : names) {
        const fs::path p = c.out->dir() / n;
        if (!fs::exists(p)) continue;
        std::ifstream in(p);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ParseError(p.string() + ": " + e.what());
        }
        if (j.value("config_hash", c.hash) != c.hash) md += "- " + std::string(n) + ": produced with another config\n";
        report[fs::path(n).stem().string()] = j;
    }
    if (report.empty()) throw std::invalid_argument("no stage reports found in " + c.out->dir().string());
    if (report.contains("analysis_fidelity")) {
        const auto& f = report["analysis_fidelity"]["fidelity"];
        char buf[160];
        std::snprintf(buf, sizeof buf, "- fidelity per transport: %.8f, 68%% interval [%.8f, %.8f]\n", f["mode"].get<double>(),
                      f["interval"][0].get<double>(), f["interval"][1].get<double>());
        md += buf;
    }
    if (report.contains("analysis_tracking")) {
        const auto& t = report["analysis_tracking"];
        char buf[160];
        std::snprintf(buf, sizeof buf, "- transport success 1 - f_s: %.5f, interval [%.5f, %.5f]\n",
                      t["transport_fidelity"].get<double>(), t["transport_fidelity_interval"][0].get<double>(),
                      t["transport_fidelity_interval"][1].get<double>());
        md += buf;
    }
    if (report.contains("verify")) {
        const auto& d = report["verify"]["diagnostics"];
        char buf[160];
        std::snprintf(buf, sizeof buf, "- ramp: max position error %.3g m, slew violations %d\n",
                      d["max_position_error_m"].get<double>(), d["slew_violations"].get<int>());
        md += buf;
    }
    c.out->json_file("report.json", c.stamp(report));
    io::write_text(c.out->path("report.md"), md);
    c.summary = {{"sections", report.size()}};
}

void print_summary(const Context& c) {
    json s = c.summary;
    s["config_hash"] = c.hash;
    if (c.opt.format == "csv") {
        std::cout << "key,value\n";
        for (const auto& [k, v] : s.items()) std::cout << k << ',' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    } else {
        std::cout << s.dump(2) << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ionshuttle: filter-compensated transport waveforms and transport-fidelity analysis"};
    app.require_subcommand(1);
    app.fallthrough();
    Options opt;
    app.add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "random seed (overrides the config)");
    app.add_option("--jobs", opt.jobs, "worker threads; 0 = all cores")->check(CLI::NonNegativeNumber);
    app.add_option("--out", opt.out, "output directory (default: $IONSHUTTLE_OUT or ./ionshuttle-out)");
    app.add_option("--format", opt.format, "summary format on stdout")->check(CLI::IsMember({"json", "csv"}));

    std::function<void(Context&)> action;
    auto leaf = [&](CLI::App* sub, std::function<void(Context&)> fn) { sub->callback([&action, fn] { action = fn; }); };

    auto* trap = app.add_subcommand("trap", "build the trap model and describe it; optionally export basis grids");
    trap->add_option("--export-grid", opt.export_grid, "write basis grids to this file name in the output directory");
    trap->add_option("--grid-step", opt.grid_step, "grid spacing for --export-grid (m)");
    leaf(trap, cmd_trap);
    leaf(app.add_subcommand("traj", "sample the transport trajectory"), cmd_traj);
    leaf(app.add_subcommand("filter", "discretize the filter chain and write its response"), cmd_filter);
    leaf(app.add_subcommand("synth", "synthesize forward and backward voltage ramps"), cmd_synth);
    auto* verify = app.add_subcommand("verify", "check a ramp against the trajectory and the slew limit");
    verify->add_option("--ramp", opt.ramp, "ramp manifest (default: <out>/ramp.json)");
    verify->add_flag("--heating", opt.heating, "also compare motional energy with a linear ramp");
    leaf(verify, cmd_verify);

    auto* sim = app.add_subcommand("sim", "simulate measurement records or ion motion");
    sim->require_subcommand(1);
    leaf(sim->add_subcommand("ramsey", "Ramsey counts at both transport counts plus calibration trials"), cmd_sim_ramsey);
    leaf(sim->add_subcommand("tracking", "fluorescence tracking runs"), cmd_sim_tracking);
    auto* motion = sim->add_subcommand("motion", "classical ion motion under a ramp");
    motion->add_option("--ramp", opt.ramp, "ramp manifest (default: <out>/ramp.json, synthesized if absent)");
    leaf(motion, cmd_sim_motion);

    auto* analyze = app.add_subcommand("analyze", "likelihood analysis of measurement records");
    analyze->require_subcommand(1);
    auto* afid = analyze->add_subcommand("fidelity", "fringe fits, amplitude likelihoods and the fidelity likelihood");
    afid->add_option("--ramsey", opt.ramsey, "Ramsey CSV (default: <out>/ramsey.csv)");
    afid->add_option("--calibration", opt.calibration, "calibration CSV for the bootstrap (default: <out>/calibration.csv)");
    leaf(afid, cmd_analyze_fidelity);
    auto* atr = analyze->add_subcommand("tracking", "transport success probability from tracking runs");
    atr->add_option("--tracking", opt.tracking, "tracking CSV (default: <out>/tracking.csv)");
    leaf(atr, cmd_analyze_tracking);
    auto* adet = analyze->add_subcommand("detection", "thresholds, identification probabilities, bootstrap grid");
    adet->add_option("--calibration", opt.calibration, "calibration CSV (default: <out>/calibration.csv)");
    leaf(adet, cmd_analyze_detection);
    auto* adep = analyze->add_subcommand("dephasing", "phase and position spreads");
    adep->add_option("--fidelity", opt.fidelity, "derive the phase spread from this per-transport fidelity");
    leaf(adep, cmd_analyze_dephasing);
    leaf(app.add_subcommand("report", "collect stage reports into report.json and report.md"), cmd_report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    Context ctx;
    ctx.opt = opt;
    std::optional<Artifacts> artifacts;
    try {
        ctx.config = opt.config_path.empty() ? RunConfig{} : RunConfig::load(opt.config_path);
        if (opt.seed) ctx.config.seed = *opt.seed;
        std::string dir = opt.out;
        if (dir.empty()) dir = ctx.config.output;
        if (dir.empty()) {
            const char* env = std::getenv("IONSHUTTLE_OUT");
            dir = env && *env ? env : "ionshuttle-out";
        }
        ctx.config.output = dir;
        ctx.hash = ctx.config.hash();
        fs::create_directories(dir);
        artifacts.emplace(dir);
        ctx.out = &*artifacts;
        action(ctx);
        ctx.out->json_file("config.json", ctx.config.to_json());
        print_summary(ctx);
        return 0;
    } catch (const NumericalError& e) {
        if (artifacts) artifacts->discard();
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const ThresholdObjectiveError& e) {
        if (artifacts) artifacts->discard();
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        if (artifacts) artifacts->discard();
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
