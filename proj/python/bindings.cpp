// Python module _core: thin wrappers over the C++ library.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ionshuttle/config.hpp"
#include "ionshuttle/detection_stats.hpp"
#include "ionshuttle/errors.hpp"
#include "ionshuttle/experiment_simulator.hpp"
#include "ionshuttle/fidelity_analysis.hpp"
#include "ionshuttle/filter_chain.hpp"
#include "ionshuttle/io.hpp"
#include "ionshuttle/waveform_synth.hpp"

namespace py = pybind11;
using namespace ionshuttle;

namespace {

py::dict diagnostics_dict(const RampDiagnostics& d) {
    py::dict out;
    out["max_position_error"] = d.max_position_error;
    out["max_frequency_error"] = d.max_frequency_error;
    out["max_xz"] = d.max_xz;
    out["slew_violations"] = d.slew_violations;
    out["loop_closure_error"] = d.loop_closure_error;
    out["unconverged_steps"] = d.unconverged_steps;
    return out;
}

RunConfig config_from(const py::object& cfg) {
    if (cfg.is_none()) return RunConfig{};
    const std::string text = py::module_::import("json").attr("dumps")(cfg).cast<std::string>();
    return RunConfig::from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Filter-compensated transport waveforms and transport-fidelity analysis";

    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    py::class_<FilterSpec>(m, "FilterSpec")
        .def(py::init<std::vector<double>, std::vector<double>, double>(), py::arg("a"), py::arg("b"), py::arg("dt"))
        .def_property_readonly("a", &FilterSpec::a)
        .def_property_readonly("b", &FilterSpec::b)
        .def_property_readonly("dt", &FilterSpec::dt)
        .def("dc_gain", &FilterSpec::dc_gain)
        .def("cutoff_frequency", [](const FilterSpec& s) { return cutoff_frequency(s); });

    m.def(
        "default_filter",
        [](double cutoff_hz, double dt, const std::string& method) {
            return discretize(default_chain(cutoff_hz), dt, parse_discretization(method));
        },
        py::arg("cutoff_hz") = 63.2e3, py::arg("dt") = 80e-9, py::arg("method") = "matched");

    m.def(
        "precompensate",
        [](const FilterSpec& s, const std::vector<double>& target) { return precompensate(s, target); },
        py::arg("spec"), py::arg("target"), "Source samples whose filtered output equals target (steady start).");
    m.def(
        "apply_forward",
        [](const FilterSpec& s, const std::vector<double>& source, double initial) {
            return apply_forward(s, source, FilterState::steady(s, initial));
        },
        py::arg("spec"), py::arg("source"), py::arg("initial") = 0.0);

    py::class_<RamseyFit>(m, "RamseyFit")
        .def_readonly("amplitude", &RamseyFit::amplitude)
        .def_readonly("offset", &RamseyFit::offset)
        .def_readonly("phase", &RamseyFit::phase)
        .def_readonly("log_likelihood", &RamseyFit::log_likelihood);

    py::class_<RamseyDataset>(m, "RamseyDataset")
        .def_readonly("transports", &RamseyDataset::transports)
        .def_readonly("precession_time", &RamseyDataset::precession_time)
        .def_property_readonly("phases",
                               [](const RamseyDataset& d) {
                                   std::vector<double> v;
                                   for (const auto& p : d.points) v.push_back(p.phase);
                                   return v;
                               })
        .def_property_readonly("bright",
                               [](const RamseyDataset& d) {
                                   std::vector<std::int64_t> v;
                                   for (const auto& p : d.points) v.push_back(p.bright);
                                   return v;
                               })
        .def_property_readonly("trials", [](const RamseyDataset& d) {
            std::vector<std::int64_t> v;
            for (const auto& p : d.points) v.push_back(p.trials);
            return v;
        });

    py::class_<LikelihoodCurve>(m, "LikelihoodCurve")
        .def_readonly("grid", &LikelihoodCurve::grid)
        .def_readonly("log_likelihood", &LikelihoodCurve::log_likelihood)
        .def_readonly("mode", &LikelihoodCurve::mode)
        .def_property_readonly("interval", [](const LikelihoodCurve& c) { return py::make_tuple(c.interval.lo, c.interval.hi); })
        .def("densities", &LikelihoodCurve::densities);

    m.def(
        "simulate_ramsey",
        [](double fidelity, std::int64_t transports, double p_bb, double p_db, double decay_rate, double precession_time,
           std::size_t phases, std::int64_t repetitions, std::uint64_t seed) {
            GroundTruth t;
            t.fidelity = fidelity;
            t.p_bb = p_bb;
            t.p_db = p_db;
            t.decay_rate = decay_rate;
            t.precession_time = precession_time;
            return simulate_ramsey(t, transports, phases, repetitions, seed).dataset;
        },
        py::arg("fidelity"), py::arg("transports"), py::arg("p_bb"), py::arg("p_db"), py::arg("decay_rate") = 4.0,
        py::arg("precession_time") = 69.44e-3, py::arg("phases") = 19, py::arg("repetitions") = 100, py::arg("seed") = 0);

    m.def("fit_ramsey", &fit_ramsey, py::arg("data"), py::arg("p_bb"), py::arg("p_db"));
    m.def(
        "profile_likelihood",
        [](const RamseyDataset& d, double p_bb, double p_db, std::size_t points) {
            return profile_likelihood_A(d, p_bb, p_db, amplitude_grid(points));
        },
        py::arg("data"), py::arg("p_bb"), py::arg("p_db"), py::arg("points") = 2001);
    m.def(
        "fidelity_likelihood",
        [](const LikelihoodCurve& lo, const LikelihoodCurve& hi, std::int64_t m_lo, std::int64_t m_hi) {
            return fidelity_likelihood(lo, hi, m_lo, m_hi);
        },
        py::arg("lo"), py::arg("hi"), py::arg("m_lo"), py::arg("m_hi"));
    m.def(
        "adjust_for_failures",
        [](double f, double failed, std::int64_t m_lo, std::int64_t m_hi, double sigma) {
            const FailureAdjusted a = adjust_for_failures(f, failed, m_lo, m_hi, sigma);
            return py::make_tuple(a.fidelity, a.sigma);
        },
        py::arg("fidelity"), py::arg("failed"), py::arg("m_lo"), py::arg("m_hi"), py::arg("sigma"));
    m.def(
        "bias_correct",
        [](double p_bb, double p_db, double f_prep, double f_pi) {
            const BiasCorrected b = bias_correct(p_bb, p_db, f_prep, f_pi);
            return py::make_tuple(b.p_bb, b.p_db);
        },
        py::arg("p_bb"), py::arg("p_db"), py::arg("f_prep"), py::arg("f_pi"));
    m.def("phase_width_from_fidelity", &phase_width_from_fidelity, py::arg("fidelity"));
    m.def("static_decay_amplitude", &static_decay_amplitude, py::arg("decay_rate"), py::arg("time"));

    m.def(
        "simulate_and_fit_tracking",
        [](double failure, double bright_rate, double dark_rate, std::int64_t transports, std::vector<std::int64_t> skipped,
           std::size_t runs_per_point, std::uint64_t seed) {
            TrackingTruth t;
            t.failure = failure;
            t.bright_rate = bright_rate;
            t.dark_rate = dark_rate;
            t.transports = transports;
            t.skipped = std::move(skipped);
            t.runs_per_point = runs_per_point;
            const TrackingFit f = fit_transport_fidelity(simulate_tracking(t, seed));
            py::dict out;
            out["failure"] = f.failure;
            out["fidelity"] = f.fidelity;
            out["fidelity_interval"] = py::make_tuple(f.fidelity_interval.lo, f.fidelity_interval.hi);
            out["slope"] = f.linear.slope;
            out["offset"] = f.linear.offset;
            return out;
        },
        py::arg("failure"), py::arg("bright_rate"), py::arg("dark_rate"), py::arg("transports"), py::arg("skipped"),
        py::arg("runs_per_point") = 125, py::arg("seed") = 0);

    m.def(
        "synthesize",
        [](const py::object& cfg) {
            const RunConfig c = config_from(cfg);
            const TrapModel model = c.build_trap();
            const TransportPlan plan = c.build_plan();
            const VoltageRamp r =
                synthesize(model, plan, c.build_filter(), c.build_offsets(model.electrode_count()), c.synthesis.config);
            py::dict out;
            out["dt"] = r.dt;
            out["forward_source"] = r.forward.source;
            out["forward_electrode"] = r.forward.electrode;
            out["backward_source"] = r.backward.source;
            out["backward_electrode"] = r.backward.electrode;
            out["diagnostics"] = diagnostics_dict(verify_ramp(r, model, plan, c.synthesis.config.slew));
            out["config_hash"] = c.hash();
            return out;
        },
        py::arg("config") = py::none(), "Synthesize and verify a ramp; config is a dict in the CLI's JSON layout.");
}
