#include "ionshuttle/config.hpp"

#include <fstream>
#include <set>

#include "ionshuttle/io.hpp"

namespace ionshuttle {

using nlohmann::json;

namespace {

// Reads known keys from one object and reports the rest.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
        }
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    const json& at(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }
    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + name_ + "." + key + "': " + e.what());
        }
    }
    void vec3(const std::string& key, Vec3& out) {
        std::vector<double> v;
        get(key, v);
        if (!has(key)) return;
        if (v.size() != 3) throw ConfigError("config key '" + name_ + "." + key + "' needs 3 numbers");
        out = Vec3(v[0], v[1], v[2]);
    }
    Section sub(const std::string& key) { return Section(at(key), name_ + "." + key); }
    const std::string& name() const { return name_; }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void read_shape(Section s, CountShape& c) {
    s.get("mean", c.mean);
    s.get("leakage", c.leakage);
}

}  // namespace

SimulationSection::SimulationSection() {
    truth.fidelity = 0.999994;
    truth.offset = 0.5;
    truth.decay_rate = 4.0;
    truth.precession_time = 69.44e-3;
    truth.dark = {1.0, 0.01};
    truth.bright = {12.0, 0.02};
    truth.calibration_trials = 2000;
    tracking.failure = 2e-3;
    tracking.transports = 4000;
    tracking.dark_rate = 23.5 / 4000.0;
    tracking.bright_rate = tracking.dark_rate + 0.113 / (1.0 - 2.0 * tracking.failure);
    tracking.skipped = {0, 100, 200, 300};
    tracking.runs_per_point = 125;
    tracking.dark_total_sigma = 0.3;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    Section root(j, "config");
    root.get("seed", c.seed);
    root.get("output", c.output);
    if (root.has("trap")) {
        auto s = root.sub("trap");
        s.get("kind", c.trap.kind);
        if (c.trap.kind != "toy" && c.trap.kind != "grid") throw ConfigError("trap.kind must be toy or grid");
        s.get("segments", c.trap.toy.segments);
        s.get("pitch", c.trap.toy.pitch);
        s.get("width", c.trap.toy.width);
        s.get("transverse_curvature", c.trap.toy.transverse_curvature);
        s.get("vertical_tilt", c.trap.toy.vertical_tilt);
        s.get("pseudopotential_curvature", c.trap.toy.pseudopotential_curvature);
        s.get("correction_field", c.trap.toy.correction_field);
        s.get("mass", c.trap.toy.mass);
        s.get("charge", c.trap.toy.charge);
        s.get("grid_file", c.trap.grid_file);
    }
    if (root.has("trajectory")) {
        auto s = root.sub("trajectory");
        s.get("distance", c.trajectory.distance);
        s.get("duration", c.trajectory.duration);
        s.get("step", c.trajectory.step);
        std::string profile = to_string(c.trajectory.profile);
        s.get("profile", profile);
        try {
            c.trajectory.profile = parse_profile(profile);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        s.get("axial_frequency_hz", c.trajectory.axial_frequency_hz);
        s.vec3("start", c.trajectory.start);
    }
    if (root.has("filter")) {
        auto s = root.sub("filter");
        s.get("cutoff_hz", c.filter.cutoff_hz);
        std::string method = to_string(c.filter.method);
        s.get("method", method);
        try {
            c.filter.method = parse_discretization(method);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (s.has("stages")) {
            AnalogChain chain;
            const json& stages = s.at("stages");
            if (!stages.is_array()) throw ConfigError("filter.stages must be an array");
            for (std::size_t k = 0; k < stages.size(); ++k) {
                Section st(stages[k], "filter.stages[" + std::to_string(k) + "]");
                RcStage rc;
                st.get("R", rc.resistance);
                st.get("C", rc.capacitance);
                chain.stages.push_back(rc);
            }
            s.get("trap_capacitance", chain.trap_capacitance);
            s.get("trap_resistance", chain.trap_resistance);
            c.filter.chain = chain;
        } else if (s.has("trap_capacitance") || s.has("trap_resistance")) {
            throw ConfigError("filter.trap_capacitance and filter.trap_resistance need filter.stages");
        }
    }
    if (root.has("synthesis")) {
        auto s = root.sub("synthesis");
        auto& sc = c.synthesis.config;
        s.get("slew", sc.slew);
        s.get("v_min", sc.v_min);
        s.get("v_max", sc.v_max);
        s.get("tie_weight", sc.tie_weight);
        s.get("loop_weight_end", sc.loop_weight_end);
        s.get("loop_weight_mid", sc.loop_weight_mid);
        s.get("regularization", sc.regularization);
        s.get("position_scale", sc.position_scale);
        s.get("curvature_scale", sc.curvature_scale);
        if (s.has("phi0")) {
            double v = 0.0;
            s.get("phi0", v);
            sc.phi0 = v;
        }
        if (s.has("settle_steps")) {
            std::size_t v = 0;
            s.get("settle_steps", v);
            sc.settle_steps = v;
        }
        if (s.has("weights")) {
            auto w = s.sub("weights");
            w.get("gradient", sc.weights.gradient);
            w.get("curvature", sc.weights.curvature);
            w.get("xz", sc.weights.xz);
            w.get("phi", sc.weights.phi);
        }
        s.get("offsets_first", c.synthesis.offsets_first);
        s.get("offsets_last", c.synthesis.offsets_last);
    }
    if (root.has("detection")) {
        auto s = root.sub("detection");
        auto& d = c.detection;
        s.get("p_bb_lo", d.p_bb_lo);
        s.get("p_db_lo", d.p_db_lo);
        s.get("p_bb_hi", d.p_bb_hi);
        s.get("p_db_hi", d.p_db_hi);
        if (s.has("thresholds")) {
            auto t = s.sub("thresholds");
            Thresholds th;
            t.get("dark", th.dark);
            t.get("bright", th.bright);
            d.thresholds = th;
        }
        if (s.has("objective")) {
            auto o = s.sub("objective");
            o.get("min_p_bb", d.objective.min_p_bb);
            o.get("min_p_db", d.objective.min_p_db);
            o.get("max_total_error", d.objective.max_total_error);
        }
        s.get("resamples", d.resamples);
        s.get("bins", d.bins);
        s.get("f_prep", d.f_prep);
        s.get("f_pi", d.f_pi);
    }
    if (root.has("analysis")) {
        auto s = root.sub("analysis");
        auto& a = c.analysis;
        s.get("amplitude_points", a.amplitude_points);
        s.get("fidelity_points", a.fidelity_points);
        s.get("bootstrap", a.bootstrap);
        s.get("failed_transports", a.failed_transports);
        if (s.has("dephasing")) {
            auto d = s.sub("dephasing");
            d.get("decay_rate", a.dephasing.decay_rate);
            d.get("phase_width", a.dephasing.phase_width);
            d.get("frequency_per_field", a.dephasing.frequency_per_field);
            d.get("field_gradient", a.dephasing.field_gradient);
            d.get("field", a.dephasing.field);
            d.get("transport_time", a.dephasing.transport_time);
        }
    }
    if (root.has("simulation")) {
        auto s = root.sub("simulation");
        auto& m = c.simulation;
        s.get("fidelity", m.truth.fidelity);
        s.get("offset", m.truth.offset);
        s.get("phase", m.truth.phase);
        s.get("decay_rate", m.truth.decay_rate);
        s.get("precession_time", m.truth.precession_time);
        s.get("f_prep", m.truth.f_prep);
        s.get("f_pi", m.truth.f_pi);
        s.get("calibration_trials", m.truth.calibration_trials);
        if (s.has("dark")) read_shape(s.sub("dark"), m.truth.dark);
        if (s.has("bright")) read_shape(s.sub("bright"), m.truth.bright);
        s.get("m_lo", m.m_lo);
        s.get("m_hi", m.m_hi);
        s.get("phases", m.phases);
        s.get("repetitions", m.repetitions);
        s.get("substeps", m.substeps);
        if (s.has("tracking")) {
            auto t = s.sub("tracking");
            t.get("failure", m.tracking.failure);
            t.get("bright_rate", m.tracking.bright_rate);
            t.get("dark_rate", m.tracking.dark_rate);
            t.get("transports", m.tracking.transports);
            t.get("skipped", m.tracking.skipped);
            t.get("runs_per_point", m.tracking.runs_per_point);
            t.get("dark_total_sigma", m.tracking.dark_total_sigma);
        }
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["output"] = output;
    j["trap"] = {{"kind", trap.kind},
                 {"segments", trap.toy.segments},
                 {"pitch", trap.toy.pitch},
                 {"width", trap.toy.width},
                 {"transverse_curvature", trap.toy.transverse_curvature},
                 {"vertical_tilt", trap.toy.vertical_tilt},
                 {"pseudopotential_curvature", trap.toy.pseudopotential_curvature},
                 {"correction_field", trap.toy.correction_field},
                 {"mass", trap.toy.mass},
                 {"charge", trap.toy.charge},
                 {"grid_file", trap.grid_file}};
    j["trajectory"] = {{"distance", trajectory.distance},
                       {"duration", trajectory.duration},
                       {"step", trajectory.step},
                       {"profile", to_string(trajectory.profile)},
                       {"axial_frequency_hz", trajectory.axial_frequency_hz},
                       {"start", {trajectory.start.x(), trajectory.start.y(), trajectory.start.z()}}};
    json f{{"cutoff_hz", filter.cutoff_hz}, {"method", to_string(filter.method)}};
    if (filter.chain) {
        json stages = json::array();
        for (const auto& s : filter.chain->stages) stages.push_back({{"R", s.resistance}, {"C", s.capacitance}});
        f["stages"] = stages;
        f["trap_capacitance"] = filter.chain->trap_capacitance;
        f["trap_resistance"] = filter.chain->trap_resistance;
    }
    j["filter"] = f;
    const auto& sc = synthesis.config;
    json syn{{"slew", sc.slew},
             {"v_min", sc.v_min},
             {"v_max", sc.v_max},
             {"tie_weight", sc.tie_weight},
             {"loop_weight_end", sc.loop_weight_end},
             {"loop_weight_mid", sc.loop_weight_mid},
             {"regularization", sc.regularization},
             {"position_scale", sc.position_scale},
             {"curvature_scale", sc.curvature_scale},
             {"weights",
              {{"gradient", sc.weights.gradient},
               {"curvature", sc.weights.curvature},
               {"xz", sc.weights.xz},
               {"phi", sc.weights.phi}}},
             {"offsets_first", synthesis.offsets_first},
             {"offsets_last", synthesis.offsets_last}};
    if (sc.phi0) syn["phi0"] = *sc.phi0;
    if (sc.settle_steps) syn["settle_steps"] = *sc.settle_steps;
    j["synthesis"] = syn;
    json det{{"p_bb_lo", detection.p_bb_lo},
             {"p_db_lo", detection.p_db_lo},
             {"p_bb_hi", detection.p_bb_hi},
             {"p_db_hi", detection.p_db_hi},
             {"objective",
              {{"min_p_bb", detection.objective.min_p_bb},
               {"min_p_db", detection.objective.min_p_db},
               {"max_total_error", detection.objective.max_total_error}}},
             {"resamples", detection.resamples},
             {"bins", detection.bins},
             {"f_prep", detection.f_prep},
             {"f_pi", detection.f_pi}};
    if (detection.thresholds) det["thresholds"] = {{"dark", detection.thresholds->dark}, {"bright", detection.thresholds->bright}};
    j["detection"] = det;
    const auto& dp = analysis.dephasing;
    j["analysis"] = {{"amplitude_points", analysis.amplitude_points},
                     {"fidelity_points", analysis.fidelity_points},
                     {"bootstrap", analysis.bootstrap},
                     {"failed_transports", analysis.failed_transports},
                     {"dephasing",
                      {{"decay_rate", dp.decay_rate},
                       {"phase_width", dp.phase_width},
                       {"frequency_per_field", dp.frequency_per_field},
                       {"field_gradient", dp.field_gradient},
                       {"field", dp.field},
                       {"transport_time", dp.transport_time}}}};
    const auto& m = simulation;
    j["simulation"] = {{"fidelity", m.truth.fidelity},
                       {"offset", m.truth.offset},
                       {"phase", m.truth.phase},
                       {"decay_rate", m.truth.decay_rate},
                       {"precession_time", m.truth.precession_time},
                       {"f_prep", m.truth.f_prep},
                       {"f_pi", m.truth.f_pi},
                       {"calibration_trials", m.truth.calibration_trials},
                       {"dark", {{"mean", m.truth.dark.mean}, {"leakage", m.truth.dark.leakage}}},
                       {"bright", {{"mean", m.truth.bright.mean}, {"leakage", m.truth.bright.leakage}}},
                       {"m_lo", m.m_lo},
                       {"m_hi", m.m_hi},
                       {"phases", m.phases},
                       {"repetitions", m.repetitions},
                       {"substeps", m.substeps},
                       {"tracking",
                        {{"failure", m.tracking.failure},
                         {"bright_rate", m.tracking.bright_rate},
                         {"dark_rate", m.tracking.dark_rate},
                         {"transports", m.tracking.transports},
                         {"skipped", m.tracking.skipped},
                         {"runs_per_point", m.tracking.runs_per_point},
                         {"dark_total_sigma", m.tracking.dark_total_sigma}}}};
    return j;
}

std::string RunConfig::hash() const {
    json j = to_json();
    j.erase("output");
    return io::config_hash(j);
}

TrapModel RunConfig::build_trap() const {
    if (trap.kind == "grid") {
        if (trap.grid_file.empty()) throw ConfigError("trap.kind = grid needs trap.grid_file");
        return load_basis_grids(trap.grid_file);
    }
    return make_toy_trap(trap.toy);
}

TransportPlan RunConfig::build_plan() const {
    return generate_trajectory(trajectory.distance, trajectory.duration, trajectory.step, trajectory.profile,
                               constants::two_pi * trajectory.axial_frequency_hz, trajectory.start);
}

AnalogChain RunConfig::build_chain() const { return filter.chain ? *filter.chain : default_chain(filter.cutoff_hz); }

FilterSpec RunConfig::build_filter() const { return discretize(build_chain(), trajectory.step, filter.method); }

MicromotionOffsets RunConfig::build_offsets(std::size_t electrodes) const {
    MicromotionOffsets off = MicromotionOffsets::zero(electrodes);
    auto fill = [&](const std::vector<double>& v, Eigen::VectorXd& out, const char* key) {
        if (v.empty()) return;
        if (v.size() != electrodes) {
            throw ConfigError(std::string("synthesis.") + key + " needs one value per electrode (" +
                              std::to_string(electrodes) + ")");
        }
        out = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    };
    fill(synthesis.offsets_first, off.first, "offsets_first");
    fill(synthesis.offsets_last, off.last, "offsets_last");
    return off;
}

}  // namespace ionshuttle
