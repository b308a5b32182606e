#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "ionshuttle/config.hpp"
#include "ionshuttle/errors.hpp"
#include "ionshuttle/experiment_simulator.hpp"
#include "ionshuttle/io.hpp"

using namespace ionshuttle;
using io::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("ionshuttle_io_" + std::to_string(::getpid()))) { fs::create_directories(path); }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("numbers round-trip through text") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) CHECK(std::stod(io::format_number(v)) == v);
    CHECK(io::format_number(std::nan("")) == "nan");
    CHECK(io::format_number(-INFINITY) == "-inf");
}

TEST_CASE("FNV-1a reference vectors") {
    CHECK(io::fnv1a_hex("") == "cbf29ce484222325");
    CHECK(io::fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(io::fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("config hash ignores key order") {
    const json a = json::parse(R"({"x": 1, "y": {"b": 2, "a": 3}})");
    const json b = json::parse(R"({"y": {"a": 3, "b": 2}, "x": 1})");
    CHECK(io::config_hash(a) == io::config_hash(b));
    CHECK(io::config_hash(a) != io::config_hash(json::parse(R"({"x": 2})")));
}

TEST_CASE("config defaults, overrides and rejection of unknown keys") {
    const RunConfig d;
    CHECK(d.trajectory.distance == 280e-6);
    CHECK(d.filter.cutoff_hz == 63.2e3);
    const RunConfig c = RunConfig::from_json(json::parse(R"({"seed": 5, "trajectory": {"profile": "sine"}, "output": "x"})"));
    CHECK(c.seed == 5);
    CHECK(c.trajectory.profile == Profile::Sine);
    CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"trajectory": {"lenght": 1}})")), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"bogus": 1})")), ConfigError);
    // output directory does not enter the hash
    const RunConfig c2 = RunConfig::from_json(json::parse(R"({"seed": 5, "trajectory": {"profile": "sine"}, "output": "y"})"));
    CHECK(c.hash() == c2.hash());
    // to_json round-trips
    CHECK(RunConfig::from_json(c.to_json()).hash() == c.hash());
}

TEST_CASE("ramp files round-trip") {
    TempDir dir;
    VoltageRamp r;
    r.dt = 80e-9;
    r.transport_steps = 3;
    r.forward.source = Eigen::MatrixXd::Random(5, 6);
    r.forward.electrode = Eigen::MatrixXd::Random(5, 6);
    r.backward.source = Eigen::MatrixXd::Random(5, 6);
    r.backward.electrode = Eigen::MatrixXd::Random(5, 6);
    r.trajectory = "test";
    r.filter_id = "f";
    io::write_ramp_csv(r, dir / "ramp.csv", "abc");
    io::write_text(dir / "ramp.json", io::ramp_manifest(r, "ramp.csv", "abc").dump());
    const VoltageRamp back = io::read_ramp(dir / "ramp.json");
    CHECK(back.dt == r.dt);
    CHECK(back.transport_steps == 3);
    CHECK(back.forward.source == r.forward.source);
    CHECK(back.backward.electrode == r.backward.electrode);
}

TEST_CASE("Ramsey and calibration CSV round-trip") {
    TempDir dir;
    GroundTruth t;
    t.fidelity = 0.9999;
    t.precession_time = 0.05;
    t.p_bb = 0.96;
    t.p_db = 0.98;
    t.thresholds = Thresholds{2, 5};
    t.calibration_trials = 50;
    const auto a = simulate_ramsey(t, 2, 7, 30, 1);
    const auto b = simulate_ramsey(t, 400, 7, 30, 2);
    io::write_ramsey_csv({a.dataset, b.dataset}, dir / "r.csv", "h");
    const auto sets = io::read_ramsey_csv(dir / "r.csv");
    REQUIRE(sets.size() == 2);
    CHECK(sets[1].transports == 400);
    CHECK(sets[1].precession_time == 0.05);
    for (std::size_t k = 0; k < 7; ++k) {
        CHECK(sets[0].points[k].bright == a.dataset.points[k].bright);
        CHECK(sets[0].points[k].phase == a.dataset.points[k].phase);
    }
    io::write_calibration_csv(a.calibration, dir / "c.csv", "h");
    const auto cal = io::read_calibration_csv(dir / "c.csv");
    REQUIRE(cal.trials.size() == a.calibration.trials.size());
    CHECK(cal.trials[3].count == a.calibration.trials[3].count);
    CHECK(cal.trials[3].prepared == a.calibration.trials[3].prepared);
    CHECK(io::read_csv(dir / "c.csv").meta.at("config_hash") == "h");
}

TEST_CASE("malformed CSV is reported as a parse error") {
    TempDir dir;
    {
        std::ofstream f(dir / "bad.csv");
        f << "transports,precession_time,phase,bright,trials\n2,0.05,0.0,seven,10\n";
    }
    CHECK_THROWS_AS(io::read_ramsey_csv(dir / "bad.csv"), ParseError);
    {
        std::ofstream f(dir / "short.csv");
        f << "transports,phase\n2,0.0\n";
    }
    CHECK_THROWS_AS(io::read_ramsey_csv(dir / "short.csv"), ParseError);
}

TEST_CASE("tracking CSV keeps the dark prior") {
    TempDir dir;
    TrackingDataset d;
    d.transports = 4000;
    d.dark_total = {23.4, 0.3};
    d.runs = {{0, 25.0}, {100, 36.5}};
    io::write_tracking_csv(d, dir / "t.csv", "h");
    const TrackingDataset back = io::read_tracking_csv(dir / "t.csv");
    CHECK(back.dark_total.mean == 23.4);
    CHECK(back.dark_total.sigma == 0.3);
    CHECK(back.runs.size() == 2);
    CHECK(back.runs[1].photons == 36.5);
}

TEST_CASE("svg rendering produces a document") {
    io::SvgPlot p{"t", "x", "y", {{"s", {0, 1, 2}, {1, 4, 9}, false}}, "note"};
    const std::string svg = io::render_svg(p);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
}
