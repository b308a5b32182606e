#pragma once

// File formats: CSV tables (numbers printed with 17 significant digits so they
// re-read bit-exactly), JSON reports and manifests, SVG line plots.
//
// CSV files may start with comment lines "# key=value" carrying metadata such as
// the config hash; readers skip other comment lines.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ionshuttle/detection_stats.hpp"
#include "ionshuttle/fidelity_analysis.hpp"
#include "ionshuttle/waveform_synth.hpp"

namespace ionshuttle::io {

using nlohmann::json;

std::string format_number(double v);
/// FNV-1a, 64 bit, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);
/// Hash of the compact dump; object keys are sorted, so key order does not matter.
std::string config_hash(const json& config);

struct CsvTable {
    std::map<std::string, std::string> meta;  // from "# key=value" lines
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;  // throws ParseError when absent
};

CsvTable read_csv(const std::string& path);
double parse_double(const std::string& field, const std::string& where);
std::int64_t parse_int(const std::string& field, const std::string& where);

/// Columns: direction (forward | backward), step, time, ut_0..ut_{n-1}, u_0..u_{n-1}.
void write_ramp_csv(const VoltageRamp& ramp, const std::string& path, const std::string& hash);
json ramp_manifest(const VoltageRamp& ramp, const std::string& csv_name, const std::string& hash);
/// Reads the manifest and the CSV it names (relative to the manifest's directory).
VoltageRamp read_ramp(const std::string& manifest_path);

/// Columns: trial_id, prepared (dark | bright), transports, count, veto (0 | 1, optional).
void write_calibration_csv(const PreparedStateRecord& record, const std::string& path, const std::string& hash);
PreparedStateRecord read_calibration_csv(const std::string& path);

/// Columns: transports, precession_time, phase, bright, trials; one dataset per M.
void write_ramsey_csv(const std::vector<RamseyDataset>& sets, const std::string& path, const std::string& hash);
std::vector<RamseyDataset> read_ramsey_csv(const std::string& path);

/// Columns: transports, skipped, photons. The absent-ion prior travels as
/// "# dark_total_mean" and "# dark_total_sigma" metadata.
void write_tracking_csv(const TrackingDataset& data, const std::string& path, const std::string& hash);
TrackingDataset read_tracking_csv(const std::string& path);

/// Columns: x, log_likelihood, density.
void write_curve_csv(const LikelihoodCurve& curve, const std::string& path, const std::string& hash);

json to_json(const LikelihoodCurve& curve, bool with_points = false);
json to_json(const IdGrid& grid);
json to_json(const RampDiagnostics& d);
json to_json(const RamseyFit& fit);

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    bool markers = false;
};

struct SvgPlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<SvgSeries> series;
    std::string note;  // small text under the title, e.g. the config hash
};

std::string render_svg(const SvgPlot& plot);
void write_text(const std::string& path, const std::string& text);

}  // namespace ionshuttle::io
