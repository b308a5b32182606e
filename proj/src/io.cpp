#include "ionshuttle/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ionshuttle/errors.hpp"

namespace ionshuttle::io {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const json& config) { return fnv1a_hex(config.dump()); }

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("CSV column '" + name + "' absent");
    return static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

void write_hash(std::ostream& out, const std::string& hash) {
    if (!hash.empty()) out << "# config_hash=" << hash << '\n';
}

}  // namespace

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos) {
                auto key = line.substr(1, eq - 1);
                key.erase(0, key.find_first_not_of(' '));
                t.meta[key] = line.substr(eq + 1);
            }
            continue;
        }
        auto fields = split(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    if (t.header.empty()) throw ParseError(path + ": missing header");
    return t;
}

double parse_double(const std::string& field, const std::string& where) {
    if (field == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (field == "inf") return std::numeric_limits<double>::infinity();
    if (field == "-inf") return -std::numeric_limits<double>::infinity();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(field.c_str(), &end);
    if (field.empty() || end != field.c_str() + field.size() || errno == ERANGE) {
        throw ParseError(where + ": not a number: '" + field + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& field, const std::string& where) {
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(field.c_str(), &end, 10);
    if (field.empty() || end != field.c_str() + field.size() || errno == ERANGE) {
        throw ParseError(where + ": not an integer: '" + field + "'");
    }
    return v;
}

void write_ramp_csv(const VoltageRamp& ramp, const std::string& path, const std::string& hash) {
    auto out = open_out(path);
    write_hash(out, hash);
    const std::size_t n = ramp.forward.electrodes();
    out << "direction,step,time";
    for (std::size_t j = 0; j < n; ++j) out << ",ut_" << j;
    for (std::size_t j = 0; j < n; ++j) out << ",u_" << j;
    out << '\n';
    auto dump = [&](const RampSeries& s, const char* dir) {
        for (Eigen::Index i = 0; i < s.source.rows(); ++i) {
            out << dir << ',' << i << ',' << format_number(static_cast<double>(i) * ramp.dt);
            for (Eigen::Index j = 0; j < s.source.cols(); ++j) out << ',' << format_number(s.source(i, j));
            for (Eigen::Index j = 0; j < s.electrode.cols(); ++j) out << ',' << format_number(s.electrode(i, j));
            out << '\n';
        }
    };
    dump(ramp.forward, "forward");
    dump(ramp.backward, "backward");
}

json ramp_manifest(const VoltageRamp& ramp, const std::string& csv_name, const std::string& hash) {
    return json{{"csv", csv_name},
                {"dt", ramp.dt},
                {"transport_steps", ramp.transport_steps},
                {"electrodes", ramp.forward.electrodes()},
                {"forward_samples", ramp.forward.samples()},
                {"backward_samples", ramp.backward.samples()},
                {"trajectory", ramp.trajectory},
                {"filter", ramp.filter_id},
                {"config_hash", hash}};
}

VoltageRamp read_ramp(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ParseError("cannot open " + manifest_path);
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }
    VoltageRamp ramp;
    std::string csv;
    std::size_t n = 0, nf = 0, nb = 0;
    try {
        ramp.dt = m.at("dt").get<double>();
        ramp.transport_steps = m.at("transport_steps").get<std::size_t>();
        ramp.trajectory = m.value("trajectory", "");
        ramp.filter_id = m.value("filter", "");
        csv = m.at("csv").get<std::string>();
        n = m.at("electrodes").get<std::size_t>();
        nf = m.at("forward_samples").get<std::size_t>();
        nb = m.at("backward_samples").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ParseError(manifest_path + ": " + e.what());
    }
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    const CsvTable t = read_csv((dir / csv).string());
    const std::size_t c_dir = t.column("direction");
    std::vector<std::size_t> c_src(n), c_el(n);
    for (std::size_t j = 0; j < n; ++j) {
        c_src[j] = t.column("ut_" + std::to_string(j));
        c_el[j] = t.column("u_" + std::to_string(j));
    }
    ramp.forward.source.resize(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(n));
    ramp.forward.electrode.resize(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(n));
    ramp.backward.source.resize(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(n));
    ramp.backward.electrode.resize(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(n));
    std::size_t fi = 0, bi = 0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        RampSeries* s = nullptr;
        std::size_t* idx = nullptr;
        if (row[c_dir] == "forward") {
            s = &ramp.forward;
            idx = &fi;
        } else if (row[c_dir] == "backward") {
            s = &ramp.backward;
            idx = &bi;
        } else {
            throw ParseError(csv + ": row " + std::to_string(r + 1) + ": unknown direction '" + row[c_dir] + "'");
        }
        if (*idx >= static_cast<std::size_t>(s->source.rows())) throw ParseError(csv + ": more rows than the manifest declares");
        const std::string where = csv + ": row " + std::to_string(r + 1);
        for (std::size_t j = 0; j < n; ++j) {
            s->source(static_cast<Eigen::Index>(*idx), static_cast<Eigen::Index>(j)) = parse_double(row[c_src[j]], where);
            s->electrode(static_cast<Eigen::Index>(*idx), static_cast<Eigen::Index>(j)) = parse_double(row[c_el[j]], where);
        }
        ++*idx;
    }
    if (fi != nf || bi != nb) throw ParseError(csv + ": row count does not match the manifest");
    return ramp;
}

void write_calibration_csv(const PreparedStateRecord& record, const std::string& path, const std::string& hash) {
    auto out = open_out(path);
    write_hash(out, hash);
    out << "trial_id,prepared,transports,count,veto\n";
    for (const auto& t : record.trials) {
        out << t.id << ',' << (t.prepared == PreparedState::Bright ? "bright" : "dark") << ',' << t.transports << ','
            << t.count << ',' << (t.veto ? 1 : 0) << '\n';
    }
}

PreparedStateRecord read_calibration_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    const std::size_t c_id = t.column("trial_id"), c_prep = t.column("prepared"), c_m = t.column("transports"),
                      c_n = t.column("count");
    const auto veto_it = std::find(t.header.begin(), t.header.end(), "veto");
    PreparedStateRecord rec;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = path + ": row " + std::to_string(r + 1);
        CalibrationTrial trial;
        trial.id = parse_int(row[c_id], where);
        if (row[c_prep] == "bright" || row[c_prep] == "1") {
            trial.prepared = PreparedState::Bright;
        } else if (row[c_prep] == "dark" || row[c_prep] == "0") {
            trial.prepared = PreparedState::Dark;
        } else {
            throw ParseError(where + ": prepared state must be dark or bright");
        }
        trial.transports = parse_int(row[c_m], where);
        const auto count = parse_int(row[c_n], where);
        if (count < 0 || count > std::numeric_limits<int>::max()) throw ParseError(where + ": photon count out of range");
        trial.count = static_cast<int>(count);
        if (veto_it != t.header.end()) trial.veto = parse_int(row[static_cast<std::size_t>(veto_it - t.header.begin())], where) != 0;
        rec.trials.push_back(trial);
    }
    return rec;
}

void write_ramsey_csv(const std::vector<RamseyDataset>& sets, const std::string& path, const std::string& hash) {
    auto out = open_out(path);
    write_hash(out, hash);
    out << "transports,precession_time,phase,bright,trials\n";
    for (const auto& d : sets) {
        for (const auto& p : d.points) {
            out << d.transports << ',' << format_number(d.precession_time) << ',' << format_number(p.phase) << ','
                << p.bright << ',' << p.trials << '\n';
        }
    }
}

std::vector<RamseyDataset> read_ramsey_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    const std::size_t c_m = t.column("transports"), c_t = t.column("precession_time"), c_phi = t.column("phase"),
                      c_b = t.column("bright"), c_n = t.column("trials");
    std::vector<RamseyDataset> sets;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = path + ": row " + std::to_string(r + 1);
        const auto m = parse_int(row[c_m], where);
        const double tp = parse_double(row[c_t], where);
        auto it = std::find_if(sets.begin(), sets.end(), [&](const RamseyDataset& d) { return d.transports == m; });
        if (it == sets.end()) {
            sets.push_back(RamseyDataset{{}, m, tp});
            it = sets.end() - 1;
        } else if (it->precession_time != tp) {
            throw ParseError(where + ": precession time differs within M = " + std::to_string(m));
        }
        it->points.push_back({parse_double(row[c_phi], where), parse_int(row[c_b], where), parse_int(row[c_n], where)});
    }
    return sets;
}

void write_tracking_csv(const TrackingDataset& data, const std::string& path, const std::string& hash) {
    auto out = open_out(path);
    write_hash(out, hash);
    out << "# dark_total_mean=" << format_number(data.dark_total.mean) << '\n';
    out << "# dark_total_sigma=" << format_number(data.dark_total.sigma) << '\n';
    out << "transports,skipped,photons\n";
    for (const auto& r : data.runs) out << data.transports << ',' << r.skipped << ',' << format_number(r.photons) << '\n';
}

TrackingDataset read_tracking_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    TrackingDataset d;
    const auto mean = t.meta.find("dark_total_mean");
    const auto sigma = t.meta.find("dark_total_sigma");
    if (mean == t.meta.end() || sigma == t.meta.end()) {
        throw ParseError(path + ": absent-ion prior (dark_total_mean, dark_total_sigma) missing");
    }
    d.dark_total = {parse_double(mean->second, path), parse_double(sigma->second, path)};
    const std::size_t c_m = t.column("transports"), c_s = t.column("skipped"), c_p = t.column("photons");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = path + ": row " + std::to_string(r + 1);
        const auto m = parse_int(row[c_m], where);
        if (r == 0) d.transports = m;
        if (m != d.transports) throw ParseError(where + ": all runs must share one M");
        d.runs.push_back({parse_int(row[c_s], where), parse_double(row[c_p], where)});
    }
    return d;
}

void write_curve_csv(const LikelihoodCurve& curve, const std::string& path, const std::string& hash) {
    auto out = open_out(path);
    write_hash(out, hash);
    out << "x,log_likelihood,density\n";
    for (std::size_t i = 0; i < curve.grid.size(); ++i) {
        out << format_number(curve.grid[i]) << ',' << format_number(curve.log_likelihood[i]) << ','
            << format_number(std::exp(curve.log_likelihood[i])) << '\n';
    }
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const LikelihoodCurve& curve, bool with_points) {
    json j{{"mode", curve.mode},
           {"interval", {curve.interval.lo, curve.interval.hi}},
           {"log_normalization", curve.log_normalization},
           {"grid", {{"lo", curve.grid.front()}, {"hi", curve.grid.back()}, {"points", curve.grid.size()}}}};
    if (with_points) {
        json xs = json::array(), ys = json::array();
        for (std::size_t i = 0; i < curve.grid.size(); ++i) {
            xs.push_back(curve.grid[i]);
            ys.push_back(finite_or_null(curve.log_likelihood[i]));
        }
        j["x"] = xs;
        j["log_likelihood"] = ys;
    }
    return j;
}

json to_json(const IdGrid& grid) {
    json cells = json::array();
    for (const auto& c : grid.cells) cells.push_back({{"p_bb", c.p_bb}, {"p_db", c.p_db}, {"w", c.weight}});
    return json{{"cells", cells},
                {"bins_bb", grid.bins_bb},
                {"bins_db", grid.bins_db},
                {"resamples", grid.resamples},
                {"redrawn", grid.redrawn},
                {"total_weight", grid.total_weight()}};
}

json to_json(const RampDiagnostics& d) {
    return json{{"max_position_error_m", d.max_position_error},
                {"max_frequency_error_rel", d.max_frequency_error},
                {"max_xz_V_per_m2", d.max_xz},
                {"slew_violations", d.slew_violations},
                {"loop_closure_error_V", d.loop_closure_error},
                {"mean_position_asymmetry_m", d.mean_position_asymmetry},
                {"unconverged_steps", d.unconverged_steps}};
}

json to_json(const RamseyFit& fit) {
    return json{{"A", fit.amplitude}, {"B", fit.offset}, {"Phi", fit.phase}, {"log_likelihood", fit.log_likelihood}};
}

std::string render_svg(const SvgPlot& plot) {
    const double w = 640, h = 420, ml = 80, mr = 20, mt = 50, mb = 60;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : plot.series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x1 > x0)) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (!(y1 > y0)) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream o;
    o.precision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << plot.title << "</text>\n";
    if (!plot.note.empty()) {
        o << "<text x=\"" << w / 2 << "\" y=\"38\" text-anchor=\"middle\" font-size=\"10\" fill=\"#666\">" << plot.note << "</text>\n";
    }
    o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << w - ml - mr << "\" height=\"" << h - mt - mb
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        o << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << xv << "</text>\n";
        o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << yv << "</text>\n";
    }
    o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 18 << "\" text-anchor=\"middle\" font-size=\"12\">" << plot.x_label << "</text>\n";
    o << "<text x=\"16\" y=\"" << (mt + h - mb) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << (mt + h - mb) / 2 << ")\">" << plot.y_label << "</text>\n";
    for (std::size_t k = 0; k < plot.series.size(); ++k) {
        const auto& s = plot.series[k];
        const char* c = colors[k % 5];
        if (s.markers) {
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (!std::isfinite(s.y[i])) continue;
                o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
            }
        } else {
            o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (!std::isfinite(s.y[i])) continue;
                o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
            }
            o << "\"/>\n";
        }
        o << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 + 14 * static_cast<double>(k) << "\" font-size=\"11\" fill=\"" << c
          << "\">" << s.label << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void write_text(const std::string& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
}

}  // namespace ionshuttle::io
