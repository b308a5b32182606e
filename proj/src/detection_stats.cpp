#include "ionshuttle/detection_stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "ionshuttle/errors.hpp"
#include "ionshuttle/parallel.hpp"

namespace ionshuttle {

void Thresholds::validate() const {
    if (dark < 0 || bright < 0) throw std::invalid_argument("thresholds must be nonnegative");
    if (dark > bright + 1) throw std::invalid_argument("thresholds need t_d <= t_b + 1");
}

Tag classify(int count, const Thresholds& t) {
    t.validate();
    if (count < t.dark) return Tag::Dark;
    if (count > t.bright) return Tag::Bright;
    return Tag::Discard;
}

std::vector<int> PreparedStateRecord::counts(PreparedState s) const {
    std::vector<int> out;
    for (const auto& t : trials) {
        if (t.prepared == s && !t.veto) out.push_back(t.count);
    }
    return out;
}

void PreparedStateRecord::validate() const {
    for (const auto& t : trials) {
        if (t.count < 0) throw std::invalid_argument("photon counts must be nonnegative");
    }
}

Histogram make_histogram(const std::vector<int>& counts) {
    Histogram h;
    for (int c : counts) {
        if (c < 0) throw std::invalid_argument("photon counts must be nonnegative");
        if (static_cast<std::size_t>(c) >= h.size()) h.resize(static_cast<std::size_t>(c) + 1, 0);
        ++h[static_cast<std::size_t>(c)];
    }
    return h;
}

namespace {

struct TagCounts {
    std::uint64_t dark = 0;
    std::uint64_t bright = 0;
    std::uint64_t discard = 0;
    std::uint64_t total() const { return dark + bright + discard; }
};

TagCounts tag_counts(const Histogram& h, const Thresholds& t) {
    TagCounts c;
    for (std::size_t n = 0; n < h.size(); ++n) {
        switch (classify(static_cast<int>(n), t)) {
            case Tag::Dark: c.dark += h[n]; break;
            case Tag::Bright: c.bright += h[n]; break;
            case Tag::Discard: c.discard += h[n]; break;
        }
    }
    return c;
}

double ratio(std::uint64_t a, std::uint64_t b) {
    return b == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

ThresholdCandidate evaluate_thresholds(const Histogram& dark, const Histogram& bright, const Thresholds& t) {
    const TagCounts d = tag_counts(dark, t);
    const TagCounts b = tag_counts(bright, t);
    ThresholdCandidate c;
    c.thresholds = t;
    c.p_bb = ratio(b.bright, b.bright + b.dark);
    c.p_db = ratio(d.dark, d.bright + d.dark);
    c.discard_fraction = ratio(d.discard + b.discard, d.total() + b.total());
    return c;
}

DetectionCalibration calibrate_thresholds(const PreparedStateRecord& record, const ThresholdObjective& objective) {
    record.validate();
    const auto dark_counts = record.counts(PreparedState::Dark);
    const auto bright_counts = record.counts(PreparedState::Bright);
    if (dark_counts.empty() || bright_counts.empty()) {
        throw InsufficientDataError("calibration needs trials for both prepared states");
    }
    const Histogram dark = make_histogram(dark_counts);
    const Histogram bright = make_histogram(bright_counts);
    const int top = static_cast<int>(std::max(dark.size(), bright.size()));

    std::vector<ThresholdCandidate> all;
    std::optional<ThresholdCandidate> best;
    for (int td = 0; td <= top + 1; ++td) {
        for (int tb = std::max(td - 1, 0); tb <= top; ++tb) {
            const ThresholdCandidate c = evaluate_thresholds(dark, bright, {td, tb});
            if (std::isnan(c.p_bb) || std::isnan(c.p_db)) continue;
            all.push_back(c);
            const bool ok = c.p_bb >= objective.min_p_bb && c.p_db >= objective.min_p_db &&
                            (1.0 - c.p_bb) + (1.0 - c.p_db) <= objective.max_total_error;
            if (ok && (!best || c.discard_fraction < best->discard_fraction)) best = c;
        }
    }
    if (!best) {
        std::vector<ThresholdCandidate> frontier;
        for (const auto& c : all) {
            const bool dominated = std::any_of(all.begin(), all.end(), [&](const ThresholdCandidate& o) {
                const bool geq = o.p_bb >= c.p_bb && o.p_db >= c.p_db && o.discard_fraction <= c.discard_fraction;
                const bool gt = o.p_bb > c.p_bb || o.p_db > c.p_db || o.discard_fraction < c.discard_fraction;
                return geq && gt;
            });
            if (!dominated) frontier.push_back(c);
        }
        std::ostringstream os;
        os << "no threshold pair meets the objective (" << frontier.size() << " Pareto-optimal pairs)";
        throw ThresholdObjectiveError(os.str(), std::move(frontier));
    }
    DetectionCalibration cal;
    cal.dark_hist = dark;
    cal.bright_hist = bright;
    cal.thresholds = best->thresholds;
    cal.p_bb = best->p_bb;
    cal.p_db = best->p_db;
    cal.discard_fraction = best->discard_fraction;
    return cal;
}

double Density::mode() const {
    if (value.empty()) throw std::logic_error("empty density");
    return x[static_cast<std::size_t>(std::max_element(value.begin(), value.end()) - value.begin())];
}

double Density::integral() const {
    double acc = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (value[i] + value[i - 1]) * (x[i] - x[i - 1]);
    return acc;
}

Density posterior_density(std::int64_t bright, std::int64_t trials, double p_bb, double p_db, std::size_t points) {
    if (trials < 0 || bright < 0 || bright > trials) throw std::invalid_argument("need 0 <= b <= N");
    if (points < 3) throw std::invalid_argument("posterior grid needs at least 3 points");
    if (!(p_bb >= 0.0 && p_bb <= 1.0 && p_db >= 0.0 && p_db <= 1.0)) {
        throw std::invalid_argument("identification probabilities must lie in [0, 1]");
    }
    Density d;
    d.x.resize(points);
    std::vector<double> logl(points);
    const double b = static_cast<double>(bright);
    const double nb = static_cast<double>(trials - bright);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points; ++i) {
        d.x[i] = static_cast<double>(i) / static_cast<double>(points - 1);
        const double q = tagged_bright_probability(d.x[i], p_bb, p_db);
        double l = 0.0;
        if (b > 0) l += q > 0.0 ? b * std::log(q) : -std::numeric_limits<double>::infinity();
        if (nb > 0) l += q < 1.0 ? nb * std::log1p(-q) : -std::numeric_limits<double>::infinity();
        logl[i] = l;
        peak = std::max(peak, l);
    }
    if (!std::isfinite(peak)) throw DegenerateLikelihoodError("posterior vanishes on the whole grid");
    d.value.resize(points);
    for (std::size_t i = 0; i < points; ++i) d.value[i] = std::exp(logl[i] - peak);
    const double norm = d.integral();
    for (double& v : d.value) v /= norm;
    return d;
}

double IdGrid::total_weight() const {
    double s = 0.0;
    for (const auto& c : cells) s += c.weight;
    return s;
}

namespace {

struct MarginalBin {
    double mean = 0.0;
    double weight = 0.0;
};

std::vector<MarginalBin> equal_count_bins(const std::vector<double>& values, std::size_t bins) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return values[a] < values[b] || (values[a] == values[b] && a < b);
    });
    std::vector<MarginalBin> out;
    for (std::size_t k = 0; k < bins; ++k) {
        const std::size_t lo = k * n / bins;
        const std::size_t hi = (k + 1) * n / bins;
        if (hi <= lo) continue;
        double sum = 0.0;
        for (std::size_t r = lo; r < hi; ++r) sum += values[order[r]];
        const MarginalBin bin{sum / static_cast<double>(hi - lo), static_cast<double>(hi - lo) / static_cast<double>(n)};
        if (!out.empty() && out.back().mean == bin.mean) {
            out.back().weight += bin.weight;
        } else {
            out.push_back(bin);
        }
    }
    return out;
}

struct TagFractions {
    std::uint64_t n = 0;
    double wanted = 0.0;  // fraction tagged as the prepared state
    double discard = 0.0;
};

TagFractions fractions(const std::vector<int>& counts, const Thresholds& t, Tag wanted) {
    TagFractions f;
    f.n = counts.size();
    std::uint64_t w = 0, d = 0;
    for (int c : counts) {
        const Tag tag = classify(c, t);
        if (tag == wanted) ++w;
        if (tag == Tag::Discard) ++d;
    }
    f.wanted = static_cast<double>(w) / static_cast<double>(f.n);
    f.discard = static_cast<double>(d) / static_cast<double>(f.n);
    return f;
}

// Tag composition of one resample drawn with replacement: (wanted, other,
// discard) counts are multinomial with the empirical fractions.
double resample_probability(const TagFractions& f, std::mt19937_64& rng, std::size_t& redrawn) {
    for (;;) {
        std::binomial_distribution<std::uint64_t> wanted(f.n, f.wanted);
        const std::uint64_t w = wanted(rng);
        const double rest = 1.0 - f.wanted;
        const double p_discard = rest > 0.0 ? std::min(1.0, f.discard / rest) : 0.0;
        std::binomial_distribution<std::uint64_t> discard(f.n - w, p_discard);
        const std::uint64_t d = discard(rng);
        const std::uint64_t kept = f.n - d;
        if (kept > 0) return static_cast<double>(w) / static_cast<double>(kept);
        ++redrawn;
    }
}

}  // namespace

IdGrid bootstrap_id_grid(const PreparedStateRecord& record, const Thresholds& thresholds, std::size_t resamples,
                         std::uint64_t seed, std::size_t bins, int jobs) {
    if (resamples < 100) throw std::invalid_argument("bootstrap needs at least 100 resamples");
    if (bins == 0) throw std::invalid_argument("bootstrap needs at least one bin");
    thresholds.validate();
    const auto dark_counts = record.counts(PreparedState::Dark);
    const auto bright_counts = record.counts(PreparedState::Bright);
    if (dark_counts.empty() || bright_counts.empty()) {
        throw InsufficientDataError("bootstrap needs trials for both prepared states");
    }
    const TagFractions fb = fractions(bright_counts, thresholds, Tag::Bright);
    const TagFractions fd = fractions(dark_counts, thresholds, Tag::Dark);
    if (fb.discard >= 1.0 || fd.discard >= 1.0) {
        throw InsufficientDataError("every calibration trial of one state is discarded");
    }

    IdGrid grid;
    grid.resamples = resamples;
    grid.samples_bb.resize(resamples);
    grid.samples_db.resize(resamples);
    std::vector<std::size_t> redrawn(resamples, 0);
    parallel_for(resamples, jobs, [&](std::size_t r) {
        std::mt19937_64 rng(derive_seed(seed, r));
        grid.samples_bb[r] = resample_probability(fb, rng, redrawn[r]);
        grid.samples_db[r] = resample_probability(fd, rng, redrawn[r]);
    });
    grid.redrawn = std::accumulate(redrawn.begin(), redrawn.end(), std::size_t{0});

    const auto mb = equal_count_bins(grid.samples_bb, bins);
    const auto md = equal_count_bins(grid.samples_db, bins);
    grid.bins_bb = mb.size();
    grid.bins_db = md.size();
    for (const auto& b : mb) {
        for (const auto& d : md) grid.cells.push_back({b.mean, d.mean, b.weight * d.weight});
    }
    return grid;
}

BiasCorrected bias_correct(double p_bb, double p_db, double fp, double fpi) {
    if (!(fpi > 0.0)) throw std::invalid_argument("pi-pulse fidelity must be positive");
    if (fp == 0.5) throw SingularInputError("preparation fidelity 0.5 makes the bias correction singular");
    if (!(fp > 0.5)) throw std::invalid_argument("preparation fidelity must exceed 0.5");
    const double den = (1.0 - 2.0 * fp) * fpi;
    BiasCorrected out;
    out.p_bb = (p_db * (2.0 * fp * fpi - fp - fpi) + fp * (1.0 - 2.0 * fpi - p_bb) + fpi) / den;
    out.p_db = (p_db * (-2.0 * fp * fpi + fp + fpi - 1.0) + (fp - 1.0) * (p_bb - 1.0)) / den;
    return out;
}

BiasCorrected bias_forward(double pbar_bb, double pbar_db, double fp, double fpi) {
    const double fb = fp * fpi + (1.0 - fp) * (1.0 - fpi);
    BiasCorrected out;
    out.p_db = fp * pbar_db + (1.0 - fp) * (1.0 - pbar_bb);
    out.p_bb = fb * pbar_bb + (1.0 - fb) * (1.0 - pbar_db);
    return out;
}

Unfolded unfold_counts(double bt, double dt, double p_bb, double p_db) {
    const double det = p_bb + p_db - 1.0;
    if (det == 0.0) throw SingularInputError("p_bb + p_db = 1 makes the tag matrix singular");
    Unfolded u;
    u.bright = (p_db * bt - (1.0 - p_db) * dt) / det;
    u.dark = (p_bb * dt - (1.0 - p_bb) * bt) / det;
    return u;
}

}  // namespace ionshuttle
