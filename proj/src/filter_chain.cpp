#include "ionshuttle/filter_chain.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ionshuttle/constants.hpp"

namespace ionshuttle {

void AnalogChain::validate() const {
    if (stages.empty()) throw std::invalid_argument("filter chain needs at least one stage");
    for (const auto& s : stages) {
        if (!(s.resistance > 0.0) || !(s.capacitance > 0.0)) {
            throw std::invalid_argument("filter stage R and C must be positive");
        }
    }
    if (trap_capacitance < 0.0 || trap_resistance < 0.0) {
        throw std::invalid_argument("trap capacitance and resistance must be nonnegative");
    }
}

std::vector<double> AnalogChain::time_constants() const {
    std::vector<double> taus;
    for (const auto& s : stages) taus.push_back(s.time_constant());
    const double trap_tau = trap_capacitance * trap_resistance;
    if (trap_tau > 0.0) taus.push_back(trap_tau);
    return taus;
}

namespace {

// prod (1 + (w tau)^2) - 2, monotone in w
double excess_attenuation(const std::vector<double>& taus, double w) {
    double p = 1.0;
    for (double t : taus) p *= 1.0 + (w * t) * (w * t);
    return p - 2.0;
}

template <typename F>
double bisect(F&& f, double lo, double hi, int iterations = 200) {
    double flo = f(lo);
    for (int i = 0; i < iterations; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-15 * hi) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

double analog_cutoff(const AnalogChain& chain) {
    chain.validate();
    const auto taus = chain.time_constants();
    const double tau_max = *std::max_element(taus.begin(), taus.end());
    const double w = bisect([&](double w) { return excess_attenuation(taus, w); }, 0.0, 1.0 / tau_max);
    return w / constants::two_pi;
}

AnalogChain default_chain(double cutoff_hz) {
    if (!(cutoff_hz > 0.0)) throw std::invalid_argument("cutoff frequency must be positive");
    const double w = constants::two_pi * cutoff_hz;
    auto excess = [&](double tau) { return excess_attenuation({tau, tau, tau, 0.5 * tau}, w); };
    const double tau = bisect(excess, 0.0, 1.0 / w);

    constexpr double stage_r = 1.0e3;
    constexpr double trap_c = 1.0e-9;
    AnalogChain chain;
    chain.stages.assign(3, RcStage{stage_r, tau / stage_r});
    chain.trap_capacitance = trap_c;
    chain.trap_resistance = 0.5 * tau / trap_c;
    return chain;
}

Discretization parse_discretization(const std::string& name) {
    if (name == "matched" || name == "matched_delay") return Discretization::MatchedDelay;
    if (name == "zoh") return Discretization::ZeroOrderHold;
    throw std::invalid_argument("unknown discretization '" + name + "' (matched|zoh)");
}

std::string to_string(Discretization d) {
    return d == Discretization::MatchedDelay ? "matched" : "zoh";
}

FilterSpec::FilterSpec(std::vector<double> a, std::vector<double> b, double dt)
    : a_(std::move(a)), b_(std::move(b)), dt_(dt) {
    if (!(dt_ > 0.0)) throw std::invalid_argument("filter sample period must be positive");
    if (a_.empty() || a_[0] == 0.0) throw std::invalid_argument("filter a_0 must be nonzero");
    if (b_.size() < 2) throw std::invalid_argument("filter needs b_1");
    if (b_[0] != 0.0) throw std::invalid_argument("filter b_0 must be zero (one-step delay)");
    if (b_[1] == 0.0) throw std::invalid_argument("filter b_1 must be nonzero");
    for (double v : a_) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite filter coefficient");
    }
    for (double v : b_) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite filter coefficient");
    }
}

double FilterSpec::dc_gain() const {
    return std::accumulate(b_.begin(), b_.end(), 0.0) / std::accumulate(a_.begin(), a_.end(), 0.0);
}

std::complex<double> FilterSpec::response(double frequency_hz) const {
    const std::complex<double> zinv = std::polar(1.0, -constants::two_pi * frequency_hz * dt_);
    std::complex<double> num = 0.0;
    std::complex<double> den = 0.0;
    std::complex<double> zk = 1.0;
    for (std::size_t n = 0; n < std::max(a_.size(), b_.size()); ++n) {
        if (n < b_.size()) num += b_[n] * zk;
        if (n < a_.size()) den += a_[n] * zk;
        zk *= zinv;
    }
    return num / den;
}

FilterSpec discretize(const AnalogChain& chain, double dt, Discretization method) {
    if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
    chain.validate();
    const auto taus = chain.time_constants();
    const std::size_t n = taus.size();

    std::vector<double> a(n + 1, 0.0);
    std::vector<double> b(n + 1, 0.0);

    if (method == Discretization::MatchedDelay) {
        // a(z^-1) = prod (1 - p_k z^-1)
        std::vector<long double> poly{1.0L};
        for (double tau : taus) {
            const long double p = std::exp(-static_cast<long double>(dt) / tau);
            std::vector<long double> next(poly.size() + 1, 0.0L);
            for (std::size_t i = 0; i < poly.size(); ++i) {
                next[i] += poly[i];
                next[i + 1] -= p * poly[i];
            }
            poly = std::move(next);
        }
        for (std::size_t i = 0; i <= n; ++i) a[i] = static_cast<double>(poly[i]);
        // Match the DC gain to the rounded a so sum(b)/sum(a) is 1 in double.
        long double sum_a = 0.0L;
        for (double v : a) sum_a += v;
        b[1] = static_cast<double>(sum_a);
    } else {
        // Cascade of lags: dx_0 = (u - x_0)/tau_0, dx_k = (x_{k-1} - x_k)/tau_k, y = x_{n-1}.
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd B = Eigen::VectorXd::Zero(n);
        for (std::size_t k = 0; k < n; ++k) {
            A(k, k) = -1.0 / taus[k];
            if (k > 0) A(k, k - 1) = 1.0 / taus[k];
        }
        B(0) = 1.0 / taus[0];
        const Eigen::MatrixXd Ad = (A * dt).exp();
        const Eigen::VectorXd Bd = A.partialPivLu().solve((Ad - Eigen::MatrixXd::Identity(n, n)) * B);
        Eigen::RowVectorXd C = Eigen::RowVectorXd::Zero(n);
        C(n - 1) = 1.0;

        // Faddeev-LeVerrier: det(zI - Ad) = sum c_k z^{n-k},
        // adj(zI - Ad) = sum_{k=1..n} M_k z^{n-k}.
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
        a[0] = 1.0;
        for (std::size_t k = 1; k <= n; ++k) {
            b[k] = (C * M * Bd)(0);
            const Eigen::MatrixXd AM = Ad * M;
            a[k] = -AM.trace() / static_cast<double>(k);
            M = AM + a[k] * Eigen::MatrixXd::Identity(n, n);
        }
        if (b[1] == 0.0) {
            throw std::invalid_argument("zero-order-hold discretization has b_1 = 0");
        }
    }
    FilterSpec spec(std::move(a), std::move(b), dt);
    if (std::abs(spec.dc_gain() - 1.0) > 1e-9) {
        throw std::runtime_error("discretized filter does not have unity DC gain");
    }
    return spec;
}

BodePoint bode(const FilterSpec& spec, double f) {
    const double nyquist = 0.5 / spec.dt();
    if (!(f > 0.0) || f >= nyquist) {
        throw std::invalid_argument("bode frequency must lie in (0, Nyquist)");
    }
    const auto h = spec.response(f);
    // Track the phase continuously from DC on a grid fine enough that no
    // increment exceeds pi.
    const std::size_t steps = std::max<std::size_t>(16, static_cast<std::size_t>(std::ceil(8192.0 * f / nyquist)));
    double phase = std::arg(spec.response(0.0));
    auto prev = spec.response(0.0);
    for (std::size_t i = 1; i <= steps; ++i) {
        const auto cur = spec.response(f * static_cast<double>(i) / static_cast<double>(steps));
        phase += std::arg(cur / prev);
        prev = cur;
    }
    return {20.0 * std::log10(std::abs(h)), phase * 180.0 / constants::pi};
}

double cutoff_frequency(const FilterSpec& spec) {
    const double nyquist = 0.5 / spec.dt();
    const double target = 1.0 / std::sqrt(2.0);
    auto f = [&](double freq) { return std::abs(spec.response(freq)) - target; };
    if (f(nyquist * (1.0 - 1e-12)) > 0.0) {
        throw std::runtime_error("filter does not fall below -3 dB before Nyquist");
    }
    // First crossing: step up from DC on a coarse grid, then bisect.
    const int coarse = 4096;
    double lo = 0.0;
    for (int i = 1; i <= coarse; ++i) {
        const double hi = nyquist * i / coarse * (i == coarse ? 1.0 - 1e-12 : 1.0);
        if (f(hi) <= 0.0) return bisect(f, lo, hi);
        lo = hi;
    }
    return nyquist;
}

// ---------------------------------------------------------------------------
// FilterState

FilterState::FilterState(const FilterSpec& spec, std::vector<long double> inputs,
                         std::vector<long double> outputs)
    : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
    if (inputs_.size() != spec.nb() || outputs_.size() != spec.na()) {
        throw std::invalid_argument("filter state history lengths must equal the filter orders");
    }
}

FilterState FilterState::steady(const FilterSpec& spec, double value) {
    return FilterState(spec, std::vector<long double>(spec.nb(), value),
                       std::vector<long double>(spec.na(), value));
}

long double FilterState::next_output(const FilterSpec& spec, long double input) const {
    const auto& a = spec.a();
    const auto& b = spec.b();
    long double acc = static_cast<long double>(b[1]) * input;
    for (std::size_t n = 2; n < b.size(); ++n) acc += static_cast<long double>(b[n]) * inputs_[n - 2];
    for (std::size_t n = 1; n < a.size(); ++n) acc -= static_cast<long double>(a[n]) * outputs_[n - 1];
    return acc / static_cast<long double>(a[0]);
}

long double FilterState::back_solve(const FilterSpec& spec, long double target) const {
    const auto& a = spec.a();
    const auto& b = spec.b();
    long double acc = static_cast<long double>(a[0]) * target;
    for (std::size_t n = 1; n < a.size(); ++n) acc += static_cast<long double>(a[n]) * outputs_[n - 1];
    for (std::size_t n = 2; n < b.size(); ++n) acc -= static_cast<long double>(b[n]) * inputs_[n - 2];
    return acc / static_cast<long double>(b[1]);
}

long double FilterState::commit(const FilterSpec& spec, long double input) {
    const long double out = next_output(spec, input);
    if (!inputs_.empty()) {
        std::rotate(inputs_.rbegin(), inputs_.rbegin() + 1, inputs_.rend());
        inputs_.front() = input;
    }
    if (!outputs_.empty()) {
        std::rotate(outputs_.rbegin(), outputs_.rbegin() + 1, outputs_.rend());
        outputs_.front() = out;
    }
    return out;
}

std::vector<double> apply_forward(const FilterSpec& spec, std::span<const double> source,
                                  const FilterState& init, FilterState* state) {
    if (source.empty()) throw std::invalid_argument("source sequence is empty");
    FilterState s = init;
    std::vector<double> out(source.size());
    out[0] = static_cast<double>(s.current_output());
    for (std::size_t i = 0; i < source.size(); ++i) {
        const long double u = s.commit(spec, source[i]);
        if (i + 1 < source.size()) out[i + 1] = static_cast<double>(u);
    }
    if (state) *state = std::move(s);
    return out;
}

std::vector<double> precompensate(const FilterSpec& spec, std::span<const double> target,
                                  const FilterState& init) {
    if (target.empty()) throw std::invalid_argument("target sequence is empty");
    const long double present = init.current_output();
    if (std::abs(static_cast<long double>(target[0]) - present) >
        1e-9L * std::max<long double>(1.0L, std::abs(present))) {
        throw std::invalid_argument("target[0] does not match the present filter output");
    }
    FilterState s = init;
    std::vector<double> source(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double next = i + 1 < target.size() ? target[i + 1] : target.back();
        const long double ut = s.back_solve(spec, next);
        source[i] = static_cast<double>(ut);
        s.commit(spec, source[i]);
    }
    return source;
}

std::vector<double> precompensate(const FilterSpec& spec, std::span<const double> target) {
    if (target.empty()) throw std::invalid_argument("target sequence is empty");
    return precompensate(spec, target, FilterState::steady(spec, target[0]));
}

Interval reachable_interval(const FilterSpec& spec, const FilterState& state, double slew,
                            double offset, std::optional<Interval> source_range) {
    if (!(slew >= 0.0)) throw std::invalid_argument("slew limit must be nonnegative");
    long double lo = state.last_input() - slew;
    long double hi = state.last_input() + slew;
    if (source_range) {
        lo = std::max(lo, source_range->lo);
        hi = std::min(hi, source_range->hi);
        if (lo > hi) return Interval{1.0L, 0.0L};
    }
    long double u_lo = state.next_output(spec, lo);
    long double u_hi = state.next_output(spec, hi);
    if (u_lo > u_hi) std::swap(u_lo, u_hi);
    return Interval{u_lo - offset, u_hi - offset};
}

}  // namespace ionshuttle
