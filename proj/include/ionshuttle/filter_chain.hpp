#pragma once

// Discrete model of the low-pass electronics between the waveform source and
// the trap electrodes:
//   sum_{n=0..na} a_n U_{i-n} = sum_{n=1..nb} b_n Ut_{i-n}
// where Ut is the source voltage and U the electrode voltage. b_0 = 0, so the
// electrode voltage lags the source by one sample.

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ionshuttle {

struct RcStage {
    double resistance = 0.0;  // ohm
    double capacitance = 0.0;  // F
    double time_constant() const noexcept { return resistance * capacitance; }
};

/// Buffered first-order stages followed by the trap electrode, which forms one more
/// pole with its own capacitance and the series resistance feeding it.
struct AnalogChain {
    std::vector<RcStage> stages;
    double trap_capacitance = 0.0;  // F
    double trap_resistance = 0.0;  // ohm

    void validate() const;
    /// Time constants of every pole, pre-stages first.
    std::vector<double> time_constants() const;
};

/// -3 dB frequency (Hz) of the continuous chain.
double analog_cutoff(const AnalogChain& chain);

/// Three equal stages plus a trap pole at twice their corner frequency, scaled so
/// the composite -3 dB point sits at `cutoff_hz`.
AnalogChain default_chain(double cutoff_hz = 63.2e3);

enum class Discretization {
    MatchedDelay,  // poles exp(-dt/tau), single delayed zero-free numerator, unity DC gain
    ZeroOrderHold,  // exact sampling of the chain driven by a held source
};

Discretization parse_discretization(const std::string& name);
std::string to_string(Discretization d);

class FilterSpec {
public:
    /// a = a_0..a_na, b = b_0..b_nb with b_0 required to be 0.
    FilterSpec(std::vector<double> a, std::vector<double> b, double dt);

    const std::vector<double>& a() const noexcept { return a_; }
    const std::vector<double>& b() const noexcept { return b_; }
    std::size_t na() const noexcept { return a_.size() - 1; }
    std::size_t nb() const noexcept { return b_.size() - 1; }
    double dt() const noexcept { return dt_; }
    double dc_gain() const;
    /// |dU_{i+1} / dUt_i| inverse: a_0 / b_1.
    double inverse_gain() const noexcept { return a_[0] / b_[1]; }

    std::complex<double> response(double frequency_hz) const;

private:
    std::vector<double> a_;
    std::vector<double> b_;
    double dt_;
};

FilterSpec discretize(const AnalogChain& chain, double dt,
                      Discretization method = Discretization::MatchedDelay);

struct BodePoint {
    double magnitude_db = 0.0;
    double phase_deg = 0.0;
};

/// Frequency response on the unit circle; the phase is continuous from DC.
BodePoint bode(const FilterSpec& spec, double frequency_hz);
/// -3 dB frequency of the discrete filter (Hz).
double cutoff_frequency(const FilterSpec& spec);

struct Interval {
    long double lo = 0.0L;
    long double hi = 0.0L;
    bool empty() const noexcept { return lo > hi; }
    long double width() const noexcept { return hi - lo; }
    bool contains(long double v) const noexcept { return v >= lo && v <= hi; }
};

/// Filter histories of one electrode, kept in extended precision because the
/// inverse recursion amplifies rounding by a_0 / b_1.
///
/// After source value Ut_{k-1} has been committed:
///   inputs  = [Ut_{k-1}, Ut_{k-2}, ..., Ut_{k-nb}]
///   outputs = [U_k, U_{k-1}, ..., U_{k-na+1}]
/// so outputs[0] is the electrode voltage currently present and inputs[0] is the
/// source value currently applied.
class FilterState {
public:
    FilterState() = default;
    FilterState(const FilterSpec& spec, std::vector<long double> inputs,
                std::vector<long double> outputs);

    static FilterState steady(const FilterSpec& spec, double value);
    static FilterState zero(const FilterSpec& spec) { return steady(spec, 0.0); }

    long double current_output() const { return outputs_.front(); }
    long double last_input() const { return inputs_.front(); }
    const std::vector<long double>& inputs() const noexcept { return inputs_; }
    const std::vector<long double>& outputs() const noexcept { return outputs_; }

    /// U_{k+1} that results from applying source value `input` now.
    long double next_output(const FilterSpec& spec, long double input) const;
    /// Source value that makes the next electrode voltage equal `target`.
    long double back_solve(const FilterSpec& spec, long double target) const;
    /// Apply `input`, shift histories, return the new electrode voltage.
    long double commit(const FilterSpec& spec, long double input);

private:
    std::vector<long double> inputs_;
    std::vector<long double> outputs_;
};

/// Electrode voltages U_0..U_{N-1} for sources Ut_0..Ut_{N-1}: U_0 is the present
/// output of `init` and U_{i+1} follows from Ut_i. `state`, when given, receives the
/// state after all N sources have been applied.
std::vector<double> apply_forward(const FilterSpec& spec, std::span<const double> source,
                                  const FilterState& init, FilterState* state = nullptr);

/// Sources Ut_0..Ut_{N-1} whose forward response is `target`. target[0] must equal
/// the present output of `init`; the final source holds target[N-1].
std::vector<double> precompensate(const FilterSpec& spec, std::span<const double> target,
                                  const FilterState& init);
/// As above, starting from steady state at target[0].
std::vector<double> precompensate(const FilterSpec& spec, std::span<const double> target);

/// Range of the next ideal (offset-free) electrode voltage reachable with a source
/// change of at most `slew` from the present source value. `source_range`, when
/// given, additionally bounds the source value. The result is shifted by -offset.
/// The interval is empty only when the source range excludes the slew band.
Interval reachable_interval(const FilterSpec& spec, const FilterState& state, double slew,
                            double offset = 0.0,
                            std::optional<Interval> source_range = std::nullopt);

}  // namespace ionshuttle
