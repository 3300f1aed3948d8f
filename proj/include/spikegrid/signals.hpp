#ifndef SPIKEGRID_SIGNALS_HPP
#define SPIKEGRID_SIGNALS_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

namespace spikegrid {

// One instantaneous three-phase frame, per-unit.
struct AbcFrame {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double t = 0.0;  // seconds
};

// One synchronous dq measurement frame, per-unit.
struct DqSample {
    double v_d = 0.0;
    double v_q = 0.0;
    double i_d = 0.0;
    double i_q = 0.0;
    double t = 0.0;  // seconds

    bool finite() const;
};

struct DqPair {
    double d = 0.0;
    double q = 0.0;
};

// Per-unit bases. Voltage base is phase RMS; with the amplitude-invariant
// transform below, 1.0 pu on the d axis corresponds to sqrt(2)*v_base_v peak.
struct PuBase {
    double s_base_va = 7500.0;   // three-phase apparent power
    double v_base_v = 110.0;     // phase voltage, RMS
    double f_base_hz = 50.0;

    double z_base_ohm() const { return 3.0 * v_base_v * v_base_v / s_base_va; }
    double i_base_a() const { return v_base_v / z_base_ohm(); }  // phase RMS
    double omega0() const;                                       // rad/s
};

// Park transform, amplitude-invariant, q axis lagging d by 90 degrees:
//   d = 2/3 [ a cos(th) + b cos(th - 2pi/3) + c cos(th + 2pi/3) ]
//   q = 2/3 [-a sin(th) - b sin(th - 2pi/3) - c sin(th + 2pi/3) ]
// A balanced cosine set aligned with theta maps to (1, 0); the same set
// lagging by 90 degrees maps to (0, -1).
// Throws std::invalid_argument on non-finite input.
DqPair abc_to_dq(const AbcFrame& frame, double theta);

// Inverse of abc_to_dq for zero-sequence-free signals.
AbcFrame dq_to_abc(double d, double q, double theta, double t = 0.0);

enum class CarrierShape : std::uint8_t { RisingSawtooth, Triangular };

// Carrier / threshold waveform confined to [-1, 1].
struct CarrierSpec {
    double period = 1e-3;  // seconds, > 0
    CarrierShape shape = CarrierShape::RisingSawtooth;

    // Samples per period on a uniform grid with step dt (period must be an
    // integer multiple of dt for exact per-period accounting).
    std::size_t steps_per_period(double dt) const;
};

// Periodic threshold wave. For the rising sawtooth this is
//   (2/period) * (t - (2N-1)/2 * period)  on  [(N-1)*period, N*period),
// i.e. -1 at each period start, 0 at midpoint, approaching +1 at the end.
// Requires t >= 0.
double threshold_wave(double t, const CarrierSpec& spec);

// Fixed-capacity moving window with rolling mean/variance. Variance uses the
// biased 1/n normalization over exactly min(count, capacity) samples.
// Running sums are shift-centered and recomputed exactly every `capacity`
// pushes to bound floating-point drift. Single writer.
class MovingWindow {
public:
    explicit MovingWindow(std::size_t capacity);

    // Throws std::invalid_argument on non-finite samples.
    void push(double x);

    std::size_t count() const { return count_; }
    std::size_t capacity() const { return buf_.size(); }
    bool full() const { return count_ == buf_.size(); }

    double mean() const;
    double variance() const;  // biased, 1/n

    // Brute-force recomputation over the buffer contents. Test oracle aid.
    double variance_direct() const;
    double mean_direct() const;

private:
    void recompute();

    std::vector<double> buf_;
    std::size_t head_ = 0;   // next write position
    std::size_t count_ = 0;  // valid samples, <= capacity
    double shift_ = 0.0;     // centering offset for the running sums
    double sum_ = 0.0;       // sum of (x - shift_)
    double sumsq_ = 0.0;     // sum of (x - shift_)^2
    std::size_t pushes_since_recompute_ = 0;
};

}  // namespace spikegrid

#endif  // SPIKEGRID_SIGNALS_HPP
