#include "spikegrid/signals.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace spikegrid {

namespace {
constexpr double kTwoThirds = 2.0 / 3.0;
constexpr double kTwoPiOverThree = 2.0 * std::numbers::pi / 3.0;
}  // namespace

bool DqSample::finite() const
{
    return std::isfinite(v_d) && std::isfinite(v_q) && std::isfinite(i_d) &&
           std::isfinite(i_q) && std::isfinite(t);
}

double PuBase::omega0() const
{
    return 2.0 * std::numbers::pi * f_base_hz;
}

DqPair abc_to_dq(const AbcFrame& frame, double theta)
{
    if (!std::isfinite(frame.a) || !std::isfinite(frame.b) ||
        !std::isfinite(frame.c) || !std::isfinite(theta)) {
        throw std::invalid_argument("abc_to_dq: non-finite input");
    }
    const double ca = std::cos(theta);
    const double cb = std::cos(theta - kTwoPiOverThree);
    const double cc = std::cos(theta + kTwoPiOverThree);
    const double sa = std::sin(theta);
    const double sb = std::sin(theta - kTwoPiOverThree);
    const double sc = std::sin(theta + kTwoPiOverThree);
    DqPair out;
    out.d = kTwoThirds * (frame.a * ca + frame.b * cb + frame.c * cc);
    out.q = -kTwoThirds * (frame.a * sa + frame.b * sb + frame.c * sc);
    return out;
}

AbcFrame dq_to_abc(double d, double q, double theta, double t)
{
    AbcFrame f;
    f.a = d * std::cos(theta) - q * std::sin(theta);
    f.b = d * std::cos(theta - kTwoPiOverThree) - q * std::sin(theta - kTwoPiOverThree);
    f.c = d * std::cos(theta + kTwoPiOverThree) - q * std::sin(theta + kTwoPiOverThree);
    f.t = t;
    return f;
}

std::size_t CarrierSpec::steps_per_period(double dt) const
{
    if (dt <= 0.0 || period <= 0.0) {
        throw std::invalid_argument("CarrierSpec: dt and period must be > 0");
    }
    const double ratio = period / dt;
    const auto n = static_cast<std::size_t>(std::llround(ratio));
    if (n < 2 || std::abs(ratio - static_cast<double>(n)) > 1e-6) {
        throw std::invalid_argument("CarrierSpec: period must be an integer multiple of dt");
    }
    return n;
}

double threshold_wave(double t, const CarrierSpec& spec)
{
    const double phase = std::fmod(t, spec.period);
    double x = phase / spec.period;  // [0, 1)
    // Grid times accumulate rounding; a sample landing a hair under a period
    // boundary belongs to the next period, not to the ramp tip.
    if (x > 1.0 - 1e-9) x = 0.0;
    if (spec.shape == CarrierShape::RisingSawtooth) {
        return 2.0 * x - 1.0;
    }
    // Triangular: -1 -> +1 over the first half period, back down over the second.
    return (x < 0.5) ? (4.0 * x - 1.0) : (3.0 - 4.0 * x);
}

MovingWindow::MovingWindow(std::size_t capacity) : buf_(capacity, 0.0)
{
    if (capacity < 2) {
        throw std::invalid_argument("MovingWindow: capacity must be >= 2");
    }
}

void MovingWindow::push(double x)
{
    if (!std::isfinite(x)) {
        throw std::invalid_argument("MovingWindow: non-finite sample");
    }
    if (count_ == 0) {
        shift_ = x;
    }
    const double xc = x - shift_;
    if (count_ == buf_.size()) {
        const double oc = buf_[head_] - shift_;
        sum_ -= oc;
        sumsq_ -= oc * oc;
    } else {
        ++count_;
    }
    buf_[head_] = x;
    head_ = (head_ + 1) % buf_.size();
    sum_ += xc;
    sumsq_ += xc * xc;

    if (++pushes_since_recompute_ >= buf_.size()) {
        recompute();
    }
}

void MovingWindow::recompute()
{
    pushes_since_recompute_ = 0;
    if (count_ == 0) {
        sum_ = sumsq_ = 0.0;
        return;
    }
    // Re-center on the newest sample.
    const std::size_t newest = (head_ + buf_.size() - 1) % buf_.size();
    shift_ = buf_[newest];
    sum_ = 0.0;
    sumsq_ = 0.0;
    for (std::size_t k = 0; k < count_; ++k) {
        const std::size_t idx = (head_ + buf_.size() - 1 - k) % buf_.size();
        const double xc = buf_[idx] - shift_;
        sum_ += xc;
        sumsq_ += xc * xc;
    }
}

double MovingWindow::mean() const
{
    if (count_ == 0) {
        return 0.0;
    }
    return shift_ + sum_ / static_cast<double>(count_);
}

double MovingWindow::variance() const
{
    if (count_ == 0) {
        return 0.0;
    }
    const double n = static_cast<double>(count_);
    const double m = sum_ / n;
    const double v = sumsq_ / n - m * m;
    return v > 0.0 ? v : 0.0;
}

double MovingWindow::mean_direct() const
{
    if (count_ == 0) {
        return 0.0;
    }
    double s = 0.0;
    for (std::size_t k = 0; k < count_; ++k) {
        const std::size_t idx = (head_ + buf_.size() - 1 - k) % buf_.size();
        s += buf_[idx];
    }
    return s / static_cast<double>(count_);
}

double MovingWindow::variance_direct() const
{
    if (count_ == 0) {
        return 0.0;
    }
    const double m = mean_direct();
    double s = 0.0;
    for (std::size_t k = 0; k < count_; ++k) {
        const std::size_t idx = (head_ + buf_.size() - 1 - k) % buf_.size();
        const double d = buf_[idx] - m;
        s += d * d;
    }
    return s / static_cast<double>(count_);
}

}  // namespace spikegrid
