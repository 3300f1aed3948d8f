#ifndef SPIKEGRID_CODEC_HPP
#define SPIKEGRID_CODEC_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikegrid/signals.hpp"

namespace spikegrid {

// Binary spike raster, channels x timesteps on a uniform grid.
class SpikeTrain {
public:
    SpikeTrain() = default;
    SpikeTrain(std::size_t channels, std::size_t steps, double dt, double t0 = 0.0);

    std::size_t channels() const { return channels_; }
    std::size_t steps() const { return steps_; }
    double dt() const { return dt_; }
    double t0() const { return t0_; }
    double horizon() const { return static_cast<double>(steps_) * dt_; }

    bool at(std::size_t ch, std::size_t step) const
    {
        return bits_[ch * steps_ + step] != 0;
    }
    void set(std::size_t ch, std::size_t step, bool v)
    {
        bits_[ch * steps_ + step] = v ? 1 : 0;
    }

    std::uint64_t count(std::size_t ch) const;
    std::uint64_t count_range(std::size_t ch, std::size_t begin, std::size_t end) const;
    std::uint64_t total_count() const;

    const std::vector<std::uint8_t>& raw() const { return bits_; }

    // Compact run-length-encoded binary plus a JSON sidecar (channel names,
    // sample period, horizon). `path` gets the .spk payload, `path + ".json"`
    // the sidecar.
    void save_rle(const std::string& path, const std::vector<std::string>& channel_names) const;
    static SpikeTrain load_rle(const std::string& path);

    // Long-format CSV for plotting: one (t, channel) row per spike.
    void write_csv(const std::string& path) const;

private:
    std::size_t channels_ = 0;
    std::size_t steps_ = 0;
    double dt_ = 0.0;
    double t0_ = 0.0;
    std::vector<std::uint8_t> bits_;
};

// Soft failure counters from an encode pass.
struct EncodeStats {
    std::uint64_t clamped = 0;  // samples outside [-1, 1] clamped before compare
};

// Rate encoding: spike at step m iff x[m] > carrier(t_m). Values are clamped
// to [-1, 1] first (counted in stats). Sample m sits at t0 + m*dt.
SpikeTrain rate_encode(std::span<const double> x, const CarrierSpec& carrier,
                       double dt, double t0, EncodeStats* stats = nullptr);

// Multi-channel variant; rows of `x` are channels sharing the same grid.
SpikeTrain rate_encode_channels(const std::vector<std::vector<double>>& x,
                                const CarrierSpec& carrier, double dt, double t0,
                                EncodeStats* stats = nullptr);

// Three gate-signal channels cut by comparing membrane potentials against the
// threshold wave.
struct PwmOutput {
    SpikeTrain gates;      // 3 x steps
    CarrierSpec carrier;
    std::uint64_t out_of_range = 0;  // |u| > 1 samples (duty saturates)

    // Mean gate value of channel ch over carrier period `period_idx`
    // (period-aligned grid; t0 must lie on a period boundary).
    double duty(std::size_t ch, std::size_t period_idx) const;
    std::size_t periods() const;
};

// Threshold decoding: spike at t iff u(t) > threshold_wave(t). Strict
// comparison. u has 3 rows on the uniform grid t0 + m*dt.
PwmOutput decode(const std::vector<std::vector<double>>& u, const CarrierSpec& spec,
                 double dt, double t0);

}  // namespace spikegrid

#endif  // SPIKEGRID_CODEC_HPP
