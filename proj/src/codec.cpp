#include "spikegrid/codec.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace spikegrid {

namespace {
constexpr char kRleMagic[4] = {'S', 'P', 'K', 'T'};
constexpr std::uint32_t kRleVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw std::runtime_error("SpikeTrain: truncated RLE payload");
    }
    return v;
}
}  // namespace

SpikeTrain::SpikeTrain(std::size_t channels, std::size_t steps, double dt, double t0)
    : channels_(channels), steps_(steps), dt_(dt), t0_(t0), bits_(channels * steps, 0)
{
    if (dt <= 0.0) {
        throw std::invalid_argument("SpikeTrain: dt must be > 0");
    }
}

std::uint64_t SpikeTrain::count(std::size_t ch) const
{
    return count_range(ch, 0, steps_);
}

std::uint64_t SpikeTrain::count_range(std::size_t ch, std::size_t begin, std::size_t end) const
{
    std::uint64_t n = 0;
    for (std::size_t m = begin; m < end; ++m) {
        n += bits_[ch * steps_ + m];
    }
    return n;
}

std::uint64_t SpikeTrain::total_count() const
{
    std::uint64_t n = 0;
    for (auto b : bits_) {
        n += b;
    }
    return n;
}

void SpikeTrain::save_rle(const std::string& path,
                          const std::vector<std::string>& channel_names) const
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("SpikeTrain: cannot open " + path);
    }
    os.write(kRleMagic, 4);
    write_pod(os, kRleVersion);
    write_pod(os, static_cast<std::uint32_t>(channels_));
    write_pod(os, static_cast<std::uint64_t>(steps_));
    write_pod(os, dt_);
    write_pod(os, t0_);
    // Per channel: alternating run lengths, starting with a zero-run.
    for (std::size_t ch = 0; ch < channels_; ++ch) {
        std::vector<std::uint32_t> runs;
        std::uint8_t cur = 0;
        std::uint32_t len = 0;
        for (std::size_t m = 0; m < steps_; ++m) {
            const std::uint8_t b = bits_[ch * steps_ + m];
            if (b == cur) {
                ++len;
            } else {
                runs.push_back(len);
                cur = b;
                len = 1;
            }
        }
        runs.push_back(len);
        write_pod(os, static_cast<std::uint32_t>(runs.size()));
        for (auto r : runs) {
            write_pod(os, r);
        }
    }
    if (!os) {
        throw std::runtime_error("SpikeTrain: write failed for " + path);
    }

    nlohmann::json side;
    side["format"] = "spiketrain-rle";
    side["version"] = kRleVersion;
    side["channels"] = channels_;
    side["steps"] = steps_;
    side["dt"] = dt_;
    side["t0"] = t0_;
    side["horizon"] = horizon();
    side["channel_names"] = channel_names;
    std::ofstream js(path + ".json");
    js << side.dump(2) << "\n";
}

SpikeTrain SpikeTrain::load_rle(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("SpikeTrain: cannot open " + path);
    }
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kRleMagic, 4)) {
        throw std::runtime_error("SpikeTrain: bad magic in " + path);
    }
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kRleVersion) {
        throw std::runtime_error("SpikeTrain: unsupported version");
    }
    const auto channels = read_pod<std::uint32_t>(is);
    const auto steps = read_pod<std::uint64_t>(is);
    const auto dt = read_pod<double>(is);
    const auto t0 = read_pod<double>(is);
    SpikeTrain t(channels, steps, dt, t0);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const auto nruns = read_pod<std::uint32_t>(is);
        std::size_t m = 0;
        std::uint8_t cur = 0;
        for (std::uint32_t r = 0; r < nruns; ++r) {
            const auto len = read_pod<std::uint32_t>(is);
            if (m + len > steps) {
                throw std::runtime_error("SpikeTrain: run overflow");
            }
            if (cur) {
                for (std::uint32_t k = 0; k < len; ++k) {
                    t.set(ch, m + k, true);
                }
            }
            m += len;
            cur = cur ? 0 : 1;
        }
        if (m != steps) {
            throw std::runtime_error("SpikeTrain: run underflow");
        }
    }
    return t;
}

void SpikeTrain::write_csv(const std::string& path) const
{
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (f == nullptr) {
        throw std::runtime_error("SpikeTrain: cannot open " + path);
    }
    std::fprintf(f, "t,channel\n");
    for (std::size_t m = 0; m < steps_; ++m) {
        for (std::size_t ch = 0; ch < channels_; ++ch) {
            if (at(ch, m)) {
                std::fprintf(f, "%.9f,%zu\n", t0_ + static_cast<double>(m) * dt_, ch);
            }
        }
    }
    std::fclose(f);
}

SpikeTrain rate_encode(std::span<const double> x, const CarrierSpec& carrier,
                       double dt, double t0, EncodeStats* stats)
{
    std::vector<std::vector<double>> one(1);
    one[0].assign(x.begin(), x.end());
    return rate_encode_channels(one, carrier, dt, t0, stats);
}

SpikeTrain rate_encode_channels(const std::vector<std::vector<double>>& x,
                                const CarrierSpec& carrier, double dt, double t0,
                                EncodeStats* stats)
{
    const std::size_t channels = x.size();
    const std::size_t steps = channels > 0 ? x[0].size() : 0;
    for (const auto& row : x) {
        if (row.size() != steps) {
            throw std::invalid_argument("rate_encode: ragged channel lengths");
        }
    }
    SpikeTrain train(channels, steps, dt, t0);
    std::uint64_t clamped = 0;
    for (std::size_t m = 0; m < steps; ++m) {
        const double carrier_val = threshold_wave(t0 + static_cast<double>(m) * dt, carrier);
        for (std::size_t ch = 0; ch < channels; ++ch) {
            double v = x[ch][m];
            if (v > 1.0) {
                v = 1.0;
                ++clamped;
            } else if (v < -1.0) {
                v = -1.0;
                ++clamped;
            }
            train.set(ch, m, v > carrier_val);
        }
    }
    if (stats != nullptr) {
        stats->clamped += clamped;
    }
    return train;
}

std::size_t PwmOutput::periods() const
{
    const std::size_t n = carrier.steps_per_period(gates.dt());
    return gates.steps() / n;
}

double PwmOutput::duty(std::size_t ch, std::size_t period_idx) const
{
    const std::size_t n = carrier.steps_per_period(gates.dt());
    const std::size_t begin = period_idx * n;
    if (begin + n > gates.steps()) {
        throw std::out_of_range("PwmOutput::duty: period out of range");
    }
    return static_cast<double>(gates.count_range(ch, begin, begin + n)) /
           static_cast<double>(n);
}

PwmOutput decode(const std::vector<std::vector<double>>& u, const CarrierSpec& spec,
                 double dt, double t0)
{
    if (u.size() != 3) {
        throw std::invalid_argument("decode: expected 3 membrane channels");
    }
    const std::size_t steps = u[0].size();
    for (const auto& row : u) {
        if (row.size() != steps) {
            throw std::invalid_argument("decode: ragged channel lengths");
        }
    }
    PwmOutput out;
    out.carrier = spec;
    out.gates = SpikeTrain(3, steps, dt, t0);
    for (std::size_t m = 0; m < steps; ++m) {
        const double th = threshold_wave(t0 + static_cast<double>(m) * dt, spec);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = u[ch][m];
            if (v > 1.0 || v < -1.0) {
                ++out.out_of_range;
            }
            out.gates.set(ch, m, v > th);
        }
    }
    return out;
}

}  // namespace spikegrid
