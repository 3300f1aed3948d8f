#ifndef SPIKEGRID_SAMPLING_HPP
#define SPIKEGRID_SAMPLING_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikegrid/signals.hpp"

namespace spikegrid {

// Standard-deviation thresholds (pu) that trigger an event per channel family.
struct EventThresholds {
    double sigma_v = 0.15;  // voltage channels
    double sigma_i = 0.05;  // current channels

    void validate() const;  // both must be > 0
};

enum class GateStatus : std::uint8_t { Idle, Active };

// Channel flag bits for the trigger mask, one per dq channel.
enum ChannelBit : std::uint8_t {
    kChanVd = 1u << 0,
    kChanVq = 1u << 1,
    kChanId = 1u << 2,
    kChanIq = 1u << 3,
};

struct EventState {
    GateStatus status = GateStatus::Idle;
    bool omega_vd = false;
    bool omega_vq = false;
    bool omega_id = false;
    bool omega_iq = false;
    double event_start = 0.0;  // valid while Active / after first event
    double event_end = 0.0;    // time of the last forwarded sample

    bool omega() const { return omega_vd || omega_vq || omega_id || omega_iq; }
    std::uint8_t channel_mask() const;
};

// One completed activation interval.
struct EventRecord {
    double t_start = 0.0;
    double t_end = 0.0;               // last forwarded sample time
    std::uint8_t trigger_mask = 0;    // channels over threshold at onset
    std::uint64_t n_forwarded = 0;
};

// Windowed dispersion predicate: true iff the biased window variance exceeds
// sigma_th squared, i.e. the window standard deviation exceeds sigma_th.
// Windows with fewer than two samples never trigger; the gate counts those
// evaluations as diagnostics.
bool channel_event(const MovingWindow& w, double sigma_th);

// Event log CSV: t_start,t_end,trigger_channel_mask,n_samples_forwarded
void write_event_log(const std::string& path, const std::vector<EventRecord>& events);

// Event-driven activation gate for one inverter. Keeps one moving window per
// dq channel; on each sample the per-channel predicates are evaluated against
// the window contents *before* the sample, the combined flag drives the
// Idle/Active status, Active samples are forwarded, and the windows are then
// updated with the sample. Deactivation requires the combined flag to stay
// false for `holdoff` consecutive samples (0 = immediate).
class EventGate {
public:
    EventGate(std::size_t window_len, EventThresholds th, std::uint64_t holdoff = 0);

    // Feeds one sample. Returns the sample if it falls inside an Active
    // interval, nullopt otherwise.
    std::optional<DqSample> step(const DqSample& sample);

    // Pre-fills the windows without event evaluation (Algorithm warm-up).
    void prime(const DqSample& sample);

    // Closes a still-open Active interval (end of run). Idempotent.
    void flush();

    const EventState& state() const { return state_; }
    const std::vector<EventRecord>& events() const { return events_; }
    std::uint64_t total_forwarded() const { return total_forwarded_; }
    std::uint64_t underfilled_evals() const { return underfilled_evals_; }

    // Event log CSV: t_start,t_end,trigger_channel_mask,n_samples_forwarded
    void write_event_log(const std::string& path) const;

private:
    void push_windows(const DqSample& s);

    MovingWindow w_vd_;
    MovingWindow w_vq_;
    MovingWindow w_id_;
    MovingWindow w_iq_;
    EventThresholds th_;
    std::uint64_t holdoff_ = 0;
    std::uint64_t quiet_run_ = 0;  // consecutive samples with omega() false while Active
    EventState state_;
    std::vector<EventRecord> events_;
    EventRecord current_;
    std::uint64_t total_forwarded_ = 0;
    std::uint64_t underfilled_evals_ = 0;
};

}  // namespace spikegrid

#endif  // SPIKEGRID_SAMPLING_HPP
