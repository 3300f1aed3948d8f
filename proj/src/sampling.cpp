#include "spikegrid/sampling.hpp"

#include <cstdio>
#include <stdexcept>

namespace spikegrid {

void EventThresholds::validate() const
{
    if (!(sigma_v > 0.0) || !(sigma_i > 0.0)) {
        throw std::invalid_argument("EventThresholds: thresholds must be > 0");
    }
}

std::uint8_t EventState::channel_mask() const
{
    std::uint8_t m = 0;
    if (omega_vd) m |= kChanVd;
    if (omega_vq) m |= kChanVq;
    if (omega_id) m |= kChanId;
    if (omega_iq) m |= kChanIq;
    return m;
}

bool channel_event(const MovingWindow& w, double sigma_th)
{
    if (w.count() < 2) {
        return false;
    }
    return w.variance() > sigma_th * sigma_th;
}

EventGate::EventGate(std::size_t window_len, EventThresholds th, std::uint64_t holdoff)
    : w_vd_(window_len), w_vq_(window_len), w_id_(window_len), w_iq_(window_len),
      th_(th), holdoff_(holdoff)
{
    th_.validate();
}

void EventGate::push_windows(const DqSample& s)
{
    w_vd_.push(s.v_d);
    w_vq_.push(s.v_q);
    w_id_.push(s.i_d);
    w_iq_.push(s.i_q);
}

void EventGate::prime(const DqSample& sample)
{
    push_windows(sample);
}

std::optional<DqSample> EventGate::step(const DqSample& sample)
{
    if (!sample.finite()) {
        throw std::invalid_argument("EventGate: non-finite sample");
    }
    if (w_vd_.count() < 2) {
        ++underfilled_evals_;
    }
    state_.omega_vd = channel_event(w_vd_, th_.sigma_v);
    state_.omega_vq = channel_event(w_vq_, th_.sigma_v);
    state_.omega_id = channel_event(w_id_, th_.sigma_i);
    state_.omega_iq = channel_event(w_iq_, th_.sigma_i);
    const bool omega = state_.omega();

    bool forward = false;
    if (state_.status == GateStatus::Idle) {
        if (omega) {
            state_.status = GateStatus::Active;
            state_.event_start = sample.t;
            current_ = EventRecord{};
            current_.t_start = sample.t;
            current_.trigger_mask = state_.channel_mask();
            quiet_run_ = 0;
            forward = true;
        }
    } else {
        if (omega) {
            quiet_run_ = 0;
            forward = true;
        } else {
            ++quiet_run_;
            if (quiet_run_ > holdoff_) {
                state_.status = GateStatus::Idle;
                state_.event_end = current_.t_end;
                events_.push_back(current_);
                quiet_run_ = 0;
            } else {
                forward = true;  // hold-off keeps the event alive
            }
        }
    }

    if (forward) {
        current_.t_end = sample.t;
        ++current_.n_forwarded;
        ++total_forwarded_;
    }
    push_windows(sample);
    return forward ? std::optional<DqSample>(sample) : std::nullopt;
}

void EventGate::flush()
{
    if (state_.status != GateStatus::Active) {
        return;
    }
    state_.status = GateStatus::Idle;
    state_.event_end = current_.t_end;
    events_.push_back(current_);
    quiet_run_ = 0;
}

void write_event_log(const std::string& path, const std::vector<EventRecord>& events)
{
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (f == nullptr) {
        throw std::runtime_error("EventGate: cannot open " + path);
    }
    std::fprintf(f, "t_start,t_end,trigger_channel_mask,n_samples_forwarded\n");
    for (const auto& e : events) {
        std::fprintf(f, "%.9f,%.9f,%u,%llu\n", e.t_start, e.t_end,
                     static_cast<unsigned>(e.trigger_mask),
                     static_cast<unsigned long long>(e.n_forwarded));
    }
    std::fclose(f);
}

void EventGate::write_event_log(const std::string& path) const
{
    spikegrid::write_event_log(path, events_);
}

}  // namespace spikegrid
