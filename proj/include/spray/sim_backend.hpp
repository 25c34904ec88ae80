#pragma once

// Simulated-link backend: per-rail FIFO service with a bounded in-flight
// window, fault injection, and a deterministic event timeline driven by
// simulate-advance. With a fixed seed and schedule the emitted event trace is
// bit-reproducible.

#include <deque>
#include <mutex>
#include <queue>

#include "spray/backend.hpp"

namespace spray {

struct SimBackendOptions {
    std::uint64_t seed = 1;
    std::uint32_t inflight_window = 64;  // W, per rail
    bool device_capable = true;          // false restricts media to host<->host
};

class SimBackend final : public TransportBackend {
public:
    SimBackend(const TopologyGraph* graph, SegmentRegistry* registry, const Clock* clock,
               SimBackendOptions opts = {});

    const BackendCapabilities& capabilities() const override { return caps_; }
    PostResult post_slices(std::span<const SliceWorkRequest> requests) override;
    std::vector<CompletionEvent> poll_completions(std::size_t max) override;
    bool fatal() const override { return false; }
    std::optional<std::vector<std::byte>> attach_segment_metadata(
        const SegmentDescriptor& desc) override;

    void set_fault_schedule(FaultSchedule schedule);

    // Makes every slice whose modeled completion time <= t pollable. Time must
    // be monotonically non-decreasing across calls.
    void advance(Nanos t);
    std::optional<Nanos> next_event_time() const;

    std::uint64_t post_call_count() const {
        std::lock_guard lk(mu_);
        return post_calls_;
    }

private:
    struct RailSim {
        Nanos next_free = 0;
        std::uint32_t inflight = 0;
        std::uint64_t rng_state = 0;
        std::vector<const FaultEntry*> faults;
    };
    struct SimEvent {
        Nanos time = 0;
        std::uint64_t seq = 0;
        SliceWorkRequest req;
        SliceStatus status = SliceStatus::kOk;
        Bytes write_bytes = 0;  // bytes actually placed at the destination
        bool drop_completion = false;
        Nanos post_time = 0;
        bool operator>(const SimEvent& o) const {
            return time != o.time ? time > o.time : seq > o.seq;
        }
    };

    RailSim& rail_sim(RailIndex i) { return rails_[i]; }
    const FaultEntry* active_fault(const RailSim& rs, FaultEffect e, Nanos t) const;
    const FaultEntry* fault_overlapping(const RailSim& rs, FaultEffect e, Nanos a, Nanos b) const;
    double sample_jitter_us(const RailDecl& decl, RailSim& rs, Nanos service_start);
    void execute(const SimEvent& ev);

    const TopologyGraph* graph_;
    SegmentRegistry* registry_;
    const Clock* clock_;
    SimBackendOptions opts_;
    BackendCapabilities caps_;
    FaultSchedule schedule_;

    mutable std::mutex mu_;
    std::vector<RailSim> rails_;
    std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<SimEvent>> timeline_;
    std::deque<CompletionEvent> completed_;
    std::uint64_t seq_ = 0;
    std::uint64_t post_calls_ = 0;
    Nanos last_advance_ = 0;
};

}  // namespace spray
