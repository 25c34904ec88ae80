#include "spray/sim_backend.hpp"

#include <algorithm>
#include <cstring>

namespace spray {

SimBackend::SimBackend(const TopologyGraph* graph, SegmentRegistry* registry, const Clock* clock,
                       SimBackendOptions opts)
    : graph_(graph), registry_(registry), clock_(clock), opts_(opts) {
    caps_.id = "sim";
    caps_.media_pairs = {{Medium::kHostMemory, Medium::kHostMemory}};
    if (opts_.device_capable) {
        caps_.media_pairs.push_back({Medium::kHostMemory, Medium::kDeviceMemoryEmulated});
        caps_.media_pairs.push_back({Medium::kDeviceMemoryEmulated, Medium::kHostMemory});
        caps_.media_pairs.push_back({Medium::kDeviceMemoryEmulated, Medium::kDeviceMemoryEmulated});
    }
    caps_.supports_read = true;
    caps_.supports_write = true;
    caps_.cross_node = true;
    caps_.same_node = false;
    rails_.resize(graph_->rail_count());
    for (RailIndex i = 0; i < rails_.size(); ++i)
        rails_[i].rng_state = opts_.seed ^ fnv1a64(graph_->rail(i).id.data(), graph_->rail(i).id.size());
}

void SimBackend::set_fault_schedule(FaultSchedule schedule) {
    std::lock_guard lk(mu_);
    schedule.validate();
    schedule_ = std::move(schedule);
    for (auto& rs : rails_) rs.faults.clear();
    for (const FaultEntry& f : schedule_.entries) {
        auto idx = graph_->rail_index(f.rail);
        if (!idx) throw ConfigError("fault schedule references unknown rail '" + f.rail + "'");
        rails_[*idx].faults.push_back(&f);
    }
}

const FaultEntry* SimBackend::active_fault(const RailSim& rs, FaultEffect e, Nanos t) const {
    for (const FaultEntry* f : rs.faults)
        if (f->effect == e && f->start <= t && t < f->end) return f;
    return nullptr;
}

const FaultEntry* SimBackend::fault_overlapping(const RailSim& rs, FaultEffect e, Nanos a,
                                                Nanos b) const {
    for (const FaultEntry* f : rs.faults)
        if (f->effect == e && f->start < b && f->end > a) return f;
    return nullptr;
}

double SimBackend::sample_jitter_us(const RailDecl& decl, RailSim& rs, Nanos service_start) {
    Rng rng(rs.rng_state);
    double j = 0.0;
    if (decl.sim.jitter_spike_prob > 0.0 && rng.next_double() < decl.sim.jitter_spike_prob)
        j += decl.sim.jitter_spike_us;
    else if (decl.sim.jitter_base_us > 0.0)
        j += rng.next_double() * decl.sim.jitter_base_us;
    if (const FaultEntry* f = active_fault(rs, FaultEffect::kJitter, service_start))
        j += rng.next_double() * f->jitter_us;
    rs.rng_state = rng.next_u64();
    return j;
}

PostResult SimBackend::post_slices(std::span<const SliceWorkRequest> requests) {
    std::lock_guard lk(mu_);
    post_calls_++;
    PostResult res;
    const Nanos now = clock_->now();
    for (const SliceWorkRequest& r : requests) {
        if (r.length == 0) throw EngineError("sim: zero-length slice");
        if (r.local_rail >= rails_.size()) throw EngineError("sim: bad rail index");
        auto src = registry_->lookup(r.src_segment);
        auto dst = registry_->lookup(r.dst_segment);
        if (!src || !dst) throw EngineError("sim: unknown segment");
        if (!caps_.covers(src->medium(), dst->medium()))
            throw EngineError("sim: capability mismatch for media pair");

        RailSim& rs = rails_[r.local_rail];
        RailSim& remote = rails_[r.remote_rail == kNoRail ? r.local_rail : r.remote_rail];
        if (rs.inflight >= opts_.inflight_window) break;  // backpressure: reject the suffix

        const RailDecl& decl = graph_->rail(r.local_rail);
        const Nanos start = std::max(now, rs.next_free);
        double factor = decl.sim.service_factor;
        if (const FaultEntry* f = active_fault(rs, FaultEffect::kDegrade, start)) factor *= f->factor;
        if (&remote != &rs)
            if (const FaultEntry* f = active_fault(remote, FaultEffect::kDegrade, start))
                factor *= f->factor;
        const double service_s = static_cast<double>(r.length) / (decl.bandwidth_bps * factor);
        const double jitter_us = sample_jitter_us(decl, rs, start);
        const Nanos done = start + from_seconds(decl.sim.latency_us * 1e-6) +
                           from_seconds(service_s) + from_seconds(jitter_us * 1e-6);

        SimEvent ev;
        ev.seq = seq_++;
        ev.req = r;
        ev.post_time = now;

        // A down interval anywhere in [post, done) on either endpoint aborts
        // the attempt; bytes written are proportional to service progress.
        const FaultEntry* down = fault_overlapping(rs, FaultEffect::kDown, now, done);
        if (!down && &remote != &rs) down = fault_overlapping(remote, FaultEffect::kDown, now, done);
        if (down) {
            const Nanos fail_at = std::max(now, down->start) + from_seconds(decl.sim.latency_us * 1e-6);
            ev.time = fail_at;
            ev.status = SliceStatus::kFailed;
            if (down->start > start) {
                double frac = static_cast<double>(down->start - start) / static_cast<double>(done - start);
                ev.write_bytes = static_cast<Bytes>(static_cast<double>(r.length) * frac);
                rs.next_free = down->start;
            }
        } else {
            ev.time = done;
            ev.status = SliceStatus::kOk;
            ev.write_bytes = r.length;
            rs.next_free = done;
            const FaultEntry* drop = active_fault(rs, FaultEffect::kDropCompletion, done);
            if (!drop && &remote != &rs)
                drop = active_fault(remote, FaultEffect::kDropCompletion, done);
            ev.drop_completion = drop != nullptr;
        }
        rs.inflight++;
        timeline_.push(std::move(ev));
        res.accepted++;
    }
    return res;
}

void SimBackend::execute(const SimEvent& ev) {
    if (ev.write_bytes > 0) {
        auto src = registry_->lookup(ev.req.src_segment);
        auto dst = registry_->lookup(ev.req.dst_segment);
        const std::byte* s = src->resolve(ev.req.src_offset, ev.req.length);
        std::byte* d = dst->resolve(ev.req.dst_offset, ev.req.length);
        if (s && d) std::memcpy(d, s, ev.write_bytes);
    }
    rails_[ev.req.local_rail].inflight--;
    if (ev.drop_completion) return;
    CompletionEvent out;
    out.slice = ev.req.slice;
    out.batch = ev.req.batch;
    out.status = ev.status;
    out.rail = ev.req.local_rail;
    out.t_obs = ev.time > ev.post_time ? ev.time - ev.post_time : 1;
    out.bytes = ev.status == SliceStatus::kOk ? ev.req.length : 0;
    completed_.push_back(out);
}

void SimBackend::advance(Nanos t) {
    std::lock_guard lk(mu_);
    if (t < last_advance_) throw EngineError("sim: time regression");
    last_advance_ = t;
    while (!timeline_.empty() && timeline_.top().time <= t) {
        SimEvent ev = timeline_.top();
        timeline_.pop();
        execute(ev);
    }
}

std::optional<Nanos> SimBackend::next_event_time() const {
    std::lock_guard lk(mu_);
    if (timeline_.empty()) return std::nullopt;
    return timeline_.top().time;
}

std::vector<CompletionEvent> SimBackend::poll_completions(std::size_t max) {
    std::lock_guard lk(mu_);
    std::vector<CompletionEvent> out;
    while (!completed_.empty() && out.size() < max) {
        out.push_back(completed_.front());
        completed_.pop_front();
    }
    return out;
}

std::optional<std::vector<std::byte>> SimBackend::attach_segment_metadata(
    const SegmentDescriptor& desc) {
    if (desc.medium == Medium::kFile) return std::nullopt;
    if (!opts_.device_capable && desc.medium != Medium::kHostMemory) return std::nullopt;
    // Marker blob standing in for transport registration state.
    std::string tag = "sim:" + desc.id;
    std::vector<std::byte> blob(tag.size());
    std::memcpy(blob.data(), tag.data(), tag.size());
    return blob;
}

}  // namespace spray
