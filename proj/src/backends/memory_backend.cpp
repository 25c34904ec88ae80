#include "spray/memory_backend.hpp"

#include <chrono>
#include <cstring>

namespace spray {

MemoryBackend::MemoryBackend(SegmentRegistry* registry, const Clock* clock, bool cross_node)
    : registry_(registry), clock_(clock) {
    caps_.id = "memory";
    caps_.media_pairs = {{Medium::kHostMemory, Medium::kHostMemory},
                         {Medium::kHostMemory, Medium::kDeviceMemoryEmulated},
                         {Medium::kDeviceMemoryEmulated, Medium::kHostMemory},
                         {Medium::kDeviceMemoryEmulated, Medium::kDeviceMemoryEmulated}};
    caps_.supports_read = true;
    caps_.supports_write = true;
    caps_.cross_node = cross_node;
    caps_.same_node = true;
}

PostResult MemoryBackend::post_slices(std::span<const SliceWorkRequest> requests) {
    PostResult res;
    if (fatal_.load(std::memory_order_acquire)) {
        res.fatal = true;
        return res;
    }
    for (const SliceWorkRequest& r : requests) {
        auto src = registry_->lookup(r.src_segment);
        auto dst = registry_->lookup(r.dst_segment);
        if (!src || !dst) throw EngineError("memory: unknown segment");
        if (!caps_.covers(src->medium(), dst->medium()))
            throw EngineError("memory: capability mismatch for media pair");
        const std::byte* s = src->resolve(r.src_offset, r.length);
        std::byte* d = dst->resolve(r.dst_offset, r.length);
        if (!s || !d) throw EngineError("memory: slice range not covered by one buffer");

        auto t0 = std::chrono::steady_clock::now();
        std::memcpy(d, s, r.length);
        auto t1 = std::chrono::steady_clock::now();
        auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();

        CompletionEvent ev;
        ev.slice = r.slice;
        ev.batch = r.batch;
        ev.status = SliceStatus::kOk;
        ev.rail = r.local_rail;
        ev.t_obs = ns > 0 ? static_cast<Nanos>(ns) : 1;
        ev.bytes = r.length;
        {
            std::lock_guard lk(mu_);
            completed_.push_back(ev);
        }
        res.accepted++;
    }
    return res;
}

std::vector<CompletionEvent> MemoryBackend::poll_completions(std::size_t max) {
    std::lock_guard lk(mu_);
    std::vector<CompletionEvent> out;
    while (!completed_.empty() && out.size() < max) {
        out.push_back(completed_.front());
        completed_.pop_front();
    }
    return out;
}

std::optional<std::vector<std::byte>> MemoryBackend::attach_segment_metadata(
    const SegmentDescriptor& desc) {
    if (desc.medium == Medium::kFile) return std::nullopt;
    for (const BufferDesc& b : desc.buffers)
        if (!b.data) return std::nullopt;
    std::string tag = "mem:" + desc.id;
    std::vector<std::byte> blob(tag.size());
    std::memcpy(blob.data(), tag.data(), tag.size());
    return blob;
}

}  // namespace spray
