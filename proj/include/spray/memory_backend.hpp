#pragma once

// Intra-process memory-copy backend. Executes slices as direct copies between
// registered buffers; completions are immediate. Exposes a fatal latch so
// transport-level substitution can be exercised.

#include <atomic>
#include <deque>
#include <mutex>

#include "spray/backend.hpp"

namespace spray {

class MemoryBackend final : public TransportBackend {
public:
    // cross_node=true models a fully addressable in-process fabric; false
    // restricts it to PCIe-style same-node copies (forces staging).
    MemoryBackend(SegmentRegistry* registry, const Clock* clock, bool cross_node = true);

    const BackendCapabilities& capabilities() const override { return caps_; }
    PostResult post_slices(std::span<const SliceWorkRequest> requests) override;
    std::vector<CompletionEvent> poll_completions(std::size_t max) override;
    bool fatal() const override { return fatal_.load(std::memory_order_acquire); }
    std::optional<std::vector<std::byte>> attach_segment_metadata(
        const SegmentDescriptor& desc) override;

    void latch_fatal() { fatal_.store(true, std::memory_order_release); }

private:
    SegmentRegistry* registry_;
    const Clock* clock_;
    BackendCapabilities caps_;
    std::atomic<bool> fatal_{false};
    std::mutex mu_;
    std::deque<CompletionEvent> completed_;
};

}  // namespace spray
