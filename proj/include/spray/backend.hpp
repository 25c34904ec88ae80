#pragma once

// Uniform transport backend interface. Backends are thin slice executors:
// they accept batches of work requests, move bytes, and report completions.
// Everything clever (routing, retry, health) lives above them.

#include <span>
#include <vector>

#include "spray/common.hpp"
#include "spray/fabric.hpp"

namespace spray {

struct SliceWorkRequest {
    SliceId slice = 0;
    BatchId batch = 0;
    std::string src_segment;
    Bytes src_offset = 0;
    std::string dst_segment;
    Bytes dst_offset = 0;  // absolute; re-execution is byte-idempotent
    Bytes length = 0;
    Direction direction = Direction::kWrite;
    RailIndex local_rail = kNoRail;
    RailIndex remote_rail = kNoRail;
    std::uint32_t attempt = 0;
};

enum class SliceStatus { kOk, kFailed, kTimeout };

const char* slice_status_name(SliceStatus s);

struct CompletionEvent {
    SliceId slice = 0;
    BatchId batch = 0;
    SliceStatus status = SliceStatus::kOk;
    RailIndex rail = kNoRail;  // the rail whose submission context served the attempt
    Nanos t_obs = 0;           // post-to-completion service time
    Bytes bytes = 0;
};

// Result of posting a batch of requests. Acceptance is a prefix of the list;
// a rejected suffix is backpressure, not failure.
struct PostResult {
    std::size_t accepted = 0;
    bool fatal = false;  // backend latched fatal; nothing was accepted
};

class TransportBackend {
public:
    virtual ~TransportBackend() = default;

    virtual const BackendCapabilities& capabilities() const = 0;

    // Every accepted request eventually yields exactly one CompletionEvent.
    // Requests must match this backend's capabilities; offering a slice the
    // capabilities do not cover is a programming error and throws.
    virtual PostResult post_slices(std::span<const SliceWorkRequest> requests) = 0;

    // Up to `max` events in completion order; never blocks. Single consumer.
    virtual std::vector<CompletionEvent> poll_completions(std::size_t max) = 0;

    virtual bool fatal() const = 0;

    // Opaque per-segment blob, or nullopt when this backend cannot serve the
    // segment's medium.
    virtual std::optional<std::vector<std::byte>> attach_segment_metadata(
        const SegmentDescriptor& desc) = 0;

    virtual void start() {}
    virtual void stop() {}
};

enum class FaultEffect { kDown, kDegrade, kJitter, kDropCompletion };

const char* fault_effect_name(FaultEffect e);

struct FaultEntry {
    std::string rail;
    FaultEffect effect = FaultEffect::kDown;
    Nanos start = 0;
    Nanos end = 0;
    double factor = 1.0;     // degrade: effective bandwidth multiplier
    double jitter_us = 0.0;  // jitter: added uniform delay bound
};

// Validated schedule: intervals may overlap across rails but not for the
// same (rail, effect).
struct FaultSchedule {
    std::vector<FaultEntry> entries;
    static FaultSchedule parse(const std::string& json_text);
    static FaultSchedule load_file(const std::string& path);
    void validate() const;
};

}  // namespace spray
