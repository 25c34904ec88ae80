#pragma once

// File I/O backend: serves segments whose medium is a file store, doing
// positioned reads/writes against the segment's backing file. Same-node only.

#include <deque>
#include <map>
#include <mutex>

#include "spray/backend.hpp"

namespace spray {

class FileBackend final : public TransportBackend {
public:
    FileBackend(SegmentRegistry* registry, const Clock* clock);
    ~FileBackend() override;

    const BackendCapabilities& capabilities() const override { return caps_; }
    PostResult post_slices(std::span<const SliceWorkRequest> requests) override;
    std::vector<CompletionEvent> poll_completions(std::size_t max) override;
    bool fatal() const override { return false; }
    std::optional<std::vector<std::byte>> attach_segment_metadata(
        const SegmentDescriptor& desc) override;

private:
    int fd_for(const std::string& path);

    SegmentRegistry* registry_;
    const Clock* clock_;
    BackendCapabilities caps_;
    std::mutex mu_;
    std::map<std::string, int> fds_;
    std::deque<CompletionEvent> completed_;
};

}  // namespace spray
