#include "spray/file_backend.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <vector>

namespace spray {

FileBackend::FileBackend(SegmentRegistry* registry, const Clock* clock)
    : registry_(registry), clock_(clock) {
    caps_.id = "file";
    caps_.media_pairs = {{Medium::kHostMemory, Medium::kFile},
                         {Medium::kFile, Medium::kHostMemory},
                         {Medium::kFile, Medium::kFile}};
    caps_.supports_read = true;
    caps_.supports_write = true;
    caps_.cross_node = false;
    caps_.same_node = true;
    caps_.max_post_size = 64ULL << 20;
}

FileBackend::~FileBackend() {
    for (auto& [path, fd] : fds_)
        if (fd >= 0) ::close(fd);
}

int FileBackend::fd_for(const std::string& path) {
    auto it = fds_.find(path);
    if (it != fds_.end()) return it->second;
    int fd = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    fds_[path] = fd;
    return fd;
}

PostResult FileBackend::post_slices(std::span<const SliceWorkRequest> requests) {
    std::lock_guard lk(mu_);
    PostResult res;
    for (const SliceWorkRequest& r : requests) {
        auto src = registry_->lookup(r.src_segment);
        auto dst = registry_->lookup(r.dst_segment);
        if (!src || !dst) throw EngineError("file: unknown segment");
        if (!caps_.covers(src->medium(), dst->medium()))
            throw EngineError("file: capability mismatch for media pair");

        auto t0 = std::chrono::steady_clock::now();
        bool ok = true;
        if (src->medium() == Medium::kFile && dst->medium() == Medium::kFile) {
            std::vector<std::byte> tmp(r.length);
            int sfd = fd_for(src->file_path());
            int dfd = fd_for(dst->file_path());
            ok = sfd >= 0 && dfd >= 0 &&
                 ::pread(sfd, tmp.data(), r.length, static_cast<off_t>(r.src_offset)) ==
                     static_cast<ssize_t>(r.length) &&
                 ::pwrite(dfd, tmp.data(), r.length, static_cast<off_t>(r.dst_offset)) ==
                     static_cast<ssize_t>(r.length);
        } else if (src->medium() == Medium::kFile) {
            std::byte* d = dst->resolve(r.dst_offset, r.length);
            int sfd = fd_for(src->file_path());
            ok = d && sfd >= 0 &&
                 ::pread(sfd, d, r.length, static_cast<off_t>(r.src_offset)) ==
                     static_cast<ssize_t>(r.length);
        } else {
            const std::byte* s = src->resolve(r.src_offset, r.length);
            int dfd = fd_for(dst->file_path());
            ok = s && dfd >= 0 &&
                 ::pwrite(dfd, s, r.length, static_cast<off_t>(r.dst_offset)) ==
                     static_cast<ssize_t>(r.length);
        }
        auto t1 = std::chrono::steady_clock::now();
        auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();

        CompletionEvent ev;
        ev.slice = r.slice;
        ev.batch = r.batch;
        ev.status = ok ? SliceStatus::kOk : SliceStatus::kFailed;
        ev.rail = r.local_rail;
        ev.t_obs = ns > 0 ? static_cast<Nanos>(ns) : 1;
        ev.bytes = ok ? r.length : 0;
        completed_.push_back(ev);
        res.accepted++;
    }
    return res;
}

std::vector<CompletionEvent> FileBackend::poll_completions(std::size_t max) {
    std::lock_guard lk(mu_);
    std::vector<CompletionEvent> out;
    while (!completed_.empty() && out.size() < max) {
        out.push_back(completed_.front());
        completed_.pop_front();
    }
    return out;
}

std::optional<std::vector<std::byte>> FileBackend::attach_segment_metadata(
    const SegmentDescriptor& desc) {
    if (desc.medium != Medium::kFile) return std::nullopt;
    std::string tag = "file:" + desc.file_path;
    std::vector<std::byte> blob(tag.size());
    std::memcpy(blob.data(), tag.data(), tag.size());
    return blob;
}

}  // namespace spray
