#pragma once

// Loopback-TCP backend. One listener per tcp rail (ports picked by the OS,
// discovered in-process), one persistent connection per (local, remote) rail
// pair, so "rail" stays meaningful on loopback. Write-only: the wire frame
// carries no opcode, a frame always places payload at an absolute offset.
//
// Frame (little-endian): 8B slice id, 8B batch id, 16B segment-id hash,
// 8B absolute destination offset, 8B length, then payload. The receiver
// replies 8B slice id + 8B status (0 = ok) once the payload is placed.

#include <atomic>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "spray/backend.hpp"

namespace spray {

struct TcpWireHeader {
    SliceId slice = 0;
    BatchId batch = 0;
    Hash128 segment = {};
    Bytes offset = 0;
    Bytes length = 0;
};
constexpr std::size_t kTcpHeaderBytes = 48;

void tcp_encode_header(const TcpWireHeader& h, unsigned char out[kTcpHeaderBytes]);
TcpWireHeader tcp_decode_header(const unsigned char in[kTcpHeaderBytes]);

class TcpBackend final : public TransportBackend {
public:
    TcpBackend(const TopologyGraph* graph, SegmentRegistry* registry, const Clock* clock);
    ~TcpBackend() override;

    const BackendCapabilities& capabilities() const override { return caps_; }
    PostResult post_slices(std::span<const SliceWorkRequest> requests) override;
    std::vector<CompletionEvent> poll_completions(std::size_t max) override;
    bool fatal() const override { return fatal_.load(std::memory_order_acquire); }
    std::optional<std::vector<std::byte>> attach_segment_metadata(
        const SegmentDescriptor& desc) override;

    void start() override;
    void stop() override;

    std::uint16_t listen_port(RailIndex rail) const;  // test hook

private:
    struct Listener {
        RailIndex rail = kNoRail;
        int fd = -1;
        std::uint16_t port = 0;
        std::thread accept_thread;
    };
    struct Pending {
        Nanos sent = 0;
        Bytes bytes = 0;
        BatchId batch = 0;
    };
    struct Conn {
        std::atomic<int> fd{-1};
        std::mutex send_mu;
        std::thread reader;
        std::map<SliceId, Pending> inflight;
        std::mutex inflight_mu;
        RailIndex local_rail = kNoRail;
    };

    Conn* connection_for(RailIndex local, RailIndex remote);
    void serve_connection(int fd);
    void reader_loop(Conn* c);
    void emit(const CompletionEvent& ev);

    const TopologyGraph* graph_;
    SegmentRegistry* registry_;
    const Clock* clock_;
    BackendCapabilities caps_;
    std::atomic<bool> fatal_{false};
    std::atomic<bool> running_{false};

    std::vector<Listener> listeners_;
    std::map<RailIndex, std::uint16_t> ports_;
    std::mutex conns_mu_;
    std::map<std::pair<RailIndex, RailIndex>, std::unique_ptr<Conn>> conns_;
    std::vector<std::thread> server_threads_;
    std::mutex server_threads_mu_;
    std::mutex done_mu_;
    std::deque<CompletionEvent> done_;
};

}  // namespace spray
