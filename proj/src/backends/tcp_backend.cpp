#include "spray/tcp_backend.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace spray {

static void put_u64(unsigned char* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}
static std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void tcp_encode_header(const TcpWireHeader& h, unsigned char out[kTcpHeaderBytes]) {
    put_u64(out + 0, h.slice);
    put_u64(out + 8, h.batch);
    put_u64(out + 16, h.segment.lo);
    put_u64(out + 24, h.segment.hi);
    put_u64(out + 32, h.offset);
    put_u64(out + 40, h.length);
}

TcpWireHeader tcp_decode_header(const unsigned char in[kTcpHeaderBytes]) {
    TcpWireHeader h;
    h.slice = get_u64(in + 0);
    h.batch = get_u64(in + 8);
    h.segment.lo = get_u64(in + 16);
    h.segment.hi = get_u64(in + 24);
    h.offset = get_u64(in + 32);
    h.length = get_u64(in + 40);
    return h;
}

static bool read_full(int fd, void* buf, std::size_t n) {
    auto* p = static_cast<unsigned char*>(buf);
    while (n > 0) {
        ssize_t k = ::recv(fd, p, n, 0);
        if (k <= 0) return false;
        p += k;
        n -= static_cast<std::size_t>(k);
    }
    return true;
}

static bool write_full(int fd, const void* buf, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(buf);
    while (n > 0) {
        ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
        if (k <= 0) return false;
        p += k;
        n -= static_cast<std::size_t>(k);
    }
    return true;
}

TcpBackend::TcpBackend(const TopologyGraph* graph, SegmentRegistry* registry, const Clock* clock)
    : graph_(graph), registry_(registry), clock_(clock) {
    caps_.id = "tcp";
    caps_.media_pairs = {{Medium::kHostMemory, Medium::kHostMemory}};
    caps_.supports_read = false;  // no opcode on the wire; frames always write
    caps_.supports_write = true;
    caps_.cross_node = true;
    caps_.same_node = false;
    caps_.max_post_size = 256ULL << 20;
}

TcpBackend::~TcpBackend() { stop(); }

void TcpBackend::start() {
    if (running_.exchange(true)) return;
    for (RailIndex i = 0; i < graph_->rail_count(); ++i) {
        if (graph_->rail(i).backend != "tcp") continue;
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) {
            fatal_.store(true);
            return;
        }
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
            ::listen(fd, 64) != 0) {
            ::close(fd);
            fatal_.store(true);
            return;
        }
        socklen_t alen = sizeof addr;
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &alen);
        Listener l;
        l.rail = i;
        l.fd = fd;
        l.port = ntohs(addr.sin_port);
        ports_[i] = l.port;
        listeners_.push_back(std::move(l));
    }
    for (Listener& l : listeners_) {
        l.accept_thread = std::thread([this, fd = l.fd] {
            while (running_.load(std::memory_order_acquire)) {
                int cfd = ::accept(fd, nullptr, nullptr);
                if (cfd < 0) break;
                std::lock_guard lk(server_threads_mu_);
                server_threads_.emplace_back([this, cfd] { serve_connection(cfd); });
            }
        });
    }
}

void TcpBackend::stop() {
    if (!running_.exchange(false)) return;
    // shutdown wakes blocked accept/recv; close only after the owner joined
    for (Listener& l : listeners_)
        if (l.fd >= 0) ::shutdown(l.fd, SHUT_RDWR);
    for (Listener& l : listeners_)
        if (l.accept_thread.joinable()) l.accept_thread.join();
    for (Listener& l : listeners_) {
        if (l.fd >= 0) ::close(l.fd);
        l.fd = -1;
    }
    {
        std::lock_guard lk(conns_mu_);
        for (auto& [key, c] : conns_) {
            const int fd = c->fd.load(std::memory_order_acquire);
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        }
        for (auto& [key, c] : conns_)
            if (c->reader.joinable()) c->reader.join();
        for (auto& [key, c] : conns_) {
            const int fd = c->fd.exchange(-1);
            if (fd >= 0) ::close(fd);
        }
    }
    std::lock_guard lk(server_threads_mu_);
    for (auto& t : server_threads_)
        if (t.joinable()) t.join();
    server_threads_.clear();
}

std::uint16_t TcpBackend::listen_port(RailIndex rail) const {
    auto it = ports_.find(rail);
    return it == ports_.end() ? 0 : it->second;
}

void TcpBackend::serve_connection(int fd) {
    unsigned char hdr[kTcpHeaderBytes];
    std::vector<std::byte> spill;
    while (read_full(fd, hdr, sizeof hdr)) {
        TcpWireHeader h = tcp_decode_header(hdr);
        auto seg = registry_->lookup_by_hash(h.segment);
        std::byte* dst = seg ? seg->resolve(h.offset, h.length) : nullptr;
        std::uint64_t status = 0;
        if (dst) {
            if (!read_full(fd, dst, h.length)) break;
        } else {
            spill.resize(h.length);
            if (!read_full(fd, spill.data(), h.length)) break;
            status = 1;  // unknown segment or uncovered range
        }
        unsigned char ack[16];
        put_u64(ack + 0, h.slice);
        put_u64(ack + 8, status);
        if (!write_full(fd, ack, sizeof ack)) break;
    }
    ::close(fd);
}

TcpBackend::Conn* TcpBackend::connection_for(RailIndex local, RailIndex remote) {
    std::lock_guard lk(conns_mu_);
    auto it = conns_.find({local, remote});
    if (it != conns_.end()) return it->second.get();
    auto pit = ports_.find(remote);
    if (pit == ports_.end()) return nullptr;
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return nullptr;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(pit->second);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd);
        return nullptr;
    }
    auto conn = std::make_unique<Conn>();
    conn->fd = fd;
    conn->local_rail = local;
    Conn* raw = conn.get();
    conn->reader = std::thread([this, raw] { reader_loop(raw); });
    conns_[{local, remote}] = std::move(conn);
    return raw;
}

void TcpBackend::reader_loop(Conn* c) {
    unsigned char ack[16];
    const int fd = c->fd.load(std::memory_order_acquire);
    while (read_full(fd, ack, sizeof ack)) {
        const SliceId slice = get_u64(ack + 0);
        const std::uint64_t status = get_u64(ack + 8);
        Pending p;
        {
            std::lock_guard lk(c->inflight_mu);
            auto it = c->inflight.find(slice);
            if (it == c->inflight.end()) continue;
            p = it->second;
            c->inflight.erase(it);
        }
        CompletionEvent ev;
        ev.slice = slice;
        ev.batch = p.batch;
        ev.status = status == 0 ? SliceStatus::kOk : SliceStatus::kFailed;
        ev.rail = c->local_rail;
        const Nanos now = clock_->now();
        ev.t_obs = now > p.sent ? now - p.sent : 1;
        ev.bytes = status == 0 ? p.bytes : 0;
        emit(ev);
    }
    // Connection dropped: everything still in flight failed.
    std::vector<std::pair<SliceId, Pending>> orphans;
    {
        std::lock_guard lk(c->inflight_mu);
        for (const auto& [slice, p] : c->inflight) orphans.emplace_back(slice, p);
        c->inflight.clear();
    }
    for (const auto& [slice, p] : orphans) {
        CompletionEvent ev;
        ev.slice = slice;
        ev.batch = p.batch;
        ev.status = SliceStatus::kFailed;
        ev.rail = c->local_rail;
        ev.t_obs = 1;
        ev.bytes = 0;
        emit(ev);
    }
}

void TcpBackend::emit(const CompletionEvent& ev) {
    std::lock_guard lk(done_mu_);
    done_.push_back(ev);
}

PostResult TcpBackend::post_slices(std::span<const SliceWorkRequest> requests) {
    PostResult res;
    if (fatal_.load(std::memory_order_acquire)) {
        res.fatal = true;
        return res;
    }
    for (const SliceWorkRequest& r : requests) {
        auto src = registry_->lookup(r.src_segment);
        auto dst = registry_->lookup(r.dst_segment);
        if (!src || !dst) throw EngineError("tcp: unknown segment");
        if (!caps_.covers(src->medium(), dst->medium()) || r.direction == Direction::kRead)
            throw EngineError("tcp: capability mismatch");
        const std::byte* payload = src->resolve(r.src_offset, r.length);
        if (!payload) throw EngineError("tcp: source range not covered");

        Conn* c = connection_for(r.local_rail, r.remote_rail);
        if (!c) break;  // no route to remote listener yet: backpressure

        TcpWireHeader h;
        h.slice = r.slice;
        h.batch = r.batch;
        h.segment = dst->id_hash();
        h.offset = r.dst_offset;
        h.length = r.length;
        unsigned char hdr[kTcpHeaderBytes];
        tcp_encode_header(h, hdr);

        {
            std::lock_guard lk(c->inflight_mu);
            c->inflight[r.slice] = Pending{clock_->now(), r.length, r.batch};
        }
        bool ok;
        {
            std::lock_guard lk(c->send_mu);
            const int fd = c->fd.load(std::memory_order_acquire);
            ok = fd >= 0 && write_full(fd, hdr, sizeof hdr) && write_full(fd, payload, r.length);
        }
        if (!ok) {
            std::lock_guard lk(c->inflight_mu);
            c->inflight.erase(r.slice);
            CompletionEvent ev;
            ev.slice = r.slice;
            ev.batch = r.batch;
            ev.status = SliceStatus::kFailed;
            ev.rail = r.local_rail;
            ev.t_obs = 1;
            ev.bytes = 0;
            emit(ev);
        }
        res.accepted++;
    }
    return res;
}

std::vector<CompletionEvent> TcpBackend::poll_completions(std::size_t max) {
    std::lock_guard lk(done_mu_);
    std::vector<CompletionEvent> out;
    while (!done_.empty() && out.size() < max) {
        out.push_back(done_.front());
        done_.pop_front();
    }
    return out;
}

std::optional<std::vector<std::byte>> TcpBackend::attach_segment_metadata(
    const SegmentDescriptor& desc) {
    if (desc.medium != Medium::kHostMemory) return std::nullopt;
    std::string tag = "tcp:" + desc.id;
    std::vector<std::byte> blob(tag.size());
    std::memcpy(blob.data(), tag.data(), tag.size());
    return blob;
}

}  // namespace spray
