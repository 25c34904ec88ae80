#pragma once

// Fabric model: declarative topology (nodes, devices, rails, links), tier
// classification, the segment registry, and reachability queries. Everything
// here is immutable after construction; live rail health/cost state lives in
// the scheduler, not in the graph.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spray/common.hpp"

namespace spray {

// Affinity class of a rail (or of a device->rail link). The numeric value is
// the tier: 1 = direct, 2 = same socket, 3 = cross socket.
enum class Affinity : int { kDirect = 1, kSameSocket = 2, kCrossSocket = 3 };

inline int tier_of(Affinity a) { return static_cast<int>(a); }

const char* affinity_name(Affinity a);
std::optional<Affinity> affinity_from_name(const std::string& s);

enum class DeviceKind { kHostMemory, kDeviceMemory, kFileStore };

const char* device_kind_name(DeviceKind k);

inline DeviceKind device_kind_for_medium(Medium m) {
    switch (m) {
        case Medium::kHostMemory: return DeviceKind::kHostMemory;
        case Medium::kDeviceMemoryEmulated: return DeviceKind::kDeviceMemory;
        case Medium::kFile: return DeviceKind::kFileStore;
    }
    return DeviceKind::kHostMemory;
}

// Service-model parameters consumed only by the simulated backend. Declared
// bandwidth is what the scheduler sees; service_factor lets a fabric file
// describe rails whose actual service rate differs from the declared one.
struct SimRailParams {
    double latency_us = 10.0;
    double service_factor = 1.0;
    double jitter_base_us = 0.0;
    double jitter_spike_prob = 0.0;
    double jitter_spike_us = 0.0;
};

struct DeviceDecl {
    std::string id;
    DeviceKind kind = DeviceKind::kHostMemory;
};

struct NodeDecl {
    std::string id;
    std::vector<DeviceDecl> devices;
};

struct RailDecl {
    std::string id;
    std::string node;
    double bandwidth_bps = 0.0;  // B_d, bytes per second
    Affinity affinity = Affinity::kDirect;
    std::string backend = "sim";
    SimRailParams sim;
};

struct LinkDecl {
    std::string device;
    std::string rail;
    std::optional<Affinity> affinity;  // overrides the rail's class for this device
};

using RailIndex = std::uint32_t;
constexpr RailIndex kNoRail = static_cast<RailIndex>(-1);

class TopologyGraph {
public:
    TopologyGraph(std::vector<NodeDecl> nodes, std::vector<RailDecl> rails,
                  std::vector<LinkDecl> links);

    std::size_t rail_count() const { return rails_.size(); }
    const RailDecl& rail(RailIndex i) const { return rails_[i]; }
    std::optional<RailIndex> rail_index(const std::string& id) const;
    int tier(RailIndex i) const { return tier_of(rails_[i].affinity); }

    const std::vector<NodeDecl>& nodes() const { return nodes_; }
    bool has_node(const std::string& id) const;
    const NodeDecl* node(const std::string& id) const;

    // Rails of one backend on one node, sorted by rail id. Position in this
    // list is the rail's affinity index used for 1:1 remote mapping.
    const std::vector<RailIndex>& rails_on(const std::string& node, const std::string& backend) const;

    // Tier of `rail` as seen from `device`: the link override when the config
    // declares links for that device, the rail's own class otherwise. Returns
    // nullopt when links exist for the device but none reaches this rail.
    std::optional<int> tier_from_device(const std::string& device, RailIndex rail) const;
    bool device_has_links(const std::string& device) const;

    const DeviceDecl* find_device(const std::string& node, const std::string& id) const;
    const DeviceDecl* first_device_of_kind(const std::string& node, DeviceKind kind) const;

    // Canonical serialization; loading the same document twice must produce
    // byte-identical dumps.
    std::string stable_dump() const;

private:
    std::vector<NodeDecl> nodes_;
    std::vector<RailDecl> rails_;
    std::vector<LinkDecl> links_;
    std::map<std::string, RailIndex> rail_by_id_;
    std::map<std::pair<std::string, std::string>, std::vector<RailIndex>> rails_by_node_backend_;
    std::map<std::string, std::map<RailIndex, Affinity>> links_by_device_;
    std::vector<RailIndex> empty_;
};

// Parses the documented JSON topology format (sections: nodes, rails, links).
TopologyGraph load_topology(const std::string& json_text);
TopologyGraph load_topology_file(const std::string& path);

struct BufferDesc {
    Bytes offset = 0;  // logical offset within the segment's address space
    Bytes length = 0;
    std::byte* data = nullptr;  // backing host memory; null for file-backed segments
};

struct SegmentDescriptor {
    std::string id;
    Medium medium = Medium::kHostMemory;
    std::string node;
    std::vector<BufferDesc> buffers;
    std::string file_path;  // file medium only
    std::string device;     // optional explicit device binding
};

class Segment {
public:
    const std::string& id() const { return id_; }
    Medium medium() const { return medium_; }
    const std::string& node() const { return node_; }
    const std::string& device() const { return device_; }
    const std::string& file_path() const { return file_path_; }
    Hash128 id_hash() const { return id_hash_; }
    const std::vector<BufferDesc>& buffers() const { return buffers_; }

    // Host pointer for [offset, offset+length), which must lie entirely
    // within one registered buffer; null otherwise (or for file segments).
    std::byte* resolve(Bytes offset, Bytes length) const;
    bool covers(Bytes offset, Bytes length) const;

    const std::vector<std::byte>* metadata_for(const std::string& backend_id) const;

    // Bufferless placeholder used for planning-time feasibility queries
    // against endpoints that exist only at execution time (staging pools).
    static Segment synthetic(const TopologyGraph& graph, std::string id, Medium medium,
                             const std::string& node);

private:
    friend class SegmentRegistry;
    std::string id_;
    Medium medium_ = Medium::kHostMemory;
    std::string node_;
    std::string device_;
    std::string file_path_;
    Hash128 id_hash_;
    std::vector<BufferDesc> buffers_;  // sorted by offset
    std::map<std::string, std::vector<std::byte>> metadata_;
};

using SegmentPtr = std::shared_ptr<const Segment>;

// Called at registration so each loaded backend can attach an opaque blob.
struct MetadataProvider {
    std::string backend_id;
    std::function<std::optional<std::vector<std::byte>>(const SegmentDescriptor&)> attach;
};

// Registration is serialized behind one writer lock; lookups read an
// atomically published snapshot and never take it.
class SegmentRegistry {
public:
    explicit SegmentRegistry(const TopologyGraph* graph) : graph_(graph) {}

    void add_provider(MetadataProvider p);
    SegmentPtr register_segment(const SegmentDescriptor& desc);

    SegmentPtr lookup(const std::string& id) const;
    SegmentPtr lookup_by_hash(Hash128 h) const;

private:
    using Snapshot = std::map<std::string, SegmentPtr>;
    const TopologyGraph* graph_;
    std::vector<MetadataProvider> providers_;
    mutable std::mutex write_mu_;
    std::shared_ptr<const Snapshot> snap_ = std::make_shared<Snapshot>();
};

// What a transport backend declares about itself; reachability and planning
// are pure functions of these plus the graph.
struct BackendCapabilities {
    std::string id;
    std::vector<std::pair<Medium, Medium>> media_pairs;
    bool supports_read = true;
    bool supports_write = true;
    bool cross_node = false;       // can pair rails on different nodes
    bool same_node = true;         // can pair rails on one node
    Bytes max_post_size = 1ULL << 30;
    bool batched_posting = true;

    bool covers(Medium src, Medium dst) const;
    bool covers_direction(Direction d) const {
        return d == Direction::kRead ? supports_read : supports_write;
    }
};

struct ReachabilityEntry {
    RailIndex local = kNoRail;   // rail on the initiator side
    RailIndex remote = kNoRail;  // rail on the passive side
    int tier = 3;                // max of endpoint tiers
    bool read_ok = false;
    bool write_ok = false;
    std::string backend;
};

// Every (local, remote) rail pair some backend can serve for these segments.
// `local` is always the src-side rail and `remote` the dst-side one; READ
// transfers are initiated from the remote side, which callers orient via the
// direction flags. Sorted by tier ascending then (backend, local id, remote
// id). An empty result is valid and triggers staged routing upstream.
std::vector<ReachabilityEntry> reachable_rails(const TopologyGraph& graph, const Segment& src,
                                               const Segment& dst,
                                               std::span<const BackendCapabilities> backends);

}  // namespace spray
