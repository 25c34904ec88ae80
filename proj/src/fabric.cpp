#include "spray/fabric.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spray {

using nlohmann::json;

const char* affinity_name(Affinity a) {
    switch (a) {
        case Affinity::kDirect: return "direct";
        case Affinity::kSameSocket: return "same_socket";
        case Affinity::kCrossSocket: return "cross_socket";
    }
    return "?";
}

std::optional<Affinity> affinity_from_name(const std::string& s) {
    if (s == "direct") return Affinity::kDirect;
    if (s == "same_socket") return Affinity::kSameSocket;
    if (s == "cross_socket") return Affinity::kCrossSocket;
    return std::nullopt;
}

const char* device_kind_name(DeviceKind k) {
    switch (k) {
        case DeviceKind::kHostMemory: return "host_memory";
        case DeviceKind::kDeviceMemory: return "device_memory";
        case DeviceKind::kFileStore: return "file_store";
    }
    return "?";
}

static std::optional<DeviceKind> device_kind_from_name(const std::string& s) {
    if (s == "host_memory") return DeviceKind::kHostMemory;
    if (s == "device_memory") return DeviceKind::kDeviceMemory;
    if (s == "file_store") return DeviceKind::kFileStore;
    return std::nullopt;
}

TopologyGraph::TopologyGraph(std::vector<NodeDecl> nodes, std::vector<RailDecl> rails,
                             std::vector<LinkDecl> links)
    : nodes_(std::move(nodes)), rails_(std::move(rails)), links_(std::move(links)) {
    for (RailIndex i = 0; i < rails_.size(); ++i) {
        const RailDecl& r = rails_[i];
        if (r.bandwidth_bps <= 0.0)
            throw ConfigError("rail '" + r.id + "': NonPositiveBandwidth");
        if (!has_node(r.node))
            throw ConfigError("rail '" + r.id + "': dangling node reference '" + r.node + "'");
        if (!rail_by_id_.emplace(r.id, i).second)
            throw ConfigError("duplicate rail id '" + r.id + "'");
    }
    for (const RailDecl& r : rails_) {
        auto& v = rails_by_node_backend_[{r.node, r.backend}];
        v.push_back(*rail_index(r.id));
    }
    for (auto& [key, v] : rails_by_node_backend_) {
        std::sort(v.begin(), v.end(),
                  [&](RailIndex a, RailIndex b) { return rails_[a].id < rails_[b].id; });
    }
    for (const LinkDecl& l : links_) {
        auto ri = rail_index(l.rail);
        if (!ri) throw ConfigError("link: dangling rail reference '" + l.rail + "'");
        bool device_found = false;
        for (const NodeDecl& n : nodes_)
            for (const DeviceDecl& d : n.devices)
                if (d.id == l.device) device_found = true;
        if (!device_found) throw ConfigError("link: dangling device reference '" + l.device + "'");
        links_by_device_[l.device][*ri] = l.affinity.value_or(rails_[*ri].affinity);
    }
}

std::optional<RailIndex> TopologyGraph::rail_index(const std::string& id) const {
    auto it = rail_by_id_.find(id);
    if (it == rail_by_id_.end()) return std::nullopt;
    return it->second;
}

bool TopologyGraph::has_node(const std::string& id) const { return node(id) != nullptr; }

const NodeDecl* TopologyGraph::node(const std::string& id) const {
    for (const NodeDecl& n : nodes_)
        if (n.id == id) return &n;
    return nullptr;
}

const std::vector<RailIndex>& TopologyGraph::rails_on(const std::string& node,
                                                      const std::string& backend) const {
    auto it = rails_by_node_backend_.find({node, backend});
    return it == rails_by_node_backend_.end() ? empty_ : it->second;
}

bool TopologyGraph::device_has_links(const std::string& device) const {
    return links_by_device_.count(device) != 0;
}

std::optional<int> TopologyGraph::tier_from_device(const std::string& device, RailIndex rail) const {
    auto it = links_by_device_.find(device);
    if (it == links_by_device_.end()) return tier(rail);
    auto jt = it->second.find(rail);
    if (jt == it->second.end()) return std::nullopt;
    return tier_of(jt->second);
}

const DeviceDecl* TopologyGraph::find_device(const std::string& node_id, const std::string& id) const {
    const NodeDecl* n = node(node_id);
    if (!n) return nullptr;
    for (const DeviceDecl& d : n->devices)
        if (d.id == id) return &d;
    return nullptr;
}

const DeviceDecl* TopologyGraph::first_device_of_kind(const std::string& node_id,
                                                      DeviceKind kind) const {
    const NodeDecl* n = node(node_id);
    if (!n) return nullptr;
    for (const DeviceDecl& d : n->devices)
        if (d.kind == kind) return &d;
    return nullptr;
}

std::string TopologyGraph::stable_dump() const {
    std::ostringstream os;
    os.precision(17);
    for (const NodeDecl& n : nodes_) {
        os << "node " << n.id << "\n";
        for (const DeviceDecl& d : n.devices)
            os << "  device " << d.id << " " << device_kind_name(d.kind) << "\n";
    }
    for (const RailDecl& r : rails_) {
        os << "rail " << r.id << " node=" << r.node << " bw=" << r.bandwidth_bps
           << " affinity=" << affinity_name(r.affinity) << " tier=" << tier_of(r.affinity)
           << " backend=" << r.backend << "\n";
    }
    for (const auto& [dev, m] : links_by_device_)
        for (const auto& [ri, aff] : m)
            os << "link " << dev << " -> " << rails_[ri].id << " " << affinity_name(aff) << "\n";
    return os.str();
}

static SimRailParams parse_sim_params(const json& j) {
    SimRailParams p;
    p.latency_us = j.value("latency_us", p.latency_us);
    p.service_factor = j.value("service_factor", p.service_factor);
    p.jitter_base_us = j.value("jitter_base_us", p.jitter_base_us);
    p.jitter_spike_prob = j.value("jitter_spike_prob", p.jitter_spike_prob);
    p.jitter_spike_us = j.value("jitter_spike_us", p.jitter_spike_us);
    if (p.service_factor <= 0.0) throw ConfigError("service_factor must be > 0");
    return p;
}

TopologyGraph load_topology(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("topology parse error: ") + e.what());
    }
    std::vector<NodeDecl> nodes;
    std::vector<RailDecl> rails;
    std::vector<LinkDecl> links;
    if (!doc.contains("nodes") || !doc.contains("rails"))
        throw ConfigError("topology: missing required sections 'nodes' and 'rails'");
    for (const json& jn : doc.at("nodes")) {
        NodeDecl n;
        n.id = jn.at("id").get<std::string>();
        if (jn.contains("devices")) {
            for (const json& jd : jn.at("devices")) {
                DeviceDecl d;
                d.id = jd.at("id").get<std::string>();
                auto kind = device_kind_from_name(jd.at("kind").get<std::string>());
                if (!kind) throw ConfigError("unknown device kind in node '" + n.id + "'");
                d.kind = *kind;
                n.devices.push_back(std::move(d));
            }
        }
        nodes.push_back(std::move(n));
    }
    for (const json& jr : doc.at("rails")) {
        RailDecl r;
        r.id = jr.at("id").get<std::string>();
        r.node = jr.at("node").get<std::string>();
        r.bandwidth_bps = jr.at("bandwidth_bytes_per_sec").get<double>();
        auto aff = affinity_from_name(jr.at("affinity").get<std::string>());
        if (!aff) throw ConfigError("rail '" + r.id + "': unknown affinity");
        r.affinity = *aff;
        r.backend = jr.value("backend", std::string("sim"));
        if (jr.contains("sim")) r.sim = parse_sim_params(jr.at("sim"));
        rails.push_back(std::move(r));
    }
    if (doc.contains("links")) {
        for (const json& jl : doc.at("links")) {
            LinkDecl l;
            l.device = jl.at("device").get<std::string>();
            l.rail = jl.at("rail").get<std::string>();
            if (jl.contains("affinity")) {
                auto aff = affinity_from_name(jl.at("affinity").get<std::string>());
                if (!aff) throw ConfigError("link: unknown affinity");
                l.affinity = aff;
            }
            links.push_back(std::move(l));
        }
    }
    return TopologyGraph(std::move(nodes), std::move(rails), std::move(links));
}

TopologyGraph load_topology_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open topology file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_topology(ss.str());
}

std::byte* Segment::resolve(Bytes offset, Bytes length) const {
    if (length == 0) return nullptr;
    for (const BufferDesc& b : buffers_) {
        if (offset >= b.offset && offset + length <= b.offset + b.length)
            return b.data ? b.data + (offset - b.offset) : nullptr;
        if (b.offset > offset) break;
    }
    return nullptr;
}

bool Segment::covers(Bytes offset, Bytes length) const {
    if (length == 0) return false;
    for (const BufferDesc& b : buffers_) {
        if (offset >= b.offset && offset + length <= b.offset + b.length) return true;
        if (b.offset > offset) break;
    }
    return false;
}

const std::vector<std::byte>* Segment::metadata_for(const std::string& backend_id) const {
    auto it = metadata_.find(backend_id);
    return it == metadata_.end() ? nullptr : &it->second;
}

Segment Segment::synthetic(const TopologyGraph& graph, std::string id, Medium medium,
                           const std::string& node) {
    Segment s;
    s.id_ = std::move(id);
    s.medium_ = medium;
    s.node_ = node;
    s.id_hash_ = hash128(s.id_);
    if (const DeviceDecl* d = graph.first_device_of_kind(node, device_kind_for_medium(medium)))
        s.device_ = d->id;
    return s;
}

void SegmentRegistry::add_provider(MetadataProvider p) {
    std::lock_guard lk(write_mu_);
    providers_.push_back(std::move(p));
}

SegmentPtr SegmentRegistry::register_segment(const SegmentDescriptor& desc) {
    if (desc.id.empty()) throw ConfigError("segment id must be non-empty");
    if (!graph_->has_node(desc.node))
        throw ConfigError("segment '" + desc.id + "': unknown node '" + desc.node + "'");
    if (desc.buffers.empty()) throw ConfigError("segment '" + desc.id + "': no buffers");

    auto seg = std::make_shared<Segment>();
    seg->id_ = desc.id;
    seg->medium_ = desc.medium;
    seg->node_ = desc.node;
    seg->file_path_ = desc.file_path;
    seg->id_hash_ = hash128(desc.id);
    seg->buffers_ = desc.buffers;
    std::sort(seg->buffers_.begin(), seg->buffers_.end(),
              [](const BufferDesc& a, const BufferDesc& b) { return a.offset < b.offset; });
    for (std::size_t i = 0; i + 1 < seg->buffers_.size(); ++i) {
        const BufferDesc& a = seg->buffers_[i];
        const BufferDesc& b = seg->buffers_[i + 1];
        if (a.offset + a.length > b.offset)
            throw ConfigError("segment '" + desc.id + "': OverlappingBuffers");
    }
    for (const BufferDesc& b : seg->buffers_)
        if (b.length == 0) throw ConfigError("segment '" + desc.id + "': zero-length buffer");

    if (!desc.device.empty()) {
        if (!graph_->find_device(desc.node, desc.device))
            throw ConfigError("segment '" + desc.id + "': unknown device '" + desc.device + "'");
        seg->device_ = desc.device;
    } else if (const DeviceDecl* d =
                   graph_->first_device_of_kind(desc.node, device_kind_for_medium(desc.medium))) {
        seg->device_ = d->id;
    }

    std::lock_guard lk(write_mu_);
    if (snap_->count(desc.id)) throw ConfigError("duplicate segment id '" + desc.id + "'");
    for (const MetadataProvider& p : providers_) {
        if (auto blob = p.attach(desc)) seg->metadata_[p.backend_id] = std::move(*blob);
    }
    auto next = std::make_shared<Snapshot>(*snap_);
    next->emplace(desc.id, seg);
    std::atomic_store_explicit(&snap_, std::shared_ptr<const Snapshot>(next),
                               std::memory_order_release);
    return seg;
}

SegmentPtr SegmentRegistry::lookup(const std::string& id) const {
    auto snap = std::atomic_load_explicit(&snap_, std::memory_order_acquire);
    auto it = snap->find(id);
    return it == snap->end() ? nullptr : it->second;
}

SegmentPtr SegmentRegistry::lookup_by_hash(Hash128 h) const {
    auto snap = std::atomic_load_explicit(&snap_, std::memory_order_acquire);
    for (const auto& [id, seg] : *snap)
        if (seg->id_hash() == h) return seg;
    return nullptr;
}

bool BackendCapabilities::covers(Medium src, Medium dst) const {
    for (const auto& [a, b] : media_pairs)
        if (a == src && b == dst) return true;
    return false;
}

std::vector<ReachabilityEntry> reachable_rails(const TopologyGraph& graph, const Segment& src,
                                               const Segment& dst,
                                               std::span<const BackendCapabilities> backends) {
    std::vector<ReachabilityEntry> out;
    const bool same_node = src.node() == dst.node();
    for (const BackendCapabilities& cap : backends) {
        if (!cap.covers(src.medium(), dst.medium())) continue;
        if (!cap.supports_read && !cap.supports_write) continue;
        if (same_node && !cap.same_node) continue;
        if (!same_node && !cap.cross_node) continue;

        const auto& local_rails = graph.rails_on(src.node(), cap.id);
        const auto& remote_rails = graph.rails_on(dst.node(), cap.id);
        auto emit = [&](RailIndex l, RailIndex r) {
            auto lt = graph.tier_from_device(src.device(), l);
            auto rt = graph.tier_from_device(dst.device(), r);
            if (!lt || !rt) return;
            ReachabilityEntry e;
            e.local = l;
            e.remote = r;
            e.tier = std::max(*lt, *rt);
            e.read_ok = cap.supports_read;
            e.write_ok = cap.supports_write;
            e.backend = cap.id;
            out.push_back(std::move(e));
        };
        if (same_node) {
            for (RailIndex r : local_rails) emit(r, r);
        } else {
            for (RailIndex l : local_rails)
                for (RailIndex r : remote_rails) emit(l, r);
        }
    }
    std::sort(out.begin(), out.end(), [&](const ReachabilityEntry& a, const ReachabilityEntry& b) {
        if (a.tier != b.tier) return a.tier < b.tier;
        if (a.backend != b.backend) return a.backend < b.backend;
        if (graph.rail(a.local).id != graph.rail(b.local).id)
            return graph.rail(a.local).id < graph.rail(b.local).id;
        return graph.rail(a.remote).id < graph.rail(b.remote).id;
    });
    return out;
}

}  // namespace spray
