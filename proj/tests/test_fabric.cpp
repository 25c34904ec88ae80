#include <set>

#include "doctest.h"
#include "spray/fabric.hpp"
#include "spray/memory_backend.hpp"
#include "spray/sim_backend.hpp"

using namespace spray;

namespace {

std::string two_node_fabric(int rails_per_node, const std::string& extra_rail_fields = "") {
    std::string out = R"({
  "nodes": [
    {"id": "a", "devices": [{"id": "a.mem", "kind": "host_memory"}, {"id": "a.dev", "kind": "device_memory"}]},
    {"id": "b", "devices": [{"id": "b.mem", "kind": "host_memory"}, {"id": "b.dev", "kind": "device_memory"}]}
  ],
  "rails": [)";
    bool first = true;
    for (const std::string& node : {"a", "b"}) {
        for (int i = 0; i < rails_per_node; ++i) {
            if (!first) out += ",";
            first = false;
            out += "\n    {\"id\": \"" + node + ".r" + std::to_string(i) + "\", \"node\": \"" +
                   node + "\", \"bandwidth_bytes_per_sec\": 1e9, \"affinity\": \"direct\"" +
                   extra_rail_fields + "}";
        }
    }
    out += "\n  ]\n}";
    return out;
}

std::vector<std::byte>& arena(std::size_t n) {
    static std::vector<std::byte> mem;
    if (mem.size() < n) mem.resize(n);
    return mem;
}

SegmentDescriptor host_desc(const std::string& id, const std::string& node, Bytes len,
                            Bytes base = 0) {
    SegmentDescriptor d;
    d.id = id;
    d.medium = Medium::kHostMemory;
    d.node = node;
    d.buffers = {BufferDesc{base, len, arena(1 << 20).data()}};
    return d;
}

}  // namespace

TEST_CASE("uniform config classifies all rails tier-1") {
    TopologyGraph g = load_topology(two_node_fabric(8));
    REQUIRE(g.rail_count() == 16);
    for (RailIndex i = 0; i < g.rail_count(); ++i) CHECK(g.tier(i) == 1);
}

TEST_CASE("zero bandwidth rail is rejected") {
    std::string doc = R"({
  "nodes": [{"id": "a"}],
  "rails": [{"id": "a.r0", "node": "a", "bandwidth_bytes_per_sec": 0, "affinity": "direct"}]
})";
    CHECK_THROWS_WITH_AS(load_topology(doc), doctest::Contains("NonPositiveBandwidth"),
                         ConfigError);
}

TEST_CASE("per-device link affinities give the 1,2,2,2,3,3,3,3 tier ladder") {
    // One direct rail, three same-socket rails and four cross-socket rails
    // per device.
    std::string doc = R"({
  "nodes": [{"id": "a", "devices": [{"id": "a.dev", "kind": "device_memory"}]}],
  "rails": [)";
    for (int i = 0; i < 8; ++i) {
        if (i) doc += ",";
        std::string aff = i == 0 ? "direct" : (i <= 3 ? "same_socket" : "cross_socket");
        doc += "\n    {\"id\": \"a.r" + std::to_string(i) +
               "\", \"node\": \"a\", \"bandwidth_bytes_per_sec\": 1e9, \"affinity\": \"" + aff +
               "\"}";
    }
    doc += "\n  ]\n}";
    TopologyGraph g = load_topology(doc);
    std::vector<int> tiers;
    for (RailIndex i = 0; i < g.rail_count(); ++i) tiers.push_back(g.tier(i));
    CHECK(tiers == std::vector<int>{1, 2, 2, 2, 3, 3, 3, 3});
}

TEST_CASE("dangling references are rejected") {
    std::string doc = R"({
  "nodes": [{"id": "a"}],
  "rails": [{"id": "a.r0", "node": "nope", "bandwidth_bytes_per_sec": 1e9, "affinity": "direct"}]
})";
    CHECK_THROWS_AS(load_topology(doc), ConfigError);
    CHECK_THROWS_AS(load_topology("{ not json"), ConfigError);
}

TEST_CASE("reloading the same document is bit-stable") {
    const std::string doc = two_node_fabric(4, ", \"sim\": {\"latency_us\": 7.5}");
    TopologyGraph g1 = load_topology(doc);
    TopologyGraph g2 = load_topology(doc);
    CHECK(g1.stable_dump() == g2.stable_dump());
    CHECK(!g1.stable_dump().empty());
}

TEST_CASE("segment registration validates buffers") {
    TopologyGraph g = load_topology(two_node_fabric(2));
    SegmentRegistry reg(&g);

    SUBCASE("single host buffer registers and resolves") {
        auto seg = reg.register_segment(host_desc("s1", "a", 4096));
        REQUIRE(seg);
        CHECK(seg->resolve(0, 4096) != nullptr);
        CHECK(seg->resolve(1024, 1024) != nullptr);
        CHECK(seg->resolve(4095, 2) == nullptr);  // crosses the end
        CHECK(reg.lookup("s1") == seg);
        CHECK(reg.lookup_by_hash(hash128("s1")) == seg);
    }
    SUBCASE("duplicate id is an error, not a replace") {
        reg.register_segment(host_desc("dup", "a", 4096));
        CHECK_THROWS_AS(reg.register_segment(host_desc("dup", "a", 4096)), ConfigError);
    }
    SUBCASE("overlapping buffers rejected") {
        SegmentDescriptor d;
        d.id = "ov";
        d.medium = Medium::kHostMemory;
        d.node = "a";
        d.buffers = {BufferDesc{0, 4096, arena(1 << 20).data()},
                     BufferDesc{2048, 6144, arena(1 << 20).data() + 8192}};
        CHECK_THROWS_WITH_AS(reg.register_segment(d), doctest::Contains("OverlappingBuffers"),
                             ConfigError);
    }
    SUBCASE("unknown node rejected") {
        CHECK_THROWS_AS(reg.register_segment(host_desc("s2", "zz", 4096)), ConfigError);
    }
}

TEST_CASE("metadata providers attach per-backend blobs by capability") {
    TopologyGraph g = load_topology(two_node_fabric(2));
    SegmentRegistry reg(&g);
    VirtualClock clock;
    SimBackend sim(&g, &reg, &clock, {});
    MemoryBackend mem(&reg, &clock);
    reg.add_provider({"sim", [&](const SegmentDescriptor& d) { return sim.attach_segment_metadata(d); }});
    reg.add_provider({"memory", [&](const SegmentDescriptor& d) { return mem.attach_segment_metadata(d); }});

    auto host = reg.register_segment(host_desc("h", "a", 4096));
    CHECK(host->metadata_for("sim") != nullptr);
    CHECK(host->metadata_for("memory") != nullptr);

    SegmentDescriptor fd;
    fd.id = "f";
    fd.medium = Medium::kFile;
    fd.node = "a";
    fd.file_path = "/tmp/spray_test_fabric.bin";
    fd.buffers = {BufferDesc{0, 4096, nullptr}};
    auto file = reg.register_segment(fd);
    CHECK(file->metadata_for("sim") == nullptr);
    CHECK(file->metadata_for("memory") == nullptr);
}

TEST_CASE("buffer coverage is exact under random descriptors") {
    TopologyGraph g = load_topology(two_node_fabric(1));
    Rng rng(42);
    for (int round = 0; round < 200; ++round) {
        SegmentRegistry reg(&g);
        // random non-overlapping buffers
        std::vector<BufferDesc> bufs;
        Bytes cursor = rng.next_below(512);
        const int nb = 1 + static_cast<int>(rng.next_below(5));
        for (int i = 0; i < nb; ++i) {
            const Bytes len = 1 + rng.next_below(8192);
            bufs.push_back(BufferDesc{cursor, len, arena(1 << 20).data()});
            cursor += len + rng.next_below(512);
        }
        SegmentDescriptor d;
        d.id = "s" + std::to_string(round);
        d.medium = Medium::kHostMemory;
        d.node = "a";
        d.buffers = bufs;
        auto seg = reg.register_segment(d);
        for (int probe = 0; probe < 50; ++probe) {
            const Bytes off = rng.next_below(cursor + 64);
            const Bytes len = 1 + rng.next_below(4096);
            // covered iff exactly one buffer fully contains [off, off+len)
            int covering = 0;
            for (const BufferDesc& b : bufs)
                if (off >= b.offset && off + len <= b.offset + b.length) covering++;
            CHECK(seg->covers(off, len) == (covering == 1));
            CHECK((seg->resolve(off, len) != nullptr) == (covering == 1));
        }
    }
}

TEST_CASE("reachable rails: same-node host pair via memory backend is one tier-1 entry") {
    TopologyGraph g = load_topology(two_node_fabric(8));
    SegmentRegistry reg(&g);
    VirtualClock clock;
    MemoryBackend mem(&reg, &clock);

    std::string mem_rails = R"({
  "nodes": [
    {"id": "a", "devices": [{"id": "a.mem", "kind": "host_memory"}]},
    {"id": "b", "devices": [{"id": "b.mem", "kind": "host_memory"}]}
  ],
  "rails": [
    {"id": "a.m", "node": "a", "bandwidth_bytes_per_sec": 1e10, "affinity": "direct", "backend": "memory"},
    {"id": "b.m", "node": "b", "bandwidth_bytes_per_sec": 1e10, "affinity": "direct", "backend": "memory"}
  ]
})";
    TopologyGraph gm = load_topology(mem_rails);
    SegmentRegistry regm(&gm);
    auto s1 = regm.register_segment(host_desc("x", "a", 4096));
    auto s2 = regm.register_segment(host_desc("y", "a", 4096, 0));
    std::vector<BackendCapabilities> caps = {mem.capabilities()};
    auto entries = reachable_rails(gm, *s1, *s2, caps);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].tier == 1);
    CHECK(entries[0].local == entries[0].remote);
    CHECK(entries[0].backend == "memory");
}

TEST_CASE("reachable rails: cross-node sim fabric enumerates all pairs sorted by tier") {
    TopologyGraph g = load_topology(two_node_fabric(8));
    SegmentRegistry reg(&g);
    VirtualClock clock;
    SimBackend sim(&g, &reg, &clock, {});
    auto s1 = reg.register_segment(host_desc("x", "a", 4096));
    auto s2 = reg.register_segment(host_desc("y", "b", 4096));
    std::vector<BackendCapabilities> caps = {sim.capabilities()};
    auto entries = reachable_rails(g, *s1, *s2, caps);
    CHECK(entries.size() == 64);  // 8 local x 8 remote
    for (std::size_t i = 1; i < entries.size(); ++i)
        CHECK(entries[i - 1].tier <= entries[i].tier);
}

TEST_CASE("reachable rails: unsupported media pair yields empty list") {
    TopologyGraph g = load_topology(two_node_fabric(2));
    SegmentRegistry reg(&g);
    VirtualClock clock;
    SimBackend sim(&g, &reg, &clock, {});
    SegmentDescriptor fd;
    fd.id = "f";
    fd.medium = Medium::kFile;
    fd.node = "a";
    fd.file_path = "/tmp/x.bin";
    fd.buffers = {BufferDesc{0, 4096, nullptr}};
    auto file = reg.register_segment(fd);
    auto host = reg.register_segment(host_desc("h", "b", 4096));
    std::vector<BackendCapabilities> caps = {sim.capabilities()};
    CHECK(reachable_rails(g, *file, *host, caps).empty());
}

TEST_CASE("reachability feasibility is direction-symmetric for dual-direction backends") {
    TopologyGraph g = load_topology(two_node_fabric(4));
    SegmentRegistry reg(&g);
    VirtualClock clock;
    SimBackend sim(&g, &reg, &clock, {});
    Rng rng(7);
    std::vector<BackendCapabilities> caps = {sim.capabilities()};
    for (int i = 0; i < 20; ++i) {
        const std::string na = rng.next_below(2) ? "a" : "b";
        const std::string nb = rng.next_below(2) ? "a" : "b";
        SegmentRegistry r2(&g);
        auto sa = r2.register_segment(host_desc("sa", na, 8192));
        auto sb = r2.register_segment(host_desc("sb", nb, 8192));
        auto fwd = reachable_rails(g, *sa, *sb, caps);
        auto rev = reachable_rails(g, *sb, *sa, caps);
        std::set<std::pair<RailIndex, RailIndex>> f, r;
        for (const auto& e : fwd)
            if (e.read_ok) f.insert({e.local, e.remote});
        for (const auto& e : rev)
            if (e.write_ok) r.insert({e.remote, e.local});
        CHECK(f == r);
    }
}
