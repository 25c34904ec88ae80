#include "doctest.h"
#include "spray/memory_backend.hpp"
#include "spray/orchestrator.hpp"
#include "spray/sim_backend.hpp"
#include "spray/tcp_backend.hpp"

using namespace spray;

namespace {

const char* kFabric = R"({
  "nodes": [
    {"id": "a", "devices": [{"id": "a.mem", "kind": "host_memory"}, {"id": "a.dev", "kind": "device_memory"}]},
    {"id": "b", "devices": [{"id": "b.mem", "kind": "host_memory"}, {"id": "b.dev", "kind": "device_memory"}]},
    {"id": "c", "devices": [{"id": "c.mem", "kind": "host_memory"}]}
  ],
  "rails": [
    {"id": "a.r0", "node": "a", "bandwidth_bytes_per_sec": 1e9, "affinity": "direct"},
    {"id": "a.r1", "node": "a", "bandwidth_bytes_per_sec": 1e9, "affinity": "same_socket"},
    {"id": "b.r0", "node": "b", "bandwidth_bytes_per_sec": 1e9, "affinity": "direct"},
    {"id": "b.r1", "node": "b", "bandwidth_bytes_per_sec": 1e9, "affinity": "same_socket"},
    {"id": "a.m", "node": "a", "bandwidth_bytes_per_sec": 1e10, "affinity": "direct", "backend": "memory"},
    {"id": "b.m", "node": "b", "bandwidth_bytes_per_sec": 1e10, "affinity": "direct", "backend": "memory"},
    {"id": "c.m", "node": "c", "bandwidth_bytes_per_sec": 1e10, "affinity": "direct", "backend": "memory"}
  ]
})";

struct Rig {
    TopologyGraph graph;
    SegmentRegistry registry;
    VirtualClock clock;
    std::vector<std::byte> mem;

    explicit Rig() : graph(load_topology(kFabric)), registry(&graph), mem(1 << 20) {}

    SegmentPtr seg(const std::string& id, const std::string& node, Medium m = Medium::kHostMemory) {
        SegmentDescriptor d;
        d.id = id;
        d.medium = m;
        d.node = node;
        d.buffers = {BufferDesc{0, 65536, mem.data()}};
        return registry.register_segment(d);
    }
};

}  // namespace

TEST_CASE("intra-node host pair: one direct memory route, no staged route") {
    Rig rig;
    MemoryBackend mem(&rig.registry, &rig.clock);
    Orchestrator orch(&rig.graph, &rig.registry, {mem.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "a");
    auto plan = orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{});
    REQUIRE(plan->routes.size() == 1);
    CHECK(plan->routes[0].direct);
    CHECK(plan->routes[0].backend == "memory");
    CHECK(plan->routes[0].best_tier == 1);
}

TEST_CASE("routes rank by tier with direct before staged, deterministically") {
    Rig rig;
    MemoryBackend mem(&rig.registry, &rig.clock);
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, {});
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities(), mem.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "b");
    auto plan = orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{});
    REQUIRE(plan->routes.size() == 2);
    CHECK(plan->routes[0].backend == "memory");
    CHECK(plan->routes[1].backend == "sim");
    auto plan2 = orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{});
    CHECK(plan2->routes.size() == plan->routes.size());
    for (std::size_t i = 0; i < plan->routes.size(); ++i)
        CHECK(plan2->routes[i].backend == plan->routes[i].backend);
}

TEST_CASE("read transfers orient scheduling-local rails on the destination side") {
    Rig rig;
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, {});
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "b");
    auto plan = orch.build_plan(*src, *dst, Direction::kRead, TierPenalties{});
    REQUIRE(plan->routes.size() == 1);
    for (const LocalCandidate& c : plan->routes[0].candidates)
        CHECK(rig.graph.rail(c.local).node == "b");
}

TEST_CASE("write-only backend yields no READ route") {
    Rig rig;
    TcpBackend tcp(&rig.graph, &rig.registry, &rig.clock);
    Orchestrator orch(&rig.graph, &rig.registry, {tcp.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "b");
    CHECK_THROWS_AS(orch.build_plan(*src, *dst, Direction::kRead, TierPenalties{}), NoRouteError);
}

TEST_CASE("disconnected endpoints: NoRoute") {
    Rig rig;
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, {});
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "c");
    CHECK_THROWS_AS(orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{}), NoRouteError);
}

TEST_CASE("device endpoints with host-only network synthesize a 3-stage route") {
    Rig rig;
    MemoryBackend mem(&rig.registry, &rig.clock);
    SimBackendOptions so;
    so.device_capable = false;
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, so);
    BackendCapabilities memcaps = mem.capabilities();
    memcaps.cross_node = false;  // forces staging across nodes
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities(), memcaps});
    auto src = rig.seg("s", "a", Medium::kDeviceMemoryEmulated);
    auto dst = rig.seg("d", "b", Medium::kDeviceMemoryEmulated);
    auto plan = orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{});
    REQUIRE(plan->routes.size() == 1);
    const Route& r = plan->routes[0];
    CHECK_FALSE(r.direct);
    REQUIRE(r.stages.size() == 3);
    CHECK(r.stages[0].backend == "memory");
    CHECK(r.stages[1].backend == "sim");
    CHECK(r.stages[2].backend == "memory");
    CHECK(r.stages[0].from == StageEndpoint::kUserSrc);
    CHECK(r.stages[0].to == StageEndpoint::kStagingSrcNode);
    CHECK(r.stages[1].from == StageEndpoint::kStagingSrcNode);
    CHECK(r.stages[1].to == StageEndpoint::kStagingDstNode);
    CHECK(r.stages[2].from == StageEndpoint::kStagingDstNode);
    CHECK(r.stages[2].to == StageEndpoint::kUserDst);
}

TEST_CASE("host source skips the first stage; host destination skips the last") {
    Rig rig;
    MemoryBackend mem(&rig.registry, &rig.clock);
    SimBackendOptions so;
    so.device_capable = false;
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, so);
    BackendCapabilities memcaps = mem.capabilities();
    memcaps.cross_node = false;
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities(), memcaps});

    auto hsrc = rig.seg("hs", "a");
    auto ddst = rig.seg("dd", "b", Medium::kDeviceMemoryEmulated);
    auto plan = orch.build_plan(*hsrc, *ddst, Direction::kWrite, TierPenalties{});
    REQUIRE(plan->routes.size() == 1);
    REQUIRE(plan->routes[0].stages.size() == 2);
    CHECK(plan->routes[0].stages[0].from == StageEndpoint::kUserSrc);
    CHECK(plan->routes[0].stages[0].to == StageEndpoint::kStagingDstNode);
    CHECK(plan->routes[0].stages[1].to == StageEndpoint::kUserDst);

    auto dsrc = rig.seg("ds", "a", Medium::kDeviceMemoryEmulated);
    auto hdst = rig.seg("hd", "b");
    auto plan2 = orch.build_plan(*dsrc, *hdst, Direction::kWrite, TierPenalties{});
    REQUIRE(plan2->routes.size() == 1);
    REQUIRE(plan2->routes[0].stages.size() == 2);
    CHECK(plan2->routes[0].stages[0].to == StageEndpoint::kStagingSrcNode);
    CHECK(plan2->routes[0].stages[1].from == StageEndpoint::kStagingSrcNode);
    CHECK(plan2->routes[0].stages[1].to == StageEndpoint::kUserDst);
}

TEST_CASE("substitution advances past fatal backends and never returns") {
    Rig rig;
    MemoryBackend mem(&rig.registry, &rig.clock);
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, {});
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities(), mem.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "b");
    auto plan = orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{});
    REQUIRE(plan->routes.size() == 2);
    CHECK(plan->active.load() == 0);
    CHECK(plan->advance_past_backend("memory"));
    CHECK(plan->active_route().backend == "sim");
    CHECK_FALSE(plan->advance_past_backend("sim"));
    CHECK(plan->exhausted());
}

TEST_CASE("affinity pairs follow index order within node rail lists") {
    Rig rig;
    SimBackend sim(&rig.graph, &rig.registry, &rig.clock, {});
    Orchestrator orch(&rig.graph, &rig.registry, {sim.capabilities()});
    auto src = rig.seg("s", "a");
    auto dst = rig.seg("d", "b");
    auto plan = orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{});
    const Route& r = plan->routes[0];
    int affinity_pairs = 0;
    for (const LocalCandidate& c : r.candidates) {
        for (const PairOption& p : c.pairs) {
            if (!p.affinity) continue;
            affinity_pairs++;
            const std::string& l = rig.graph.rail(c.local).id;
            const std::string& m = rig.graph.rail(p.remote).id;
            CHECK(l.substr(1) == m.substr(1));  // a.rK <-> b.rK
        }
    }
    CHECK(affinity_pairs == 2);
}

TEST_CASE("tier-3-only reachability is unroutable when tier-3 is unschedulable") {
    const char* doc = R"({
  "nodes": [
    {"id": "a", "devices": [{"id": "a.mem", "kind": "host_memory"}]},
    {"id": "b", "devices": [{"id": "b.mem", "kind": "host_memory"}]}
  ],
  "rails": [
    {"id": "a.r0", "node": "a", "bandwidth_bytes_per_sec": 1e9, "affinity": "cross_socket"},
    {"id": "b.r0", "node": "b", "bandwidth_bytes_per_sec": 1e9, "affinity": "cross_socket"}
  ]
})";
    TopologyGraph g = load_topology(doc);
    SegmentRegistry reg(&g);
    VirtualClock clock;
    SimBackend sim(&g, &reg, &clock, {});
    Orchestrator orch(&g, &reg, {sim.capabilities()});
    static std::vector<std::byte> mem(65536);
    SegmentDescriptor sd;
    sd.id = "s";
    sd.medium = Medium::kHostMemory;
    sd.node = "a";
    sd.buffers = {BufferDesc{0, 65536, mem.data()}};
    auto src = reg.register_segment(sd);
    SegmentDescriptor dd;
    dd.id = "d";
    dd.medium = Medium::kHostMemory;
    dd.node = "b";
    dd.buffers = {BufferDesc{0, 65536, mem.data()}};
    auto dst = reg.register_segment(dd);
    CHECK_THROWS_AS(orch.build_plan(*src, *dst, Direction::kWrite, TierPenalties{}), NoRouteError);
    TierPenalties relaxed;
    relaxed.tier3 = 10.0;
    auto plan = orch.build_plan(*src, *dst, Direction::kWrite, relaxed);
    CHECK(plan->routes.size() == 1);
}
