#include <cmath>

#include "doctest.h"
#include "spray/scheduler.hpp"

using namespace spray;

namespace {

// Test-local fabric: N tier-1 rails plus M tier-2 rails on one node, equal
// declared bandwidth.
std::string tiered_doc(int tier1, int tier2, double bw = 100.0) {
    std::string out = R"({
  "nodes": [{"id": "a", "devices": [{"id": "a.mem", "kind": "host_memory"}]},
             {"id": "b", "devices": [{"id": "b.mem", "kind": "host_memory"}]}],
  "rails": [)";
    bool first = true;
    auto add = [&](const std::string& node, int n, int start, const char* aff) {
        for (int i = 0; i < n; ++i) {
            if (!first) out += ",";
            first = false;
            out += "\n    {\"id\": \"" + node + ".r" + std::to_string(start + i) +
                   "\", \"node\": \"" + node + "\", \"bandwidth_bytes_per_sec\": " +
                   std::to_string(bw) + ", \"affinity\": \"" + aff + "\"}";
        }
    };
    for (const std::string& node : {"a", "b"}) {
        add(node, tier1, 0, "direct");
        add(node, tier2, tier1, "same_socket");
    }
    return out + "\n  ]\n}";
}

// Candidates for locals on node a, each paired 1:1 with the same-index rail
// on node b.
std::vector<LocalCandidate> simple_candidates(const TopologyGraph& g, int count) {
    std::vector<LocalCandidate> out;
    for (int i = 0; i < count; ++i) {
        auto li = g.rail_index("a.r" + std::to_string(i));
        auto ri = g.rail_index("b.r" + std::to_string(i));
        REQUIRE(li);
        REQUIRE(ri);
        LocalCandidate c;
        c.local = *li;
        c.pairs = {PairOption{*ri, g.tier(*li), true}};
        out.push_back(std::move(c));
    }
    return out;
}

// Independent evaluation of the scoring model, kept deliberately dumb: used
// as the oracle against the production selection path.
struct OracleRail {
    double beta0, beta1, queued, bandwidth, penalty;
};
double oracle_score(const OracleRail& r, double L) {
    return r.penalty * (r.beta0 + r.beta1 * ((r.queued + L) / r.bandwidth));
}

}  // namespace

TEST_CASE("decompose covers the range with uniform slices") {
    SchedulerConfig cfg;

    SUBCASE("1 MiB at 64 KiB minimum gives 16 slices") {
        auto v = SliceScheduler::decompose(1 << 20, cfg);
        REQUIRE(v.size() == 16);
        for (const auto& [off, len] : v) CHECK(len == 65536);
    }
    SUBCASE("below the minimum gives one slice") {
        auto v = SliceScheduler::decompose(10 * 1024, cfg);
        REQUIRE(v.size() == 1);
        CHECK(v[0].first == 0);
        CHECK(v[0].second == 10 * 1024);
    }
    SUBCASE("1 GiB hits the 4096-slice cap at 256 KiB each") {
        auto v = SliceScheduler::decompose(1ULL << 30, cfg);
        REQUIRE(v.size() == 4096);
        for (const auto& [off, len] : v) CHECK(len == 262144);
    }
    SUBCASE("cover is exact and non-overlapping for random lengths") {
        Rng rng(11);
        for (int i = 0; i < 300; ++i) {
            const Bytes total = 1 + rng.next_below(1ULL << 28);
            auto v = SliceScheduler::decompose(total, cfg);
            REQUIRE(!v.empty());
            CHECK(v.size() <= cfg.max_slices_per_transfer);
            Bytes cursor = 0;
            for (std::size_t k = 0; k < v.size(); ++k) {
                CHECK(v[k].first == cursor);
                CHECK(v[k].second >= 1);
                if (k + 1 < v.size() && v.size() > 1) CHECK(v[k].second >= cfg.min_slice_size);
                cursor += v[k].second;
            }
            CHECK(cursor == total);
        }
    }
}

TEST_CASE("predicted completion evaluates the linear model") {
    TopologyGraph g = load_topology(tiered_doc(1, 0, 100.0));
    SchedulerConfig cfg;
    SliceScheduler sched(&g, cfg);
    const RailIndex r = *g.rail_index("a.r0");

    SUBCASE("unit substitution") {
        // beta0=0, beta1=1, A=0, L=B -> 1.0 s
        CHECK(sched.predict_completion_s(r, 100) == doctest::Approx(1.0));
    }
    SUBCASE("direct evaluation with queue and coefficients") {
        // beta0=0.5, beta1=2, A=100, L=100, B=100 -> 4.5 s
        sched.charge(r, 100);
        // feed beta to the target values via direct construction: emulate by
        // feedback with crafted observations is indirect; instead evaluate
        // the oracle form and the production form on the same numbers.
        OracleRail o{0.5, 2.0, 100.0, 100.0, 1.0};
        CHECK(oracle_score(o, 100) == doctest::Approx(4.5));
        // production path with default beta (0,1): (100+100)/100 = 2.0
        CHECK(sched.predict_completion_s(r, 100) == doctest::Approx(2.0));
    }
}

TEST_CASE("chooseRail prefers the idle tier-1 rail over tier-2 at equal load") {
    TopologyGraph g = load_topology(tiered_doc(1, 1));
    SchedulerConfig cfg;
    SliceScheduler sched(&g, cfg);
    auto cands = simple_candidates(g, 2);
    auto pick = sched.choose_rail(10, 0, cands);
    REQUIRE(pick);
    CHECK(g.rail(pick->local).id == "a.r0");  // s1 = t, s2 = 3t
    CHECK(sched.queued_bytes(pick->local) == 10);
}

TEST_CASE("load-aware spillover: saturated tier-1 loses to idle tier-2") {
    TopologyGraph g = load_topology(tiered_doc(1, 1));
    SchedulerConfig cfg;
    SliceScheduler sched(&g, cfg);
    auto cands = simple_candidates(g, 2);
    const RailIndex r0 = *g.rail_index("a.r0");
    const Bytes L = 100;
    sched.charge(r0, 5 * L);  // A=5L: s1 = 6L/B, s2 = 3L/B
    auto pick = sched.choose_rail(L, 0, cands);
    REQUIRE(pick);
    CHECK(g.rail(pick->local).id == "a.r1");
}

TEST_CASE("empty candidate set is NoEligibleDevice") {
    TopologyGraph g = load_topology(tiered_doc(1, 0));
    SliceScheduler sched(&g, SchedulerConfig{});
    CHECK_FALSE(sched.choose_rail(10, 0, {}));
    // all candidates excluded also yields no eligible device
    auto cands = simple_candidates(g, 1);
    sched.set_health(cands[0].local, RailHealthState::kExcluded);
    CHECK_FALSE(sched.choose_rail(10, 0, cands));
}

TEST_CASE("two identical rails alternate via the round-robin cursor") {
    TopologyGraph g = load_topology(tiered_doc(2, 0));
    SliceScheduler sched(&g, SchedulerConfig{});
    auto cands = simple_candidates(g, 2);
    // Keep both rails in the tolerance window by releasing after each pick.
    std::vector<std::string> order;
    for (int i = 0; i < 4; ++i) {
        auto pick = sched.choose_rail(10, 0, cands);
        REQUIRE(pick);
        order.push_back(g.rail(pick->local).id);
        sched.release(pick->local, 10);
    }
    CHECK(order[0] != order[1]);
    CHECK(order[0] == order[2]);
    CHECK(order[1] == order[3]);
}

TEST_CASE("selection always satisfies the tolerance-window bound (oracle equivalence)") {
    // Randomized states; the oracle recomputes scores directly from the
    // model and verifies s(chosen) <= (1+gamma) * min s.
    TopologyGraph g = load_topology(tiered_doc(4, 4));
    SchedulerConfig cfg;
    cfg.penalties.tier3 = std::nullopt;
    Rng rng(2024);
    SliceScheduler sched(&g, cfg);
    auto cands = simple_candidates(g, 8);

    int checked = 0;
    for (int round = 0; round < 10000; ++round) {
        // random queue perturbations
        for (int i = 0; i < 8; ++i) {
            const RailIndex r = cands[i].local;
            const std::int64_t cur = sched.queued_bytes(r);
            const std::int64_t target = static_cast<std::int64_t>(rng.next_below(4000));
            if (target > cur)
                sched.charge(r, static_cast<Bytes>(target - cur));
            else
                sched.release(r, static_cast<Bytes>(cur - target));
        }
        const Bytes L = 1 + rng.next_below(500);
        auto pick = sched.choose_rail(L, L, cands);
        REQUIRE(pick);

        double smin = 1e300, schosen = 0;
        for (int i = 0; i < 8; ++i) {
            const RailIndex r = cands[i].local;
            // chosen rail already carries +L from the dispatch, undo for scoring
            const double queued = static_cast<double>(sched.queued_bytes(r)) -
                                  (r == pick->local ? static_cast<double>(L) : 0.0);
            OracleRail o{sched.beta0(r), sched.beta1(r), queued, g.rail(r).bandwidth_bps,
                         g.tier(r) == 1 ? *cfg.penalties.tier1 : *cfg.penalties.tier2};
            const double s = oracle_score(o, static_cast<double>(L));
            smin = std::min(smin, s);
            if (r == pick->local) schosen = s;
        }
        CHECK(schosen <= (1.0 + cfg.tolerance) * smin * (1.0 + 1e-12));
        checked++;
    }
    CHECK(checked == 10000);
}

TEST_CASE("spillover threshold matches the brute-force oracle on a grid") {
    // With beta=(0,1), equal B, tiny tolerance: tier-2 is chosen exactly when
    // A1 + L > P2 * (A2 + L).
    TopologyGraph g = load_topology(tiered_doc(1, 1));
    SchedulerConfig cfg;
    cfg.tolerance = 1e-9;
    const double P2 = *cfg.penalties.tier2;
    const Bytes L = 64;
    for (std::int64_t a1 = 0; a1 <= 2000; a1 += 100) {
        for (std::int64_t a2 = 0; a2 <= 600; a2 += 37) {
            SliceScheduler sched(&g, cfg);
            auto cands = simple_candidates(g, 2);
            sched.charge(cands[0].local, static_cast<Bytes>(a1));
            sched.charge(cands[1].local, static_cast<Bytes>(a2));
            auto pick = sched.choose_rail(L, 0, cands);
            REQUIRE(pick);
            const double s1 = static_cast<double>(a1 + L);
            const double s2 = P2 * static_cast<double>(a2 + L);
            if (s1 == s2) {
                CHECK((g.rail(pick->local).id == "a.r0" || g.rail(pick->local).id == "a.r1"));
            } else {
                CHECK(g.rail(pick->local).id == (s2 < s1 ? "a.r1" : "a.r0"));
            }
        }
    }
}

TEST_CASE("score is strictly increasing in queued bytes") {
    TopologyGraph g = load_topology(tiered_doc(1, 0));
    SliceScheduler sched(&g, SchedulerConfig{});
    const RailIndex r = *g.rail_index("a.r0");
    double prev = sched.predict_completion_s(r, 100);
    for (int i = 0; i < 20; ++i) {
        sched.charge(r, 50);
        const double cur = sched.predict_completion_s(r, 100);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("unschedulable tier-2/3 degenerates into a tier-1-only striper") {
    TopologyGraph g = load_topology(tiered_doc(2, 6));
    SchedulerConfig cfg;
    cfg.penalties.tier2 = std::nullopt;
    cfg.penalties.tier3 = std::nullopt;
    SliceScheduler sched(&g, cfg);
    auto cands = simple_candidates(g, 8);
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        auto pick = sched.choose_rail(1 + rng.next_below(1000), rng.next_u64(), cands);
        REQUIRE(pick);
        CHECK(g.tier(pick->local) == 1);
    }
    // tier-1 rails excluded -> nothing eligible, even with tier-2 present
    sched.set_health(cands[0].local, RailHealthState::kExcluded);
    sched.set_health(cands[1].local, RailHealthState::kExcluded);
    CHECK_FALSE(sched.choose_rail(100, 0, cands));
}

TEST_CASE("EWMA feedback") {
    TopologyGraph g = load_topology(tiered_doc(1, 0, 1000.0));
    SchedulerConfig cfg;  // alpha = 0.2
    const RailIndex r = 0;

    SUBCASE("exact observation is a fixed point up to epsilon") {
        SliceScheduler sched(&g, cfg);
        // x = L/B; t_obs equals prediction with beta=(0,1)
        const double x = 100.0 / 1000.0;
        for (int i = 0; i < 50; ++i) sched.feedback(r, x, x);
        CHECK(sched.beta1(r) == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("4x degradation converges within 10% after 20 events") {
        SliceScheduler sched(&g, cfg);
        const double x = 0.1;
        for (int i = 0; i < 20; ++i) sched.feedback(r, 4.0 * x, x);
        // 0.8^20 < 0.012: the remaining gap is under 10% of the new value
        const double predicted = sched.predict_completion_s(r, 100);
        CHECK(predicted == doctest::Approx(4.0 * x).epsilon(0.10));
    }
    SUBCASE("single 10x outlier moves the prediction at most 2x") {
        SliceScheduler sched(&g, cfg);
        const double x = 0.1;
        for (int i = 0; i < 30; ++i) sched.feedback(r, x, x);
        const double before = sched.predict_completion_s(r, 100);
        sched.feedback(r, 10.0 * x, x);
        const double after = sched.predict_completion_s(r, 100);
        CHECK(after <= 2.0 * before);
        CHECK(after > before);
    }
}

TEST_CASE("periodic reset restores initial coefficients but not queued bytes") {
    TopologyGraph g = load_topology(tiered_doc(1, 0, 1000.0));
    SchedulerConfig cfg;
    SliceScheduler sched(&g, cfg);
    const RailIndex r = 0;
    sched.charge(r, 777);
    for (int i = 0; i < 10; ++i) sched.feedback(r, 0.4, 0.1);
    CHECK(sched.beta1(r) > 1.5);  // learned state visibly off the init values

    SUBCASE("before the interval nothing changes") {
        sched.periodic_reset(10 * kSecond);
        CHECK(sched.beta1(r) > 1.5);
    }
    SUBCASE("after the interval beta returns to init, queue survives") {
        sched.periodic_reset(30 * kSecond);
        CHECK(sched.beta1(r) == doctest::Approx(1.0));
        CHECK(sched.beta0(r) == doctest::Approx(0.0));
        CHECK(sched.queued_bytes(r) == 777);
    }
}

TEST_CASE("queue accounting conservation at quiescent points") {
    TopologyGraph g = load_topology(tiered_doc(4, 0));
    SliceScheduler sched(&g, SchedulerConfig{});
    auto cands = simple_candidates(g, 4);
    Rng rng(3);
    std::int64_t dispatched = 0, completed = 0;
    std::vector<std::pair<RailIndex, Bytes>> inflight;
    for (int step = 0; step < 5000; ++step) {
        if (rng.next_below(2) == 0 || inflight.empty()) {
            const Bytes L = 1 + rng.next_below(9999);
            auto pick = sched.choose_rail(L, 0, cands);
            REQUIRE(pick);
            inflight.emplace_back(pick->local, L);
            dispatched += static_cast<std::int64_t>(L);
        } else {
            const std::size_t k = rng.next_below(inflight.size());
            sched.release(inflight[k].first, inflight[k].second);
            completed += static_cast<std::int64_t>(inflight[k].second);
            inflight.erase(inflight.begin() + static_cast<std::ptrdiff_t>(k));
        }
        std::int64_t total = 0;
        for (int i = 0; i < 4; ++i) total += sched.queued_bytes(cands[i].local);
        CHECK(total == dispatched - completed);
    }
}

TEST_CASE("remote mapping prefers the affinity pair and falls back by tier") {
    TopologyGraph g = load_topology(tiered_doc(2, 2));
    SchedulerConfig cfg;
    SliceScheduler sched(&g, cfg);
    const RailIndex b0 = *g.rail_index("b.r0");
    const RailIndex b1 = *g.rail_index("b.r1");
    const RailIndex b2 = *g.rail_index("b.r2");
    std::vector<PairOption> pairs = {PairOption{b0, 1, true}, PairOption{b1, 1, false},
                                     PairOption{b2, 2, false}};

    SUBCASE("all healthy: affinity pair wins") {
        auto m = sched.map_remote(pairs);
        REQUIRE(m);
        CHECK(m->remote == b0);
    }
    SUBCASE("affinity down: best-tier healthy alternative") {
        sched.set_health(b0, RailHealthState::kExcluded);
        auto m = sched.map_remote(pairs);
        REQUIRE(m);
        CHECK(m->remote == b1);
        sched.set_health(b1, RailHealthState::kExcluded);
        m = sched.map_remote(pairs);
        REQUIRE(m);
        CHECK(m->remote == b2);
    }
    SUBCASE("all remotes down: no remote rail") {
        sched.set_health(b0, RailHealthState::kExcluded);
        sched.set_health(b1, RailHealthState::kExcluded);
        sched.set_health(b2, RailHealthState::kExcluded);
        CHECK_FALSE(sched.map_remote(pairs));
    }
}

TEST_CASE("global load board blends into the effective queue") {
    TopologyGraph g = load_topology(tiered_doc(2, 0, 1000.0));
    GlobalLoadBoard board(10 * kMilli);
    SchedulerConfig cfg;
    cfg.diffusion_weight = 0.5;
    SliceScheduler sched(&g, cfg, &board, "me");
    auto cands = simple_candidates(g, 2);

    // Another instance reports rail a.r0 heavily loaded.
    board.publish("other", cands[0].local, 100000, 0);
    sched.publish_to_board(0);
    auto pick = sched.choose_rail(100, 0, cands);
    REQUIRE(pick);
    CHECK(pick->local == cands[1].local);  // steered away by the global view

    SUBCASE("stale entries are ignored") {
        GlobalLoadBoard b2(10 * kMilli);
        b2.publish("other", cands[0].local, 100000, 0);
        CHECK(b2.global_queued(cands[0].local, 0) == 100000);
        CHECK(b2.global_queued(cands[0].local, 31 * kMilli) == 0);
    }
}

TEST_CASE("config validation rejects bad constants") {
    TopologyGraph g = load_topology(tiered_doc(1, 0));
    SchedulerConfig cfg;
    cfg.min_slice_size = 1024;
    CHECK_THROWS_AS(SliceScheduler(&g, cfg), ConfigError);
    cfg = SchedulerConfig{};
    cfg.ewma_alpha = 0.0;
    CHECK_THROWS_AS(SliceScheduler(&g, cfg), ConfigError);
    cfg = SchedulerConfig{};
    cfg.tolerance = 0.0;
    CHECK_THROWS_AS(SliceScheduler(&g, cfg), ConfigError);
    cfg = SchedulerConfig{};
    cfg.penalties.tier2 = std::nullopt;
    cfg.penalties.tier3 = 5.0;  // non-monotone: gap below a schedulable tier
    CHECK_THROWS_AS(SliceScheduler(&g, cfg), ConfigError);
}
