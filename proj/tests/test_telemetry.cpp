#include <sstream>

#include "doctest.h"
#include "spray/telemetry.hpp"

using namespace spray;

namespace {

std::string fabric(int rails = 3) {
    std::string out = R"({
  "nodes": [{"id": "a", "devices": [{"id": "a.mem", "kind": "host_memory"}]}],
  "rails": [)";
    for (int i = 0; i < rails; ++i) {
        if (i) out += ",";
        out += "\n    {\"id\": \"a.r" + std::to_string(i) +
               "\", \"node\": \"a\", \"bandwidth_bytes_per_sec\": 1e9, \"affinity\": \"direct\"}";
    }
    return out + "\n  ]\n}";
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("histogram percentiles land in the right bucket neighborhood") {
    LatencyHistogram h;
    for (int i = 0; i < 99; ++i) h.record(100 * kMicro);
    h.record(10 * kMilli);
    CHECK(h.total() == 100);
    CHECK(h.percentile_us(0.50) == doctest::Approx(100.0).epsilon(0.45));
    CHECK(h.percentile_us(0.99) == doctest::Approx(100.0).epsilon(0.45));  // 99th of 100
    CHECK(h.percentile_us(0.999) == doctest::Approx(10000.0).epsilon(0.45));
}

TEST_CASE("idle engine snapshots all zeros") {
    TopologyGraph g = load_topology(fabric());
    Telemetry tel(&g, 10 * kMilli, true);
    auto snap = tel.snapshot();
    REQUIRE(snap.rails.size() == 3);
    for (const auto& r : snap.rails) {
        CHECK(r.bytes_posted == 0);
        CHECK(r.bytes_ok == 0);
        CHECK(r.bytes_failed == 0);
        CHECK(r.windows.empty());
    }
    CHECK(snap.total_ok() == 0);
    // header only
    CHECK(split_lines(snap.to_csv()).size() == 1);
}

TEST_CASE("counters balance: ok + failed never exceeds posted, equal at quiescence") {
    TopologyGraph g = load_topology(fabric(1));
    Telemetry tel(&g, 10 * kMilli, true);
    Rng rng(5);
    Bytes posted = 0, done = 0;
    std::vector<Bytes> inflight;
    for (int i = 0; i < 500; ++i) {
        if (rng.next_below(2) == 0 || inflight.size() > 8) {
            if (!inflight.empty()) {
                Bytes b = inflight.back();
                inflight.pop_back();
                const bool ok = rng.next_below(4) != 0;
                tel.on_completion(0, b, ok ? SliceStatus::kOk : SliceStatus::kFailed,
                                  100 * kMicro, i * kMilli, 0, RailHealthState::kHealthy);
                done += b;
            }
        } else {
            Bytes b = 1 + rng.next_below(100000);
            tel.on_posted(0, b);
            posted += b;
            inflight.push_back(b);
        }
        auto snap = tel.snapshot();
        CHECK(snap.rails[0].bytes_ok + snap.rails[0].bytes_failed <= snap.rails[0].bytes_posted);
    }
    while (!inflight.empty()) {
        tel.on_completion(0, inflight.back(), SliceStatus::kOk, kMicro, kSecond, 0,
                          RailHealthState::kHealthy);
        done += inflight.back();
        inflight.pop_back();
    }
    auto snap = tel.snapshot();
    CHECK(snap.rails[0].bytes_ok + snap.rails[0].bytes_failed == snap.rails[0].bytes_posted);
    CHECK(snap.rails[0].bytes_posted == posted);
    // histogram total equals OK completion count
    std::uint64_t oks = 0;
    for (const auto& [w, cell] : snap.rails[0].windows) oks += cell.hist.total();
    CHECK(snap.rails[0].hist.total() == oks);
}

TEST_CASE("csv emits one row per window per rail with the documented columns") {
    TopologyGraph g = load_topology(fabric(3));
    Telemetry tel(&g, 10 * kMilli, true);
    // 10 windows of traffic on each of 3 rails
    for (int w = 0; w < 10; ++w)
        for (RailIndex r = 0; r < 3; ++r)
            tel.on_completion(r, 65536, SliceStatus::kOk, 150 * kMicro,
                              static_cast<Nanos>(w) * 10 * kMilli + kMilli, 1234,
                              RailHealthState::kHealthy);
    auto snap = tel.snapshot();
    auto lines = split_lines(snap.to_csv());
    CHECK(lines[0] ==
          "window_start_ms,rail_id,bytes_ok,bytes_failed,queue_depth_bytes,p50_us,p99_us,"
          "health_state,throughput_gbps");
    CHECK(lines.size() == 1 + 10 * 3);
    // spot check a row
    CHECK(lines[1].find("0,a.r0,65536,0,1234,") == 0);
}

TEST_CASE("csv round-trips through parse and re-dump") {
    TopologyGraph g = load_topology(fabric(2));
    Telemetry tel(&g, 10 * kMilli, true);
    Rng rng(17);
    for (int i = 0; i < 200; ++i) {
        const RailIndex r = static_cast<RailIndex>(rng.next_below(2));
        tel.on_completion(r, 1 + rng.next_below(1 << 20),
                          rng.next_below(5) ? SliceStatus::kOk : SliceStatus::kFailed,
                          rng.next_below(5 * kMilli) + 1, rng.next_below(300 * kMilli),
                          static_cast<std::int64_t>(rng.next_below(1 << 22)),
                          RailHealthState::kHealthy);
    }
    const std::string csv = tel.snapshot().to_csv();
    // parse numeric fields and re-serialize with the same formats
    auto lines = split_lines(csv);
    std::string rebuilt = lines[0] + "\n";
    char buf[256];
    for (std::size_t i = 1; i < lines.size(); ++i) {
        unsigned long long wstart, ok, failed;
        long long queue;
        double p50, p99, gbps;
        char rail[64], health[32];
        const int n = std::sscanf(lines[i].c_str(), "%llu,%63[^,],%llu,%llu,%lld,%lf,%lf,%31[^,],%lf",
                                  &wstart, rail, &ok, &failed, &queue, &p50, &p99, health, &gbps);
        REQUIRE(n == 9);
        std::snprintf(buf, sizeof buf, "%llu,%s,%llu,%llu,%lld,%.3f,%.3f,%s,%.6f\n", wstart, rail,
                      ok, failed, queue, p50, p99, health, gbps);
        rebuilt += buf;
    }
    CHECK(rebuilt == csv);
}

TEST_CASE("disabled telemetry records nothing") {
    TopologyGraph g = load_topology(fabric(1));
    Telemetry tel(&g, 10 * kMilli, false);
    tel.on_posted(0, 1000);
    tel.on_completion(0, 1000, SliceStatus::kOk, kMicro, 0, 0, RailHealthState::kHealthy);
    auto snap = tel.snapshot();
    CHECK(snap.rails[0].bytes_posted == 0);
    CHECK(snap.rails[0].windows.empty());
}
