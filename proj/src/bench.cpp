#include "spray/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace spray {

void BenchScenario::validate() const {
    if (fabric_file.empty() && fabric_json.empty()) throw ConfigError("scenario: no fabric");
    if (block_sizes.empty() || batch_sizes.empty()) throw ConfigError("scenario: empty sweep");
    if (threads == 0) throw ConfigError("scenario: threads must be >= 1");
    if (iters == 0 && duration_s <= 0.0) throw ConfigError("scenario: need iters or duration");
    const bool sim_loaded =
        std::find(backends.begin(), backends.end(), "sim") != backends.end();
    if (clock_mode == ClockMode::kVirtual && !sim_loaded)
        throw ConfigError("virtual clock mode requires the simulated backend");
}

double CellResult::rail_share(const std::string& rail_id) const {
    Bytes total = 0, mine = 0;
    for (const auto& [id, b] : rail_bytes) {
        total += b;
        if (id == rail_id) mine = b;
    }
    return total == 0 ? 0.0 : static_cast<double>(mine) / static_cast<double>(total);
}

namespace {

struct Submitter {
    std::uint32_t id = 0;
    std::string src_seg, dst_seg;
    BatchId batch = 0;
    Nanos submitted_at = 0;
    std::uint32_t done = 0;
    bool active = false;
};

EngineOptions engine_options(const BenchScenario& sc, Policy policy) {
    EngineOptions eo;
    if (!sc.fabric_json.empty())
        eo.topology_json = sc.fabric_json;
    else
        eo.topology_file = sc.fabric_file;
    eo.backends = sc.backends;
    eo.clock_mode = sc.clock_mode;
    eo.scheduler = sc.scheduler;
    eo.scheduler.policy = policy;
    eo.resilience = sc.resilience;
    eo.seed = sc.seed;
    eo.stats = sc.stats;
    eo.stats_window = sc.stats_window;
    return eo;
}

void fill_pattern(std::byte* p, Bytes n, std::uint64_t seed) {
    Rng rng(seed);
    Bytes i = 0;
    for (; i + 8 <= n; i += 8) {
        const std::uint64_t v = rng.next_u64();
        std::memcpy(p + i, &v, 8);
    }
    for (; i < n; ++i) p[i] = static_cast<std::byte>(rng.next_u64());
}

double exact_percentile(std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double rank = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct CellRun {
    CellResult result;
    TelemetrySnapshot snapshot;
    std::uint64_t failures = 0;
};

// One (block, batch, threads) cell against a fresh engine. Virtual mode
// steps logical submitters in lockstep with the simulation; a fixed seed
// reproduces the run bit for bit.
CellRun run_cell(const BenchScenario& sc, Policy policy, Bytes block, std::uint32_t batch_n,
                 const FaultSchedule* faults, Nanos* fault_horizon) {
    Engine engine(engine_options(sc, policy));
    engine.start();
    if (faults) engine.set_fault_schedule(*faults);

    const auto& nodes = engine.graph().nodes();
    const std::string node_a = nodes.front().id;
    const std::string node_b = nodes.back().id;

    std::vector<std::byte> src_mem(block), dst_mem(block);
    fill_pattern(src_mem.data(), block, sc.seed ^ 0x517cc1b727220a95ULL);
    SegmentDescriptor sd;
    sd.id = "bench/src";
    sd.medium = Medium::kHostMemory;
    sd.node = node_a;
    sd.buffers = {BufferDesc{0, block, src_mem.data()}};
    engine.register_segment(sd);
    SegmentDescriptor dd;
    dd.id = "bench/dst";
    dd.medium = Medium::kHostMemory;
    dd.node = node_b;
    dd.buffers = {BufferDesc{0, block, dst_mem.data()}};
    engine.register_segment(dd);

    const std::uint32_t warmup = sc.iters ? std::max<std::uint32_t>(2, sc.iters / 8) : 2;
    const std::uint32_t total_iters = sc.iters ? sc.iters + warmup : 0;
    const Nanos run_until =
        sc.duration_s > 0.0 ? from_seconds(sc.duration_s) : 0;

    std::vector<Submitter> subs(sc.threads);
    for (std::uint32_t i = 0; i < sc.threads; ++i) subs[i].id = i;

    auto issue = [&](Submitter& s) {
        s.batch = engine.allocate_batch();
        for (std::uint32_t b = 0; b < batch_n; ++b) {
            TransferRequest req;
            req.src_segment = "bench/src";
            req.src_offset = 0;
            req.dst_segment = "bench/dst";
            req.dst_offset = 0;
            req.length = block;
            req.direction = Direction::kWrite;
            engine.submit_transfer(s.batch, req);
        }
        s.submitted_at = engine.now();
        s.active = true;
    };

    std::vector<double> latencies_us;
    Nanos measure_start = 0;
    Bytes measured_bytes = 0;
    std::uint64_t visible_failures = 0;

    for (Submitter& s : subs) issue(s);

    auto pump_all = [&] {
        bool alive = true;
        while (alive) {
            bool any_done = false;
            for (Submitter& s : subs) {
                if (!s.active) continue;
                BatchStatus st = engine.batch_status(s.batch);
                if (st.state == BatchState::kInFlight) continue;
                if (st.state == BatchState::kFailed) visible_failures++;
                s.active = false;
                s.done++;
                any_done = true;
                const double lat_us =
                    static_cast<double>(engine.now() - s.submitted_at) / 1e3;
                const bool in_window = total_iters ? s.done > warmup
                                                   : engine.now() / 4 >= run_until / 16;
                if (in_window) {
                    latencies_us.push_back(lat_us);
                    measured_bytes += static_cast<Bytes>(block) * batch_n;
                    if (measure_start == 0) measure_start = s.submitted_at;
                }
                engine.free_batch(s.batch);
            }
            if (any_done) {
                for (Submitter& s : subs) {
                    if (s.active) continue;
                    const bool more = total_iters ? s.done < total_iters
                                                  : engine.now() < run_until;
                    if (more) issue(s);
                }
            }
            bool all_idle = std::none_of(subs.begin(), subs.end(),
                                         [](const Submitter& s) { return s.active; });
            if (all_idle) break;
            if (!engine.pump()) {
                // real-clock mode: workers progress on their own
                if (sc.clock_mode == ClockMode::kReal)
                    std::this_thread::sleep_for(std::chrono::microseconds(100));
                else
                    break;
            }
        }
        (void)alive;
    };
    pump_all();

    if (fault_horizon && *fault_horizon > engine.now() && engine.pump()) {
        // drain remaining simulated time so probe/recovery activity lands in
        // the telemetry windows
        while (engine.now() < *fault_horizon && engine.pump()) {
        }
    }

    CellRun out;
    out.result.block = block;
    out.result.batch = batch_n;
    out.result.threads = sc.threads;
    out.result.policy = policy;
    const Nanos t_end = engine.now();
    const double dur_s = to_seconds(t_end - measure_start);
    out.result.duration_s = dur_s;
    out.result.throughput_gbps =
        dur_s > 0 ? static_cast<double>(measured_bytes) * 8.0 / dur_s / 1e9 : 0.0;
    out.result.mean_us =
        latencies_us.empty()
            ? 0.0
            : std::accumulate(latencies_us.begin(), latencies_us.end(), 0.0) /
                  static_cast<double>(latencies_us.size());
    std::vector<double> tmp = latencies_us;
    out.result.p50_us = exact_percentile(tmp, 0.50);
    out.result.p90_us = exact_percentile(tmp, 0.90);
    out.result.p99_us = exact_percentile(tmp, 0.99);
    out.snapshot = engine.telemetry().snapshot();
    for (const RailStatsView& r : out.snapshot.rails)
        out.result.rail_bytes.emplace_back(r.rail_id, r.bytes_ok);
    out.failures = visible_failures;
    engine.stop();
    return out;
}

}  // namespace

SweepReport run_sweep(const BenchScenario& scenario) {
    scenario.validate();
    FaultSchedule faults;
    const FaultSchedule* fp = nullptr;
    if (!scenario.faults_json.empty()) {
        faults = FaultSchedule::parse(scenario.faults_json);
        fp = &faults;
    } else if (!scenario.faults_file.empty()) {
        faults = FaultSchedule::load_file(scenario.faults_file);
        fp = &faults;
    }
    SweepReport rep;
    for (Bytes block : scenario.block_sizes)
        for (std::uint32_t batch : scenario.batch_sizes)
            rep.cells.push_back(run_cell(scenario, scenario.policy, block, batch, fp, nullptr).result);
    return rep;
}

TimelineReport run_failure_timeline(const BenchScenario& scenario) {
    if (scenario.faults_json.empty() && scenario.faults_file.empty())
        throw ConfigError("failure timeline requires a fault schedule");
    FaultSchedule faults = scenario.faults_json.empty()
                               ? FaultSchedule::load_file(scenario.faults_file)
                               : FaultSchedule::parse(scenario.faults_json);
    Nanos horizon = 0;
    for (const FaultEntry& f : faults.entries) horizon = std::max(horizon, f.end);
    horizon += kSecond + kSecond / 2;

    BenchScenario sc = scenario;
    sc.iters = 0;
    if (sc.duration_s <= 0.0) sc.duration_s = to_seconds(horizon);
    sc.validate();

    CellRun run = run_cell(sc, sc.policy, sc.block_sizes.front(), sc.batch_sizes.front(), &faults,
                           &horizon);
    TimelineReport rep;
    rep.snapshot = run.snapshot;
    rep.app_visible_failures = run.failures;

    // Baseline plateau: mean window throughput before the first fault.
    Nanos first_fault = horizon;
    for (const FaultEntry& f : faults.entries) first_fault = std::min(first_fault, f.start);
    const std::uint64_t wmax = first_fault / rep.snapshot.window_ns;
    double sum = 0.0;
    std::uint64_t n = 0;
    for (const RailStatsView& r : rep.snapshot.rails) {
        for (const auto& [w, cell] : r.windows) {
            if (w + 1 >= wmax || w < wmax / 4) continue;
            sum += static_cast<double>(cell.bytes_ok);
            n = std::max<std::uint64_t>(n, w + 1);
        }
    }
    const std::uint64_t base_windows = wmax > wmax / 4 ? wmax - 1 - wmax / 4 : 1;
    rep.baseline_gbps = base_windows
                            ? sum * 8.0 / (static_cast<double>(base_windows) *
                                           to_seconds(rep.snapshot.window_ns)) /
                                  1e9
                            : 0.0;
    return rep;
}

SensitivityReport run_sensitivity(const BenchScenario& scenario,
                                  const std::vector<double>& p1_values) {
    scenario.validate();
    SensitivityReport rep;
    for (double p1 : p1_values) {
        BenchScenario sc = scenario;
        sc.scheduler.penalties.tier2 = p1;
        CellRun run = run_cell(sc, sc.policy, sc.block_sizes.front(), sc.batch_sizes.front(),
                               nullptr, nullptr);
        SensitivityPoint pt;
        pt.p1 = p1;
        pt.cell = run.result;
        Bytes total = 0, non1 = 0;
        Engine probe(engine_options(sc, sc.policy));  // tier lookup only
        for (const auto& [rail_id, bytes] : run.result.rail_bytes) {
            total += bytes;
            auto idx = probe.graph().rail_index(rail_id);
            if (idx && probe.graph().tier(*idx) != 1) non1 += bytes;
        }
        pt.non_tier1_share = total ? static_cast<double>(non1) / static_cast<double>(total) : 0.0;
        rep.points.push_back(std::move(pt));
    }
    return rep;
}

std::string SweepReport::summary_csv() const {
    std::string out =
        "policy,block_bytes,batch,threads,throughput_gbps,mean_us,p50_us,p90_us,p99_us\n";
    char line[256];
    for (const CellResult& c : cells) {
        std::snprintf(line, sizeof line, "%s,%llu,%u,%u,%.6f,%.3f,%.3f,%.3f,%.3f\n",
                      policy_name(c.policy), static_cast<unsigned long long>(c.block), c.batch,
                      c.threads, c.throughput_gbps, c.mean_us, c.p50_us, c.p90_us, c.p99_us);
        out += line;
    }
    return out;
}

std::string SweepReport::rails_csv() const {
    std::string out = "policy,block_bytes,batch,rail_id,bytes_ok,share\n";
    char line[256];
    for (const CellResult& c : cells) {
        Bytes total = 0;
        for (const auto& [id, b] : c.rail_bytes) total += b;
        for (const auto& [id, b] : c.rail_bytes) {
            std::snprintf(line, sizeof line, "%s,%llu,%u,%s,%llu,%.6f\n", policy_name(c.policy),
                          static_cast<unsigned long long>(c.block), c.batch, id.c_str(),
                          static_cast<unsigned long long>(b),
                          total ? static_cast<double>(b) / static_cast<double>(total) : 0.0);
            out += line;
        }
    }
    return out;
}

std::string SweepReport::table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %12s %6s %8s %14s %10s %10s %10s\n", "policy",
                  "block", "batch", "threads", "thr(Gbps)", "p50(us)", "p90(us)", "p99(us)");
    out += line;
    for (const CellResult& c : cells) {
        std::snprintf(line, sizeof line, "%-10s %12llu %6u %8u %14.3f %10.1f %10.1f %10.1f\n",
                      policy_name(c.policy), static_cast<unsigned long long>(c.block), c.batch,
                      c.threads, c.throughput_gbps, c.p50_us, c.p90_us, c.p99_us);
        out += line;
    }
    return out;
}

std::string TimelineReport::timeline_csv() const {
    // Aggregate per-window throughput plus health transition markers.
    std::string out = "window_start_ms,throughput_gbps,events\n";
    std::map<std::uint64_t, Bytes> per_window;
    for (const RailStatsView& r : snapshot.rails)
        for (const auto& [w, cell] : r.windows) per_window[w] += cell.bytes_ok;
    std::map<std::uint64_t, std::string> events;
    for (const HealthTransition& h : snapshot.transitions) {
        std::string& e = events[h.when / snapshot.window_ns];
        if (!e.empty()) e += ";";
        e += snapshot.rails[h.rail].rail_id;
        e += ":";
        e += health_state_name(h.to);
    }
    if (per_window.empty()) return out;
    const std::uint64_t last = per_window.rbegin()->first;
    const double wsec = to_seconds(snapshot.window_ns);
    char line[512];
    for (std::uint64_t w = 0; w <= last; ++w) {
        const Bytes b = per_window.count(w) ? per_window[w] : 0;
        const auto ev = events.find(w);
        std::snprintf(line, sizeof line, "%llu,%.6f,%s\n",
                      static_cast<unsigned long long>(w * (snapshot.window_ns / kMilli)),
                      static_cast<double>(b) * 8.0 / wsec / 1e9,
                      ev == events.end() ? "" : ev->second.c_str());
        out += line;
    }
    return out;
}

std::string SensitivityReport::csv() const {
    std::string out = "p1,block_bytes,p99_us,throughput_gbps,non_tier1_share\n";
    char line[256];
    for (const SensitivityPoint& p : points) {
        std::snprintf(line, sizeof line, "%.6g,%llu,%.3f,%.6f,%.6f\n", p.p1,
                      static_cast<unsigned long long>(p.cell.block), p.cell.p99_us,
                      p.cell.throughput_gbps, p.non_tier1_share);
        out += line;
    }
    return out;
}

std::string SensitivityReport::table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%10s %12s %12s %16s\n", "p1", "p99(us)", "thr(Gbps)",
                  "non-tier1 share");
    out += line;
    for (const SensitivityPoint& p : points) {
        std::snprintf(line, sizeof line, "%10.3g %12.1f %12.3f %16.4f\n", p.p1, p.cell.p99_us,
                      p.cell.throughput_gbps, p.non_tier1_share);
        out += line;
    }
    return out;
}

std::string canonical_fabric(const std::string& name) {
    auto rails = [](const std::string& node, int n, double bw, const std::string& extra) {
        std::string out;
        for (int i = 0; i < n; ++i) {
            if (!out.empty()) out += ",\n";
            out += "    {\"id\": \"" + node + ".r" + std::to_string(i) + "\", \"node\": \"" +
                   node + "\", \"bandwidth_bytes_per_sec\": " + std::to_string(bw) +
                   ", \"affinity\": \"direct\"" + extra + "}";
        }
        return out;
    };
    const std::string nodes =
        "  \"nodes\": [\n"
        "    {\"id\": \"a\", \"devices\": [{\"id\": \"a.mem\", \"kind\": \"host_memory\"},"
        " {\"id\": \"a.dev\", \"kind\": \"device_memory\"}]},\n"
        "    {\"id\": \"b\", \"devices\": [{\"id\": \"b.mem\", \"kind\": \"host_memory\"},"
        " {\"id\": \"b.dev\", \"kind\": \"device_memory\"}]}\n"
        "  ]";
    if (name == "uniform8") {
        return "{\n" + nodes + ",\n  \"rails\": [\n" + rails("a", 8, 1e9, "") + ",\n" +
               rails("b", 8, 1e9, "") + "\n  ]\n}\n";
    }
    if (name == "skewed8") {
        // Rails r6, r7 serve at one third of the declared rate; the scheduler
        // still sees the declared bandwidth and must learn the skew.
        auto skewed = [&](const std::string& node) {
            std::string out;
            for (int i = 0; i < 8; ++i) {
                if (!out.empty()) out += ",\n";
                const bool slow = i >= 6;
                out += "    {\"id\": \"" + node + ".r" + std::to_string(i) + "\", \"node\": \"" +
                       node + "\", \"bandwidth_bytes_per_sec\": 1e9, \"affinity\": \"direct\"" +
                       (slow ? ", \"sim\": {\"service_factor\": 0.3333333333333333}" : "") + "}";
            }
            return out;
        };
        return "{\n" + nodes + ",\n  \"rails\": [\n" + skewed("a") + ",\n" + skewed("b") +
               "\n  ]\n}\n";
    }
    if (name == "tiered") {
        // Per node: one direct rail, three same-socket rails with rare large
        // latency spikes, four cross-socket rails (reachable, never chosen).
        auto tiered = [&](const std::string& node) {
            std::string out;
            for (int i = 0; i < 8; ++i) {
                if (!out.empty()) out += ",\n";
                std::string aff = i == 0 ? "direct" : (i <= 3 ? "same_socket" : "cross_socket");
                std::string sim = i == 0
                                      ? "{\"latency_us\": 5}"
                                      : (i <= 3 ? "{\"latency_us\": 15, \"jitter_spike_prob\": "
                                                  "2.5e-04, \"jitter_spike_us\": 24000}"
                                                : "{\"latency_us\": 40}");
                out += "    {\"id\": \"" + node + ".r" + std::to_string(i) + "\", \"node\": \"" +
                       node + "\", \"bandwidth_bytes_per_sec\": 1e9, \"affinity\": \"" + aff +
                       "\", \"sim\": " + sim + "}";
            }
            return out;
        };
        return "{\n" + nodes + ",\n  \"rails\": [\n" + tiered("a") + ",\n" + tiered("b") +
               "\n  ]\n}\n";
    }
    throw ConfigError("unknown canonical fabric '" + name + "'");
}

}  // namespace spray
