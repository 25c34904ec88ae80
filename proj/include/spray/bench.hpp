#pragma once

// Benchmark scenarios: block/batch/thread sweeps, failure timelines, and
// penalty sensitivity runs against one engine instance. Virtual-clock
// scenarios step logical submitters in lockstep with the simulation, so a
// (scenario, seed) pair is bit-reproducible.

#include <string>
#include <vector>

#include "spray/engine.hpp"

namespace spray {

struct BenchScenario {
    std::string fabric_file;
    std::string fabric_json;  // alternative to fabric_file
    std::vector<std::string> backends = {"sim"};
    Policy policy = Policy::kTelemetry;
    std::vector<Bytes> block_sizes = {4ULL << 20};
    std::vector<std::uint32_t> batch_sizes = {1};
    std::uint32_t threads = 4;
    std::uint32_t iters = 64;      // transfers per submitter per cell
    double duration_s = 0.0;       // alternative to iters (engine time)
    std::uint64_t seed = 1;
    std::string faults_file;
    std::string faults_json;
    ClockMode clock_mode = ClockMode::kVirtual;
    SchedulerConfig scheduler;
    ResilienceConfig resilience;
    Nanos stats_window = 10 * kMilli;
    bool stats = true;

    void validate() const;
};

struct CellResult {
    Bytes block = 0;
    std::uint32_t batch = 1;
    std::uint32_t threads = 1;
    Policy policy = Policy::kTelemetry;
    double duration_s = 0.0;
    double throughput_gbps = 0.0;
    double mean_us = 0.0, p50_us = 0.0, p90_us = 0.0, p99_us = 0.0;
    std::vector<std::pair<std::string, Bytes>> rail_bytes;  // per-rail ok bytes

    double rail_share(const std::string& rail_id) const;
};

struct SweepReport {
    std::vector<CellResult> cells;
    std::string summary_csv() const;
    std::string rails_csv() const;
    std::string table() const;
};

struct TimelineReport {
    TelemetrySnapshot snapshot;
    std::uint64_t app_visible_failures = 0;
    double baseline_gbps = 0.0;  // pre-fault plateau
    std::string timeline_csv() const;
};

SweepReport run_sweep(const BenchScenario& scenario);
TimelineReport run_failure_timeline(const BenchScenario& scenario);

struct SensitivityPoint {
    double p1 = 1.0;  // tier-2 penalty under test
    CellResult cell;
    double non_tier1_share = 0.0;
};

struct SensitivityReport {
    std::vector<SensitivityPoint> points;
    std::string csv() const;
    std::string table() const;
};

SensitivityReport run_sensitivity(const BenchScenario& scenario, const std::vector<double>& p1_values);

// Canonical in-repo fabrics.
std::string canonical_fabric(const std::string& name);  // uniform8 | skewed8 | tiered

}  // namespace spray
