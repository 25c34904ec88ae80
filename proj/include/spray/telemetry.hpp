#pragma once

// Per-rail counters, service-time histograms, per-window throughput samples,
// and the health transition log. Feeds both the scheduler's reports and the
// CLI's CSV outputs. Hot-path updates are a handful of relaxed counters; the
// snapshot path never stalls workers for long.

#include <array>
#include <atomic>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "spray/backend.hpp"
#include "spray/common.hpp"
#include "spray/fabric.hpp"
#include "spray/scheduler.hpp"

namespace spray {

// Log-scaled service-time buckets covering 1 us .. ~16 s, two per octave.
class LatencyHistogram {
public:
    static constexpr int kBuckets = 48;
    void record(Nanos t) { counts_[bucket_for(t)]++; }
    std::uint64_t total() const;
    // Bucket-resolution quantile (geometric midpoint of the hit bucket).
    double percentile_us(double q) const;
    void merge(const LatencyHistogram& o);
    static int bucket_for(Nanos t);

private:
    std::array<std::uint32_t, kBuckets> counts_{};
};

struct WindowCell {
    Bytes bytes_ok = 0;
    Bytes bytes_failed = 0;
    LatencyHistogram hist;
    std::int64_t queue_close = 0;
    RailHealthState health_close = RailHealthState::kHealthy;
    bool touched = false;
};

struct HealthTransition {
    Nanos when = 0;
    RailIndex rail = kNoRail;
    RailHealthState from = RailHealthState::kHealthy;
    RailHealthState to = RailHealthState::kHealthy;
};

struct RailStatsView {
    std::string rail_id;
    Bytes bytes_posted = 0;
    Bytes bytes_ok = 0;
    Bytes bytes_failed = 0;
    std::int64_t queue_depth = 0;
    LatencyHistogram hist;
    std::vector<std::pair<std::uint64_t, WindowCell>> windows;  // sorted by window idx
};

struct TelemetrySnapshot {
    Nanos window_ns = 0;
    std::vector<RailStatsView> rails;
    std::vector<HealthTransition> transitions;

    Bytes total_ok() const;
    // One CSV row per (window, rail) with the documented column set.
    std::string to_csv() const;
    void write_csv(const std::string& path) const;
};

class Telemetry {
public:
    Telemetry(const TopologyGraph* graph, Nanos window = 10 * kMilli, bool enabled = true);

    void on_posted(RailIndex rail, Bytes bytes);
    void on_completion(RailIndex rail, Bytes bytes, SliceStatus status, Nanos t_obs, Nanos now,
                       std::int64_t queue_now, RailHealthState health);
    void on_health(RailIndex rail, RailHealthState from, RailHealthState to, Nanos now);

    bool enabled() const { return enabled_; }
    Nanos window_ns() const { return window_; }
    TelemetrySnapshot snapshot() const;

private:
    struct RailSlot {
        std::atomic<Bytes> posted{0};
        std::atomic<Bytes> ok{0};
        std::atomic<Bytes> failed{0};
        std::atomic<std::int64_t> queue{0};
        mutable std::mutex mu;  // windows + cumulative histogram
        LatencyHistogram hist;
        std::map<std::uint64_t, WindowCell> windows;
        std::uint64_t cached_window = ~0ULL;  // guarded by mu
        WindowCell* cached_cell = nullptr;
    };

    const TopologyGraph* graph_;
    Nanos window_;
    bool enabled_;
    std::vector<std::unique_ptr<RailSlot>> rails_;
    mutable std::mutex transitions_mu_;
    std::vector<HealthTransition> transitions_;
};

}  // namespace spray
