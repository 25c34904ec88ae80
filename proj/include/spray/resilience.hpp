#pragma once

// Link-level fault handling: failure/degradation counters drive soft
// exclusion, a background prober re-admits recovered rails, and retry policy
// constants bound per-slice re-execution. Transport-level substitution is the
// orchestrator's job; this module only decides rail health.

#include <optional>
#include <vector>

#include "spray/backend.hpp"
#include "spray/scheduler.hpp"
#include "spray/telemetry.hpp"

namespace spray {

struct ResilienceConfig {
    int failure_threshold = 3;        // consecutive FAILED/TIMEOUT -> excluded
    double degradation_ratio = 4.0;   // t_obs / t_hat counted as degraded
    int degradation_events = 8;       // sustained degraded OKs -> excluded
    double degradation_min_t_obs_s = 1e-3;  // ignore micro-latency outliers
    int probe_successes_needed = 2;
    Bytes probe_bytes = 4096;
    Nanos probe_interval = 1 * kSecond;  // 1 s test cadence; production uses 30 s
    double probe_backoff_mult = 1.0;     // per-failure interval growth (1 = constant)
    int probe_backoff_cap = 3;
    std::uint32_t max_attempts = 4;   // per slice, including the first
    Nanos slice_timeout = 500 * kMilli;

    void validate() const;
};

struct ProbeOrder {
    RailIndex rail = kNoRail;     // the excluded rail under test
    RailIndex partner = kNoRail;  // counterpart forming the probe pair
};

class ResilienceManager {
public:
    ResilienceManager(const TopologyGraph* graph, SliceScheduler* scheduler, Telemetry* telemetry,
                      ResilienceConfig cfg);

    const ResilienceConfig& config() const { return cfg_; }

    // Terminal event for a user/stage slice on pair (local, remote). Failures
    // count against both endpoints; degradation (slow OKs against own
    // prediction) counts against the serving local rail only.
    void observe(RailIndex local, RailIndex remote, SliceStatus status, double t_obs_s,
                 double predicted_s, Nanos now);

    // Terminal event for a probe slice; affects only the probed rail.
    void observe_probe(RailIndex probed, SliceStatus status, Nanos now);

    // Excluded rails whose probe timer elapsed, each paired with the best
    // healthy counterpart (affinity partner preferred).
    std::vector<ProbeOrder> due_probes(Nanos now);
    std::optional<Nanos> next_probe_time() const;

    // Periodic scheduler reset also clears accumulated penalties here:
    // degradation counters and probe backoff levels.
    void on_scheduler_reset();

    bool any_excluded() const;
    int backoff_level(RailIndex rail) const { return rails_[rail].backoff; }
    std::uint64_t exclusion_count() const { return exclusions_; }

private:
    struct RailRec {
        int consec_failures = 0;
        int degradation_count = 0;
        int backoff = 0;
        int probe_streak = 0;
        bool probe_inflight = false;
        Nanos next_probe = 0;
        Nanos excluded_at = 0;
    };

    void exclude(RailIndex rail, Nanos now);
    void reintegrate(RailIndex rail, Nanos now);
    Nanos backoff_interval(int level) const;

    const TopologyGraph* graph_;
    SliceScheduler* scheduler_;
    Telemetry* telemetry_;
    ResilienceConfig cfg_;
    std::vector<RailRec> rails_;
    std::vector<std::vector<RailIndex>> partners_;  // per rail, probe counterparts in order
    std::uint64_t exclusions_ = 0;
};

}  // namespace spray
