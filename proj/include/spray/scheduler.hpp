#pragma once

// Slice decomposition and rail selection. Each slice goes to the rail with
// the lowest tier-penalized predicted completion time; predictions are a
// per-rail linear model over queued bytes, corrected by EWMA feedback from
// observed service times, with a periodic reset so stale penalties cannot
// pin a recovered rail out of the pool.

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "spray/common.hpp"
#include "spray/fabric.hpp"

namespace spray {

enum class Policy { kTelemetry, kRoundRobin, kHash };

const char* policy_name(Policy p);
std::optional<Policy> policy_from_name(const std::string& s);

// Penalty per tier; a disengaged value marks the tier unschedulable (kept
// distinct from float infinity so score arithmetic stays total).
struct TierPenalties {
    std::optional<double> tier1 = 1.0;
    std::optional<double> tier2 = 3.0;
    std::optional<double> tier3 = std::nullopt;

    std::optional<double> for_tier(int tier) const {
        switch (tier) {
            case 1: return tier1;
            case 2: return tier2;
            case 3: return tier3;
        }
        return std::nullopt;
    }
};

struct SchedulerConfig {
    Bytes min_slice_size = 64 * 1024;
    std::uint32_t max_slices_per_transfer = 4096;
    double tolerance = 0.05;  // gamma: relative tie window round-robined over
    TierPenalties penalties;
    double ewma_alpha = 0.2;
    Nanos reset_interval = 30 * kSecond;
    double diffusion_weight = 0.0;  // omega: 0 disables the global blend
    Policy policy = Policy::kTelemetry;
    double beta0_init_s = 0.0;
    double beta1_init = 1.0;
    // Per-event bound on the feedback correction, as a multiple of the
    // current beta1; one outlier moves the prediction at most this far.
    double feedback_clamp = 5.0;

    void validate() const;
};

enum class RailHealthState { kHealthy, kExcluded, kProbing };

const char* health_state_name(RailHealthState s);

// Cross-process-style load board: engine instances publish per-rail queue
// depths; readers blend the global sum with their local view. Entries with
// no heartbeat within 3 publish periods are ignored.
class GlobalLoadBoard {
public:
    explicit GlobalLoadBoard(Nanos publish_period = 10 * kMilli) : period_(publish_period) {}

    void publish(const std::string& instance, RailIndex rail, std::int64_t queued_bytes, Nanos now);
    std::int64_t global_queued(RailIndex rail, Nanos now) const;
    Nanos publish_period() const { return period_; }

private:
    struct Entry {
        std::int64_t queued = 0;
        Nanos heartbeat = 0;
    };
    Nanos period_;
    mutable std::mutex mu_;
    std::map<std::pair<std::string, RailIndex>, Entry> entries_;
};

struct PairOption {
    RailIndex remote = kNoRail;
    int tier = 3;
    bool affinity = false;  // the 1:1 topology-aligned partner
};

struct LocalCandidate {
    RailIndex local = kNoRail;
    std::vector<PairOption> pairs;
};

struct DispatchChoice {
    RailIndex local = kNoRail;
    RailIndex remote = kNoRail;
    int tier = 3;
    double predicted_s = 0.0;  // t_hat at dispatch
    double x_norm = 0.0;       // (A_d + L) / B_d at dispatch, feedback input
};

class SliceScheduler {
public:
    SliceScheduler(const TopologyGraph* graph, SchedulerConfig cfg,
                   GlobalLoadBoard* board = nullptr, std::string instance_id = "engine0");

    const SchedulerConfig& config() const { return cfg_; }

    // Slice cover of [0, total): uniform sizes, every slice at least the
    // configured minimum except possibly the last, at most max slices; when
    // the cap binds, slice size is ceil(total / max).
    static std::vector<std::pair<Bytes, Bytes>> decompose(Bytes total, const SchedulerConfig& cfg);

    // t_hat = beta0 + beta1 * (A + L) / B
    double predict_completion_s(RailIndex rail, Bytes length) const;

    // One scheduling decision. Returns nullopt when no eligible rail remains
    // (NoEligibleDevice). On success the chosen rail's queue is already
    // charged with the slice length.
    std::optional<DispatchChoice> choose_rail(Bytes length, Bytes offset,
                                              std::span<const LocalCandidate> candidates);

    // Affinity-preserving remote mapping with health fallback: the 1:1
    // partner when healthy, otherwise the best-tier healthy alternative.
    std::optional<PairOption> map_remote(std::span<const PairOption> pairs) const;

    // Accounting for dispatches that bypass the cost model (retries, probes).
    void charge(RailIndex rail, Bytes length);
    // Terminal event of any status releases the queued bytes.
    void release(RailIndex rail, Bytes length);

    // EWMA update from one OK completion; x_norm is the dispatch-time value.
    void feedback(RailIndex rail, double t_obs_s, double x_norm);

    void periodic_reset(Nanos now);
    void reset_rail(RailIndex rail, Nanos now);  // probe success path

    RailHealthState health(RailIndex rail) const {
        return rails_[rail].health.load(std::memory_order_acquire);
    }
    void set_health(RailIndex rail, RailHealthState s) {
        rails_[rail].health.store(s, std::memory_order_release);
    }
    std::int64_t queued_bytes(RailIndex rail) const {
        return rails_[rail].queued.load(std::memory_order_acquire);
    }
    double beta0(RailIndex rail) const { return rails_[rail].beta0.load(std::memory_order_acquire); }
    double beta1(RailIndex rail) const { return rails_[rail].beta1.load(std::memory_order_acquire); }
    std::size_t rail_count() const { return rails_.size(); }

    void publish_to_board(Nanos now);

private:
    struct RailCostState {
        double bandwidth = 1.0;
        int base_tier = 1;
        std::atomic<std::int64_t> queued{0};
        std::atomic<double> beta0{0.0};
        std::atomic<double> beta1{1.0};
        std::atomic<double> min_obs_s{0.0};
        std::atomic<bool> has_obs{false};
        std::atomic<Nanos> last_reset{0};
        std::atomic<RailHealthState> health{RailHealthState::kHealthy};
    };

    double effective_queued(RailIndex rail) const;

    const TopologyGraph* graph_;
    SchedulerConfig cfg_;
    GlobalLoadBoard* board_;
    std::string instance_id_;
    std::vector<RailCostState> rails_;
    std::atomic<std::uint64_t> rr_cursor_{0};
    Nanos board_now_hint_ = 0;
};

}  // namespace spray
