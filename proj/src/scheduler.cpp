#include "spray/scheduler.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace spray {

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::kTelemetry: return "telemetry";
        case Policy::kRoundRobin: return "rr";
        case Policy::kHash: return "hash";
    }
    return "?";
}

std::optional<Policy> policy_from_name(const std::string& s) {
    if (s == "telemetry") return Policy::kTelemetry;
    if (s == "rr" || s == "round_robin") return Policy::kRoundRobin;
    if (s == "hash") return Policy::kHash;
    return std::nullopt;
}

const char* health_state_name(RailHealthState s) {
    switch (s) {
        case RailHealthState::kHealthy: return "healthy";
        case RailHealthState::kExcluded: return "excluded";
        case RailHealthState::kProbing: return "probing";
    }
    return "?";
}

void SchedulerConfig::validate() const {
    if (min_slice_size < 4096) throw ConfigError("min slice size must be >= 4096");
    if (max_slices_per_transfer == 0) throw ConfigError("max slices must be >= 1");
    if (tolerance <= 0.0) throw ConfigError("tolerance must be > 0");
    if (ewma_alpha <= 0.0 || ewma_alpha > 1.0) throw ConfigError("alpha must be in (0, 1]");
    if (diffusion_weight < 0.0 || diffusion_weight > 1.0)
        throw ConfigError("diffusion weight must be in [0, 1]");
    auto check = [](const std::optional<double>& p, const char* name) {
        if (p && *p <= 0.0) throw ConfigError(std::string(name) + " penalty must be > 0");
    };
    check(penalties.tier1, "tier1");
    check(penalties.tier2, "tier2");
    check(penalties.tier3, "tier3");
    // Penalties must be monotonically non-decreasing in tier number, with the
    // unschedulable marker counting as the top.
    double prev = 0.0;
    for (int t = 1; t <= 3; ++t) {
        auto p = penalties.for_tier(t);
        if (!p) {
            for (int u = t + 1; u <= 3; ++u)
                if (penalties.for_tier(u))
                    throw ConfigError("tier penalties must be non-decreasing");
            break;
        }
        if (*p < prev) throw ConfigError("tier penalties must be non-decreasing");
        prev = *p;
    }
}

void GlobalLoadBoard::publish(const std::string& instance, RailIndex rail,
                              std::int64_t queued_bytes, Nanos now) {
    std::lock_guard lk(mu_);
    entries_[{instance, rail}] = Entry{queued_bytes, now};
}

std::int64_t GlobalLoadBoard::global_queued(RailIndex rail, Nanos now) const {
    std::lock_guard lk(mu_);
    std::int64_t sum = 0;
    const Nanos horizon = 3 * period_;
    for (const auto& [key, e] : entries_) {
        if (key.second != rail) continue;
        if (now > e.heartbeat && now - e.heartbeat > horizon) continue;  // stale
        sum += e.queued;
    }
    return sum;
}

SliceScheduler::SliceScheduler(const TopologyGraph* graph, SchedulerConfig cfg,
                               GlobalLoadBoard* board, std::string instance_id)
    : graph_(graph), cfg_(cfg), board_(board), instance_id_(std::move(instance_id)),
      rails_(graph->rail_count()) {
    cfg_.validate();
    for (RailIndex i = 0; i < rails_.size(); ++i) {
        rails_[i].bandwidth = graph_->rail(i).bandwidth_bps;
        rails_[i].base_tier = graph_->tier(i);
        rails_[i].beta0.store(cfg_.beta0_init_s);
        rails_[i].beta1.store(cfg_.beta1_init);
    }
}

std::vector<std::pair<Bytes, Bytes>> SliceScheduler::decompose(Bytes total,
                                                               const SchedulerConfig& cfg) {
    if (total == 0) return {};
    Bytes n = total / cfg.min_slice_size;
    if (n == 0) n = 1;
    if (n > cfg.max_slices_per_transfer) n = cfg.max_slices_per_transfer;
    const Bytes size = (total + n - 1) / n;  // ceil
    std::vector<std::pair<Bytes, Bytes>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Bytes off = 0; off < total; off += size)
        out.emplace_back(off, std::min(size, total - off));
    return out;
}

double SliceScheduler::effective_queued(RailIndex rail) const {
    const double local = static_cast<double>(rails_[rail].queued.load(std::memory_order_acquire));
    if (!board_ || cfg_.diffusion_weight <= 0.0) return local;
    const double global =
        static_cast<double>(board_->global_queued(rail, board_now_hint_));
    return (1.0 - cfg_.diffusion_weight) * local + cfg_.diffusion_weight * global;
}

double SliceScheduler::predict_completion_s(RailIndex rail, Bytes length) const {
    const RailCostState& st = rails_[rail];
    const double a = effective_queued(rail);
    return st.beta0.load(std::memory_order_acquire) +
           st.beta1.load(std::memory_order_acquire) *
               ((a + static_cast<double>(length)) / st.bandwidth);
}

std::optional<PairOption> SliceScheduler::map_remote(std::span<const PairOption> pairs) const {
    const PairOption* best = nullptr;
    for (const PairOption& p : pairs) {
        if (health(p.remote) != RailHealthState::kHealthy) continue;
        if (!cfg_.penalties.for_tier(p.tier)) continue;
        if (p.affinity) return p;
        if (!best || p.tier < best->tier ||
            (p.tier == best->tier && graph_->rail(p.remote).id < graph_->rail(best->remote).id))
            best = &p;
    }
    if (!best) return std::nullopt;
    return *best;
}

std::optional<DispatchChoice> SliceScheduler::choose_rail(
    Bytes length, Bytes offset, std::span<const LocalCandidate> candidates) {
    struct Scored {
        const LocalCandidate* cand;
        PairOption pair;
        double score;
        double predicted;
        double x_norm;
    };
    std::vector<Scored> eligible;
    eligible.reserve(candidates.size());
    for (const LocalCandidate& c : candidates) {
        if (health(c.local) != RailHealthState::kHealthy) continue;
        auto pair = map_remote(c.pairs);
        if (!pair) continue;
        auto penalty = cfg_.penalties.for_tier(pair->tier);
        if (!penalty) continue;
        const RailCostState& st = rails_[c.local];
        const double x = (effective_queued(c.local) + static_cast<double>(length)) / st.bandwidth;
        const double predicted = st.beta0.load(std::memory_order_acquire) +
                                 st.beta1.load(std::memory_order_acquire) * x;
        eligible.push_back(Scored{&c, *pair, *penalty * predicted, predicted, x});
    }
    if (eligible.empty()) return std::nullopt;  // NoEligibleDevice

    const Scored* picked = nullptr;
    switch (cfg_.policy) {
        case Policy::kTelemetry: {
            double s_min = eligible.front().score;
            for (const Scored& s : eligible) s_min = std::min(s_min, s.score);
            std::vector<const Scored*> window;
            for (const Scored& s : eligible)
                if (s.score <= (1.0 + cfg_.tolerance) * s_min) window.push_back(&s);
            picked = window[rr_cursor_.fetch_add(1, std::memory_order_relaxed) % window.size()];
            assert(picked->score <= (1.0 + cfg_.tolerance) * s_min);
            break;
        }
        case Policy::kRoundRobin:
            picked = &eligible[rr_cursor_.fetch_add(1, std::memory_order_relaxed) % eligible.size()];
            break;
        case Policy::kHash: {
            std::uint64_t h = offset;
            h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
            h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
            picked = &eligible[(h ^ (h >> 31)) % eligible.size()];
            break;
        }
    }
    rails_[picked->cand->local].queued.fetch_add(static_cast<std::int64_t>(length),
                                                 std::memory_order_acq_rel);
    DispatchChoice out;
    out.local = picked->cand->local;
    out.remote = picked->pair.remote;
    out.tier = picked->pair.tier;
    out.predicted_s = picked->predicted;
    out.x_norm = picked->x_norm;
    return out;
}

void SliceScheduler::charge(RailIndex rail, Bytes length) {
    rails_[rail].queued.fetch_add(static_cast<std::int64_t>(length), std::memory_order_acq_rel);
}

void SliceScheduler::release(RailIndex rail, Bytes length) {
    auto prev = rails_[rail].queued.fetch_sub(static_cast<std::int64_t>(length),
                                              std::memory_order_acq_rel);
    assert(prev >= static_cast<std::int64_t>(length));
    (void)prev;
}

void SliceScheduler::feedback(RailIndex rail, double t_obs_s, double x_norm) {
    if (x_norm <= 0.0) return;
    RailCostState& st = rails_[rail];
    const double alpha = cfg_.ewma_alpha;
    const double b0 = st.beta0.load(std::memory_order_acquire);
    const double b1 = st.beta1.load(std::memory_order_acquire);

    // beta0 tracks the smallest observed residual after the bandwidth term
    // (the per-rail latency floor); an exact prediction leaves it untouched.
    const double residual = std::max(0.0, t_obs_s - b1 * x_norm);
    double floor_obs = residual;
    if (st.has_obs.load(std::memory_order_acquire))
        floor_obs = std::min(st.min_obs_s.load(std::memory_order_acquire), residual);
    st.min_obs_s.store(floor_obs, std::memory_order_release);
    st.has_obs.store(true, std::memory_order_release);
    st.beta0.store((1.0 - alpha) * b0 + alpha * floor_obs, std::memory_order_release);

    // Correction ratio for the bandwidth slope, bounded per event so one
    // outlier cannot move the prediction more than (1-a) + a*clamp of itself.
    double ratio = (t_obs_s - b0) / x_norm;
    ratio = std::clamp(ratio, std::max(1e-9, b1 / cfg_.feedback_clamp), b1 * cfg_.feedback_clamp);
    st.beta1.store((1.0 - alpha) * b1 + alpha * ratio, std::memory_order_release);
}

void SliceScheduler::periodic_reset(Nanos now) {
    for (RailIndex i = 0; i < rails_.size(); ++i) {
        const Nanos last = rails_[i].last_reset.load(std::memory_order_acquire);
        if (now >= last && now - last >= cfg_.reset_interval) reset_rail(i, now);
    }
}

void SliceScheduler::reset_rail(RailIndex rail, Nanos now) {
    RailCostState& st = rails_[rail];
    st.beta0.store(cfg_.beta0_init_s, std::memory_order_release);
    st.beta1.store(cfg_.beta1_init, std::memory_order_release);
    st.has_obs.store(false, std::memory_order_release);
    st.min_obs_s.store(0.0, std::memory_order_release);
    st.last_reset.store(now, std::memory_order_release);
    // Queued bytes are real in-flight work and survive the reset.
}

void SliceScheduler::publish_to_board(Nanos now) {
    if (!board_) return;
    board_now_hint_ = now;
    for (RailIndex i = 0; i < rails_.size(); ++i)
        board_->publish(instance_id_, i, rails_[i].queued.load(std::memory_order_acquire), now);
}

}  // namespace spray
