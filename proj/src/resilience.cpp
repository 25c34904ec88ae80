#include "spray/resilience.hpp"

#include <algorithm>

namespace spray {

void ResilienceConfig::validate() const {
    if (failure_threshold < 1) throw ConfigError("failure threshold must be >= 1");
    if (degradation_ratio <= 1.0) throw ConfigError("degradation ratio must be > 1");
    if (degradation_events < 1) throw ConfigError("degradation events must be >= 1");
    if (probe_successes_needed < 1) throw ConfigError("probe successes must be >= 1");
    if (probe_bytes == 0) throw ConfigError("probe bytes must be > 0");
    if (max_attempts < 1) throw ConfigError("max attempts must be >= 1");
    if (probe_backoff_mult < 1.0) throw ConfigError("probe backoff mult must be >= 1");
}

ResilienceManager::ResilienceManager(const TopologyGraph* graph, SliceScheduler* scheduler,
                                     Telemetry* telemetry, ResilienceConfig cfg)
    : graph_(graph), scheduler_(scheduler), telemetry_(telemetry), cfg_(cfg),
      rails_(graph->rail_count()), partners_(graph->rail_count()) {
    cfg_.validate();
    // Probe counterparts: same-backend rails on other nodes, the 1:1 affinity
    // partner first, then by (node, rail id). Node-local backends probe
    // against themselves.
    for (RailIndex i = 0; i < graph_->rail_count(); ++i) {
        const RailDecl& r = graph_->rail(i);
        const auto& own = graph_->rails_on(r.node, r.backend);
        std::size_t my_pos = 0;
        for (std::size_t k = 0; k < own.size(); ++k)
            if (own[k] == i) my_pos = k;
        std::vector<std::string> other_nodes;
        for (const NodeDecl& n : graph_->nodes())
            if (n.id != r.node && !graph_->rails_on(n.id, r.backend).empty())
                other_nodes.push_back(n.id);
        std::sort(other_nodes.begin(), other_nodes.end());
        for (const std::string& n : other_nodes) {
            const auto& theirs = graph_->rails_on(n, r.backend);
            partners_[i].push_back(theirs[my_pos % theirs.size()]);
            for (RailIndex t : theirs)
                if (t != theirs[my_pos % theirs.size()]) partners_[i].push_back(t);
        }
        if (partners_[i].empty()) partners_[i].push_back(i);
    }
}

void ResilienceManager::exclude(RailIndex rail, Nanos now) {
    const RailHealthState prev = scheduler_->health(rail);
    if (prev == RailHealthState::kExcluded) return;
    scheduler_->set_health(rail, RailHealthState::kExcluded);
    telemetry_->on_health(rail, prev, RailHealthState::kExcluded, now);
    RailRec& rec = rails_[rail];
    rec.excluded_at = now;
    rec.probe_streak = 0;
    rec.backoff = 0;
    rec.next_probe = now + backoff_interval(0);
    exclusions_++;
}

void ResilienceManager::reintegrate(RailIndex rail, Nanos now) {
    const RailHealthState prev = scheduler_->health(rail);
    scheduler_->set_health(rail, RailHealthState::kHealthy);
    scheduler_->reset_rail(rail, now);  // cost cleared on re-admission
    telemetry_->on_health(rail, prev, RailHealthState::kHealthy, now);
    RailRec& rec = rails_[rail];
    rec.consec_failures = 0;
    rec.degradation_count = 0;
    rec.probe_streak = 0;
    rec.backoff = 0;
}

void ResilienceManager::observe(RailIndex local, RailIndex remote, SliceStatus status,
                                double t_obs_s, double predicted_s, Nanos now) {
    auto count_failure = [&](RailIndex r) {
        if (scheduler_->health(r) != RailHealthState::kHealthy) return;
        RailRec& rec = rails_[r];
        rec.consec_failures++;
        if (rec.consec_failures >= cfg_.failure_threshold) exclude(r, now);
    };
    if (status != SliceStatus::kOk) {
        count_failure(local);
        if (remote != kNoRail && remote != local) count_failure(remote);
        return;
    }
    rails_[local].consec_failures = 0;
    if (remote != kNoRail && remote != local) rails_[remote].consec_failures = 0;

    // Implicit signal: sustained slowness against this rail's own prediction.
    if (scheduler_->health(local) == RailHealthState::kHealthy && predicted_s > 0.0) {
        RailRec& rec = rails_[local];
        if (t_obs_s >= cfg_.degradation_min_t_obs_s &&
            t_obs_s / predicted_s > cfg_.degradation_ratio) {
            rec.degradation_count++;
            if (rec.degradation_count >= cfg_.degradation_events) exclude(local, now);
        } else {
            rec.degradation_count = 0;
        }
    }
}

void ResilienceManager::observe_probe(RailIndex probed, SliceStatus status, Nanos now) {
    RailRec& rec = rails_[probed];
    rec.probe_inflight = false;
    if (scheduler_->health(probed) == RailHealthState::kHealthy) return;
    if (status == SliceStatus::kOk) {
        rec.probe_streak++;
        if (rec.probe_streak >= cfg_.probe_successes_needed) {
            reintegrate(probed, now);
        } else {
            rec.next_probe = now;  // confirming probe goes out immediately
        }
    } else {
        const RailHealthState prev = scheduler_->health(probed);
        if (prev != RailHealthState::kExcluded) {
            scheduler_->set_health(probed, RailHealthState::kExcluded);
            telemetry_->on_health(probed, prev, RailHealthState::kExcluded, now);
        }
        rec.probe_streak = 0;
        rec.backoff = std::min(rec.backoff + 1, cfg_.probe_backoff_cap);
        rec.next_probe = now + backoff_interval(rec.backoff);
    }
}

Nanos ResilienceManager::backoff_interval(int level) const {
    double mult = 1.0;
    for (int i = 0; i < level; ++i) mult *= cfg_.probe_backoff_mult;
    return static_cast<Nanos>(static_cast<double>(cfg_.probe_interval) * mult);
}

std::vector<ProbeOrder> ResilienceManager::due_probes(Nanos now) {
    std::vector<ProbeOrder> out;
    for (RailIndex i = 0; i < rails_.size(); ++i) {
        const RailHealthState h = scheduler_->health(i);
        if (h == RailHealthState::kHealthy) continue;
        if (rails_[i].probe_inflight) continue;
        if (rails_[i].next_probe > now) continue;
        rails_[i].probe_inflight = true;
        ProbeOrder o;
        o.rail = i;
        o.partner = partners_[i].front();
        for (RailIndex p : partners_[i]) {
            if (scheduler_->health(p) == RailHealthState::kHealthy) {
                o.partner = p;
                break;
            }
        }
        if (h == RailHealthState::kExcluded) {
            scheduler_->set_health(i, RailHealthState::kProbing);
            telemetry_->on_health(i, RailHealthState::kExcluded, RailHealthState::kProbing, now);
        }
        out.push_back(o);
    }
    return out;
}

std::optional<Nanos> ResilienceManager::next_probe_time() const {
    std::optional<Nanos> t;
    for (RailIndex i = 0; i < rails_.size(); ++i) {
        if (scheduler_->health(i) == RailHealthState::kHealthy) continue;
        if (rails_[i].probe_inflight) continue;
        if (!t || rails_[i].next_probe < *t) t = rails_[i].next_probe;
    }
    return t;
}

void ResilienceManager::on_scheduler_reset() {
    for (RailRec& rec : rails_) {
        rec.degradation_count = 0;
        rec.backoff = 0;
    }
}

bool ResilienceManager::any_excluded() const {
    for (RailIndex i = 0; i < rails_.size(); ++i)
        if (scheduler_->health(i) != RailHealthState::kHealthy) return true;
    return false;
}

}  // namespace spray
