#include "spray/orchestrator.hpp"

#include <algorithm>
#include <map>
#include <mutex>

namespace spray {

namespace {

bool route_uses(const Route& r, const std::string& backend) {
    if (r.direct) return r.backend == backend;
    for (const StageSpec& s : r.stages)
        if (s.backend == backend) return true;
    return false;
}

}  // namespace

bool TransferPlan::advance_past_backend(const std::string& failed_backend) {
    std::lock_guard lk(mu_);
    if (std::find(fatal_.begin(), fatal_.end(), failed_backend) == fatal_.end())
        fatal_.push_back(failed_backend);
    std::uint32_t idx = active.load(std::memory_order_acquire);
    auto bad = [&](const Route& r) {
        for (const std::string& b : fatal_)
            if (route_uses(r, b)) return true;
        return false;
    };
    while (idx < routes.size() && bad(routes[idx])) ++idx;
    active.store(idx, std::memory_order_release);
    return idx < routes.size();
}

Orchestrator::Orchestrator(const TopologyGraph* graph, const SegmentRegistry* registry,
                           std::vector<BackendCapabilities> caps)
    : graph_(graph), registry_(registry), caps_(std::move(caps)) {}

std::vector<LocalCandidate> Orchestrator::orient_candidates(
    const std::vector<ReachabilityEntry>& entries, const std::string& backend, Direction dir,
    const Segment& src, const Segment& dst) const {
    // The scheduling-local side is the initiator: src for WRITE, dst for READ.
    std::vector<LocalCandidate> out;
    auto position_in = [&](RailIndex r, const std::string& node) -> std::size_t {
        const auto& rails = graph_->rails_on(node, backend);
        for (std::size_t i = 0; i < rails.size(); ++i)
            if (rails[i] == r) return i;
        return 0;
    };
    for (const ReachabilityEntry& e : entries) {
        if (e.backend != backend) continue;
        if (dir == Direction::kRead && !e.read_ok) continue;
        if (dir == Direction::kWrite && !e.write_ok) continue;
        const RailIndex local = dir == Direction::kWrite ? e.local : e.remote;
        const RailIndex remote = dir == Direction::kWrite ? e.remote : e.local;
        const std::string& local_node = dir == Direction::kWrite ? src.node() : dst.node();
        const std::string& remote_node = dir == Direction::kWrite ? dst.node() : src.node();

        bool affinity;
        if (local == remote) {
            affinity = true;
        } else {
            const std::size_t li = position_in(local, local_node);
            const std::size_t ri = position_in(remote, remote_node);
            const std::size_t n = graph_->rails_on(remote_node, backend).size();
            affinity = n > 0 && (li % n) == ri;
        }

        auto it = std::find_if(out.begin(), out.end(),
                               [&](const LocalCandidate& c) { return c.local == local; });
        if (it == out.end()) {
            out.push_back(LocalCandidate{local, {}});
            it = std::prev(out.end());
        }
        it->pairs.push_back(PairOption{remote, e.tier, affinity});
    }
    std::sort(out.begin(), out.end(), [&](const LocalCandidate& a, const LocalCandidate& b) {
        return graph_->rail(a.local).id < graph_->rail(b.local).id;
    });
    return out;
}

static int best_pair_tier(const std::vector<LocalCandidate>& cands) {
    int t = 4;
    for (const LocalCandidate& c : cands)
        for (const PairOption& p : c.pairs) t = std::min(t, p.tier);
    return t;
}

static bool any_schedulable(const std::vector<LocalCandidate>& cands,
                            const TierPenalties& penalties) {
    for (const LocalCandidate& c : cands)
        for (const PairOption& p : c.pairs)
            if (penalties.for_tier(p.tier)) return true;
    return false;
}

std::shared_ptr<TransferPlan> Orchestrator::build_plan(const Segment& src, const Segment& dst,
                                                       Direction dir,
                                                       const TierPenalties& penalties) const {
    auto plan = std::make_shared<TransferPlan>();

    // Direct routes: one per backend that can serve the endpoints.
    auto entries = reachable_rails(*graph_, src, dst, caps_);
    std::vector<std::string> backends_seen;
    for (const ReachabilityEntry& e : entries)
        if (std::find(backends_seen.begin(), backends_seen.end(), e.backend) == backends_seen.end())
            backends_seen.push_back(e.backend);
    for (const std::string& b : backends_seen) {
        Route r;
        r.direct = true;
        r.backend = b;
        r.candidates = orient_candidates(entries, b, dir, src, dst);
        if (r.candidates.empty()) continue;
        if (!any_schedulable(r.candidates, penalties)) continue;
        r.best_tier = best_pair_tier(r.candidates);
        plan->routes.push_back(std::move(r));
    }

    // Staged synthesis: only when no direct route exists and a host-reachable
    // intermediary can bridge the endpoints.
    if (plan->routes.empty()) {
        const bool same_node = src.node() == dst.node();
        auto staging_seg = [&](const std::string& node) {
            return Segment::synthetic(*graph_, "__staging@" + node, Medium::kHostMemory, node);
        };
        auto stage_candidates = [&](const Segment& a, const Segment& b, const std::string& backend)
            -> std::vector<LocalCandidate> {
            auto es = reachable_rails(*graph_, a, b, caps_);
            return orient_candidates(es, backend, Direction::kWrite, a, b);
        };
        auto stage_backends = [&](const Segment& a, const Segment& b) {
            std::vector<std::string> out;
            for (const ReachabilityEntry& e : reachable_rails(*graph_, a, b, caps_))
                if (e.write_ok &&
                    std::find(out.begin(), out.end(), e.backend) == out.end())
                    out.push_back(e.backend);
            return out;
        };
        auto best_stage = [&](const Segment& a, const Segment& b, StageEndpoint from,
                              StageEndpoint to) -> std::optional<StageSpec> {
            StageSpec best;
            bool found = false;
            for (const std::string& backend : stage_backends(a, b)) {
                StageSpec s;
                s.from = from;
                s.to = to;
                s.backend = backend;
                s.candidates = stage_candidates(a, b, backend);
                if (s.candidates.empty() || !any_schedulable(s.candidates, penalties)) continue;
                s.best_tier = best_pair_tier(s.candidates);
                if (!found || s.best_tier < best.best_tier ||
                    (s.best_tier == best.best_tier && s.backend < best.backend)) {
                    best = std::move(s);
                    found = true;
                }
            }
            if (!found) return std::nullopt;
            return best;
        };

        if (same_node) {
            if (src.medium() != Medium::kHostMemory && dst.medium() != Medium::kHostMemory) {
                Segment stg = staging_seg(src.node());
                auto s0 = best_stage(src, stg, StageEndpoint::kUserSrc, StageEndpoint::kStagingSrcNode);
                if (s0) {
                    for (const std::string& backend : stage_backends(stg, dst)) {
                        StageSpec s1;
                        s1.from = StageEndpoint::kStagingSrcNode;
                        s1.to = StageEndpoint::kUserDst;
                        s1.backend = backend;
                        s1.candidates = stage_candidates(stg, dst, backend);
                        if (s1.candidates.empty() || !any_schedulable(s1.candidates, penalties))
                            continue;
                        s1.best_tier = best_pair_tier(s1.candidates);
                        Route r;
                        r.direct = false;
                        r.backend = backend;
                        r.stages = {*s0, std::move(s1)};
                        r.best_tier = std::max(s0->best_tier, r.stages[1].best_tier);
                        plan->routes.push_back(std::move(r));
                    }
                }
            }
        } else {
            Segment stg_src = staging_seg(src.node());
            Segment stg_dst = staging_seg(dst.node());
            const bool skip_first = src.medium() == Medium::kHostMemory;
            const bool skip_last = dst.medium() == Medium::kHostMemory;
            if (!(skip_first && skip_last)) {
                const Segment& cross_src = skip_first ? src : stg_src;
                const Segment& cross_dst = skip_last ? dst : stg_dst;
                const StageEndpoint cross_from =
                    skip_first ? StageEndpoint::kUserSrc : StageEndpoint::kStagingSrcNode;
                const StageEndpoint cross_to =
                    skip_last ? StageEndpoint::kUserDst : StageEndpoint::kStagingDstNode;

                std::optional<StageSpec> pre, post;
                bool ends_ok = true;
                if (!skip_first) {
                    pre = best_stage(src, stg_src, StageEndpoint::kUserSrc,
                                     StageEndpoint::kStagingSrcNode);
                    ends_ok = ends_ok && pre.has_value();
                }
                if (!skip_last) {
                    post = best_stage(stg_dst, dst, StageEndpoint::kStagingDstNode,
                                      StageEndpoint::kUserDst);
                    ends_ok = ends_ok && post.has_value();
                }
                if (ends_ok) {
                    for (const std::string& backend : stage_backends(cross_src, cross_dst)) {
                        StageSpec mid;
                        mid.from = cross_from;
                        mid.to = cross_to;
                        mid.backend = backend;
                        mid.candidates = stage_candidates(cross_src, cross_dst, backend);
                        if (mid.candidates.empty() || !any_schedulable(mid.candidates, penalties))
                            continue;
                        mid.best_tier = best_pair_tier(mid.candidates);
                        Route r;
                        r.direct = false;
                        r.backend = backend;
                        if (pre) r.stages.push_back(*pre);
                        r.stages.push_back(std::move(mid));
                        if (post) r.stages.push_back(*post);
                        r.best_tier = 0;
                        for (const StageSpec& s : r.stages)
                            r.best_tier = std::max(r.best_tier, s.best_tier);
                        plan->routes.push_back(std::move(r));
                    }
                }
            }
        }
    }

    if (plan->routes.empty())
        throw NoRouteError("NoRoute: no backend chain connects '" + src.id() + "' -> '" +
                           dst.id() + "'");
    std::sort(plan->routes.begin(), plan->routes.end(), [](const Route& a, const Route& b) {
        if (a.best_tier != b.best_tier) return a.best_tier < b.best_tier;
        if (a.direct != b.direct) return a.direct;
        return a.backend < b.backend;
    });
    return plan;
}

}  // namespace spray
