#pragma once

// Plan construction: resolve a declared transfer into ranked candidate
// routes. Direct routes enumerate feasible rail pairs per backend; when no
// direct path exists a staged route is synthesized through per-node host
// staging, pipelined chunk by chunk. Planning is pure: no backend resources
// are touched here.

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "spray/fabric.hpp"
#include "spray/scheduler.hpp"

namespace spray {

class NoRouteError : public EngineError {
public:
    explicit NoRouteError(const std::string& what) : EngineError(what) {}
};

// Which segment a stage endpoint refers to. Staging endpoints resolve to the
// engine-owned per-node staging pool at execution time.
enum class StageEndpoint { kUserSrc, kStagingSrcNode, kStagingDstNode, kUserDst };

struct StageSpec {
    StageEndpoint from = StageEndpoint::kUserSrc;
    StageEndpoint to = StageEndpoint::kUserDst;
    std::string backend;
    std::vector<LocalCandidate> candidates;
    int best_tier = 3;
};

struct Route {
    bool direct = true;
    int best_tier = 3;
    std::string backend;  // direct: the serving backend; staged: the cross-stage backend
    std::vector<LocalCandidate> candidates;  // direct routes only
    std::vector<StageSpec> stages;           // staged routes only
};

struct TransferPlan {
    std::vector<Route> routes;
    std::atomic<std::uint32_t> active{0};

    const Route& active_route() const { return routes[active.load(std::memory_order_acquire)]; }
    bool exhausted() const { return active.load(std::memory_order_acquire) >= routes.size(); }

    // Advance past every route that touches `failed_backend`. Returns false
    // when no route remains (AllRoutesExhausted). Never moves backward.
    bool advance_past_backend(const std::string& failed_backend);

private:
    std::mutex mu_;
    std::vector<std::string> fatal_;
};

class Orchestrator {
public:
    Orchestrator(const TopologyGraph* graph, const SegmentRegistry* registry,
                 std::vector<BackendCapabilities> caps);

    // Ranked routes for src->dst. Throws NoRouteError when no backend chain
    // connects the endpoints with a schedulable tier.
    std::shared_ptr<TransferPlan> build_plan(const Segment& src, const Segment& dst,
                                             Direction dir, const TierPenalties& penalties) const;

    const std::vector<BackendCapabilities>& capabilities() const { return caps_; }

private:
    std::vector<LocalCandidate> orient_candidates(const std::vector<ReachabilityEntry>& entries,
                                                  const std::string& backend, Direction dir,
                                                  const Segment& src, const Segment& dst) const;

    const TopologyGraph* graph_;
    const SegmentRegistry* registry_;
    std::vector<BackendCapabilities> caps_;
};

}  // namespace spray
