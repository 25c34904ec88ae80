#pragma once

// The application-facing engine: batch API, submission rings, worker pool
// with per-rail ownership, opportunistic post batching, timeout scanning,
// hierarchical completion counters, staged-route pipelining, retry and
// substitution driving. submitTransfer returns before any data moves.

#include <deque>
#include <map>
#include <memory>
#include <thread>
#include <unordered_map>

#include "spray/backend.hpp"
#include "spray/common.hpp"
#include "spray/fabric.hpp"
#include "spray/orchestrator.hpp"
#include "spray/resilience.hpp"
#include "spray/ring.hpp"
#include "spray/scheduler.hpp"
#include "spray/telemetry.hpp"

namespace spray {

class SimBackend;
class MemoryBackend;

class InvalidRangeError : public EngineError {
public:
    explicit InvalidRangeError(const std::string& what) : EngineError(what) {}
};

enum class ClockMode { kVirtual, kReal };

enum class BatchState { kInFlight, kComplete, kFailed };

const char* batch_state_name(BatchState s);

struct BatchStatus {
    BatchState state = BatchState::kComplete;
    std::uint64_t remaining = 0;
    std::string failure_reason;
};

struct EngineOptions {
    std::string topology_json;  // one of topology_json / topology_file
    std::string topology_file;
    std::vector<std::string> backends = {"sim"};
    ClockMode clock_mode = ClockMode::kVirtual;
    std::uint32_t workers = 0;  // 0 = one per rail (real mode); virtual mode always runs 1
    SchedulerConfig scheduler;
    ResilienceConfig resilience;
    bool sim_device_capable = true;
    std::uint32_t sim_inflight_window = 64;
    bool memory_cross_node = true;
    Bytes staging_pool_bytes = 64ULL << 20;
    Bytes staging_chunk_bytes = 4ULL << 20;
    std::uint32_t staging_ring_depth = 4;
    std::uint32_t burst = 32;
    std::uint32_t ring_capacity = 8192;
    bool stats = true;
    Nanos stats_window = 10 * kMilli;
    std::uint64_t seed = 1;
    GlobalLoadBoard* load_board = nullptr;
    std::string instance_id = "engine0";
};

// Parses the documented engine config document: topology reference, backends
// to load, worker count, clock mode, scheduler/resilience constants, staging
// sizes. Unknown keys are rejected so config drift fails loudly.
EngineOptions engine_options_from_json(const std::string& json_text);

struct TransferRequest {
    std::string src_segment;
    Bytes src_offset = 0;
    std::string dst_segment;
    Bytes dst_offset = 0;
    Bytes length = 0;
    Direction direction = Direction::kWrite;
};

// (virtual time, chunk index, stage index) markers for pipeline assertions.
struct StageTracePoint {
    Nanos when = 0;
    std::uint32_t chunk = 0;
    std::uint32_t stage = 0;
    bool start = true;
};

class Engine {
public:
    explicit Engine(EngineOptions opts);
    ~Engine();

    void start();
    void stop();

    SegmentPtr register_segment(const SegmentDescriptor& desc);

    BatchId allocate_batch();
    TransferId submit_transfer(BatchId batch, const TransferRequest& req);
    BatchStatus batch_status(BatchId batch) const;
    void free_batch(BatchId batch);

    // Virtual mode: one pump step (post, complete, or advance time); false
    // when fully idle. Real mode: workers pump autonomously; pump() is a no-op
    // returning false.
    bool pump();
    // Convenience: pump/poll until the batch leaves in-flight or `limit`
    // engine time passes. Returns final status.
    BatchStatus await_batch(BatchId batch, Nanos limit = 120 * kSecond);
    void advance_virtual(Nanos t);  // test/CLI hook, virtual clock only

    Nanos now() const { return clock_->now(); }
    const Clock& clock() const { return *clock_; }
    const TopologyGraph& graph() const { return *graph_; }
    SegmentRegistry& registry() { return *registry_; }
    SliceScheduler& scheduler() { return *scheduler_; }
    ResilienceManager& resilience() { return *resilience_; }
    Telemetry& telemetry() { return *telemetry_; }
    Orchestrator& orchestrator() { return *orchestrator_; }
    TransportBackend* backend(const std::string& id);
    SimBackend* sim_backend();
    MemoryBackend* memory_backend();
    void set_fault_schedule(const FaultSchedule& schedule);

    Bytes bytes_dispatched() const { return bytes_dispatched_.load(std::memory_order_relaxed); }
    Bytes bytes_terminated() const { return bytes_terminated_.load(std::memory_order_relaxed); }
    std::uint64_t batches_failed() const { return batches_failed_.load(std::memory_order_relaxed); }
    std::vector<StageTracePoint> staged_trace(TransferId t) const;

private:
    enum class SliceKind { kDirect, kStage, kProbe };

    struct SliceRec {
        SliceId id = 0;
        TransferId transfer = 0;
        BatchId batch = 0;
        SliceKind kind = SliceKind::kDirect;
        std::string src_seg, dst_seg;
        Bytes src_off = 0, dst_off = 0, len = 0;
        Bytes rel_off = 0;  // offset within the user transfer
        Direction dir = Direction::kWrite;
        std::uint32_t attempt = 0;
        bool outstanding = false;
        bool terminal = false;
        bool cancelled = false;
        bool delivered = false;  // counted against the batch exactly once
        bool charged = false;    // holds queued-bytes accounting on cur_local
        bool model_dispatched = false;
        RailIndex cur_local = kNoRail, cur_remote = kNoRail;
        std::string cur_backend;
        double predicted_s = 0.0, x_norm = 0.0;
        Nanos dispatched_at = 0;  // decision time: the basis t_hat predicts from
        Nanos posted_at = 0;
        std::vector<std::pair<RailIndex, RailIndex>> failed_pairs;
        // staged linkage
        std::uint32_t chunk = 0, stage = 0;
        SliceId logical_id = 0;   // final-stage internal recs deliver this
        RailIndex probe_target = kNoRail;
    };

    struct StagedExec;

    struct TransferRec {
        TransferId id = 0;
        BatchId batch = 0;
        TransferRequest req;
        std::shared_ptr<TransferPlan> plan;
        std::vector<SliceId> logical;
        std::vector<SliceId> internals;  // stage slices issued for this transfer
        std::uint64_t remaining = 0;
        bool failed = false;
        std::unique_ptr<StagedExec> staged;
        std::vector<StageTracePoint> trace;
    };

    struct BatchControlBlock {
        BatchId id = 0;
        std::atomic<std::uint64_t> total{0};
        std::atomic<std::uint64_t> remaining{0};
        std::atomic<bool> failed{false};
        std::string failure_reason;  // set once, under state_mu_
    };

    struct StagingPool {
        std::string segment_id;
        SegmentPtr segment;
        std::vector<std::byte> mem;
        Bytes unit = 0;
        std::vector<bool> used;
        std::optional<Bytes> alloc_run(Bytes bytes);
        void free_run(Bytes offset, Bytes bytes);
    };

    struct Worker {
        std::uint32_t id = 0;
        std::unique_ptr<MpscRing<SliceId>> ring;
        // Per-rail submission contexts: backpressure on one rail must not
        // head-of-line block slices bound for its siblings.
        std::map<RailIndex, std::deque<SliceId>> rail_pending;
        std::vector<SliceId> overflow;  // ring-full fallback, merged next drain
        std::map<std::uint64_t, std::vector<std::pair<SliceId, std::uint32_t>>> wheel;
        std::thread thread;
    };

    // --- setup
    void load_backends();
    void ensure_service_segments();
    std::uint32_t worker_of_rail(RailIndex r) const;
    std::uint32_t owner_of_backend(const std::string& id) const;

    // --- dispatch paths (state_mu_ held)
    void activate_route_execution(TransferRec& t);
    void dispatch_logical(TransferRec& t, SliceRec& rec);
    bool dispatch_with_model(TransferRec& t, SliceRec& rec,
                             const std::vector<LocalCandidate>& candidates,
                             const std::string& backend);
    void dispatch_retry(SliceRec& rec, const std::vector<LocalCandidate>& candidates,
                        const std::string& backend);
    const std::vector<LocalCandidate>* route_candidates_for(const TransferRec& t,
                                                            const SliceRec& rec,
                                                            std::string* backend_out) const;
    void park(SliceId id);
    void enqueue_to_worker(SliceRec& rec);

    // --- staged machine (state_mu_ held)
    void build_staged_exec(TransferRec& t, const std::vector<SliceId>& todo);
    void staged_try_start_chunks(TransferRec& t);
    void staged_issue_stage(TransferRec& t, std::uint32_t chunk, std::uint32_t stage);
    void staged_on_slice_done(TransferRec& t, SliceRec& rec);
    StagingPool& pool_for(const std::string& node);

    // --- completion path (state_mu_ held)
    void process_completion(const CompletionEvent& ev);
    void finish_logical(SliceRec& logical_rec);
    void handle_failure(SliceRec& rec, SliceStatus status);
    void substitute_or_fail(TransferRec& t, const std::string& failed_backend);
    void reissue_on_active_route(TransferRec& t);
    void retire_execution(TransferRec& t);
    void fail_batch(BatchId b, const std::string& reason);
    static bool route_uses_backend(const Route& r, const std::string& backend);

    // --- pump phases
    bool worker_post_phase(std::uint32_t w);
    bool worker_poll_phase(std::uint32_t w);
    bool worker_timeout_phase(std::uint32_t w);
    bool control_phase();  // probes, periodic reset, parked, staged fill, board
    std::optional<Nanos> next_time_of_interest() const;
    void worker_loop(std::uint32_t w);

    EngineOptions opts_;
    std::unique_ptr<Clock> clock_;
    VirtualClock* vclock_ = nullptr;  // non-null in virtual mode
    std::unique_ptr<TopologyGraph> graph_;
    std::unique_ptr<SegmentRegistry> registry_;
    std::vector<std::pair<std::string, std::unique_ptr<TransportBackend>>> backends_;
    std::unique_ptr<SliceScheduler> scheduler_;
    std::unique_ptr<Telemetry> telemetry_;
    std::unique_ptr<ResilienceManager> resilience_;
    std::unique_ptr<Orchestrator> orchestrator_;

    mutable std::mutex state_mu_;
    std::unordered_map<SliceId, std::unique_ptr<SliceRec>> slices_;
    std::map<TransferId, std::unique_ptr<TransferRec>> transfers_;
    std::map<BatchId, std::unique_ptr<BatchControlBlock>> batches_;
    std::vector<SliceId> parked_;
    std::map<std::string, StagingPool> pools_;
    std::map<std::string, std::vector<std::byte>> scratch_mem_;
    std::vector<std::unique_ptr<Worker>> workers_;

    std::atomic<std::uint64_t> next_slice_{1};
    std::atomic<std::uint64_t> next_transfer_{1};
    std::atomic<std::uint64_t> next_batch_{1};
    std::atomic<Bytes> bytes_dispatched_{0};
    std::atomic<Bytes> bytes_terminated_{0};
    std::atomic<std::int64_t> live_work_{0};
    std::atomic<std::uint64_t> batches_failed_{0};
    std::atomic<bool> running_{false};
    bool started_ = false;
    Nanos last_reset_check_ = 0;
    Nanos next_board_publish_ = 0;
};

}  // namespace spray
