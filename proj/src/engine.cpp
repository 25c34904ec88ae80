#include "spray/engine.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

#include "spray/file_backend.hpp"
#include "spray/memory_backend.hpp"
#include "spray/sim_backend.hpp"
#include "spray/tcp_backend.hpp"

#include "json.hpp"

namespace spray {

constexpr Nanos kWheelBucket = 10 * kMilli;
constexpr Bytes kScratchBytes = 128 * 1024;
constexpr Nanos kResetCheckPeriod = 100 * kMilli;

const char* batch_state_name(BatchState s) {
    switch (s) {
        case BatchState::kInFlight: return "in-flight";
        case BatchState::kComplete: return "complete";
        case BatchState::kFailed: return "failed";
    }
    return "?";
}

// ---------------------------------------------------------------- staging

std::optional<Bytes> Engine::StagingPool::alloc_run(Bytes bytes) {
    const std::size_t need = static_cast<std::size_t>((bytes + unit - 1) / unit);
    std::size_t run = 0;
    for (std::size_t i = 0; i < used.size(); ++i) {
        run = used[i] ? 0 : run + 1;
        if (run == need) {
            const std::size_t first = i + 1 - need;
            for (std::size_t k = first; k <= i; ++k) used[k] = true;
            return static_cast<Bytes>(first) * unit;
        }
    }
    return std::nullopt;
}

void Engine::StagingPool::free_run(Bytes offset, Bytes bytes) {
    const std::size_t first = static_cast<std::size_t>(offset / unit);
    const std::size_t need = static_cast<std::size_t>((bytes + unit - 1) / unit);
    for (std::size_t k = first; k < first + need && k < used.size(); ++k) used[k] = false;
}

// Pipelined chunk execution state for one staged transfer.
struct Engine::StagedExec {
    struct Chunk {
        Bytes off = 0, len = 0;
        std::vector<SliceId> logical;
        int stage = -1;
        std::uint32_t remaining = 0;
        std::optional<Bytes> slotA, slotB;
        bool done = false;
    };
    std::vector<StageSpec> stages;
    std::string nodeA, nodeB;
    bool usesA = false, usesB = false;
    std::vector<Chunk> chunks;
    std::uint32_t next_chunk = 0;
    std::uint32_t active = 0;
};

// ---------------------------------------------------------------- setup

Engine::Engine(EngineOptions opts) : opts_(std::move(opts)) {
    if (opts_.clock_mode == ClockMode::kVirtual) {
        auto c = std::make_unique<VirtualClock>();
        vclock_ = c.get();
        clock_ = std::move(c);
    } else {
        clock_ = std::make_unique<WallClock>();
        if (opts_.resilience.slice_timeout == ResilienceConfig{}.slice_timeout)
            opts_.resilience.slice_timeout = 2 * kSecond;
    }
    if (!opts_.topology_json.empty())
        graph_ = std::make_unique<TopologyGraph>(load_topology(opts_.topology_json));
    else if (!opts_.topology_file.empty())
        graph_ = std::make_unique<TopologyGraph>(load_topology_file(opts_.topology_file));
    else
        throw ConfigError("engine: no topology given");

    registry_ = std::make_unique<SegmentRegistry>(graph_.get());
    load_backends();

    scheduler_ = std::make_unique<SliceScheduler>(graph_.get(), opts_.scheduler, opts_.load_board,
                                                  opts_.instance_id);
    telemetry_ = std::make_unique<Telemetry>(graph_.get(), opts_.stats_window, opts_.stats);
    resilience_ = std::make_unique<ResilienceManager>(graph_.get(), scheduler_.get(),
                                                      telemetry_.get(), opts_.resilience);
    std::vector<BackendCapabilities> caps;
    for (const auto& [name, b] : backends_) caps.push_back(b->capabilities());
    orchestrator_ = std::make_unique<Orchestrator>(graph_.get(), registry_.get(), std::move(caps));

    std::uint32_t n = 1;
    if (opts_.clock_mode == ClockMode::kReal) {
        n = opts_.workers ? opts_.workers
                          : std::min<std::uint32_t>(
                                std::max<std::uint32_t>(1, graph_->rail_count()), 8);
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        auto w = std::make_unique<Worker>();
        w->id = i;
        w->ring = std::make_unique<MpscRing<SliceId>>(opts_.ring_capacity);
        workers_.push_back(std::move(w));
    }
}

Engine::~Engine() { stop(); }

void Engine::load_backends() {
    for (const std::string& name : opts_.backends) {
        std::unique_ptr<TransportBackend> b;
        if (name == "sim") {
            SimBackendOptions so;
            so.seed = opts_.seed;
            so.inflight_window = opts_.sim_inflight_window;
            so.device_capable = opts_.sim_device_capable;
            b = std::make_unique<SimBackend>(graph_.get(), registry_.get(), clock_.get(), so);
        } else if (name == "memory") {
            b = std::make_unique<MemoryBackend>(registry_.get(), clock_.get(), opts_.memory_cross_node);
        } else if (name == "tcp") {
            b = std::make_unique<TcpBackend>(graph_.get(), registry_.get(), clock_.get());
        } else if (name == "file") {
            b = std::make_unique<FileBackend>(registry_.get(), clock_.get());
        } else {
            throw ConfigError("unknown backend '" + name + "'");
        }
        TransportBackend* raw = b.get();
        registry_->add_provider(MetadataProvider{
            name, [raw](const SegmentDescriptor& d) { return raw->attach_segment_metadata(d); }});
        backends_.emplace_back(name, std::move(b));
    }
    if (backends_.empty()) throw ConfigError("engine: no backends configured");
}

void Engine::start() {
    if (started_) return;
    started_ = true;
    for (auto& [name, b] : backends_) b->start();
    ensure_service_segments();
    running_.store(true, std::memory_order_release);
    if (opts_.clock_mode == ClockMode::kReal) {
        for (auto& w : workers_) {
            Worker* raw = w.get();
            w->thread = std::thread([this, raw] { worker_loop(raw->id); });
        }
    }
}

void Engine::stop() {
    if (!started_) return;
    running_.store(false, std::memory_order_release);
    for (auto& w : workers_)
        if (w->thread.joinable()) w->thread.join();
    for (auto& [name, b] : backends_) b->stop();
    started_ = false;
}

void Engine::ensure_service_segments() {
    // Per-node scratch for heartbeat probes; probe traffic never touches user
    // segments.
    for (const NodeDecl& n : graph_->nodes()) {
        scratch_mem_[n.id] = std::vector<std::byte>(kScratchBytes);
        SegmentDescriptor d;
        d.id = "__scratch@" + n.id;
        d.medium = Medium::kHostMemory;
        d.node = n.id;
        d.buffers = {BufferDesc{0, kScratchBytes, scratch_mem_[n.id].data()}};
        registry_->register_segment(d);
    }
}

Engine::StagingPool& Engine::pool_for(const std::string& node) {
    StagingPool& p = pools_[node];
    if (!p.segment) {
        p.segment_id = "__staging@" + node;
        p.mem.resize(opts_.staging_pool_bytes);
        p.unit = opts_.staging_chunk_bytes;
        p.used.assign(static_cast<std::size_t>(opts_.staging_pool_bytes / p.unit), false);
        SegmentDescriptor d;
        d.id = p.segment_id;
        d.medium = Medium::kHostMemory;
        d.node = node;
        d.buffers = {BufferDesc{0, opts_.staging_pool_bytes, p.mem.data()}};
        p.segment = registry_->register_segment(d);
    }
    return p;
}

std::uint32_t Engine::worker_of_rail(RailIndex r) const {
    return r % static_cast<std::uint32_t>(workers_.size());
}

std::uint32_t Engine::owner_of_backend(const std::string& id) const {
    for (std::size_t i = 0; i < backends_.size(); ++i)
        if (backends_[i].first == id)
            return static_cast<std::uint32_t>(i % workers_.size());
    return 0;
}

TransportBackend* Engine::backend(const std::string& id) {
    for (auto& [name, b] : backends_)
        if (name == id) return b.get();
    return nullptr;
}

SimBackend* Engine::sim_backend() { return dynamic_cast<SimBackend*>(backend("sim")); }
MemoryBackend* Engine::memory_backend() { return dynamic_cast<MemoryBackend*>(backend("memory")); }

void Engine::set_fault_schedule(const FaultSchedule& schedule) {
    SimBackend* s = sim_backend();
    if (!s) throw ConfigError("fault schedule requires the sim backend");
    s->set_fault_schedule(schedule);
}

SegmentPtr Engine::register_segment(const SegmentDescriptor& desc) {
    return registry_->register_segment(desc);
}

// ---------------------------------------------------------------- batches

BatchId Engine::allocate_batch() {
    if (!started_) throw EngineError("engine not started");
    if (!running_.load(std::memory_order_acquire)) throw EngineError("engine shutting down");
    const BatchId id = next_batch_.fetch_add(1, std::memory_order_relaxed);
    auto bcb = std::make_unique<BatchControlBlock>();
    bcb->id = id;
    std::lock_guard lk(state_mu_);
    batches_.emplace(id, std::move(bcb));
    return id;
}

BatchStatus Engine::batch_status(BatchId batch) const {
    std::lock_guard lk(state_mu_);
    auto it = batches_.find(batch);
    if (it == batches_.end()) throw EngineError("unknown batch");
    const BatchControlBlock& b = *it->second;
    BatchStatus st;
    st.remaining = b.remaining.load(std::memory_order_acquire);
    if (b.failed.load(std::memory_order_acquire)) {
        st.state = BatchState::kFailed;
        st.failure_reason = b.failure_reason;
    } else {
        st.state = st.remaining > 0 ? BatchState::kInFlight : BatchState::kComplete;
    }
    return st;
}

void Engine::free_batch(BatchId batch) {
    std::lock_guard lk(state_mu_);
    auto it = batches_.find(batch);
    if (it == batches_.end()) throw EngineError("unknown batch");
    const BatchControlBlock& b = *it->second;
    if (!b.failed.load() && b.total.load() > 0 && b.remaining.load() > 0)
        throw EngineError("cannot free an in-flight batch");
    for (auto tit = transfers_.begin(); tit != transfers_.end();) {
        if (tit->second->batch == batch) {
            for (SliceId s : tit->second->logical) slices_.erase(s);
            for (SliceId s : tit->second->internals) slices_.erase(s);
            tit = transfers_.erase(tit);
        } else {
            ++tit;
        }
    }
    batches_.erase(it);
}

// ---------------------------------------------------------------- submit

TransferId Engine::submit_transfer(BatchId batch, const TransferRequest& req) {
    if (!started_) throw EngineError("engine not started");
    std::lock_guard lk(state_mu_);
    auto bit = batches_.find(batch);
    if (bit == batches_.end()) throw EngineError("unknown batch");
    BatchControlBlock& bcb = *bit->second;
    if (bcb.failed.load()) throw EngineError("batch already failed");
    if (bcb.total.load() > 0 && bcb.remaining.load() == 0)
        throw EngineError("batch already complete");

    auto src = registry_->lookup(req.src_segment);
    auto dst = registry_->lookup(req.dst_segment);
    if (!src || !dst) throw EngineError("unknown segment id");
    if (req.length == 0) throw InvalidRangeError("zero-length transfer");
    if (!src->covers(req.src_offset, req.length))
        throw InvalidRangeError("source range not covered by one registered buffer");
    if (!dst->covers(req.dst_offset, req.length))
        throw InvalidRangeError("destination range not covered by one registered buffer");

    auto plan = orchestrator_->build_plan(*src, *dst, req.direction,
                                          opts_.scheduler.penalties);  // throws NoRouteError

    const TransferId tid = next_transfer_.fetch_add(1, std::memory_order_relaxed);
    auto t = std::make_unique<TransferRec>();
    t->id = tid;
    t->batch = batch;
    t->req = req;
    t->plan = std::move(plan);

    auto pieces = SliceScheduler::decompose(req.length, opts_.scheduler);
    for (const auto& [off, len] : pieces) {
        const SliceId sid = next_slice_.fetch_add(1, std::memory_order_relaxed);
        auto rec = std::make_unique<SliceRec>();
        rec->id = sid;
        rec->transfer = tid;
        rec->batch = batch;
        rec->kind = SliceKind::kDirect;
        rec->src_seg = req.src_segment;
        rec->dst_seg = req.dst_segment;
        rec->src_off = req.src_offset + off;
        rec->dst_off = req.dst_offset + off;
        rec->rel_off = off;
        rec->len = len;
        rec->dir = req.direction;
        t->logical.push_back(sid);
        slices_.emplace(sid, std::move(rec));
        live_work_.fetch_add(1, std::memory_order_relaxed);
    }
    t->remaining = t->logical.size();
    bcb.total.fetch_add(t->logical.size(), std::memory_order_acq_rel);
    bcb.remaining.fetch_add(t->logical.size(), std::memory_order_acq_rel);

    TransferRec& ref = *t;
    transfers_.emplace(tid, std::move(t));
    activate_route_execution(ref);
    return tid;
}

// ---------------------------------------------------------------- dispatch

void Engine::activate_route_execution(TransferRec& t) {
    if (t.plan->exhausted()) {
        fail_batch(t.batch, "AllRoutesExhausted");
        return;
    }
    const Route& r = t.plan->active_route();
    if (r.direct) {
        for (SliceId sid : t.logical) {
            SliceRec& rec = *slices_.at(sid);
            if (rec.delivered || rec.terminal || rec.cancelled) continue;
            dispatch_logical(t, rec);
        }
    } else {
        std::vector<SliceId> todo;
        for (SliceId sid : t.logical) {
            const SliceRec& rec = *slices_.at(sid);
            if (!rec.delivered && !rec.cancelled) todo.push_back(sid);
        }
        build_staged_exec(t, todo);
        staged_try_start_chunks(t);
    }
}

const std::vector<LocalCandidate>* Engine::route_candidates_for(const TransferRec& t,
                                                                const SliceRec& rec,
                                                                std::string* backend_out) const {
    if (t.plan->exhausted()) return nullptr;
    const Route& r = t.plan->active_route();
    if (r.direct) {
        if (backend_out) *backend_out = r.backend;
        return &r.candidates;
    }
    if (rec.kind != SliceKind::kStage || rec.stage >= r.stages.size()) return nullptr;
    if (backend_out) *backend_out = r.stages[rec.stage].backend;
    return &r.stages[rec.stage].candidates;
}

void Engine::dispatch_logical(TransferRec& t, SliceRec& rec) {
    std::string backend;
    const auto* cands = route_candidates_for(t, rec, &backend);
    if (!cands) {
        substitute_or_fail(t, rec.cur_backend.empty() ? std::string("?") : rec.cur_backend);
        return;
    }
    dispatch_with_model(t, rec, *cands, backend);
}

bool Engine::dispatch_with_model(TransferRec& t, SliceRec& rec,
                                 const std::vector<LocalCandidate>& candidates,
                                 const std::string& backend) {
    (void)t;
    auto choice = scheduler_->choose_rail(rec.len, rec.src_off, candidates);
    if (!choice) {
        park(rec.id);
        return false;
    }
    rec.cur_local = choice->local;
    rec.cur_remote = choice->remote;
    rec.cur_backend = backend;
    rec.predicted_s = choice->predicted_s;
    rec.x_norm = choice->x_norm;
    rec.model_dispatched = true;
    rec.dispatched_at = clock_->now();
    rec.charged = true;
    bytes_dispatched_.fetch_add(rec.len, std::memory_order_relaxed);
    enqueue_to_worker(rec);
    return true;
}

void Engine::dispatch_retry(SliceRec& rec, const std::vector<LocalCandidate>& candidates,
                            const std::string& backend) {
    // Reliability first: lowest pair tier, then rail ids; never a pair that
    // already failed for this slice while alternatives remain.
    struct Flat {
        RailIndex local, remote;
        int tier;
    };
    std::vector<Flat> flats;
    for (const LocalCandidate& c : candidates) {
        if (scheduler_->health(c.local) != RailHealthState::kHealthy) continue;
        for (const PairOption& p : c.pairs) {
            if (scheduler_->health(p.remote) != RailHealthState::kHealthy) continue;
            if (!opts_.scheduler.penalties.for_tier(p.tier)) continue;
            flats.push_back(Flat{c.local, p.remote, p.tier});
        }
    }
    if (flats.empty()) {
        park(rec.id);
        return;
    }
    std::sort(flats.begin(), flats.end(), [&](const Flat& a, const Flat& b) {
        if (a.tier != b.tier) return a.tier < b.tier;
        if (graph_->rail(a.local).id != graph_->rail(b.local).id)
            return graph_->rail(a.local).id < graph_->rail(b.local).id;
        return graph_->rail(a.remote).id < graph_->rail(b.remote).id;
    });
    const Flat* pick = nullptr;
    for (const Flat& f : flats) {
        const bool burned =
            std::find(rec.failed_pairs.begin(), rec.failed_pairs.end(),
                      std::make_pair(f.local, f.remote)) != rec.failed_pairs.end();
        if (!burned) {
            pick = &f;
            break;
        }
    }
    if (!pick) pick = &flats.front();  // no alternatives remain
    rec.cur_local = pick->local;
    rec.cur_remote = pick->remote;
    rec.cur_backend = backend;
    rec.predicted_s = 0.0;
    rec.x_norm = 0.0;
    rec.model_dispatched = false;
    rec.dispatched_at = clock_->now();
    rec.charged = true;
    scheduler_->charge(pick->local, rec.len);
    bytes_dispatched_.fetch_add(rec.len, std::memory_order_relaxed);
    enqueue_to_worker(rec);
}

void Engine::park(SliceId id) { parked_.push_back(id); }

void Engine::enqueue_to_worker(SliceRec& rec) {
    Worker& w = *workers_[worker_of_rail(rec.cur_local)];
    if (!w.ring->try_push(rec.id)) w.overflow.push_back(rec.id);
}

// ---------------------------------------------------------------- staged

void Engine::build_staged_exec(TransferRec& t, const std::vector<SliceId>& todo) {
    const Route& r = t.plan->active_route();
    auto ex = std::make_unique<StagedExec>();
    ex->stages = r.stages;
    for (const StageSpec& s : ex->stages) {
        if (s.from == StageEndpoint::kStagingSrcNode || s.to == StageEndpoint::kStagingSrcNode)
            ex->usesA = true;
        if (s.from == StageEndpoint::kStagingDstNode || s.to == StageEndpoint::kStagingDstNode)
            ex->usesB = true;
    }
    auto src = registry_->lookup(t.req.src_segment);
    auto dst = registry_->lookup(t.req.dst_segment);
    ex->nodeA = src->node();
    ex->nodeB = dst->node();

    StagedExec::Chunk cur;
    bool open = false;
    auto flush = [&] {
        if (open) {
            ex->chunks.push_back(cur);
            cur = StagedExec::Chunk{};
            open = false;
        }
    };
    for (SliceId sid : todo) {
        const SliceRec& l = *slices_.at(sid);
        const bool contiguous = open && cur.off + cur.len == l.rel_off;
        const bool fits = cur.len + l.len <= opts_.staging_chunk_bytes || cur.logical.empty();
        if (!open || !contiguous || !fits) {
            flush();
            cur.off = l.rel_off;
            cur.len = 0;
            open = true;
        }
        cur.len += l.len;
        cur.logical.push_back(sid);
    }
    flush();
    t.staged = std::move(ex);
}

void Engine::staged_try_start_chunks(TransferRec& t) {
    if (!t.staged || t.failed) return;
    StagedExec& ex = *t.staged;
    while (ex.active < opts_.staging_ring_depth && ex.next_chunk < ex.chunks.size()) {
        StagedExec::Chunk& c = ex.chunks[ex.next_chunk];
        if (ex.usesA && !c.slotA) {
            c.slotA = pool_for(ex.nodeA).alloc_run(c.len);
            if (!c.slotA) return;  // pool exhausted: backpressure, retried later
        }
        if (ex.usesB && !c.slotB) {
            c.slotB = pool_for(ex.nodeB).alloc_run(c.len);
            if (!c.slotB) {
                if (c.slotA) {
                    pool_for(ex.nodeA).free_run(*c.slotA, c.len);
                    c.slotA.reset();
                }
                return;
            }
        }
        ex.active++;
        const std::uint32_t ci = ex.next_chunk++;
        staged_issue_stage(t, ci, 0);
    }
}

void Engine::staged_issue_stage(TransferRec& t, std::uint32_t ci, std::uint32_t si) {
    StagedExec& ex = *t.staged;
    StagedExec::Chunk& c = ex.chunks[ci];
    const StageSpec& stage = ex.stages[si];
    c.stage = static_cast<int>(si);
    c.remaining = static_cast<std::uint32_t>(c.logical.size());
    t.trace.push_back(StageTracePoint{clock_->now(), ci, si, true});

    auto endpoint = [&](StageEndpoint e, Bytes rel_within) -> std::pair<std::string, Bytes> {
        switch (e) {
            case StageEndpoint::kUserSrc:
                return {t.req.src_segment, t.req.src_offset + c.off + rel_within};
            case StageEndpoint::kStagingSrcNode:
                return {pool_for(ex.nodeA).segment_id, *c.slotA + rel_within};
            case StageEndpoint::kStagingDstNode:
                return {pool_for(ex.nodeB).segment_id, *c.slotB + rel_within};
            case StageEndpoint::kUserDst:
                return {t.req.dst_segment, t.req.dst_offset + c.off + rel_within};
        }
        return {t.req.src_segment, 0};
    };

    const bool final_stage = si + 1 == ex.stages.size();
    for (SliceId lid : c.logical) {
        const SliceRec& l = *slices_.at(lid);
        const Bytes rel_within = l.rel_off - c.off;
        const SliceId sid = next_slice_.fetch_add(1, std::memory_order_relaxed);
        auto rec = std::make_unique<SliceRec>();
        rec->id = sid;
        rec->transfer = t.id;
        rec->batch = t.batch;
        rec->kind = SliceKind::kStage;
        auto [sseg, soff] = endpoint(stage.from, rel_within);
        auto [dseg, doff] = endpoint(stage.to, rel_within);
        rec->src_seg = sseg;
        rec->src_off = soff;
        rec->dst_seg = dseg;
        rec->dst_off = doff;
        rec->rel_off = l.rel_off;
        rec->len = l.len;
        rec->dir = Direction::kWrite;
        rec->chunk = ci;
        rec->stage = si;
        rec->logical_id = final_stage ? lid : 0;
        t.internals.push_back(sid);
        SliceRec& ref = *rec;
        slices_.emplace(sid, std::move(rec));
        live_work_.fetch_add(1, std::memory_order_relaxed);
        dispatch_with_model(t, ref, stage.candidates, stage.backend);
    }
}

void Engine::staged_on_slice_done(TransferRec& t, SliceRec& rec) {
    if (!t.staged) return;
    StagedExec& ex = *t.staged;
    if (rec.stage != static_cast<std::uint32_t>(ex.chunks[rec.chunk].stage)) return;  // stale
    if (rec.logical_id) {
        auto it = slices_.find(rec.logical_id);
        if (it != slices_.end()) finish_logical(*it->second);
    }
    StagedExec::Chunk& c = ex.chunks[rec.chunk];
    if (c.remaining == 0) return;
    if (--c.remaining > 0) return;
    t.trace.push_back(StageTracePoint{clock_->now(), rec.chunk, rec.stage, false});
    if (rec.stage + 1 < ex.stages.size()) {
        staged_issue_stage(t, rec.chunk, rec.stage + 1);
        return;
    }
    if (c.slotA) {
        pool_for(ex.nodeA).free_run(*c.slotA, c.len);
        c.slotA.reset();
    }
    if (c.slotB) {
        pool_for(ex.nodeB).free_run(*c.slotB, c.len);
        c.slotB.reset();
    }
    c.done = true;
    ex.active--;
    staged_try_start_chunks(t);
}

// ---------------------------------------------------------------- finish

void Engine::finish_logical(SliceRec& l) {
    if (l.delivered) return;
    l.delivered = true;
    if (!l.terminal) {
        l.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
    }
    auto tit = transfers_.find(l.transfer);
    if (tit != transfers_.end() && tit->second->remaining > 0) tit->second->remaining--;
    auto bit = batches_.find(l.batch);
    if (bit != batches_.end()) bit->second->remaining.fetch_sub(1, std::memory_order_acq_rel);
}

void Engine::fail_batch(BatchId b, const std::string& reason) {
    auto bit = batches_.find(b);
    if (bit == batches_.end()) return;
    BatchControlBlock& bcb = *bit->second;
    bool expected = false;
    if (bcb.failed.compare_exchange_strong(expected, true)) {
        bcb.failure_reason = reason;
        batches_failed_.fetch_add(1, std::memory_order_relaxed);
    }
    for (auto& [tid, tp] : transfers_) {
        if (tp->batch != b || tp->failed) continue;
        tp->failed = true;
        retire_execution(*tp);
    }
}

// Cancels every non-terminal slice of the transfer. Outstanding attempts are
// left to drain (their completion releases the charge); queued ones release
// immediately.
void Engine::retire_execution(TransferRec& t) {
    auto retire = [&](SliceId sid) {
        auto it = slices_.find(sid);
        if (it == slices_.end()) return;
        SliceRec& rec = *it->second;
        if (rec.terminal || rec.cancelled) return;
        rec.cancelled = true;
        if (rec.outstanding) return;  // completion path finishes the bookkeeping
        if (rec.charged) {
            scheduler_->release(rec.cur_local, rec.len);
            bytes_terminated_.fetch_add(rec.len, std::memory_order_relaxed);
            rec.charged = false;
        }
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
    };
    for (SliceId sid : t.logical) retire(sid);
    for (SliceId sid : t.internals) retire(sid);
    if (t.staged) {
        StagedExec& ex = *t.staged;
        for (StagedExec::Chunk& c : ex.chunks) {
            if (c.slotA) pool_for(ex.nodeA).free_run(*c.slotA, c.len);
            if (c.slotB) pool_for(ex.nodeB).free_run(*c.slotB, c.len);
            c.slotA.reset();
            c.slotB.reset();
        }
        t.staged.reset();
    }
}

void Engine::substitute_or_fail(TransferRec& t, const std::string& failed_backend) {
    if (t.failed) return;
    if (!t.plan->advance_past_backend(failed_backend)) {
        fail_batch(t.batch, "AllRoutesExhausted");
        return;
    }
    reissue_on_active_route(t);
}

void Engine::reissue_on_active_route(TransferRec& t) {
    // Retire old execution state, then re-deliver every undelivered byte
    // range on the new route. Absolute destination offsets make re-execution
    // idempotent even when an old in-flight attempt later lands.
    std::vector<std::pair<Bytes, Bytes>> undelivered;
    std::vector<SliceId> keep;
    for (SliceId sid : t.logical) {
        SliceRec& l = *slices_.at(sid);
        if (l.delivered) {
            keep.push_back(sid);
            continue;
        }
        undelivered.emplace_back(l.rel_off, l.len);
        if (!l.cancelled) {
            l.cancelled = true;
            if (!l.outstanding) {
                if (l.charged) {
                    scheduler_->release(l.cur_local, l.len);
                    bytes_terminated_.fetch_add(l.len, std::memory_order_relaxed);
                    l.charged = false;
                }
                if (!l.terminal) {
                    l.terminal = true;
                    live_work_.fetch_sub(1, std::memory_order_relaxed);
                }
            }
        }
    }
    for (SliceId sid : t.internals) {
        SliceRec& rec = *slices_.at(sid);
        if (rec.terminal || rec.cancelled) continue;
        rec.cancelled = true;
        if (rec.outstanding) continue;
        if (rec.charged) {
            scheduler_->release(rec.cur_local, rec.len);
            bytes_terminated_.fetch_add(rec.len, std::memory_order_relaxed);
            rec.charged = false;
        }
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
    }
    if (t.staged) {
        StagedExec& ex = *t.staged;
        for (StagedExec::Chunk& c : ex.chunks) {
            if (c.slotA) pool_for(ex.nodeA).free_run(*c.slotA, c.len);
            if (c.slotB) pool_for(ex.nodeB).free_run(*c.slotB, c.len);
            c.slotA.reset();
            c.slotB.reset();
        }
        t.staged.reset();
    }

    std::sort(undelivered.begin(), undelivered.end());
    for (const auto& [off, len] : undelivered) {
        const SliceId sid = next_slice_.fetch_add(1, std::memory_order_relaxed);
        auto rec = std::make_unique<SliceRec>();
        rec->id = sid;
        rec->transfer = t.id;
        rec->batch = t.batch;
        rec->kind = SliceKind::kDirect;
        rec->src_seg = t.req.src_segment;
        rec->dst_seg = t.req.dst_segment;
        rec->src_off = t.req.src_offset + off;
        rec->dst_off = t.req.dst_offset + off;
        rec->rel_off = off;
        rec->len = len;
        rec->dir = t.req.direction;
        keep.push_back(sid);
        slices_.emplace(sid, std::move(rec));
        live_work_.fetch_add(1, std::memory_order_relaxed);
    }
    std::sort(keep.begin(), keep.end(), [&](SliceId a, SliceId b) {
        return slices_.at(a)->rel_off < slices_.at(b)->rel_off;
    });
    t.logical = std::move(keep);
    activate_route_execution(t);
}

// ---------------------------------------------------------------- failures

void Engine::handle_failure(SliceRec& rec, SliceStatus status) {
    (void)status;
    rec.failed_pairs.emplace_back(rec.cur_local, rec.cur_remote);
    auto tit = transfers_.find(rec.transfer);
    if (tit == transfers_.end()) {
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
        return;
    }
    TransferRec& t = *tit->second;
    if (rec.attempt + 1 < resilience_->config().max_attempts) {
        rec.attempt++;
        std::string backend;
        const auto* cands = route_candidates_for(t, rec, &backend);
        if (cands) {
            dispatch_retry(rec, *cands, backend);
            return;
        }
    }
    // Attempts exhausted (or route gone): promote the next transport.
    rec.terminal = true;
    live_work_.fetch_sub(1, std::memory_order_relaxed);
    substitute_or_fail(t, rec.cur_backend);
}

// ---------------------------------------------------------------- completions

void Engine::process_completion(const CompletionEvent& ev) {
    auto it = slices_.find(ev.slice);
    if (it == slices_.end()) return;
    SliceRec& rec = *it->second;
    if (!rec.outstanding || rec.terminal) return;   // late or stale event
    if (rec.cur_local != ev.rail) return;           // event for an older attempt
    rec.outstanding = false;

    scheduler_->release(rec.cur_local, rec.len);
    rec.charged = false;
    bytes_terminated_.fetch_add(rec.len, std::memory_order_relaxed);

    const Nanos tnow = clock_->now();
    telemetry_->on_completion(rec.cur_local, rec.len, ev.status, ev.t_obs, tnow,
                              scheduler_->queued_bytes(rec.cur_local),
                              scheduler_->health(rec.cur_local));

    // The model predicts from the scheduling decision, so the feedback and
    // degradation signals measure from there too; the backend's service time
    // alone would miss ring/window residency and bias beta downward.
    const Nanos since_dispatch = tnow > rec.dispatched_at ? tnow - rec.dispatched_at : ev.t_obs;
    const double t_obs_s = to_seconds(std::max(since_dispatch, ev.t_obs));
    if (rec.kind == SliceKind::kProbe) {
        resilience_->observe_probe(rec.probe_target, ev.status, tnow);
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
        return;
    }

    resilience_->observe(rec.cur_local, rec.cur_remote, ev.status, t_obs_s,
                         rec.model_dispatched ? rec.predicted_s : 0.0, tnow);

    if (rec.cancelled) {
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
        return;
    }
    auto tit = transfers_.find(rec.transfer);
    TransferRec* t = tit == transfers_.end() ? nullptr : tit->second.get();

    if (ev.status == SliceStatus::kOk) {
        if (rec.model_dispatched && rec.x_norm > 0.0)
            scheduler_->feedback(rec.cur_local, t_obs_s, rec.x_norm);
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
        if (t && !t->failed) {
            if (rec.kind == SliceKind::kDirect)
                finish_logical(rec);
            else
                staged_on_slice_done(*t, rec);
        }
        return;
    }
    if (!t || t->failed) {
        rec.terminal = true;
        live_work_.fetch_sub(1, std::memory_order_relaxed);
        return;
    }
    handle_failure(rec, ev.status);
}

// ---------------------------------------------------------------- pump

bool Engine::worker_post_phase(std::uint32_t wi) {
    Worker& w = *workers_[wi];
    struct Group {
        RailIndex rail = kNoRail;
        std::string backend;
        std::vector<SliceWorkRequest> reqs;
        std::vector<SliceId> ids;
    };
    std::vector<Group> groups;
    {
        std::lock_guard lk(state_mu_);
        if (!w.overflow.empty()) {
            for (SliceId id : w.overflow) {
                auto it = slices_.find(id);
                if (it != slices_.end()) w.rail_pending[it->second->cur_local].push_back(id);
            }
            w.overflow.clear();
        }
        SliceId sid;
        while (w.ring->try_pop(sid)) {
            auto it = slices_.find(sid);
            if (it != slices_.end()) w.rail_pending[it->second->cur_local].push_back(sid);
        }
        // One grouped post per rail per round; a full rail only backpressures
        // itself.
        for (auto& [rail, queue] : w.rail_pending) {
            Group g;
            g.rail = rail;
            std::size_t taken = 0;
            while (taken < queue.size() && g.reqs.size() < opts_.burst) {
                const SliceId id = queue[taken];
                taken++;
                auto it = slices_.find(id);
                if (it == slices_.end()) continue;
                SliceRec& rec = *it->second;
                if (rec.terminal || rec.cancelled || rec.outstanding) continue;
                if (rec.cur_local != rail) continue;  // rerouted since enqueue
                auto tit = transfers_.find(rec.transfer);
                if (rec.kind != SliceKind::kProbe &&
                    (tit == transfers_.end() || tit->second->failed))
                    continue;
                // Never post to a rail that lost its health since the
                // decision: undo the dispatch and route the slice again.
                if (rec.kind != SliceKind::kProbe &&
                    scheduler_->health(rail) != RailHealthState::kHealthy) {
                    if (rec.charged) {
                        scheduler_->release(rail, rec.len);
                        bytes_dispatched_.fetch_sub(rec.len, std::memory_order_relaxed);
                        rec.charged = false;
                    }
                    TransferRec& t = *tit->second;
                    std::string backend;
                    const auto* cands = route_candidates_for(t, rec, &backend);
                    if (!cands) {
                        substitute_or_fail(t, rec.cur_backend);
                    } else if (rec.attempt == 0) {
                        dispatch_with_model(t, rec, *cands, backend);
                    } else {
                        dispatch_retry(rec, *cands, backend);
                    }
                    continue;
                }
                g.backend = rec.cur_backend;
                SliceWorkRequest q;
                q.slice = rec.id;
                q.batch = rec.batch;
                q.src_segment = rec.src_seg;
                q.src_offset = rec.src_off;
                q.dst_segment = rec.dst_seg;
                q.dst_offset = rec.dst_off;
                q.length = rec.len;
                q.direction = rec.dir;
                q.local_rail = rec.cur_local;
                q.remote_rail = rec.cur_remote;
                q.attempt = rec.attempt;
                g.reqs.push_back(std::move(q));
                g.ids.push_back(id);
            }
            queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(taken));
            if (!g.reqs.empty()) groups.push_back(std::move(g));
        }
    }

    bool any = false;
    for (Group& g : groups) {
        TransportBackend* b = backend(g.backend);
        if (!b) continue;
        PostResult res = b->post_slices(g.reqs);
        std::lock_guard lk(state_mu_);
        const Nanos now = clock_->now();
        for (std::size_t i = g.ids.size(); i-- > res.accepted;) {
            // rejected suffix: back to the front of this rail's queue
            w.rail_pending[g.rail].push_front(g.ids[i]);
        }
        for (std::size_t i = 0; i < res.accepted; ++i) {
            auto it = slices_.find(g.ids[i]);
            if (it == slices_.end()) continue;
            SliceRec& rec = *it->second;
            rec.outstanding = true;
            rec.posted_at = now;
            const Nanos deadline = now + resilience_->config().slice_timeout;
            w.wheel[deadline / kWheelBucket].emplace_back(rec.id, rec.attempt);
            telemetry_->on_posted(rec.cur_local, rec.len);
            any = true;
        }
        if (res.fatal) {
            std::vector<TransferRec*> affected;
            for (auto& [tid, tp] : transfers_) {
                if (tp->failed || tp->plan->exhausted()) continue;
                if (route_uses_backend(tp->plan->active_route(), g.backend))
                    affected.push_back(tp.get());
            }
            for (TransferRec* t : affected) substitute_or_fail(*t, g.backend);
        }
    }
    return any;
}

bool Engine::route_uses_backend(const Route& r, const std::string& backend) {
    if (r.direct) return r.backend == backend;
    for (const StageSpec& s : r.stages)
        if (s.backend == backend) return true;
    return false;
}

bool Engine::worker_poll_phase(std::uint32_t wi) {
    bool any = false;
    for (std::size_t bi = 0; bi < backends_.size(); ++bi) {
        if (owner_of_backend(backends_[bi].first) != wi) continue;
        for (;;) {
            auto events = backends_[bi].second->poll_completions(opts_.burst);
            if (events.empty()) break;
            any = true;
            std::lock_guard lk(state_mu_);
            for (const CompletionEvent& ev : events) process_completion(ev);
            if (events.size() < opts_.burst) break;
        }
    }
    return any;
}

bool Engine::worker_timeout_phase(std::uint32_t wi) {
    Worker& w = *workers_[wi];
    std::lock_guard lk(state_mu_);
    const Nanos now = clock_->now();
    const std::uint64_t now_bucket = now / kWheelBucket;
    bool any = false;
    while (!w.wheel.empty() && w.wheel.begin()->first < now_bucket) {
        auto entries = std::move(w.wheel.begin()->second);
        w.wheel.erase(w.wheel.begin());
        for (const auto& [sid, attempt] : entries) {
            auto it = slices_.find(sid);
            if (it == slices_.end()) continue;
            SliceRec& rec = *it->second;
            if (!rec.outstanding || rec.terminal || rec.attempt != attempt) continue;
            CompletionEvent ev;
            ev.slice = sid;
            ev.batch = rec.batch;
            ev.status = SliceStatus::kTimeout;
            ev.rail = rec.cur_local;
            ev.t_obs = now > rec.posted_at ? now - rec.posted_at : 1;
            ev.bytes = 0;
            process_completion(ev);
            any = true;
        }
    }
    return any;
}

bool Engine::control_phase() {
    std::lock_guard lk(state_mu_);
    const Nanos now = clock_->now();
    bool any = false;

    if (now - last_reset_check_ >= kResetCheckPeriod || now < last_reset_check_) {
        last_reset_check_ = now;
        scheduler_->periodic_reset(now);
    }

    for (const ProbeOrder& o : resilience_->due_probes(now)) {
        const SliceId sid = next_slice_.fetch_add(1, std::memory_order_relaxed);
        auto rec = std::make_unique<SliceRec>();
        rec->id = sid;
        rec->kind = SliceKind::kProbe;
        rec->probe_target = o.rail;
        rec->src_seg = "__scratch@" + graph_->rail(o.rail).node;
        rec->src_off = 0;
        rec->dst_seg = "__scratch@" + graph_->rail(o.partner).node;
        rec->dst_off = kScratchBytes / 2;
        rec->len = resilience_->config().probe_bytes;
        rec->dir = Direction::kWrite;
        rec->cur_local = o.rail;
        rec->cur_remote = o.partner;
        rec->cur_backend = graph_->rail(o.rail).backend;
        rec->charged = true;
        scheduler_->charge(o.rail, rec->len);
        bytes_dispatched_.fetch_add(rec->len, std::memory_order_relaxed);
        SliceRec& ref = *rec;
        slices_.emplace(sid, std::move(rec));
        live_work_.fetch_add(1, std::memory_order_relaxed);
        enqueue_to_worker(ref);
        any = true;
    }

    if (!parked_.empty()) {
        std::vector<SliceId> ids;
        ids.swap(parked_);
        for (SliceId sid : ids) {
            auto it = slices_.find(sid);
            if (it == slices_.end()) continue;
            SliceRec& rec = *it->second;
            if (rec.terminal || rec.cancelled) continue;
            auto tit = transfers_.find(rec.transfer);
            if (tit == transfers_.end() || tit->second->failed) continue;
            TransferRec& t = *tit->second;
            std::string backend;
            const auto* cands = route_candidates_for(t, rec, &backend);
            if (!cands) continue;
            const std::size_t before = parked_.size();
            if (rec.attempt == 0)
                dispatch_with_model(t, rec, *cands, backend);
            else
                dispatch_retry(rec, *cands, backend);
            if (parked_.size() == before) any = true;  // actually dispatched
        }
    }

    for (auto& [tid, tp] : transfers_) {
        if (tp->staged && !tp->failed) {
            const std::uint32_t before = tp->staged->active;
            staged_try_start_chunks(*tp);
            if (tp->staged->active != before) any = true;
        }
    }

    if (opts_.load_board && now >= next_board_publish_) {
        scheduler_->publish_to_board(now);
        next_board_publish_ = now + opts_.load_board->publish_period();
    }
    return any;
}

std::optional<Nanos> Engine::next_time_of_interest() const {
    std::lock_guard lk(state_mu_);
    std::optional<Nanos> t;
    auto consider = [&](std::optional<Nanos> v) {
        if (v && (!t || *v < *t)) t = v;
    };
    for (const auto& [name, b] : backends_) {
        if (const auto* sim = dynamic_cast<const SimBackend*>(b.get()))
            consider(sim->next_event_time());
    }
    for (const auto& w : workers_) {
        if (!w->wheel.empty())
            consider((w->wheel.begin()->first + 1) * kWheelBucket);
    }
    const bool work_pending = live_work_.load(std::memory_order_relaxed) > 0;
    if (work_pending) {
        consider(resilience_->next_probe_time());
        consider(clock_->now() + kResetCheckPeriod);  // reset / control cadence
    }
    return t;
}

bool Engine::pump() {
    if (opts_.clock_mode != ClockMode::kVirtual || !started_) return false;
    bool progress = false;
    progress |= worker_post_phase(0);
    progress |= worker_poll_phase(0);
    progress |= worker_timeout_phase(0);
    progress |= control_phase();
    if (progress) return true;
    auto t = next_time_of_interest();
    if (!t) return false;
    const Nanos now = clock_->now();
    vclock_->advance_to(std::max(*t, now));
    if (SimBackend* s = sim_backend()) s->advance(clock_->now());
    return true;
}

void Engine::advance_virtual(Nanos t) {
    if (!vclock_) throw EngineError("advance_virtual requires virtual clock mode");
    vclock_->advance_to(t);
    if (SimBackend* s = sim_backend()) s->advance(t);
}

BatchStatus Engine::await_batch(BatchId batch, Nanos limit) {
    if (opts_.clock_mode == ClockMode::kVirtual) {
        const Nanos deadline = clock_->now() + limit;
        for (;;) {
            BatchStatus st = batch_status(batch);
            if (st.state != BatchState::kInFlight) return st;
            if (clock_->now() > deadline) return st;
            if (!pump()) return batch_status(batch);
        }
    }
    const Nanos deadline = clock_->now() + limit;
    for (;;) {
        BatchStatus st = batch_status(batch);
        if (st.state != BatchState::kInFlight) return st;
        if (clock_->now() > deadline) return st;
        std::this_thread::sleep_for(std::chrono::microseconds(100));
    }
}

void Engine::worker_loop(std::uint32_t wi) {
    int idle_spins = 0;
    while (running_.load(std::memory_order_acquire)) {
        bool did = false;
        did |= worker_post_phase(wi);
        did |= worker_poll_phase(wi);
        did |= worker_timeout_phase(wi);
        if (wi == 0) did |= control_phase();
        if (did) {
            idle_spins = 0;
        } else if (++idle_spins > 64) {
            std::this_thread::sleep_for(std::chrono::microseconds(50));
        } else {
            std::this_thread::yield();
        }
    }
}

std::vector<StageTracePoint> Engine::staged_trace(TransferId t) const {
    std::lock_guard lk(state_mu_);
    auto it = transfers_.find(t);
    if (it == transfers_.end()) return {};
    return it->second->trace;
}

namespace {
void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const char* scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok)
            throw ConfigError(std::string("engine config: unknown key '") + it.key() + "' in " +
                              scope);
    }
}
}  // namespace

EngineOptions engine_options_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("engine config parse error: ") + e.what());
    }
    reject_unknown(j,
                   {"topology_file", "topology", "backends", "workers", "clock", "scheduler",
                    "resilience", "staging", "burst", "ring_capacity", "stats", "stats_window_ms",
                    "seed", "sim", "memory", "instance_id"},
                   "root");
    EngineOptions eo;
    if (j.contains("topology_file")) eo.topology_file = j["topology_file"].get<std::string>();
    if (j.contains("topology")) eo.topology_json = j["topology"].dump();
    if (j.contains("backends")) eo.backends = j["backends"].get<std::vector<std::string>>();
    eo.workers = j.value("workers", eo.workers);
    if (j.contains("clock")) {
        const std::string c = j["clock"].get<std::string>();
        if (c == "virtual")
            eo.clock_mode = ClockMode::kVirtual;
        else if (c == "real")
            eo.clock_mode = ClockMode::kReal;
        else
            throw ConfigError("engine config: clock must be virtual|real");
    }
    if (j.contains("scheduler")) {
        const auto& s = j["scheduler"];
        reject_unknown(s,
                       {"min_slice_size", "max_slices_per_transfer", "tolerance", "tier1_penalty",
                        "tier2_penalty", "tier3_penalty", "ewma_alpha", "reset_interval_ms",
                        "diffusion_weight", "policy", "feedback_clamp"},
                       "scheduler");
        SchedulerConfig& c = eo.scheduler;
        c.min_slice_size = s.value("min_slice_size", c.min_slice_size);
        c.max_slices_per_transfer = s.value("max_slices_per_transfer", c.max_slices_per_transfer);
        c.tolerance = s.value("tolerance", c.tolerance);
        auto penalty = [&](const char* key, std::optional<double>& out) {
            if (!s.contains(key)) return;
            if (s[key].is_null())
                out = std::nullopt;  // unschedulable marker
            else
                out = s[key].get<double>();
        };
        penalty("tier1_penalty", c.penalties.tier1);
        penalty("tier2_penalty", c.penalties.tier2);
        penalty("tier3_penalty", c.penalties.tier3);
        c.ewma_alpha = s.value("ewma_alpha", c.ewma_alpha);
        if (s.contains("reset_interval_ms"))
            c.reset_interval = static_cast<Nanos>(s["reset_interval_ms"].get<double>() * 1e6);
        c.diffusion_weight = s.value("diffusion_weight", c.diffusion_weight);
        if (s.contains("policy")) {
            auto p = policy_from_name(s["policy"].get<std::string>());
            if (!p) throw ConfigError("engine config: unknown policy");
            c.policy = *p;
        }
        c.feedback_clamp = s.value("feedback_clamp", c.feedback_clamp);
    }
    if (j.contains("resilience")) {
        const auto& r = j["resilience"];
        reject_unknown(r,
                       {"failure_threshold", "degradation_ratio", "degradation_events",
                        "degradation_min_t_obs_ms", "probe_successes", "probe_bytes",
                        "probe_interval_ms", "probe_backoff_mult", "probe_backoff_cap",
                        "max_attempts", "slice_timeout_ms"},
                       "resilience");
        ResilienceConfig& c = eo.resilience;
        c.failure_threshold = r.value("failure_threshold", c.failure_threshold);
        c.degradation_ratio = r.value("degradation_ratio", c.degradation_ratio);
        c.degradation_events = r.value("degradation_events", c.degradation_events);
        if (r.contains("degradation_min_t_obs_ms"))
            c.degradation_min_t_obs_s = r["degradation_min_t_obs_ms"].get<double>() * 1e-3;
        c.probe_successes_needed = r.value("probe_successes", c.probe_successes_needed);
        c.probe_bytes = r.value("probe_bytes", c.probe_bytes);
        if (r.contains("probe_interval_ms"))
            c.probe_interval = static_cast<Nanos>(r["probe_interval_ms"].get<double>() * 1e6);
        c.probe_backoff_mult = r.value("probe_backoff_mult", c.probe_backoff_mult);
        c.probe_backoff_cap = r.value("probe_backoff_cap", c.probe_backoff_cap);
        c.max_attempts = r.value("max_attempts", c.max_attempts);
        if (r.contains("slice_timeout_ms"))
            c.slice_timeout = static_cast<Nanos>(r["slice_timeout_ms"].get<double>() * 1e6);
    }
    if (j.contains("staging")) {
        const auto& st = j["staging"];
        reject_unknown(st, {"pool_bytes", "chunk_bytes", "ring_depth"}, "staging");
        eo.staging_pool_bytes = st.value("pool_bytes", eo.staging_pool_bytes);
        eo.staging_chunk_bytes = st.value("chunk_bytes", eo.staging_chunk_bytes);
        eo.staging_ring_depth = st.value("ring_depth", eo.staging_ring_depth);
    }
    if (j.contains("sim")) {
        const auto& si = j["sim"];
        reject_unknown(si, {"device_capable", "inflight_window"}, "sim");
        eo.sim_device_capable = si.value("device_capable", eo.sim_device_capable);
        eo.sim_inflight_window = si.value("inflight_window", eo.sim_inflight_window);
    }
    if (j.contains("memory")) {
        const auto& m = j["memory"];
        reject_unknown(m, {"cross_node"}, "memory");
        eo.memory_cross_node = m.value("cross_node", eo.memory_cross_node);
    }
    eo.burst = j.value("burst", eo.burst);
    eo.ring_capacity = j.value("ring_capacity", eo.ring_capacity);
    eo.stats = j.value("stats", eo.stats);
    if (j.contains("stats_window_ms"))
        eo.stats_window = static_cast<Nanos>(j["stats_window_ms"].get<double>() * 1e6);
    eo.seed = j.value("seed", eo.seed);
    eo.instance_id = j.value("instance_id", eo.instance_id);
    return eo;
}

}  // namespace spray
