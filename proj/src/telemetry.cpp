#include "spray/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace spray {

int LatencyHistogram::bucket_for(Nanos t) {
    // bucket = floor(2 * log2(t_us)), clamped to [0, kBuckets)
    const std::uint64_t us = t / 1000;
    if (us < 2) return 0;
    const int k = 63 - __builtin_clzll(us);
    // 2k + 1 once us crosses 2^k * sqrt(2)
    static const std::uint64_t kSqrt2 = 0xb504f333f9de6485ULL;  // sqrt(2) << 63
    const int b = 2 * k + ((us << (63 - k)) >= kSqrt2 ? 1 : 0);
    return b < kBuckets ? b : kBuckets - 1;
}

std::uint64_t LatencyHistogram::total() const {
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

double LatencyHistogram::percentile_us(double q) const {
    const std::uint64_t n = total();
    if (n == 0) return 0.0;
    std::uint64_t rank = static_cast<std::uint64_t>(std::ceil(q * static_cast<double>(n)));
    if (rank == 0) rank = 1;
    std::uint64_t seen = 0;
    for (int b = 0; b < kBuckets; ++b) {
        seen += counts_[b];
        if (seen >= rank) {
            // geometric midpoint of [2^(b/2), 2^((b+1)/2)) us
            return std::exp2((static_cast<double>(b) + 0.5) / 2.0);
        }
    }
    return std::exp2(static_cast<double>(kBuckets) / 2.0);
}

void LatencyHistogram::merge(const LatencyHistogram& o) {
    for (int b = 0; b < kBuckets; ++b) counts_[b] += o.counts_[b];
}

Telemetry::Telemetry(const TopologyGraph* graph, Nanos window, bool enabled)
    : graph_(graph), window_(window), enabled_(enabled) {
    rails_.reserve(graph->rail_count());
    for (std::size_t i = 0; i < graph->rail_count(); ++i)
        rails_.push_back(std::make_unique<RailSlot>());
}

void Telemetry::on_posted(RailIndex rail, Bytes bytes) {
    if (!enabled_) return;
    rails_[rail]->posted.fetch_add(bytes, std::memory_order_relaxed);
}

void Telemetry::on_completion(RailIndex rail, Bytes bytes, SliceStatus status, Nanos t_obs,
                              Nanos now, std::int64_t queue_now, RailHealthState health) {
    if (!enabled_) return;
    RailSlot& s = *rails_[rail];
    if (status == SliceStatus::kOk)
        s.ok.fetch_add(bytes, std::memory_order_relaxed);
    else
        s.failed.fetch_add(bytes, std::memory_order_relaxed);
    s.queue.store(queue_now, std::memory_order_relaxed);

    std::lock_guard lk(s.mu);
    const std::uint64_t w = now / window_;
    if (w != s.cached_window || !s.cached_cell) {
        s.cached_cell = &s.windows[w];
        s.cached_window = w;
    }
    WindowCell& cell = *s.cached_cell;
    cell.touched = true;
    cell.queue_close = queue_now;
    cell.health_close = health;
    if (status == SliceStatus::kOk) {
        cell.bytes_ok += bytes;
        cell.hist.record(t_obs);
        s.hist.record(t_obs);
    } else {
        cell.bytes_failed += bytes;
    }
}

void Telemetry::on_health(RailIndex rail, RailHealthState from, RailHealthState to, Nanos now) {
    if (!enabled_) return;
    std::lock_guard lk(transitions_mu_);
    transitions_.push_back(HealthTransition{now, rail, from, to});
}

TelemetrySnapshot Telemetry::snapshot() const {
    TelemetrySnapshot out;
    out.window_ns = window_;
    out.rails.reserve(rails_.size());
    for (RailIndex i = 0; i < rails_.size(); ++i) {
        const RailSlot& s = *rails_[i];
        RailStatsView v;
        v.rail_id = graph_->rail(i).id;
        v.bytes_posted = s.posted.load(std::memory_order_relaxed);
        v.bytes_ok = s.ok.load(std::memory_order_relaxed);
        v.bytes_failed = s.failed.load(std::memory_order_relaxed);
        v.queue_depth = s.queue.load(std::memory_order_relaxed);
        {
            std::lock_guard lk(s.mu);
            v.hist = s.hist;
            v.windows.assign(s.windows.begin(), s.windows.end());
        }
        out.rails.push_back(std::move(v));
    }
    {
        std::lock_guard lk(transitions_mu_);
        out.transitions = transitions_;
    }
    return out;
}

Bytes TelemetrySnapshot::total_ok() const {
    Bytes n = 0;
    for (const auto& r : rails) n += r.bytes_ok;
    return n;
}

std::string TelemetrySnapshot::to_csv() const {
    std::string out =
        "window_start_ms,rail_id,bytes_ok,bytes_failed,queue_depth_bytes,p50_us,p99_us,"
        "health_state,throughput_gbps\n";
    std::uint64_t last_window = 0;
    bool any = false;
    for (const auto& r : rails)
        for (const auto& [w, cell] : r.windows) {
            last_window = std::max(last_window, w);
            any = true;
        }
    if (!any) return out;
    const double window_s = static_cast<double>(window_ns) * 1e-9;
    char line[256];
    for (std::uint64_t w = 0; w <= last_window; ++w) {
        for (const auto& r : rails) {
            WindowCell cell;
            RailHealthState health = RailHealthState::kHealthy;
            std::int64_t queue = 0;
            for (const auto& [wi, c] : r.windows) {
                if (wi > w) break;
                health = c.health_close;  // carry the last known state forward
                queue = c.queue_close;
                if (wi == w) cell = c;
            }
            const double gbps =
                static_cast<double>(cell.bytes_ok) * 8.0 / window_s / 1e9;
            std::snprintf(line, sizeof(line), "%llu,%s,%llu,%llu,%lld,%.3f,%.3f,%s,%.6f\n",
                          static_cast<unsigned long long>(w * (window_ns / kMilli)),
                          r.rail_id.c_str(), static_cast<unsigned long long>(cell.bytes_ok),
                          static_cast<unsigned long long>(cell.bytes_failed),
                          static_cast<long long>(cell.touched ? cell.queue_close : queue),
                          cell.hist.percentile_us(0.50), cell.hist.percentile_us(0.99),
                          health_state_name(cell.touched ? cell.health_close : health), gbps);
            out += line;
        }
    }
    return out;
}

void TelemetrySnapshot::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw EngineError("cannot write csv: " + path);
    f << to_csv();
}

}  // namespace spray
