#pragma once

// Shared primitive types: time, ids, seeded RNG, stable hashing, errors.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace spray {

using Nanos = std::uint64_t;   // engine time, nanoseconds since engine epoch
using Bytes = std::uint64_t;

constexpr Nanos kMicro = 1'000;
constexpr Nanos kMilli = 1'000'000;
constexpr Nanos kSecond = 1'000'000'000;

inline double to_seconds(Nanos t) { return static_cast<double>(t) * 1e-9; }
inline Nanos from_seconds(double s) { return static_cast<Nanos>(s * 1e9); }

using BatchId = std::uint64_t;
using TransferId = std::uint64_t;
using SliceId = std::uint64_t;

enum class Direction { kRead, kWrite };

enum class Medium { kHostMemory, kDeviceMemoryEmulated, kFile };

// Configuration and API-contract violations. Datapath faults never throw;
// they surface as completion statuses and batch state.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class EngineError : public std::runtime_error {
public:
    explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

// Virtual or wall clock behind one interface. Virtual time is advanced
// explicitly by the pump; wall time is steady_clock relative to construction.
class Clock {
public:
    virtual ~Clock() = default;
    virtual Nanos now() const = 0;
    virtual bool is_virtual() const = 0;
};

class WallClock final : public Clock {
public:
    WallClock() : epoch_(std::chrono::steady_clock::now()) {}
    Nanos now() const override {
        return static_cast<Nanos>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                      std::chrono::steady_clock::now() - epoch_)
                                      .count());
    }
    bool is_virtual() const override { return false; }

private:
    std::chrono::steady_clock::time_point epoch_;
};

class VirtualClock final : public Clock {
public:
    Nanos now() const override { return now_.load(std::memory_order_acquire); }
    bool is_virtual() const override { return true; }
    void advance_to(Nanos t) {
        Nanos cur = now_.load(std::memory_order_relaxed);
        if (t < cur) throw EngineError("virtual clock regression");
        now_.store(t, std::memory_order_release);
    }

private:
    std::atomic<Nanos> now_{0};
};

// splitmix64; stable across platforms, used wherever determinism matters.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    // uniform in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

private:
    std::uint64_t state_;
};

// 64-bit FNV-1a, plus a 128-bit variant (two lanes with distinct offsets)
// used for segment-id hashes on the TCP wire.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t basis = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = basis;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct Hash128 {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;
    bool operator==(const Hash128&) const = default;
};

inline Hash128 hash128(const std::string& s) {
    return Hash128{fnv1a64(s.data(), s.size()),
                   fnv1a64(s.data(), s.size(), 0x84222325cbf29ce4ULL)};
}

}  // namespace spray
