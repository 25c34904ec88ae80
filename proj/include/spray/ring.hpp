#pragma once

// Bounded multi-producer single-consumer ring (sequence-number scheme).
// Producers never block on hardware; a full ring backpressures through a
// bounded spin-then-yield loop at the call site.

#include <atomic>
#include <cstdint>
#include <memory>
#include <thread>
#include <vector>

namespace spray {

template <typename T>
class MpscRing {
public:
    explicit MpscRing(std::size_t capacity_pow2) {
        std::size_t cap = 1;
        while (cap < capacity_pow2) cap <<= 1;
        slots_ = std::make_unique<Slot[]>(cap);
        mask_ = cap - 1;
        for (std::size_t i = 0; i < cap; ++i)
            slots_[i].seq.store(i, std::memory_order_relaxed);
    }

    bool try_push(const T& v) {
        std::uint64_t pos = tail_.load(std::memory_order_relaxed);
        for (;;) {
            Slot& s = slots_[pos & mask_];
            const std::uint64_t seq = s.seq.load(std::memory_order_acquire);
            const std::int64_t diff = static_cast<std::int64_t>(seq) - static_cast<std::int64_t>(pos);
            if (diff == 0) {
                if (tail_.compare_exchange_weak(pos, pos + 1, std::memory_order_relaxed))
                    break;
            } else if (diff < 0) {
                return false;  // full
            } else {
                pos = tail_.load(std::memory_order_relaxed);
            }
        }
        Slot& s = slots_[pos & mask_];
        s.value = v;
        s.seq.store(pos + 1, std::memory_order_release);
        return true;
    }

    // Spin-then-yield until accepted.
    void push(const T& v) {
        int spins = 0;
        while (!try_push(v)) {
            if (++spins > 128) {
                std::this_thread::yield();
                spins = 0;
            }
        }
    }

    bool try_pop(T& out) {
        const std::uint64_t pos = head_;
        Slot& s = slots_[pos & mask_];
        const std::uint64_t seq = s.seq.load(std::memory_order_acquire);
        if (static_cast<std::int64_t>(seq) - static_cast<std::int64_t>(pos + 1) < 0) return false;
        out = s.value;
        s.seq.store(pos + mask_ + 1, std::memory_order_release);
        head_ = pos + 1;
        return true;
    }

    bool empty() const {
        const Slot& s = slots_[head_ & mask_];
        return static_cast<std::int64_t>(s.seq.load(std::memory_order_acquire)) -
                   static_cast<std::int64_t>(head_ + 1) <
               0;
    }

private:
    struct Slot {
        std::atomic<std::uint64_t> seq{0};
        T value{};
    };
    std::unique_ptr<Slot[]> slots_;
    std::size_t mask_ = 0;
    std::atomic<std::uint64_t> tail_{0};
    std::uint64_t head_ = 0;  // consumer-owned
};

}  // namespace spray
