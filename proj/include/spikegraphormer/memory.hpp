#pragma once

// Live-tensor byte accounting and arithmetic operation counters.
//
// Every tensor payload is allocated through CountingAllocator, so the
// accountant sees the exact number of live payload bytes at any moment.
// The benchmark harness uses the peak as a deterministic memory proxy.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>
#include <string>

namespace sgf {

class MemoryCapExceeded : public std::bad_alloc {
 public:
  explicit MemoryCapExceeded(std::size_t requested) : requested_(requested) {}
  const char* what() const noexcept override { return "memory-proxy cap exceeded"; }
  std::size_t requested() const noexcept { return requested_; }

 private:
  std::size_t requested_;
};

class MemAccountant {
 public:
  static MemAccountant& instance() {
    static MemAccountant acc;
    return acc;
  }

  void on_alloc(std::size_t bytes) {
    const std::size_t now = live_.fetch_add(bytes) + bytes;
    if (now > cap_.load()) {
      live_.fetch_sub(bytes);
      throw MemoryCapExceeded(bytes);
    }
    std::size_t peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
  }

  void on_free(std::size_t bytes) noexcept { live_.fetch_sub(bytes); }

  std::size_t live() const noexcept { return live_.load(); }
  std::size_t peak() const noexcept { return peak_.load(); }
  void reset_peak() noexcept { peak_.store(live_.load()); }

  void set_cap(std::size_t bytes) noexcept { cap_.store(bytes); }
  void clear_cap() noexcept { cap_.store(std::numeric_limits<std::size_t>::max()); }
  std::size_t cap() const noexcept { return cap_.load(); }

 private:
  MemAccountant() = default;
  std::atomic<std::size_t> live_{0};
  std::atomic<std::size_t> peak_{0};
  std::atomic<std::size_t> cap_{std::numeric_limits<std::size_t>::max()};
};

/// Installs a memory cap for the lifetime of the guard.
class MemCapGuard {
 public:
  explicit MemCapGuard(std::size_t bytes) : previous_(MemAccountant::instance().cap()) {
    MemAccountant::instance().set_cap(bytes);
  }
  ~MemCapGuard() { MemAccountant::instance().set_cap(previous_); }
  MemCapGuard(const MemCapGuard&) = delete;
  MemCapGuard& operator=(const MemCapGuard&) = delete;

 private:
  std::size_t previous_;
};

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    MemAccountant::instance().on_alloc(bytes);
    try {
      return static_cast<T*>(::operator new(bytes));
    } catch (...) {
      MemAccountant::instance().on_free(bytes);
      throw;
    }
  }

  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p);
    MemAccountant::instance().on_free(n * sizeof(T));
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

/// Arithmetic counts for the linear-algebra kernels (matmul, spike_linear,
/// column sums, attention cores, spmm). Elementwise glue, normalization and
/// neuron dynamics are not counted.
struct OpCounts {
  std::uint64_t adds = 0;
  std::uint64_t muls = 0;

  OpCounts operator-(const OpCounts& o) const { return {adds - o.adds, muls - o.muls}; }
  OpCounts& operator+=(const OpCounts& o) {
    adds += o.adds;
    muls += o.muls;
    return *this;
  }
};

inline OpCounts& op_counts() {
  thread_local OpCounts counts;
  return counts;
}

inline void count_adds(std::uint64_t n) { op_counts().adds += n; }
inline void count_muls(std::uint64_t n) { op_counts().muls += n; }

/// Measures the counter delta accumulated while the scope is alive.
class CounterScope {
 public:
  CounterScope() : start_(op_counts()) {}
  OpCounts delta() const { return op_counts() - start_; }

 private:
  OpCounts start_;
};

}  // namespace sgf
