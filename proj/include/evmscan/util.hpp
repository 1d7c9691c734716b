// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace evmscan {

// Deterministic random source. All randomness in the project funnels through
// instances of this class seeded explicitly; no ambient entropy. Only the raw
// mt19937_64 stream and hand-rolled mappings below are used, so sequences are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n). Modulo mapping; the tiny bias is irrelevant here and
  // the result is reproducible everywhere.
  uint64_t next_below(uint64_t n) { return engine_() % n; }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform double in [lo, hi).
  double next_range(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Derive an independent stream; used to hand child components their own
  // deterministic sequences.
  uint64_t fork_seed() { return engine_() ^ 0x9e3779b97f4a7c15ull; }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates with draws from Rng; std::shuffle is implementation-defined.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

// Runs fn(i) for i in [0, n) across worker threads, each result landing in
// its own slot; callers reduce the slots in index order afterwards, so the
// outcome does not depend on thread scheduling.
inline void parallel_for(size_t n, size_t threads,
                         const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  size_t workers = threads == 0 ? 1 : std::min(threads, n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline size_t default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

inline std::string to_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

}  // namespace evmscan
