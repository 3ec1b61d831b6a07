#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace mixsdr {

/// SplitMix64 step; used to derive independent substream seeds from a base
/// seed and task indices so parallel and sequential runs agree.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(base ^ splitmix64(a)) ^ splitmix64(b)) ^
                    splitmix64(c));
}

/// Runs fn(i) for i in [0, count) on up to nthreads workers. Each index is
/// processed exactly once; callers keep determinism by writing to index i's
/// own slot.
inline void parallel_for(int count, const std::function<void(int)>& fn, int nthreads = 0) {
  if (nthreads <= 0) nthreads = static_cast<int>(std::thread::hardware_concurrency());
  if (nthreads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  const int nw = std::min(nthreads, count);
  workers.reserve(nw);
  for (int w = 0; w < nw; ++w)
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : workers) t.join();
}

}  // namespace mixsdr
