#pragma once

#include <cstdint>
#include <functional>

namespace safelens {

// Persistent worker pool used by the tensor kernels and the per-sample
// evaluation loops. Work is split into contiguous index ranges with a fixed
// partition; every output element is written by exactly one worker, so
// results are bit-identical for any thread count.
class ThreadPool {
 public:
  static ThreadPool& instance();

  // Resizes the pool. Safe to call between parallel regions.
  void set_threads(int n);
  int threads() const;

  // Runs fn over [0,n) split into chunks. Runs inline when the pool has a
  // single thread, when n is below min_parallel, or when already inside a
  // worker (no nested parallelism).
  void parallel_for(int64_t n, int64_t min_parallel,
                    const std::function<void(int64_t, int64_t)>& fn);

  ~ThreadPool();

 private:
  ThreadPool();
  struct Impl;
  Impl* impl_;
};

inline void parallel_for(int64_t n, int64_t min_parallel,
                         const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(n, min_parallel, fn);
}

}  // namespace safelens
