#include "safelens/thread_pool.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace safelens {

namespace {
thread_local bool t_in_worker = false;
}

struct ThreadPool::Impl {
  std::vector<std::thread> workers;
  std::mutex mu;
  std::condition_variable cv_work;
  std::condition_variable cv_done;

  // Current parallel region.
  const std::function<void(int64_t, int64_t)>* fn = nullptr;
  int64_t total = 0;
  int nchunks = 0;
  std::atomic<int> next_chunk{0};
  std::atomic<int> pending{0};
  uint64_t generation = 0;
  bool shutdown = false;
  std::exception_ptr first_error;
  std::mutex error_mu;

  void worker_loop() {
    t_in_worker = true;
    uint64_t seen = 0;
    std::unique_lock<std::mutex> lk(mu);
    while (true) {
      cv_work.wait(lk, [&] { return shutdown || generation != seen; });
      if (shutdown) return;
      seen = generation;
      lk.unlock();
      run_chunks();
      lk.lock();
    }
  }

  void run_chunks() {
    while (true) {
      const int c = next_chunk.fetch_add(1);
      if (c >= nchunks) break;
      const int64_t chunk = (total + nchunks - 1) / nchunks;
      const int64_t b = static_cast<int64_t>(c) * chunk;
      const int64_t e = std::min<int64_t>(total, b + chunk);
      if (b < e) {
        try {
          (*fn)(b, e);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
      if (pending.fetch_sub(1) == 1) {
        std::lock_guard<std::mutex> lk(mu);
        cv_done.notify_all();
      }
    }
  }
};

ThreadPool::ThreadPool() : impl_(new Impl) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  set_threads(n);
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->shutdown = true;
  }
  impl_->cv_work.notify_all();
  for (auto& t : impl_->workers) t.join();
  delete impl_;
}

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::set_threads(int n) {
  if (n < 1) n = 1;
  if (n - 1 == static_cast<int>(impl_->workers.size())) return;
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->shutdown = true;
  }
  impl_->cv_work.notify_all();
  for (auto& t : impl_->workers) t.join();
  impl_->workers.clear();
  impl_->shutdown = false;
  for (int i = 0; i < n - 1; ++i)
    impl_->workers.emplace_back([this] { impl_->worker_loop(); });
}

int ThreadPool::threads() const { return static_cast<int>(impl_->workers.size()) + 1; }

void ThreadPool::parallel_for(int64_t n, int64_t min_parallel,
                              const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int nthreads = threads();
  if (t_in_worker || nthreads == 1 || n < std::max<int64_t>(2, min_parallel)) {
    fn(0, n);
    return;
  }
  // Chunk count fixed by n and pool size; each element runs in exactly one
  // chunk regardless of scheduling order.
  const int nchunks = nthreads;
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->fn = &fn;
    impl_->total = n;
    impl_->nchunks = nchunks;
    impl_->next_chunk.store(0);
    impl_->pending.store(nchunks);
    impl_->first_error = nullptr;
    ++impl_->generation;
  }
  impl_->cv_work.notify_all();
  const bool was_worker = t_in_worker;
  t_in_worker = true;  // chunks we run ourselves must not re-enter the pool
  impl_->run_chunks();
  t_in_worker = was_worker;
  {
    std::unique_lock<std::mutex> lk(impl_->mu);
    impl_->cv_done.wait(lk, [&] { return impl_->pending.load() == 0; });
    impl_->fn = nullptr;
  }
  std::lock_guard<std::mutex> lk(impl_->error_mu);
  if (impl_->first_error) std::rethrow_exception(impl_->first_error);
}

}  // namespace safelens
