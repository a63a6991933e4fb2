#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dtfnet {

// Fixed pool of workers executing half-open index ranges. Every index is
// written by exactly one worker and reductions stay inside an index, so
// results do not depend on the thread count or schedule.
class ThreadPool {
 public:
  using RangeFn = std::function<void(std::size_t, std::size_t)>;

  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Takes effect only if called before the pool's first use.
  static void set_num_threads(std::size_t n) { desired_threads() = n; }

  static std::size_t num_threads() { return instance().threads_.size() + 1; }

  void run(std::size_t n, const RangeFn& fn) {
    if (n == 0) return;
    const std::size_t workers = threads_.size() + 1;
    if (workers == 1 || n == 1 || in_worker_) {
      fn(0, n);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      job_fn_ = &fn;
      job_n_ = n;
      job_workers_ = workers;
      pending_ = workers - 1;
      ++epoch_;
    }
    cv_.notify_all();

    run_chunk(0, fn, n, workers);

    std::unique_lock<std::mutex> wait_lock(mu_);
    done_cv_.wait(wait_lock, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  ThreadPool() {
    std::size_t n = desired_threads();
    if (n == 0) {
      unsigned hc = std::thread::hardware_concurrency();
      n = hc == 0 ? 1 : hc;
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
      threads_.emplace_back([this, idx = i + 1] { worker_loop(idx); });
    }
  }

  static std::size_t& desired_threads() {
    static std::size_t v = 0;
    return v;
  }

  static void run_chunk(std::size_t worker, const RangeFn& fn, std::size_t n,
                        std::size_t workers) {
    const std::size_t chunk = (n + workers - 1) / workers;
    const std::size_t begin = worker * chunk;
    const std::size_t end = begin + chunk < n ? begin + chunk : n;
    if (begin < end) fn(begin, end);
  }

  void worker_loop(std::size_t idx) {
    in_worker_ = true;
    std::uint64_t seen = 0;
    for (;;) {
      const RangeFn* fn = nullptr;
      std::size_t n = 0, workers = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return epoch_ != seen; });
        seen = epoch_;
        if (stop_) return;
        fn = job_fn_;
        n = job_n_;
        workers = job_workers_;
      }
      if (fn) run_chunk(idx, *fn, n, workers);
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const RangeFn* job_fn_ = nullptr;
  std::size_t job_n_ = 0;
  std::size_t job_workers_ = 0;
  std::size_t pending_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
  static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  ThreadPool::instance().run(n, fn);
}

}  // namespace dtfnet
