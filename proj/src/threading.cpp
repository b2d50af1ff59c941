#include "nvs/threading.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <thread>
#include <vector>

namespace nvs {

namespace {

int g_threads = []() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}();

thread_local int tl_depth = 0;  // nonzero while executing a pool job

// Persistent pool with fixed range assignment: range r covers
// [r*step, (r+1)*step). The calling thread runs range 0, worker i runs
// range i+1. No work stealing, so each job's ranges are disjoint and the
// job function stays alive until every assigned worker has finished.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(std::size_t n, std::size_t ranges, std::size_t step,
           const std::function<void(std::size_t, std::size_t)>& fn) {
    {
      std::unique_lock<std::mutex> lk(m_);
      while (threads_.size() < ranges - 1) {
        std::size_t id = threads_.size();
        threads_.emplace_back([this, id] { worker_loop(id); });
      }
      job_ = &fn;
      job_n_ = n;
      job_step_ = step;
      job_ranges_ = ranges;
      pending_ = static_cast<int>(ranges) - 1;
      ++generation_;
    }
    cv_.notify_all();
    fn(0, std::min(step, n));
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  Pool() = default;
  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void worker_loop(std::size_t id) {
    std::uint64_t seen = 0;
    std::unique_lock<std::mutex> lk(m_);
    while (true) {
      cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      std::size_t range = id + 1;
      if (job_ == nullptr || range >= job_ranges_) continue;
      auto fn = job_;
      std::size_t begin = range * job_step_;
      std::size_t end = std::min(begin + job_step_, job_n_);
      lk.unlock();
      tl_depth++;
      (*fn)(begin, end);
      tl_depth--;
      lk.lock();
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0, job_step_ = 0, job_ranges_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace

void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }

int thread_count() { return g_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = static_cast<std::size_t>(g_threads);
  if (workers > n) workers = n;
  if (workers <= 1 || tl_depth > 0) {
    fn(0, n);
    return;
  }
  std::size_t step = (n + workers - 1) / workers;
  std::size_t ranges = (n + step - 1) / step;
  if (ranges <= 1) {
    fn(0, n);
    return;
  }
  tl_depth++;
  Pool::instance().run(n, ranges, step, fn);
  tl_depth--;
}

}  // namespace nvs
