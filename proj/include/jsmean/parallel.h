#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace jsmean {

// Name of the environment variable selecting the worker count.
inline constexpr const char* kThreadsEnv = "JSMEAN_THREADS";

// Value of JSMEAN_THREADS when set to a positive integer, else all hardware threads.
int thread_count();

// Calls fn(i) for i in [0, count) on contiguous chunks across worker threads and
// returns the results indexed by i, so the output never depends on scheduling.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t count, Fn&& fn) {
  std::vector<T> out(count);
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(thread_count()), std::max<std::size_t>(count, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) out[i] = fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

// Pairwise (cascade) summation in index order.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_sum(const std::vector<double>& x);

struct MeanStdErr {
  double mean = 0.0;
  double std_error = 0.0;
};

// Sample mean and sample-std / sqrt(n), both reduced pairwise.
MeanStdErr mean_and_stderr(const std::vector<double>& x);

}  // namespace jsmean
