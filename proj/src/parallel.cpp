#include "jsmean/parallel.h"

#include <cmath>
#include <cstdlib>
#include <string>

namespace jsmean {

int thread_count() {
  if (const char* env = std::getenv(kThreadsEnv)) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

MeanStdErr mean_and_stderr(const std::vector<double>& x) {
  MeanStdErr r;
  const std::size_t n = x.size();
  if (n == 0) return r;
  r.mean = pairwise_sum(x) / static_cast<double>(n);
  if (n < 2) return r;
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = (x[i] - r.mean) * (x[i] - r.mean);
  const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
  r.std_error = std::sqrt(var / static_cast<double>(n));
  return r;
}

}  // namespace jsmean
