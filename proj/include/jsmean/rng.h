#pragma once

#include "jsmean/linalg.h"

#include <cstdint>
#include <random>

namespace jsmean {

std::uint64_t splitmix64(std::uint64_t x);

// Seed of substream `stream` of replication `index` under `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0);

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  double next() { return dist_(engine_); }

  // Fills column-major, matching Eigen storage order.
  Matrix matrix(Eigen::Index rows, Eigen::Index cols);

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_;
};

}  // namespace jsmean
