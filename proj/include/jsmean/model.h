#pragma once

#include "jsmean/linalg.h"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace jsmean {

struct ModelSpec {
  int p = 1;
  int q = 1;
  int n = 1;
  Matrix theta;  // p x q
  Matrix sigma;  // p x p, SPD

  int nq() const { return n * q; }
  // Throws InvalidInput / NotPositiveDefinite.
  void validate() const;
};

ModelSpec make_spec(int p, int q, int n, Matrix theta, Matrix sigma);

Matrix identity_sigma(int p);
// rho * e e^T + base * I.
Matrix compound_sigma(int p, double rho = 1.0, double base = 3.0);

struct SampleDraw {
  Matrix x;  // p x q
  Matrix y;  // nq x p
  Matrix s;  // y^T y
  PinvResult s_pinv;
};

// Assembles S = Y^T Y and its pseudoinverse with the max(p, nq) rank cutoff.
SampleDraw make_draw(Matrix x, Matrix y);

// Reusable sampler: the square root of Sigma is factored once.
class DrawSampler {
 public:
  explicit DrawSampler(ModelSpec spec);

  // X from substream 0, Y from substream 1 of `seed`.
  SampleDraw draw(std::uint64_t seed) const;

  const ModelSpec& spec() const { return spec_; }
  const SpdSqrtResult& sqrt() const { return sqrt_; }

 private:
  ModelSpec spec_;
  SpdSqrtResult sqrt_;
};

SampleDraw sample_draw(const ModelSpec& spec, std::uint64_t seed);

struct RawObservations {
  std::vector<Matrix> w;      // N matrices, each p x q
  std::optional<Matrix> xi;   // known only for synthetic data
};

struct IngestResult {
  Matrix x_bar;
  Matrix s;
  int n = 0;
};

IngestResult ingest_observations(const RawObservations& raw);

// sqrt(q) * Y * A^{-1}.
Matrix transformed_y(const SampleDraw& draw, const SpdSqrtResult& sqrt, int q);

// N = n + 1 observations whose mean is draw.x and whose scatter is draw.s,
// built from Helmert contrasts of the row blocks of draw.y.
RawObservations observations_from_draw(const SampleDraw& draw, int q);

// Blocks of p rows by q comma-separated columns, blank-line separated, optional header line.
RawObservations read_observations_csv(std::istream& in);
RawObservations read_observations_csv(const std::string& path);
void write_observations_csv(std::ostream& out, const RawObservations& raw);

}  // namespace jsmean
