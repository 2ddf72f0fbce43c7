#include "jsmean/model.h"

#include "jsmean/errors.h"
#include "jsmean/format.h"
#include "jsmean/rng.h"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace jsmean {

void ModelSpec::validate() const {
  if (p < 1 || q < 1 || n < 1) {
    throw InvalidInput("ModelSpec: p, q, n must be >= 1 (got p=" + std::to_string(p) +
                       ", q=" + std::to_string(q) + ", n=" + std::to_string(n) + ")");
  }
  if (theta.rows() != p || theta.cols() != q) {
    throw InvalidInput("ModelSpec: theta must be " + std::to_string(p) + "x" + std::to_string(q));
  }
  if (!theta.allFinite()) throw InvalidInput("ModelSpec: theta has non-finite entries");
  if (sigma.rows() != p || sigma.cols() != p) {
    throw InvalidInput("ModelSpec: sigma must be " + std::to_string(p) + "x" + std::to_string(p));
  }
  spd_sqrt(sigma);
}

ModelSpec make_spec(int p, int q, int n, Matrix theta, Matrix sigma) {
  ModelSpec spec{p, q, n, std::move(theta), std::move(sigma)};
  spec.validate();
  return spec;
}

Matrix identity_sigma(int p) { return Matrix::Identity(p, p); }

Matrix compound_sigma(int p, double rho, double base) {
  return rho * Matrix::Ones(p, p) + base * Matrix::Identity(p, p);
}

SampleDraw make_draw(Matrix x, Matrix y) {
  if (x.rows() != y.cols()) {
    throw InvalidInput("make_draw: X has " + std::to_string(x.rows()) + " rows but Y has " +
                       std::to_string(y.cols()) + " columns");
  }
  SampleDraw d;
  d.s = y.transpose() * y;
  const int dim = static_cast<int>(std::max(y.rows(), y.cols()));
  d.s_pinv = pinv(d.s, std::nullopt, dim);
  d.x = std::move(x);
  d.y = std::move(y);
  return d;
}

DrawSampler::DrawSampler(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  sqrt_ = spd_sqrt(spec_.sigma);
}

SampleDraw DrawSampler::draw(std::uint64_t seed) const {
  NormalStream xs(derive_seed(seed, 0, 0));
  NormalStream ys(derive_seed(seed, 0, 1));
  Matrix x = sqrt_.a * xs.matrix(spec_.p, spec_.q) + spec_.theta;
  Matrix y = ys.matrix(spec_.nq(), spec_.p) * sqrt_.a / std::sqrt(static_cast<double>(spec_.q));
  return make_draw(std::move(x), std::move(y));
}

SampleDraw sample_draw(const ModelSpec& spec, std::uint64_t seed) { return DrawSampler(spec).draw(seed); }

IngestResult ingest_observations(const RawObservations& raw) {
  const std::size_t N = raw.w.size();
  if (N < 2) throw InvalidInput("ingest_observations: need at least 2 observations, got " + std::to_string(N));
  const auto p = raw.w.front().rows();
  const auto q = raw.w.front().cols();
  for (std::size_t i = 0; i < N; ++i) {
    if (raw.w[i].rows() != p || raw.w[i].cols() != q) {
      throw InvalidInput("ingest_observations: observation " + std::to_string(i + 1) + " is " +
                         std::to_string(raw.w[i].rows()) + "x" + std::to_string(raw.w[i].cols()) +
                         ", expected " + std::to_string(p) + "x" + std::to_string(q));
    }
    if (!raw.w[i].allFinite()) {
      throw InvalidInput("ingest_observations: observation " + std::to_string(i + 1) + " has non-finite entries");
    }
  }
  IngestResult out;
  out.x_bar = Matrix::Zero(p, q);
  for (const auto& w : raw.w) out.x_bar += w;
  out.x_bar /= static_cast<double>(N);
  out.s = Matrix::Zero(p, p);
  for (const auto& w : raw.w) {
    const Matrix d = w - out.x_bar;
    out.s.noalias() += d * d.transpose();
  }
  out.s = symmetrize(out.s) / (static_cast<double>(N) * static_cast<double>(q));
  out.n = static_cast<int>(N) - 1;
  return out;
}

Matrix transformed_y(const SampleDraw& draw, const SpdSqrtResult& sqrt, int q) {
  if (draw.y.cols() != sqrt.a_inv.rows()) throw InvalidInput("transformed_y: dimension mismatch");
  return std::sqrt(static_cast<double>(q)) * draw.y * sqrt.a_inv;
}

RawObservations observations_from_draw(const SampleDraw& draw, int q) {
  if (q < 1 || draw.y.rows() % q != 0) {
    throw InvalidInput("observations_from_draw: Y rows must be a multiple of q");
  }
  const int n = static_cast<int>(draw.y.rows() / q);
  const int N = n + 1;
  const double scale = std::sqrt(static_cast<double>(N) * q);
  RawObservations raw;
  raw.w.assign(static_cast<std::size_t>(N), draw.x);
  for (int j = 1; j <= n; ++j) {
    const Matrix v = scale * draw.y.middleRows((j - 1) * q, q).transpose();  // p x q
    const double norm = std::sqrt(static_cast<double>(j) * (j + 1));
    for (int i = 0; i < j; ++i) raw.w[i] += v / norm;
    raw.w[j] -= (static_cast<double>(j) / norm) * v;
  }
  return raw;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || errno == ERANGE) return false;
    out.push_back(v);
  }
  if (!line.empty() && line.back() == ',') return false;
  return !out.empty();
}

}  // namespace

RawObservations read_observations_csv(std::istream& in) {
  RawObservations raw;
  std::vector<std::vector<double>> block;
  std::vector<double> row;
  std::string line;
  std::size_t line_no = 0;
  bool seen_data = false;
  long q = -1;

  auto flush = [&]() {
    if (block.empty()) return;
    Matrix m(static_cast<Eigen::Index>(block.size()), q);
    for (std::size_t i = 0; i < block.size(); ++i)
      for (long j = 0; j < q; ++j) m(static_cast<Eigen::Index>(i), j) = block[i][j];
    if (!raw.w.empty() && m.rows() != raw.w.front().rows()) {
      throw InvalidInput("data file: block " + std::to_string(raw.w.size() + 1) + " has " +
                         std::to_string(m.rows()) + " rows, expected " +
                         std::to_string(raw.w.front().rows()));
    }
    raw.w.push_back(std::move(m));
    block.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) {
      flush();
      continue;
    }
    if (!parse_row(t, row)) {
      if (!seen_data && raw.w.empty() && block.empty()) {
        seen_data = true;  // header line
        continue;
      }
      throw InvalidInput("data file: line " + std::to_string(line_no) + " is not a row of numbers: '" + t + "'");
    }
    seen_data = true;
    if (q < 0) q = static_cast<long>(row.size());
    if (static_cast<long>(row.size()) != q) {
      throw InvalidInput("data file: line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                         " columns, expected " + std::to_string(q));
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw InvalidInput("data file: line " + std::to_string(line_no) + " has a non-finite value");
    }
    block.push_back(row);
  }
  flush();
  if (raw.w.empty()) throw InvalidInput("data file: no observations found");
  return raw;
}

RawObservations read_observations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open data file '" + path + "'");
  return read_observations_csv(in);
}

void write_observations_csv(std::ostream& out, const RawObservations& raw) {
  if (raw.w.empty()) return;
  const auto q = raw.w.front().cols();
  for (Eigen::Index j = 0; j < q; ++j) out << (j ? "," : "") << "c" << (j + 1);
  out << "\n";
  for (std::size_t i = 0; i < raw.w.size(); ++i) {
    if (i) out << "\n";
    const Matrix& w = raw.w[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out << (c ? "," : "") << format_double(w(r, c));
      out << "\n";
    }
  }
}

}  // namespace jsmean
