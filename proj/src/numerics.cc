// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/numerics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "prunekv/errors.h"

namespace prunekv {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  PRUNEKV_CHECK(data_.size() == rows_ * cols_,
                "data length " + std::to_string(data_.size()) + " != " +
                    std::to_string(rows_) + "x" + std::to_string(cols_));
}

Matrix Matrix::FromRows(const std::vector<std::vector<float>>& rows) {
  Matrix m;
  for (const auto& r : rows) m.AppendRow(r);
  return m;
}

void Matrix::AppendRow(std::span<const float> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  PRUNEKV_CHECK(values.size() == cols_, "row width " +
                                            std::to_string(values.size()) +
                                            " != " + std::to_string(cols_));
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

void Matrix::KeepRows(std::span<const std::size_t> rows) {
  std::vector<float> kept;
  kept.reserve(rows.size() * cols_);
  for (std::size_t r : rows) {
    PRUNEKV_CHECK(r < rows_, "row index out of range");
    auto src = row(r);
    kept.insert(kept.end(), src.begin(), src.end());
  }
  data_ = std::move(kept);
  rows_ = rows.size();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  PRUNEKV_CHECK(a.cols() == b.rows(),
                "dimension mismatch " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                    "x" + std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a.at(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

std::vector<float> matvec(std::span<const float> x, const Matrix& w) {
  PRUNEKV_CHECK(x.size() == w.rows(), "dimension mismatch: vector " +
                                          std::to_string(x.size()) + " vs rows " +
                                          std::to_string(w.rows()));
  std::vector<double> acc(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double xi = x[i];
    auto wrow = w.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) acc[j] += xi * wrow[j];
  }
  return {acc.begin(), acc.end()};
}

std::vector<float> softmax_row(std::span<const float> logits) {
  PRUNEKV_CHECK(!logits.empty(), "empty input");
  float max_logit = logits[0];
  for (float v : logits) {
    PRUNEKV_CHECK(std::isfinite(v), "non-finite logit");
    max_logit = std::max(max_logit, v);
  }
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    sum += e[i];
  }
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

std::vector<float> rope_apply(std::span<const float> vec, std::size_t position,
                              std::size_t head_dim, float base) {
  PRUNEKV_CHECK(head_dim > 0 && head_dim % 2 == 0, "head_dim must be even");
  PRUNEKV_CHECK(vec.size() % head_dim == 0, "vector length is not a multiple of head_dim");
  std::vector<float> out(vec.begin(), vec.end());
  for (std::size_t h = 0; h < vec.size(); h += head_dim) {
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
      const double inv_freq =
          std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / head_dim);
      const double angle = static_cast<double>(position) * inv_freq;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double x0 = vec[h + 2 * i];
      const double x1 = vec[h + 2 * i + 1];
      out[h + 2 * i] = static_cast<float>(x0 * c - x1 * s);
      out[h + 2 * i + 1] = static_cast<float>(x0 * s + x1 * c);
    }
  }
  return out;
}

double Rng::Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::Normal() {
  double u1 = Uniform();
  while (u1 <= 0.0) u1 = Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t Rng::Below(std::uint64_t bound) {
  PRUNEKV_CHECK(bound > 0, "empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

std::size_t sample_top_p(std::span<const float> probs, double p, Rng& rng) {
  PRUNEKV_CHECK(p > 0.0 && p <= 1.0, "p must lie in (0, 1]");
  PRUNEKV_CHECK(!probs.empty(), "empty distribution");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  std::size_t prefix = 0;
  double mass = 0.0;
  while (prefix < order.size()) {
    mass += probs[order[prefix]];
    ++prefix;
    if (mass >= p) break;
  }
  double u = rng.Uniform() * mass;
  for (std::size_t i = 0; i < prefix; ++i) {
    u -= probs[order[i]];
    if (u < 0.0) return order[i];
  }
  // Rounding left a sliver of mass; fall back to the last positive entry.
  for (std::size_t i = prefix; i-- > 0;) {
    if (probs[order[i]] > 0.0f) return order[i];
  }
  return order[0];
}

std::size_t argmax(std::span<const float> values) {
  PRUNEKV_CHECK(!values.empty(), "empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace prunekv
