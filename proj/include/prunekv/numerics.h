// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace prunekv {

// Dense row-major float32 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix FromRows(const std::vector<std::vector<float>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  // Appends one row; the width must equal cols() (or sets it when empty).
  void AppendRow(std::span<const float> values);

  // Keeps only the listed rows, in the listed order.
  void KeepRows(std::span<const std::size_t> rows);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Standard product with float64 accumulation, k increasing for every cell.
Matrix matmul(const Matrix& a, const Matrix& b);

// Row vector times matrix: out[j] = sum_i x[i] * w(i, j).
std::vector<float> matvec(std::span<const float> x, const Matrix& w);

// Numerically stable softmax (max-subtracted, float64 accumulation).
std::vector<float> softmax_row(std::span<const float> logits);

// Rotary position embedding. `vec` may hold several heads back to back; each
// head_dim chunk is rotated independently, pairing elements (2i, 2i+1) with
// angle position * base^(-2i / head_dim).
std::vector<float> rope_apply(std::span<const float> vec, std::size_t position,
                              std::size_t head_dim, float base = 10000.0f);

// Deterministic generator: std::mt19937_64 (fully specified by the standard)
// with hand-rolled conversions so results do not depend on the library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double Uniform();
  // Standard normal via Box-Muller.
  double Normal();
  // Uniform integer in [0, bound).
  std::uint64_t Below(std::uint64_t bound);

  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Nucleus sampling: draws proportionally from the smallest prefix (by
// descending probability, ties toward the lower index) whose mass reaches p.
std::size_t sample_top_p(std::span<const float> probs, double p, Rng& rng);

// Index of the maximum entry; ties resolve to the lower index.
std::size_t argmax(std::span<const float> values);

}  // namespace prunekv
