// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "prunekv/errors.h"
#include "prunekv/numerics.h"

namespace prunekv {
namespace {

TEST(Matmul, Identity) {
  const Matrix a = Matrix::FromRows({{1, 0}, {0, 1}});
  const Matrix b = Matrix::FromRows({{3, 4}, {5, 6}});
  EXPECT_EQ(matmul(a, b), b);
}

TEST(Matmul, HandArithmetic) {
  const Matrix c = matmul(Matrix::FromRows({{1, 2}}), Matrix::FromRows({{3}, {4}}));
  ASSERT_EQ(c.rows(), 1u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c.at(0, 0), 11.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937 gen(3);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(8, 8), b(8, 8);
    for (float& v : a.data()) v = dist(gen);
    for (float& v : b.data()) v = dist(gen);
    const Matrix c = matmul(a, b);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        double ref = 0.0;
        for (int k = 0; k < 8; ++k) ref += static_cast<double>(a.at(i, k)) * b.at(k, j);
        EXPECT_NEAR(c.at(i, j), ref, 1e-6);
      }
    }
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ContractViolation);
  EXPECT_THROW(matvec(std::vector<float>(3), Matrix(2, 2)), ContractViolation);
}

TEST(Matrix, KeepRowsAndAppend) {
  Matrix m;
  for (float r = 0; r < 5; ++r) m.AppendRow(std::vector<float>{r, r + 10});
  const std::vector<std::size_t> keep{1, 3};
  m.KeepRows(keep);
  EXPECT_EQ(m, Matrix::FromRows({{1, 11}, {3, 13}}));
  EXPECT_THROW(m.AppendRow(std::vector<float>{1, 2, 3}), ContractViolation);
}

TEST(Softmax, Uniform) {
  for (float p : softmax_row(std::vector<float>{0, 0, 0, 0})) EXPECT_FLOAT_EQ(p, 0.25f);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const auto p = softmax_row(std::vector<float>{1000.0f, 0.0f});
  EXPECT_NEAR(p[0], 1.0f, 1e-7);
  EXPECT_NEAR(p[1], 0.0f, 1e-7);
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
}

TEST(Softmax, MatchesLongDoubleReference) {
  std::mt19937 gen(11);
  std::normal_distribution<float> dist(0.0f, 4.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> x(16);
    for (float& v : x) v = dist(gen);
    const auto p = softmax_row(x);
    long double z = 0;
    for (float v : x) z += std::exp(static_cast<long double>(v));
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_NEAR(p[i], static_cast<double>(std::exp(static_cast<long double>(x[i])) / z), 1e-6);
      EXPECT_GE(p[i], 0.0f);
      sum += p[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(softmax_row(std::vector<float>{}), ContractViolation);
  EXPECT_THROW(softmax_row(std::vector<float>{1.0f, NAN}), ContractViolation);
  EXPECT_THROW(softmax_row(std::vector<float>{INFINITY}), ContractViolation);
}

TEST(Rope, PositionZeroIsIdentity) {
  const std::vector<float> v{0.3f, -1.2f, 2.0f, 0.5f, 1.0f, 1.0f, -0.7f, 0.1f};
  EXPECT_EQ(rope_apply(v, 0, 4), v);
}

TEST(Rope, PreservesNorm) {
  std::mt19937 gen(5);
  std::normal_distribution<float> dist;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> v(16);
    for (float& x : v) x = dist(gen);
    const auto r = rope_apply(v, gen() % 4096, 8);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      a += double(v[i]) * v[i];
      b += double(r[i]) * r[i];
    }
    EXPECT_NEAR(std::sqrt(a), std::sqrt(b), 1e-5);
  }
}

TEST(Rope, Position3HeadDim4) {
  // Angles: 3 * 10000^0 = 3 and 3 * 10000^(-1/2) = 0.03.
  const std::vector<float> v{1.0f, 2.0f, 3.0f, 4.0f};
  const auto r = rope_apply(v, 3, 4, 10000.0f);
  EXPECT_NEAR(r[0], 1.0 * std::cos(3.0) - 2.0 * std::sin(3.0), 1e-6);
  EXPECT_NEAR(r[1], 1.0 * std::sin(3.0) + 2.0 * std::cos(3.0), 1e-6);
  EXPECT_NEAR(r[2], 3.0 * std::cos(0.03) - 4.0 * std::sin(0.03), 1e-6);
  EXPECT_NEAR(r[3], 3.0 * std::sin(0.03) + 4.0 * std::cos(0.03), 1e-6);
}

TEST(Rope, RejectsOddHeadDim) {
  EXPECT_THROW(rope_apply(std::vector<float>(6), 1, 3), ContractViolation);
}

TEST(Rng, DeterministicPerSeed) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.NextU64(), b.NextU64());
  EXPECT_NE(Rng(42).NextU64(), Rng(43).NextU64());
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.Uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
    EXPECT_LT(u.Below(7), 7u);
  }
}

TEST(TopP, DegenerateDistribution) {
  Rng rng(1);
  for (double p : {0.1, 0.5, 1.0}) {
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_top_p(std::vector<float>{1, 0, 0}, p, rng), 0u);
  }
}

TEST(TopP, SingleTokenPrefix) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(sample_top_p(std::vector<float>{0.6f, 0.3f, 0.1f}, 0.5, rng), 0u);
  }
}

std::vector<double> Frequencies(const std::vector<float>& probs, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> f(probs.size(), 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) f[sample_top_p(probs, p, rng)] += 1.0 / draws;
  return f;
}

TEST(TopP, TwoTokenNucleusRenormalizes) {
  // The two leading tokens carry 0.8 >= p, so the tail is cut.
  const auto f = Frequencies({0.5f, 0.3f, 0.2f}, 0.8, 9);
  EXPECT_NEAR(f[0], 0.625, 0.01);
  EXPECT_NEAR(f[1], 0.375, 0.01);
  EXPECT_EQ(f[2], 0.0);
}

TEST(TopP, PrefixBelowPKeepsNextToken) {
  // 0.5 + 0.3 = 0.8 < 0.9, so the smallest prefix reaching p is all three.
  const auto f = Frequencies({0.5f, 0.3f, 0.2f}, 0.9, 9);
  EXPECT_NEAR(f[0], 0.5, 0.01);
  EXPECT_NEAR(f[1], 0.3, 0.01);
  EXPECT_NEAR(f[2], 0.2, 0.01);
}

TEST(TopP, PEqualOneIsFullDistribution) {
  const auto f = Frequencies({0.1f, 0.2f, 0.3f, 0.4f}, 1.0, 4);
  const double expect[] = {0.1, 0.2, 0.3, 0.4};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(f[i], expect[i], 0.01);
}

TEST(TopP, RejectsBadP) {
  Rng rng;
  EXPECT_THROW(sample_top_p(std::vector<float>{1.0f}, 0.0, rng), ContractViolation);
  EXPECT_THROW(sample_top_p(std::vector<float>{1.0f}, 1.5, rng), ContractViolation);
}

TEST(Argmax, LowerIndexOnTies) {
  EXPECT_EQ(argmax(std::vector<float>{1, 3, 3, 2}), 1u);
  EXPECT_EQ(argmax(std::vector<float>{-1}), 0u);
}

}  // namespace
}  // namespace prunekv
