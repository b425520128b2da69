// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunekv/intervention.h"
#include "prunekv/kvcache.h"
#include "prunekv/numerics.h"

namespace prunekv {

using TokenId = std::uint32_t;

struct DecoderConfig {
  std::uint32_t num_layers = 4;
  std::uint32_t num_heads = 4;
  std::uint32_t head_dim = 16;
  std::uint32_t hidden_dim = 64;
  std::uint32_t vocab_size = 256;
  std::uint32_t max_seq_len = 512;
  float rope_base = 10000.0f;

  // Hidden width of the two-matrix SiLU MLP.
  std::size_t mlp_dim() const { return 4 * static_cast<std::size_t>(hidden_dim); }

  // Throws ConfigError on any broken invariant.
  void Validate() const;

  bool operator==(const DecoderConfig&) const = default;
};

struct LayerWeights {
  std::vector<float> attn_norm;  // RMS gain before attention
  Matrix wq, wk, wv, wo;         // d x d
  std::vector<float> mlp_norm;   // RMS gain before the MLP
  Matrix w_up;                   // d x mlp_dim
  Matrix w_down;                 // mlp_dim x d

  bool operator==(const LayerWeights&) const = default;
};

struct DecoderWeights {
  DecoderConfig config;
  Matrix embedding;  // vocab x d
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  Matrix unembedding;  // d x vocab

  bool operator==(const DecoderWeights&) const = default;
};

// Seeded Gaussian initialisation. Scale rule: every projection entry is drawn
// from N(0, 1/fan_in), so an RMS-normalised input (unit RMS) produces unit
// variance outputs; norm gains are 1. Attention logits q.k/sqrt(d_k) and the
// unembedded logits are then O(1), which keeps softmaxes finite and neither
// uniform nor one-hot. Embeddings are N(0, 1) plus a shared offset
// (embedding_offset * a fixed random unit-RMS direction), which gives queries a
// common component and therefore key-dependent attention that persists across
// decoding steps.
DecoderWeights init_weights(const DecoderConfig& config, std::uint64_t seed);

inline constexpr double kEmbeddingOffset = 1.0;

// PKVW weight file: "PKVW", u32 version, the seven DecoderConfig fields
// (six u32 then f32 rope_base), then every tensor as little-endian f32 in this
// order: embedding; per layer attn_norm, wq, wk, wv, wo, mlp_norm, w_up,
// w_down; final_norm; unembedding.
inline constexpr std::uint32_t kWeightFileVersion = 1;
void SaveWeights(const DecoderWeights& weights, std::ostream& out);
DecoderWeights LoadWeights(std::istream& in);
void SaveWeightsFile(const DecoderWeights& weights, const std::string& path);
DecoderWeights LoadWeightsFile(const std::string& path);

// Head-averaged last-token attention of one layer, partitioned by token role.
struct LayerAttention {
  std::vector<float> row;  // full row in cache order
  std::vector<float> text;
  std::vector<float> visual;
  std::vector<float> generated;
  // Mean of `visual`; empty when the visual segment is empty.
  std::optional<double> avg_visual;
};

struct AttentionSnapshot {
  std::size_t step = 0;
  std::vector<LayerAttention> layers;

  // Per-layer avg_visual; throws when any layer has no visual tokens.
  std::vector<double> AvgVisual() const;
};

struct StepOutput {
  std::vector<float> logits;
  AttentionSnapshot snapshot;
};

// Per-head attention rows, [layer][head][cache row]; only for inspection.
using PerHeadAttention = std::vector<std::vector<std::vector<float>>>;

struct ForwardOptions {
  TokenRole role = TokenRole::kGenerated;
  const AttentionIntervention* intervention = nullptr;
  PerHeadAttention* per_head = nullptr;
  std::size_t step = 0;
};

// One forward pass for a single new token: appends its rotated key and value
// to every layer of `cache`, attends over the whole cache and returns the
// final-layer logits together with the head-averaged attention snapshot.
StepOutput forward_step(const DecoderWeights& weights, SegmentedKVCache& cache,
                        TokenId token, std::size_t position,
                        const ForwardOptions& options = {});

struct PromptToken {
  TokenId id = 0;
  TokenRole role = TokenRole::kPromptText;

  bool operator==(const PromptToken&) const = default;
};

// Feeds the prompt through an empty cache at positions 0..n-1. The returned
// snapshot (step 1) belongs to the last prompt token.
StepOutput prefill(const DecoderWeights& weights, SegmentedKVCache& cache,
                   std::span<const PromptToken> prompt,
                   const AttentionIntervention* intervention = nullptr);

SegmentedKVCache MakeCache(const DecoderConfig& config);

// Shared with the test oracles so both paths agree on the constants.
inline constexpr float kRmsEpsilon = 1e-5f;

}  // namespace prunekv
