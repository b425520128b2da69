// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunekv/numerics.h"

namespace prunekv {

enum class TokenRole : std::uint8_t { kPromptText = 0, kVisual = 1, kGenerated = 2 };

std::string_view RoleName(TokenRole role);
TokenRole ParseRole(std::string_view name);

// Keys and values of one layer plus per-token bookkeeping. Rows are kept in
// original relative order; keys are stored already rotated.
struct LayerCache {
  Matrix keys;
  Matrix values;
  std::vector<TokenRole> roles;
  std::vector<std::size_t> positions;
  // Ordinal of each visual row in the original visual ordering (one entry per
  // visual row, strictly increasing).
  std::vector<std::size_t> visual_ids;

  std::size_t length() const { return roles.size(); }
  std::size_t visual_count() const { return visual_ids.size(); }

  bool operator==(const LayerCache&) const = default;
};

struct LayerPrune {
  std::size_t layer = 0;
  std::vector<std::size_t> retained;  // original visual ordinals
  std::vector<std::size_t> removed;   // original visual ordinals
};

// Audit record of one pruning event across layers.
struct PruneReceipt {
  std::size_t step = 0;
  std::vector<LayerPrune> layers;
};

// Number of visual tokens kept when pruning n tokens at keep ratio r:
// max(1, floor(r * n)).
std::size_t retained_count(std::size_t n, double r);

class SegmentedKVCache {
 public:
  SegmentedKVCache() = default;
  SegmentedKVCache(std::size_t num_layers, std::size_t width);

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t width() const { return width_; }

  void append(std::size_t layer, std::span<const float> key_row,
              std::span<const float> value_row, TokenRole role,
              std::size_t original_position);

  // Keeps the listed entries of the layer's current visual segment (indices
  // into that segment, strictly increasing); text and generated rows are
  // untouched.
  LayerPrune prune_visual(std::size_t layer, std::span<const std::size_t> keep_indices);

  const LayerCache& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t length(std::size_t layer) const { return layers_.at(layer).length(); }
  std::size_t visual_count(std::size_t layer) const {
    return layers_.at(layer).visual_count();
  }
  std::size_t count(std::size_t layer, TokenRole role) const;

  // Visual tokens present when the first layer finished prefill.
  std::size_t initial_visual_count() const { return initial_visual_; }

  // One JSON object per layer, newline separated.
  void DumpJsonl(std::ostream& out) const;

  bool operator==(const SegmentedKVCache&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t initial_visual_ = 0;
  std::vector<std::size_t> visual_seen_;  // per layer, visual rows ever appended
  std::vector<LayerCache> layers_;
};

}  // namespace prunekv
