// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/kvcache.h"

#include <cmath>
#include <ostream>

#include "json.hpp"

#include "prunekv/errors.h"

namespace prunekv {

std::string_view RoleName(TokenRole role) {
  switch (role) {
    case TokenRole::kPromptText:
      return "prompt_text";
    case TokenRole::kVisual:
      return "visual";
    case TokenRole::kGenerated:
      return "generated";
  }
  return "unknown";
}

TokenRole ParseRole(std::string_view name) {
  if (name == "prompt_text") return TokenRole::kPromptText;
  if (name == "visual") return TokenRole::kVisual;
  if (name == "generated") return TokenRole::kGenerated;
  throw FormatError("unknown token role '" + std::string(name) + "'");
}

std::size_t retained_count(std::size_t n, double r) {
  PRUNEKV_CHECK(r > 0.0 && r < 1.0, "keep ratio must lie in (0, 1)");
  PRUNEKV_CHECK(n >= 1, "nothing to retain from");
  const auto k = static_cast<std::size_t>(std::floor(r * static_cast<double>(n)));
  return k < 1 ? 1 : k;
}

SegmentedKVCache::SegmentedKVCache(std::size_t num_layers, std::size_t width)
    : width_(width), visual_seen_(num_layers, 0), layers_(num_layers) {
  PRUNEKV_CHECK(num_layers >= 1 && width >= 1, "empty cache geometry");
}

void SegmentedKVCache::append(std::size_t layer, std::span<const float> key_row,
                              std::span<const float> value_row, TokenRole role,
                              std::size_t original_position) {
  PRUNEKV_CHECK(layer < layers_.size(), "layer index out of range");
  PRUNEKV_CHECK(key_row.size() == width_ && value_row.size() == width_,
                "row width mismatch: expected " + std::to_string(width_));
  LayerCache& lc = layers_[layer];
  lc.keys.AppendRow(key_row);
  lc.values.AppendRow(value_row);
  lc.roles.push_back(role);
  lc.positions.push_back(original_position);
  if (role == TokenRole::kVisual) {
    lc.visual_ids.push_back(visual_seen_[layer]++);
    if (layer == 0) initial_visual_ = visual_seen_[0];
  }
}

LayerPrune SegmentedKVCache::prune_visual(std::size_t layer,
                                          std::span<const std::size_t> keep_indices) {
  PRUNEKV_CHECK(layer < layers_.size(), "layer index out of range");
  LayerCache& lc = layers_[layer];
  const std::size_t n_visual = lc.visual_count();
  for (std::size_t i = 0; i < keep_indices.size(); ++i) {
    PRUNEKV_CHECK(keep_indices[i] < n_visual,
                  "keep index " + std::to_string(keep_indices[i]) +
                      " out of range for visual segment of " + std::to_string(n_visual));
    PRUNEKV_CHECK(i == 0 || keep_indices[i] > keep_indices[i - 1],
                  "keep indices must be strictly increasing without duplicates");
  }

  LayerPrune receipt;
  receipt.layer = layer;
  std::vector<std::size_t> rows;
  rows.reserve(lc.length());
  std::vector<std::size_t> visual_ids;
  std::size_t visual_ordinal = 0;
  std::size_t next_keep = 0;
  for (std::size_t row = 0; row < lc.length(); ++row) {
    if (lc.roles[row] != TokenRole::kVisual) {
      rows.push_back(row);
      continue;
    }
    const std::size_t id = lc.visual_ids[visual_ordinal];
    if (next_keep < keep_indices.size() && keep_indices[next_keep] == visual_ordinal) {
      rows.push_back(row);
      visual_ids.push_back(id);
      receipt.retained.push_back(id);
      ++next_keep;
    } else {
      receipt.removed.push_back(id);
    }
    ++visual_ordinal;
  }

  lc.keys.KeepRows(rows);
  lc.values.KeepRows(rows);
  std::vector<TokenRole> roles;
  std::vector<std::size_t> positions;
  roles.reserve(rows.size());
  positions.reserve(rows.size());
  for (std::size_t row : rows) {
    roles.push_back(lc.roles[row]);
    positions.push_back(lc.positions[row]);
  }
  lc.roles = std::move(roles);
  lc.positions = std::move(positions);
  lc.visual_ids = std::move(visual_ids);
  return receipt;
}

std::size_t SegmentedKVCache::count(std::size_t layer, TokenRole role) const {
  std::size_t c = 0;
  for (TokenRole r : layers_.at(layer).roles) c += (r == role);
  return c;
}

void SegmentedKVCache::DumpJsonl(std::ostream& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerCache& lc = layers_[i];
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t row = 0; row < lc.length();) {
      std::size_t end = row;
      while (end < lc.length() && lc.roles[end] == lc.roles[row]) ++end;
      runs.push_back({{"role", RoleName(lc.roles[row])}, {"count", end - row}});
      row = end;
    }
    nlohmann::json line = {{"layer", i},
                           {"length", lc.length()},
                           {"role_runs", runs},
                           {"positions", lc.positions},
                           {"retained_visual", lc.visual_ids}};
    out << line.dump() << '\n';
  }
}

}  // namespace prunekv
