// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "prunekv/kvcache.h"

namespace prunekv {

// Scales the visual entries of a post-softmax attention row at the query
// position. With renormalize=false the scaled row is left as is and no longer
// sums to one.
struct AttentionIntervention {
  enum class Mode { kNone, kAmplifyVisual };
  Mode mode = Mode::kNone;
  double factor = 1.0;
  bool renormalize = true;
};

// Defined for float (the model's rows) and double.
template <typename T>
void apply_intervention(std::span<T> row, std::span<const TokenRole> roles,
                        const AttentionIntervention& intervention);

extern template void apply_intervention<float>(std::span<float>, std::span<const TokenRole>,
                                               const AttentionIntervention&);
extern template void apply_intervention<double>(std::span<double>, std::span<const TokenRole>,
                                                const AttentionIntervention&);

}  // namespace prunekv
