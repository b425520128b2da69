// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunekv/intervention.h"
#include "prunekv/model.h"
#include "prunekv/numerics.h"
#include "prunekv/telemetry.h"

namespace prunekv {

// Indices of the k largest entries in ascending index order; equal values
// resolve toward the lower index. Requires 0 < k <= values.size().
std::vector<std::size_t> topk_select(std::span<const float> values, std::size_t k);

// Indices of the k smallest entries, same ordering and tie rules.
std::vector<std::size_t> bottomk_select(std::span<const float> values, std::size_t k);

// Layers whose current average visual attention has dropped strictly below
// sqrt(r) times their historical average.
std::vector<std::size_t> layer_vote(std::span<const double> current,
                                    const AttentionHistory& history, double r);

// Majority rule of the vote: 2 * votes >= num_layers.
inline bool majority(std::size_t votes, std::size_t num_layers) {
  return 2 * votes >= num_layers;
}

enum class HistoryRefresh {
  kPrevStep,       // history <- averages of the step before the trigger
  kPostPruneStep,  // history <- averages of the first step after the prune
};

std::string_view HistoryRefreshName(HistoryRefresh mode);
HistoryRefresh ParseHistoryRefresh(std::string_view name);

struct PruneDecision {
  bool trigger = false;
  std::vector<std::vector<std::size_t>> keep;  // per layer, empty unless triggered
  std::size_t vote_count = 0;
};

// Runtime state of the adaptive policy.
struct PruneState {
  double r = 0.4;
  std::size_t t = 3;
  std::size_t prune_cnt = 0;
  std::size_t n = 0;  // remaining visual tokens per layer
  AttentionHistory history;
  HistoryRefresh refresh = HistoryRefresh::kPrevStep;
  bool shared_indices = false;

  std::vector<double> previous;  // averages of the last observed step
  bool refresh_pending = false;

  // Records step-1 averages as the initial history.
  static PruneState Initialize(double r, std::size_t t, std::size_t n_visual,
                               std::span<const double> step1_avgs,
                               HistoryRefresh refresh = HistoryRefresh::kPrevStep,
                               bool shared_indices = false);
};

// Control half of the adaptive policy: the trigger decision and the state
// update, driven by per-layer averages only. Replay uses this directly.
struct ControlOutcome {
  bool trigger = false;
  bool budget_exhausted = false;
  std::vector<std::size_t> votes;
  std::size_t keep_count = 0;  // valid when triggered
};
ControlOutcome adaptive_control(PruneState& state, std::span<const double> current,
                                std::size_t m);

// Full adaptive step: control plus per-layer TopK keep lists over the
// snapshot's current visual attention.
PruneDecision adaptive_step(PruneState& state, const AttentionSnapshot& snapshot,
                            std::size_t m);

enum class OneShotRule { kTopK, kBottomK, kRandom };

// One-shot pruning at m = 2 from the attention recorded at step 1.
PruneDecision one_shot_step(OneShotRule rule, std::size_t k,
                            const AttentionSnapshot& step1, std::size_t m, Rng* rng);

inline PruneDecision fixed_topk_step(std::size_t k, const AttentionSnapshot& step1,
                                     std::size_t m) {
  return one_shot_step(OneShotRule::kTopK, k, step1, m, nullptr);
}
inline PruneDecision bottomk_step(std::size_t k, const AttentionSnapshot& step1,
                                  std::size_t m) {
  return one_shot_step(OneShotRule::kBottomK, k, step1, m, nullptr);
}
inline PruneDecision random_keep_step(std::size_t k, const AttentionSnapshot& step1,
                                      std::size_t m, Rng& rng) {
  return one_shot_step(OneShotRule::kRandom, k, step1, m, &rng);
}

enum class PolicyKind { kNone, kFixedTopK, kAdaptive, kRandomKeep, kBottomK };

std::string_view PolicyKindName(PolicyKind kind);
PolicyKind ParsePolicyKind(std::string_view name);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kNone;
  double r = 0.4;
  std::size_t t = 3;
  std::size_t k = 32;
  std::uint64_t seed = 0;
  HistoryRefresh history_refresh = HistoryRefresh::kPrevStep;
  bool shared_indices = false;

  // Throws ConfigError; n_visual is the prompt's visual token count.
  void Validate(std::size_t n_visual) const;
};

// Observes one snapshot per decoding step and decides whether to prune.
// Policies never see logits, so they compose with any decoding strategy.
class PruningPolicy {
 public:
  virtual ~PruningPolicy() = default;

  // Step 1 (the last prefill token): initialise from the prompt attention.
  virtual void Begin(const AttentionSnapshot& step1) = 0;
  // Steps m >= 2.
  virtual PruneDecision Step(const AttentionSnapshot& snapshot, std::size_t m) = 0;

  virtual std::unique_ptr<PruningPolicy> Clone() const = 0;
  virtual PolicyKind kind() const = 0;

  // Telemetry view of the adaptive counters; one-shot policies report their
  // single trigger.
  virtual std::size_t prune_count() const = 0;
  virtual std::size_t remaining_visual() const = 0;
};

std::unique_ptr<PruningPolicy> MakePolicy(const PolicyConfig& config);

}  // namespace prunekv
