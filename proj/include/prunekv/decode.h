// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "prunekv/kvcache.h"
#include "prunekv/metrics.h"
#include "prunekv/model.h"
#include "prunekv/policy.h"
#include "prunekv/telemetry.h"

namespace prunekv {

inline constexpr TokenId kDefaultEosToken = 0;

struct GreedyStrategy {};
struct NucleusStrategy {
  double p = 0.9;
  std::uint64_t seed = 0;
};
struct BeamStrategy {
  std::size_t width = 2;
};
using DecodeStrategy = std::variant<GreedyStrategy, NucleusStrategy, BeamStrategy>;

struct DecodeRequest {
  std::vector<PromptToken> prompt;
  std::size_t max_new_tokens = 64;
  DecodeStrategy strategy = GreedyStrategy{};
  PolicyConfig policy;
  std::vector<TokenId> stop_tokens{kDefaultEosToken};
  std::optional<AttentionIntervention> intervention;
  // Step at which the intervention acts (1 = last prompt token); 0 = every step.
  std::size_t intervention_step = 0;

  std::size_t visual_count() const;
  // Throws ConfigError.
  void Validate(const DecoderConfig& config) const;
};

struct DecodeResult {
  std::vector<TokenId> tokens;
  Trace trace;
  FlopsLedger flops;
  std::vector<double> step_latency_s;  // one per decode forward (m >= 2)
  double log_prob = 0.0;               // cumulative, beam search only
};

// One decoding stream: a cache, its policy and its telemetry. Copies are deep
// (the policy is cloned), which is how beams fork.
class DecodeStream {
 public:
  DecodeStream(const DecoderWeights& weights, const PolicyConfig& policy, TraceHeader header,
               std::ostream* trace_sink = nullptr);
  DecodeStream(const DecodeStream& other);
  DecodeStream& operator=(const DecodeStream& other);
  DecodeStream(DecodeStream&&) noexcept = default;
  DecodeStream& operator=(DecodeStream&&) noexcept = default;

  struct StepResult {
    std::vector<float> logits;
    AttentionSnapshot snapshot;
    PruneDecision decision;
    std::optional<PruneReceipt> receipt;
    double wall_time_s = 0.0;
  };

  // Step 1: fills the cache and initialises the policy.
  StepResult Prefill(std::span<const PromptToken> prompt,
                     const AttentionIntervention* intervention);

  // Step m >= 2: forward `token` at `position`, let the policy decide and
  // apply any prune to the cache. The prune only affects later steps.
  StepResult Advance(TokenId token, std::size_t position, std::size_t m,
                     const AttentionIntervention* intervention);

  // Records the step in the trace with the token chosen from its logits.
  void Commit(const StepResult& step, std::optional<TokenId> token);

  const SegmentedKVCache& cache() const { return cache_; }
  SegmentedKVCache& mutable_cache() { return cache_; }
  const PruningPolicy& policy() const { return *policy_; }
  const TraceRecorder& recorder() const { return recorder_; }
  const FlopsLedger& flops() const { return flops_; }
  const std::vector<double>& step_latency() const { return latency_; }

 private:
  const DecoderWeights* weights_;
  SegmentedKVCache cache_;
  std::unique_ptr<PruningPolicy> policy_;
  TraceRecorder recorder_;
  FlopsLedger flops_;
  std::vector<double> latency_;
  std::uint64_t attention_flops_ = 0;
};

// Runs one request end to end. The trace for beam search is the winning
// beam's lineage.
DecodeResult decode(const DecoderWeights& weights, const DecodeRequest& request,
                    std::ostream* trace_sink = nullptr);

struct BeamState {
  DecodeStream stream;
  double log_prob = 0.0;
  std::vector<TokenId> tokens;
  bool finished = false;
};

// Initial beams: the `width` most likely first tokens after a shared prefill.
std::vector<BeamState> start_beams(const DecoderWeights& weights, const DecodeRequest& request,
                                   std::size_t width);

// Advances every unfinished beam by one token (each beam's policy sees only
// its own snapshot) and keeps the `width` best continuations by cumulative
// log-probability; ties go to the lower parent index, then the lower token id.
std::vector<BeamState> beam_search_step(const DecoderWeights& weights,
                                        std::vector<BeamState> beams, std::size_t width,
                                        std::size_t prompt_length, const DecodeRequest& request);

// log-softmax in float64.
std::vector<double> log_softmax(std::span<const float> logits);

}  // namespace prunekv
