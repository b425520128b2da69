// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/decode.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "prunekv/errors.h"

namespace prunekv {

namespace {

bool IsStop(const DecodeRequest& request, TokenId token) {
  return std::find(request.stop_tokens.begin(), request.stop_tokens.end(), token) !=
         request.stop_tokens.end();
}

const AttentionIntervention* InterventionAt(const DecodeRequest& request, std::size_t m) {
  if (!request.intervention) return nullptr;
  if (request.intervention_step != 0 && request.intervention_step != m) return nullptr;
  return &*request.intervention;
}

TraceHeader HeaderFor(const DecoderWeights& weights, const DecodeRequest& request) {
  TraceHeader h;
  h.num_layers = weights.config.num_layers;
  h.initial_visual = request.visual_count();
  h.policy = std::string(PolicyKindName(request.policy.kind));
  h.r = request.policy.r;
  h.t = request.policy.t;
  h.k = request.policy.k;
  h.history_refresh = std::string(HistoryRefreshName(request.policy.history_refresh));
  return h;
}

std::size_t NonVisual(const SegmentedKVCache& cache, std::size_t layer) {
  return cache.length(layer) - cache.visual_count(layer);
}

}  // namespace

std::size_t DecodeRequest::visual_count() const {
  return static_cast<std::size_t>(std::count_if(prompt.begin(), prompt.end(), [](const PromptToken& t) {
    return t.role == TokenRole::kVisual;
  }));
}

void DecodeRequest::Validate(const DecoderConfig& config) const {
  if (prompt.empty()) throw ConfigError("request: empty prompt");
  if (max_new_tokens < 1) throw ConfigError("request: max_new_tokens must be >= 1");
  if (prompt.size() + max_new_tokens > config.max_seq_len) {
    throw ConfigError("request: prompt (" + std::to_string(prompt.size()) + ") + new tokens (" +
                      std::to_string(max_new_tokens) + ") exceed max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  for (const PromptToken& t : prompt) {
    if (t.role == TokenRole::kGenerated) throw ConfigError("request: prompt carries generated tag");
    if (t.id >= config.vocab_size) throw ConfigError("request: prompt token outside vocabulary");
  }
  if (const auto* n = std::get_if<NucleusStrategy>(&strategy)) {
    if (!(n->p > 0.0 && n->p <= 1.0)) throw ConfigError("request: nucleus p must lie in (0, 1]");
  }
  if (const auto* b = std::get_if<BeamStrategy>(&strategy)) {
    if (b->width < 1) throw ConfigError("request: beam width must be >= 1");
    if (b->width > config.vocab_size) throw ConfigError("request: beam width exceeds vocabulary");
  }
  if (intervention && !(std::isfinite(intervention->factor) && intervention->factor > 0.0)) {
    throw ConfigError("request: intervention factor must be finite and positive");
  }
  policy.Validate(visual_count());
}

std::vector<double> log_softmax(std::span<const float> logits) {
  PRUNEKV_CHECK(!logits.empty(), "empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

// ---------------------------------------------------------------------------
// DecodeStream

DecodeStream::DecodeStream(const DecoderWeights& weights, const PolicyConfig& policy,
                           TraceHeader header, std::ostream* trace_sink)
    : weights_(&weights),
      cache_(MakeCache(weights.config)),
      policy_(MakePolicy(policy)),
      recorder_(std::move(header), trace_sink) {}

DecodeStream::DecodeStream(const DecodeStream& other)
    : weights_(other.weights_),
      cache_(other.cache_),
      policy_(other.policy_->Clone()),
      recorder_(other.recorder_),
      flops_(other.flops_),
      latency_(other.latency_),
      attention_flops_(other.attention_flops_) {}

DecodeStream& DecodeStream::operator=(const DecodeStream& other) {
  if (this != &other) {
    DecodeStream copy(other);
    *this = std::move(copy);
  }
  return *this;
}

DecodeStream::StepResult DecodeStream::Prefill(std::span<const PromptToken> prompt,
                                               const AttentionIntervention* intervention) {
  const auto start = std::chrono::steady_clock::now();
  StepOutput out = prefill(*weights_, cache_, prompt, intervention);
  policy_->Begin(out.snapshot);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    const std::vector<std::size_t> widths(cache_.num_layers(), i + 1);
    const StepFlops f = flops_for_step(weights_->config, widths);
    flops_.Add(1, f);
    attention_flops_ += f.attention();
  }
  StepResult step;
  step.logits = std::move(out.logits);
  step.snapshot = std::move(out.snapshot);
  step.wall_time_s = wall;
  return step;
}

DecodeStream::StepResult DecodeStream::Advance(TokenId token, std::size_t position,
                                               std::size_t m,
                                               const AttentionIntervention* intervention) {
  PRUNEKV_CHECK(m >= 2, "decode steps start at m = 2");
  const auto start = std::chrono::steady_clock::now();
  ForwardOptions opts;
  opts.role = TokenRole::kGenerated;
  opts.intervention = intervention;
  opts.step = m;
  StepOutput out = forward_step(*weights_, cache_, token, position, opts);

  StepResult step;
  step.decision = policy_->Step(out.snapshot, m);
  if (step.decision.trigger) {
    PRUNEKV_CHECK(step.decision.keep.size() == cache_.num_layers(),
                  "decision must carry one keep list per layer");
    PruneReceipt receipt;
    receipt.step = m;
    for (std::size_t l = 0; l < cache_.num_layers(); ++l) {
      const std::size_t before = NonVisual(cache_, l);
      receipt.layers.push_back(cache_.prune_visual(l, step.decision.keep[l]));
      PRUNEKV_CHECK(NonVisual(cache_, l) == before,
                    "pruning touched text or generated entries at layer " + std::to_string(l));
    }
    step.receipt = std::move(receipt);
  }
  step.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  latency_.push_back(step.wall_time_s);

  std::vector<std::size_t> widths;
  for (const LayerAttention& la : out.snapshot.layers) widths.push_back(la.row.size());
  const StepFlops f = flops_for_step(weights_->config, widths);
  flops_.Add(m, f);
  attention_flops_ += f.attention();

  step.logits = std::move(out.logits);
  step.snapshot = std::move(out.snapshot);
  return step;
}

void DecodeStream::Commit(const StepResult& step, std::optional<TokenId> token) {
  PolicyStatus status;
  status.vote_count = step.decision.vote_count;
  status.triggered = step.decision.trigger;
  status.prune_cnt = policy_->prune_count();
  status.remaining_visual = policy_->remaining_visual();
  recorder_.record_step(step.snapshot, step.receipt ? &*step.receipt : nullptr, status,
                        attention_flops_, step.wall_time_s, token);
}

// ---------------------------------------------------------------------------
// Greedy and nucleus

namespace {

DecodeResult DecodeSingle(const DecoderWeights& weights, const DecodeRequest& request,
                          std::ostream* trace_sink) {
  DecodeStream stream(weights, request.policy, HeaderFor(weights, request), trace_sink);
  std::optional<Rng> rng;
  double p = 1.0;
  if (const auto* n = std::get_if<NucleusStrategy>(&request.strategy)) {
    rng.emplace(n->seed);
    p = n->p;
  }
  auto select = [&](std::span<const float> logits) -> TokenId {
    if (!rng) return static_cast<TokenId>(argmax(logits));
    return static_cast<TokenId>(sample_top_p(softmax_row(logits), p, *rng));
  };

  DecodeResult result;
  const DecodeStream::StepResult first =
      stream.Prefill(request.prompt, InterventionAt(request, 1));
  TokenId token = select(first.logits);
  stream.Commit(first, token);
  result.tokens.push_back(token);

  for (std::size_t m = 2; result.tokens.size() < request.max_new_tokens && !IsStop(request, token);
       ++m) {
    const std::size_t position = request.prompt.size() + result.tokens.size() - 1;
    DecodeStream::StepResult step =
        stream.Advance(token, position, m, InterventionAt(request, m));
    token = select(step.logits);
    stream.Commit(step, token);
    result.tokens.push_back(token);
  }
  result.trace = stream.recorder().trace();
  result.flops = stream.flops();
  result.step_latency_s = stream.step_latency();
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Beam search

std::vector<BeamState> start_beams(const DecoderWeights& weights, const DecodeRequest& request,
                                   std::size_t width) {
  PRUNEKV_CHECK(width >= 1 && width <= weights.config.vocab_size,
                "beam width " + std::to_string(width) + " outside [1, vocab]");
  BeamState root{DecodeStream(weights, request.policy, HeaderFor(weights, request)), 0.0, {},
                 false};
  const DecodeStream::StepResult first =
      root.stream.Prefill(request.prompt, InterventionAt(request, 1));
  const std::vector<double> lp = log_softmax(first.logits);
  std::vector<std::size_t> order(lp.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lp[a] > lp[b]; });
  std::vector<BeamState> beams;
  for (std::size_t i = 0; i < width; ++i) {
    BeamState b = root;
    const auto token = static_cast<TokenId>(order[i]);
    b.stream.Commit(first, token);
    b.log_prob = lp[token];
    b.tokens.push_back(token);
    b.finished = IsStop(request, token) || request.max_new_tokens <= 1;
    beams.push_back(std::move(b));
  }
  return beams;
}

std::vector<BeamState> beam_search_step(const DecoderWeights& weights,
                                        std::vector<BeamState> beams, std::size_t width,
                                        std::size_t prompt_length, const DecodeRequest& request) {
  PRUNEKV_CHECK(width >= 1 && width <= weights.config.vocab_size,
                "beam width " + std::to_string(width) + " outside [1, vocab]");
  PRUNEKV_CHECK(!beams.empty(), "no beams to advance");
  std::optional<std::size_t> length;
  for (const BeamState& b : beams) {
    if (b.finished) continue;
    PRUNEKV_CHECK(!length || *length == b.tokens.size(), "beams are at different steps");
    length = b.tokens.size();
  }
  if (!length) return beams;

  struct Candidate {
    double score;
    std::size_t beam;
    std::optional<TokenId> token;  // empty: carry a finished beam over
  };
  std::vector<Candidate> candidates;
  std::vector<std::optional<DecodeStream::StepResult>> steps(beams.size());
  const std::size_t m = *length + 1;
  const std::size_t position = prompt_length + *length - 1;
  // Each beam advances on its own cache; the merge below runs in beam order.
  for (std::size_t i = 0; i < beams.size(); ++i) {
    BeamState& b = beams[i];
    if (b.finished) {
      candidates.push_back({b.log_prob, i, std::nullopt});
      continue;
    }
    steps[i] = b.stream.Advance(b.tokens.back(), position, m, InterventionAt(request, m));
    const std::vector<double> lp = log_softmax(steps[i]->logits);
    for (std::size_t v = 0; v < lp.size(); ++v) {
      candidates.push_back({b.log_prob + lp[v], i, static_cast<TokenId>(v)});
    }
  }
  const std::size_t keep = std::min(width, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), [](const Candidate& a, const Candidate& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.beam != b.beam) return a.beam < b.beam;
                      return a.token.value_or(0) < b.token.value_or(0);
                    });
  std::vector<BeamState> next;
  next.reserve(keep);
  for (std::size_t c = 0; c < keep; ++c) {
    const Candidate& cand = candidates[c];
    BeamState child = beams[cand.beam];  // deep copy of cache and policy
    if (cand.token) {
      child.stream.Commit(*steps[cand.beam], *cand.token);
      child.tokens.push_back(*cand.token);
      child.log_prob = cand.score;
      child.finished =
          IsStop(request, *cand.token) || child.tokens.size() >= request.max_new_tokens;
    }
    next.push_back(std::move(child));
  }
  return next;
}

DecodeResult decode(const DecoderWeights& weights, const DecodeRequest& request,
                    std::ostream* trace_sink) {
  request.Validate(weights.config);
  const auto* beam = std::get_if<BeamStrategy>(&request.strategy);
  if (!beam) return DecodeSingle(weights, request, trace_sink);

  std::vector<BeamState> beams = start_beams(weights, request, beam->width);
  while (std::any_of(beams.begin(), beams.end(), [](const BeamState& b) { return !b.finished; })) {
    beams = beam_search_step(weights, std::move(beams), beam->width, request.prompt.size(),
                             request);
  }
  const auto best = std::max_element(beams.begin(), beams.end(),
                                     [](const BeamState& a, const BeamState& b) {
                                       return a.log_prob < b.log_prob;
                                     });
  DecodeResult result;
  result.tokens = best->tokens;
  result.trace = best->stream.recorder().trace();
  result.flops = best->stream.flops();
  result.step_latency_s = best->stream.step_latency();
  result.log_prob = best->log_prob;
  if (trace_sink) WriteTrace(result.trace, *trace_sink);
  return result;
}

}  // namespace prunekv
