// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/policy.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prunekv/errors.h"

namespace prunekv {

// ---------------------------------------------------------------------------
// Intervention

template <typename T>
void apply_intervention(std::span<T> row, std::span<const TokenRole> roles,
                        const AttentionIntervention& intervention) {
  PRUNEKV_CHECK(std::isfinite(intervention.factor) && intervention.factor > 0.0,
                "intervention factor must be finite and positive");
  PRUNEKV_CHECK(row.size() == roles.size(), "row and role tags differ in length");
  // factor == 1 is an exact no-op.
  if (intervention.mode == AttentionIntervention::Mode::kNone || intervention.factor == 1.0) {
    return;
  }
  std::vector<double> scaled(row.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    scaled[i] = static_cast<double>(row[i]);
    if (roles[i] == TokenRole::kVisual) scaled[i] *= intervention.factor;
    sum += scaled[i];
  }
  const double norm = intervention.renormalize ? sum : 1.0;
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<T>(scaled[i] / norm);
}

template void apply_intervention<float>(std::span<float>, std::span<const TokenRole>,
                                        const AttentionIntervention&);
template void apply_intervention<double>(std::span<double>, std::span<const TokenRole>,
                                         const AttentionIntervention&);

// ---------------------------------------------------------------------------
// Selection

namespace {

template <typename Before>
std::vector<std::size_t> SelectK(std::span<const float> values, std::size_t k, Before before) {
  PRUNEKV_CHECK(k > 0 && k <= values.size(),
                "k=" + std::to_string(k) + " outside (0, " + std::to_string(values.size()) + "]");
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return before(values[a], values[b]);
                      return a < b;
                    });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<std::size_t> topk_select(std::span<const float> values, std::size_t k) {
  return SelectK(values, k, std::greater<float>());
}

std::vector<std::size_t> bottomk_select(std::span<const float> values, std::size_t k) {
  return SelectK(values, k, std::less<float>());
}

std::vector<std::size_t> layer_vote(std::span<const double> current,
                                    const AttentionHistory& history, double r) {
  PRUNEKV_CHECK(current.size() == history.values.size(),
                "vote needs " + std::to_string(history.values.size()) + " layers, got " +
                    std::to_string(current.size()));
  const double sqrt_r = std::sqrt(r);
  std::vector<std::size_t> votes;
  for (std::size_t i = 0; i < current.size(); ++i) {
    PRUNEKV_CHECK(std::isfinite(current[i]) && std::isfinite(history.values[i]),
                  "undefined average visual attention at layer " + std::to_string(i));
    if (current[i] < sqrt_r * history.values[i]) votes.push_back(i);
  }
  return votes;
}

std::string_view HistoryRefreshName(HistoryRefresh mode) {
  return mode == HistoryRefresh::kPrevStep ? "prev-step" : "post-prune-step";
}

HistoryRefresh ParseHistoryRefresh(std::string_view name) {
  if (name == "prev-step") return HistoryRefresh::kPrevStep;
  if (name == "post-prune-step") return HistoryRefresh::kPostPruneStep;
  throw ConfigError("history-refresh must be prev-step or post-prune-step, got '" +
                    std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Adaptive pruning

PruneState PruneState::Initialize(double r, std::size_t t, std::size_t n_visual,
                                  std::span<const double> step1_avgs, HistoryRefresh refresh,
                                  bool shared_indices) {
  PRUNEKV_CHECK(r > 0.0 && r < 1.0, "keep ratio must lie in (0, 1)");
  PRUNEKV_CHECK(t >= 1, "prune budget must be >= 1");
  PRUNEKV_CHECK(n_visual >= 1, "adaptive pruning needs visual tokens");
  PruneState s;
  s.r = r;
  s.t = t;
  s.n = n_visual;
  s.refresh = refresh;
  s.shared_indices = shared_indices;
  s.history = refresh_history({}, step1_avgs, 1);
  s.previous.assign(step1_avgs.begin(), step1_avgs.end());
  return s;
}

ControlOutcome adaptive_control(PruneState& state, std::span<const double> current,
                                std::size_t m) {
  PRUNEKV_CHECK(m >= 2, "adaptive control starts at step 2");
  if (state.refresh_pending) {
    state.history = refresh_history(state.history, current, m);
    state.refresh_pending = false;
  }
  ControlOutcome out;
  if (state.prune_cnt == state.t) {
    out.budget_exhausted = true;
    state.previous.assign(current.begin(), current.end());
    return out;
  }
  out.votes = layer_vote(current, state.history, state.r);
  out.trigger = majority(out.votes.size(), current.size()) || m == 2;
  if (out.trigger) {
    out.keep_count = retained_count(state.n, state.r);
    state.prune_cnt += 1;
    state.n = out.keep_count;
    if (state.refresh == HistoryRefresh::kPrevStep) {
      state.history = refresh_history(state.history, state.previous, m);
    } else {
      state.refresh_pending = true;
    }
  }
  state.previous.assign(current.begin(), current.end());
  return out;
}

namespace {

std::vector<float> LayerMeanVisual(const AttentionSnapshot& snapshot) {
  const std::size_t n = snapshot.layers.front().visual.size();
  std::vector<double> acc(n, 0.0);
  for (const LayerAttention& la : snapshot.layers) {
    PRUNEKV_CHECK(la.visual.size() == n, "shared indices need equal visual segments");
    for (std::size_t j = 0; j < n; ++j) acc[j] += la.visual[j];
  }
  std::vector<float> mean(n);
  for (std::size_t j = 0; j < n; ++j) {
    mean[j] = static_cast<float>(acc[j] / static_cast<double>(snapshot.layers.size()));
  }
  return mean;
}

}  // namespace

PruneDecision adaptive_step(PruneState& state, const AttentionSnapshot& snapshot,
                            std::size_t m) {
  const std::vector<double> current = snapshot.AvgVisual();
  for (std::size_t i = 0; i < snapshot.layers.size(); ++i) {
    PRUNEKV_CHECK(snapshot.layers[i].visual.size() == state.n,
                  "layer " + std::to_string(i) + " holds " +
                      std::to_string(snapshot.layers[i].visual.size()) +
                      " visual tokens, schedule expects " + std::to_string(state.n));
  }
  const ControlOutcome ctrl = adaptive_control(state, current, m);
  PruneDecision d;
  d.vote_count = ctrl.votes.size();
  d.trigger = ctrl.trigger;
  if (!d.trigger) return d;
  if (state.shared_indices) {
    const std::vector<std::size_t> keep = topk_select(LayerMeanVisual(snapshot), ctrl.keep_count);
    d.keep.assign(snapshot.layers.size(), keep);
  } else {
    for (const LayerAttention& la : snapshot.layers) {
      d.keep.push_back(topk_select(la.visual, ctrl.keep_count));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// One-shot pruning

PruneDecision one_shot_step(OneShotRule rule, std::size_t k, const AttentionSnapshot& step1,
                            std::size_t m, Rng* rng) {
  PRUNEKV_CHECK(m >= 2, "one-shot pruning starts at step 2");
  PruneDecision d;
  for (const LayerAttention& la : step1.layers) {
    PRUNEKV_CHECK(k > 0 && k < la.visual.size(),
                  "k=" + std::to_string(k) + " violates 0 < k < N_v=" +
                      std::to_string(la.visual.size()));
  }
  if (m != 2) return d;
  d.trigger = true;
  for (const LayerAttention& la : step1.layers) {
    switch (rule) {
      case OneShotRule::kTopK:
        d.keep.push_back(topk_select(la.visual, k));
        break;
      case OneShotRule::kBottomK:
        d.keep.push_back(bottomk_select(la.visual, k));
        break;
      case OneShotRule::kRandom: {
        PRUNEKV_CHECK(rng != nullptr, "random keep needs a generator");
        std::vector<std::size_t> idx(la.visual.size());
        std::iota(idx.begin(), idx.end(), 0);
        // Partial Fisher-Yates: the first k slots become a uniform sample.
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t j = i + static_cast<std::size_t>(rng->Below(idx.size() - i));
          std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        d.keep.push_back(std::move(idx));
        break;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Policy objects

std::string_view PolicyKindName(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kNone:
      return "none";
    case PolicyKind::kFixedTopK:
      return "fixed_topk";
    case PolicyKind::kAdaptive:
      return "adaptive";
    case PolicyKind::kRandomKeep:
      return "random_keep";
    case PolicyKind::kBottomK:
      return "bottom_k";
  }
  return "none";
}

PolicyKind ParsePolicyKind(std::string_view name) {
  for (PolicyKind k : {PolicyKind::kNone, PolicyKind::kFixedTopK, PolicyKind::kAdaptive,
                       PolicyKind::kRandomKeep, PolicyKind::kBottomK}) {
    if (PolicyKindName(k) == name) return k;
  }
  throw ConfigError("unknown policy '" + std::string(name) +
                    "' (expected none, fixed_topk, adaptive, random_keep, bottom_k)");
}

void PolicyConfig::Validate(std::size_t n_visual) const {
  switch (kind) {
    case PolicyKind::kNone:
      return;
    case PolicyKind::kAdaptive:
      if (!(r > 0.0 && r < 1.0)) throw ConfigError("policy: r must lie in (0, 1)");
      if (t < 1) throw ConfigError("policy: t must be >= 1 for adaptive pruning");
      if (n_visual < 1) throw ConfigError("policy: adaptive pruning needs visual tokens");
      return;
    case PolicyKind::kFixedTopK:
    case PolicyKind::kRandomKeep:
    case PolicyKind::kBottomK:
      if (!(k > 0 && k < n_visual)) {
        throw ConfigError("policy: k=" + std::to_string(k) + " violates 0 < k < N_v=" +
                          std::to_string(n_visual));
      }
      return;
  }
}

namespace {

class NoPrunePolicy final : public PruningPolicy {
 public:
  void Begin(const AttentionSnapshot& step1) override {
    remaining_ = step1.layers.empty() ? 0 : step1.layers.front().visual.size();
  }
  PruneDecision Step(const AttentionSnapshot&, std::size_t) override { return {}; }
  std::unique_ptr<PruningPolicy> Clone() const override {
    return std::make_unique<NoPrunePolicy>(*this);
  }
  PolicyKind kind() const override { return PolicyKind::kNone; }
  std::size_t prune_count() const override { return 0; }
  std::size_t remaining_visual() const override { return remaining_; }

 private:
  std::size_t remaining_ = 0;
};

class AdaptivePolicy final : public PruningPolicy {
 public:
  explicit AdaptivePolicy(const PolicyConfig& config) : config_(config) {}

  void Begin(const AttentionSnapshot& step1) override {
    PRUNEKV_CHECK(!step1.layers.empty(), "empty snapshot");
    state_ = PruneState::Initialize(config_.r, config_.t, step1.layers.front().visual.size(),
                                    step1.AvgVisual(), config_.history_refresh,
                                    config_.shared_indices);
  }
  PruneDecision Step(const AttentionSnapshot& snapshot, std::size_t m) override {
    return adaptive_step(state_, snapshot, m);
  }
  std::unique_ptr<PruningPolicy> Clone() const override {
    return std::make_unique<AdaptivePolicy>(*this);
  }
  PolicyKind kind() const override { return PolicyKind::kAdaptive; }
  std::size_t prune_count() const override { return state_.prune_cnt; }
  std::size_t remaining_visual() const override { return state_.n; }

  const PruneState& state() const { return state_; }

 private:
  PolicyConfig config_;
  PruneState state_;
};

class OneShotPolicy final : public PruningPolicy {
 public:
  OneShotPolicy(PolicyKind kind, const PolicyConfig& config)
      : kind_(kind), k_(config.k), rng_(config.seed) {}

  void Begin(const AttentionSnapshot& step1) override {
    PRUNEKV_CHECK(!step1.layers.empty(), "empty snapshot");
    for (const LayerAttention& la : step1.layers) {
      PRUNEKV_CHECK(k_ > 0 && k_ < la.visual.size(),
                    "k=" + std::to_string(k_) + " violates 0 < k < N_v=" +
                        std::to_string(la.visual.size()));
    }
    step1_ = step1;
    remaining_ = step1.layers.front().visual.size();
  }
  PruneDecision Step(const AttentionSnapshot&, std::size_t m) override {
    const OneShotRule rule = kind_ == PolicyKind::kFixedTopK   ? OneShotRule::kTopK
                             : kind_ == PolicyKind::kBottomK ? OneShotRule::kBottomK
                                                             : OneShotRule::kRandom;
    PruneDecision d = one_shot_step(rule, k_, step1_, m, &rng_);
    if (d.trigger) {
      fired_ = 1;
      remaining_ = k_;
    }
    return d;
  }
  std::unique_ptr<PruningPolicy> Clone() const override {
    return std::make_unique<OneShotPolicy>(*this);
  }
  PolicyKind kind() const override { return kind_; }
  std::size_t prune_count() const override { return fired_; }
  std::size_t remaining_visual() const override { return remaining_; }

 private:
  PolicyKind kind_;
  std::size_t k_;
  Rng rng_;
  AttentionSnapshot step1_;
  std::size_t fired_ = 0;
  std::size_t remaining_ = 0;
};

}  // namespace

std::unique_ptr<PruningPolicy> MakePolicy(const PolicyConfig& config) {
  switch (config.kind) {
    case PolicyKind::kNone:
      return std::make_unique<NoPrunePolicy>();
    case PolicyKind::kAdaptive:
      return std::make_unique<AdaptivePolicy>(config);
    case PolicyKind::kFixedTopK:
    case PolicyKind::kRandomKeep:
    case PolicyKind::kBottomK:
      return std::make_unique<OneShotPolicy>(config.kind, config);
  }
  return nullptr;
}

}  // namespace prunekv
