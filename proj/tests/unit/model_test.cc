// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "dense_oracle.h"
#include "prunekv/errors.h"
#include "prunekv/model.h"

namespace prunekv {
namespace {

DecoderConfig SmallConfig() {
  DecoderConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.head_dim = 16;
  c.hidden_dim = 32;
  c.vocab_size = 64;
  c.max_seq_len = 64;
  return c;
}

std::vector<PromptToken> MixedPrompt(std::size_t n, std::uint32_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PromptToken> p;
  for (std::size_t i = 0; i < n; ++i) {
    const TokenRole role = (i >= 2 && i < n - 2) ? TokenRole::kVisual : TokenRole::kPromptText;
    p.push_back({static_cast<TokenId>(rng.Below(vocab)), role});
  }
  return p;
}

TEST(DecoderConfig, Validation) {
  DecoderConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.hidden_dim = 60;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = DecoderConfig{};
  c.head_dim = 15;
  c.hidden_dim = 60;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = DecoderConfig{};
  c.num_layers = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = DecoderConfig{};
  c.rope_base = 1.0f;
  EXPECT_THROW(c.Validate(), ConfigError);
}

TEST(InitWeights, DeterministicAndSeedSensitive) {
  const DecoderConfig c = SmallConfig();
  EXPECT_EQ(init_weights(c, 1), init_weights(c, 1));
  EXPECT_NE(init_weights(c, 1), init_weights(c, 2));
}

TEST(InitWeights, ShapesFollowConfig) {
  const DecoderConfig c = SmallConfig();
  const DecoderWeights w = init_weights(c, 3);
  EXPECT_EQ(w.embedding.rows(), c.vocab_size);
  EXPECT_EQ(w.embedding.cols(), c.hidden_dim);
  ASSERT_EQ(w.layers.size(), c.num_layers);
  EXPECT_EQ(w.layers[0].w_up.cols(), c.mlp_dim());
  EXPECT_EQ(w.layers[0].w_down.rows(), c.mlp_dim());
  EXPECT_EQ(w.unembedding.cols(), c.vocab_size);
}

TEST(Forward, LogitsFinite) {
  const DecoderWeights w = init_weights(SmallConfig(), 4);
  SegmentedKVCache cache = MakeCache(w.config);
  const StepOutput out = prefill(w, cache, MixedPrompt(12, 64, 1));
  ASSERT_EQ(out.logits.size(), 64u);
  for (float v : out.logits) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, SingletonRowIsOne) {
  DecoderConfig c = SmallConfig();
  c.num_layers = 1;
  c.num_heads = 1;
  c.head_dim = 32;
  const DecoderWeights w = init_weights(c, 5);
  SegmentedKVCache cache = MakeCache(c);
  PerHeadAttention heads;
  ForwardOptions opt;
  opt.per_head = &heads;
  const StepOutput out = forward_step(w, cache, 7, 0, opt);
  ASSERT_EQ(out.snapshot.layers.size(), 1u);
  EXPECT_EQ(out.snapshot.layers[0].row, std::vector<float>{1.0f});
  EXPECT_EQ(heads[0][0], std::vector<float>{1.0f});
}

TEST(Forward, RowsSumToOne) {
  const DecoderWeights w = init_weights(SmallConfig(), 6);
  SegmentedKVCache cache = MakeCache(w.config);
  const auto prompt = MixedPrompt(20, 64, 2);
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    ForwardOptions opt;
    opt.role = prompt[i].role;
    const StepOutput out = forward_step(w, cache, prompt[i].id, i, opt);
    for (const LayerAttention& la : out.snapshot.layers) {
      double s = 0.0;
      for (float p : la.row) s += p;
      EXPECT_NEAR(s, 1.0, 1e-5);
      EXPECT_EQ(la.row.size(), la.text.size() + la.visual.size() + la.generated.size());
    }
  }
}

TEST(Forward, MatchesDenseRecompute) {
  const DecoderWeights w = init_weights(SmallConfig(), 7);
  const auto prompt = MixedPrompt(10, 64, 3);
  SegmentedKVCache cache = MakeCache(w.config);
  StepOutput out = prefill(w, cache, prompt);
  std::vector<TokenId> ids = testing::Ids(prompt);
  for (int step = 0; step < 8; ++step) {
    const testing::DenseOutput ref = testing::DenseForward(w, ids);
    for (std::size_t j = 0; j < ref.logits.size(); ++j) {
      ASSERT_NEAR(out.logits[j], ref.logits[j], 1e-4) << "step " << step << " logit " << j;
    }
    for (std::size_t l = 0; l < ref.attention.size(); ++l) {
      for (std::size_t t = 0; t < ref.attention[l].size(); ++t) {
        ASSERT_NEAR(out.snapshot.layers[l].row[t], ref.attention[l][t], 1e-5);
      }
    }
    const TokenId next = static_cast<TokenId>(argmax(out.logits));
    ids.push_back(next);
    out = forward_step(w, cache, next, ids.size() - 1);
  }
}

TEST(Prefill, EqualsTokenByTokenForward) {
  const DecoderWeights w = init_weights(SmallConfig(), 8);
  const auto prompt = MixedPrompt(14, 64, 4);
  SegmentedKVCache a = MakeCache(w.config), b = MakeCache(w.config);
  const StepOutput pa = prefill(w, a, prompt);
  StepOutput pb;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    ForwardOptions opt;
    opt.role = prompt[i].role;
    pb = forward_step(w, b, prompt[i].id, i, opt);
  }
  for (std::size_t j = 0; j < pa.logits.size(); ++j) EXPECT_NEAR(pa.logits[j], pb.logits[j], 1e-4);
  EXPECT_EQ(a, b);
}

TEST(Prefill, RoleTagsMatchInput) {
  const DecoderWeights w = init_weights(SmallConfig(), 9);
  const auto prompt = MixedPrompt(11, 64, 5);
  SegmentedKVCache cache = MakeCache(w.config);
  prefill(w, cache, prompt);
  for (std::size_t l = 0; l < cache.num_layers(); ++l) {
    ASSERT_EQ(cache.length(l), prompt.size());
    for (std::size_t i = 0; i < prompt.size(); ++i) {
      EXPECT_EQ(cache.layer(l).roles[i], prompt[i].role);
      EXPECT_EQ(cache.layer(l).positions[i], i);
    }
  }
  EXPECT_EQ(cache.initial_visual_count(), 7u);
}

TEST(Prefill, EmptyVisualSegmentIsUndefined) {
  const DecoderWeights w = init_weights(SmallConfig(), 10);
  std::vector<PromptToken> prompt(5, PromptToken{3, TokenRole::kPromptText});
  SegmentedKVCache cache = MakeCache(w.config);
  const StepOutput out = prefill(w, cache, prompt);
  for (const LayerAttention& la : out.snapshot.layers) {
    EXPECT_TRUE(la.visual.empty());
    EXPECT_FALSE(la.avg_visual.has_value());
  }
  EXPECT_THROW(out.snapshot.AvgVisual(), ContractViolation);
}

TEST(Prefill, AvgVisualIsMeanOfVisualSlice) {
  const DecoderWeights w = init_weights(SmallConfig(), 11);
  SegmentedKVCache cache = MakeCache(w.config);
  const StepOutput out = prefill(w, cache, MixedPrompt(12, 64, 6));
  for (const LayerAttention& la : out.snapshot.layers) {
    double s = 0.0;
    for (float v : la.visual) s += v;
    ASSERT_TRUE(la.avg_visual.has_value());
    EXPECT_NEAR(*la.avg_visual, s / la.visual.size(), 1e-12);
  }
}

TEST(Forward, RejectsOutOfRangeInputs) {
  const DecoderWeights w = init_weights(SmallConfig(), 12);
  SegmentedKVCache cache = MakeCache(w.config);
  EXPECT_THROW(forward_step(w, cache, 64, 0), ContractViolation);
  EXPECT_THROW(forward_step(w, cache, 1, 64), ContractViolation);
  SegmentedKVCache wrong(3, 32);
  EXPECT_THROW(forward_step(w, wrong, 1, 0), ContractViolation);
}

TEST(Forward, AmplificationRaisesVisualShare) {
  const DecoderWeights w = init_weights(SmallConfig(), 13);
  const auto prompt = MixedPrompt(12, 64, 7);
  SegmentedKVCache a = MakeCache(w.config), b = MakeCache(w.config);
  AttentionIntervention iv{AttentionIntervention::Mode::kAmplifyVisual, 2.0, true};
  const StepOutput plain = prefill(w, a, prompt);
  const StepOutput amp = prefill(w, b, prompt, &iv);
  // Only the last prompt token is intervened on, so the caches agree up to it.
  for (std::size_t l = 0; l < plain.snapshot.layers.size(); ++l) {
    EXPECT_GT(*amp.snapshot.layers[l].avg_visual, *plain.snapshot.layers[l].avg_visual);
  }
  EXPECT_EQ(a.layer(0), b.layer(0));
}

TEST(WeightFile, RoundTripIsBitExact) {
  const DecoderWeights w = init_weights(SmallConfig(), 14);
  std::stringstream s1;
  SaveWeights(w, s1);
  const std::string bytes = s1.str();
  EXPECT_EQ(bytes.substr(0, 4), "PKVW");
  std::stringstream in(bytes);
  const DecoderWeights back = LoadWeights(in);
  EXPECT_EQ(back, w);
  std::stringstream s2;
  SaveWeights(init_weights(SmallConfig(), 14), s2);
  EXPECT_EQ(s2.str(), bytes);
}

TEST(WeightFile, RejectsCorruption) {
  std::stringstream s;
  SaveWeights(init_weights(SmallConfig(), 15), s);
  const std::string bytes = s.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream a(bad_magic);
  EXPECT_THROW(LoadWeights(a), FormatError);

  std::stringstream b(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(LoadWeights(b), FormatError);

  std::stringstream c(bytes + "x");
  EXPECT_THROW(LoadWeights(c), FormatError);

  std::string bad_version = bytes;
  bad_version[4] = 9;
  std::stringstream d(bad_version);
  EXPECT_THROW(LoadWeights(d), FormatError);
}

TEST(WeightFile, MissingFileIsIoError) {
  EXPECT_THROW(LoadWeightsFile("/nonexistent/weights.pkvw"), IoError);
}

}  // namespace
}  // namespace prunekv
