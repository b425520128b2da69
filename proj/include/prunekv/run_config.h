// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prunekv/decode.h"
#include "prunekv/model.h"
#include "prunekv/policy.h"

namespace prunekv {

// Named (r, t) settings for the adaptive policy.
struct Preset {
  std::string_view name;
  double r;
  std::size_t t;
};
inline constexpr Preset kPresets[] = {
    {"llava7b-like", 0.4, 3},
    {"instructblip-like", 0.7, 2},
    {"qwenvl-like", 0.9, 4},
};
const Preset& FindPreset(std::string_view name);

struct ModelSpec {
  std::string weights_path;  // empty: synthesise from seed + config
  std::uint64_t seed = 1;
  DecoderConfig config;
};

// Synthetic prompt: ceil(text/2) text tokens, the visual block, then the
// remaining text. Text ids come from [1, vocab/2), visual ids from
// [vocab/2, vocab); id 0 is the end-of-sequence token.
struct PromptSpec {
  std::size_t text_tokens = 16;
  std::size_t visual_tokens = 64;
  std::uint64_t seed = 7;
};

std::vector<PromptToken> MakeSyntheticPrompt(const PromptSpec& spec, std::uint32_t vocab_size);

struct OutputPaths {
  std::string dir = ".";
  std::string cache_dump;  // optional JSONL dump of the final cache
};

struct RunConfig {
  ModelSpec model;
  PromptSpec prompt;
  std::size_t max_new_tokens = 64;
  DecodeStrategy strategy = GreedyStrategy{};
  PolicyConfig policy;
  std::vector<TokenId> stop_tokens{kDefaultEosToken};
  std::optional<AttentionIntervention> intervention;
  std::size_t intervention_step = 0;
  OutputPaths output;

  // Rejects every constraint violation with ConfigError, before any weights
  // are created or read.
  void Validate() const;

  // The synthetic prompt is drawn for the vocabulary of the model actually run.
  DecodeRequest ToRequest(const DecoderConfig& model_config) const;
};

// Flat "section.key" -> value view of a config file; flags are applied on top
// of it with the same keys.
using ConfigValues = std::map<std::string, std::string>;

// TOML-like file: `key = value` lines, `[section]` headers, `#` comments.
ConfigValues ReadConfigValues(std::istream& in);
ConfigValues ReadConfigFile(const std::string& path);

// Builds a RunConfig from defaults, then `preset`, then every other key.
// Unknown keys and unparsable values raise ConfigError. Recognised keys:
//   preset
//   model.weights model.seed model.layers model.heads model.head_dim
//   model.hidden model.vocab model.max_seq_len model.rope_base
//   prompt.text_tokens prompt.visual_tokens prompt.seed
//   decode.max_new_tokens decode.strategy (greedy|nucleus|beam) decode.top_p
//   decode.seed decode.beam_width decode.stop_tokens (comma list or "none")
//   policy (none|fixed_topk|adaptive|random_keep|bottom_k)
//   policy.r policy.t policy.k policy.seed policy.history-refresh
//   policy.shared-indices
//   intervention.factor intervention.renormalize intervention.step
//   output.dir output.cache_dump
RunConfig BuildRunConfig(const ConfigValues& values);

}  // namespace prunekv
