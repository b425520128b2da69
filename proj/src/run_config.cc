// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/run_config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"

#include "prunekv/errors.h"

namespace prunekv {

const Preset& FindPreset(std::string_view name) {
  for (const Preset& p : kPresets) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown preset '" + std::string(name) +
                    "' (expected llava7b-like, instructblip-like, qwenvl-like)");
}

std::vector<PromptToken> MakeSyntheticPrompt(const PromptSpec& spec, std::uint32_t vocab_size) {
  PRUNEKV_CHECK(vocab_size >= 4, "synthetic prompts need a vocabulary of at least 4");
  Rng rng(spec.seed);
  const std::uint32_t half = vocab_size / 2;
  auto text = [&] { return PromptToken{static_cast<TokenId>(1 + rng.Below(half - 1)), TokenRole::kPromptText}; };
  auto visual = [&] {
    return PromptToken{static_cast<TokenId>(half + rng.Below(vocab_size - half)), TokenRole::kVisual};
  };
  std::vector<PromptToken> prompt;
  const std::size_t head = (spec.text_tokens + 1) / 2;
  for (std::size_t i = 0; i < head; ++i) prompt.push_back(text());
  for (std::size_t i = 0; i < spec.visual_tokens; ++i) prompt.push_back(visual());
  for (std::size_t i = head; i < spec.text_tokens; ++i) prompt.push_back(text());
  return prompt;
}

void RunConfig::Validate() const {
  if (model.weights_path.empty()) model.config.Validate();
  if (prompt.text_tokens + prompt.visual_tokens == 0) throw ConfigError("prompt: no tokens");
  if (max_new_tokens < 1) throw ConfigError("decode: max_new_tokens must be >= 1");
  if (model.weights_path.empty() &&
      prompt.text_tokens + prompt.visual_tokens + max_new_tokens > model.config.max_seq_len) {
    throw ConfigError("decode: prompt plus new tokens exceed model.max_seq_len");
  }
  if (const auto* n = std::get_if<NucleusStrategy>(&strategy)) {
    if (!(n->p > 0.0 && n->p <= 1.0)) throw ConfigError("decode: top_p must lie in (0, 1]");
  }
  if (const auto* b = std::get_if<BeamStrategy>(&strategy)) {
    if (b->width < 1) throw ConfigError("decode: beam_width must be >= 1");
    if (model.weights_path.empty() && b->width > model.config.vocab_size) {
      throw ConfigError("decode: beam_width exceeds vocabulary");
    }
  }
  if (intervention && !(std::isfinite(intervention->factor) && intervention->factor > 0.0)) {
    throw ConfigError("intervention: factor must be finite and positive");
  }
  policy.Validate(prompt.visual_tokens);
}

DecodeRequest RunConfig::ToRequest(const DecoderConfig& model_config) const {
  DecodeRequest r;
  r.prompt = MakeSyntheticPrompt(prompt, model_config.vocab_size);
  r.max_new_tokens = max_new_tokens;
  r.strategy = strategy;
  r.policy = policy;
  r.stop_tokens = stop_tokens;
  r.intervention = intervention;
  r.intervention_step = intervention_step;
  return r;
}

ConfigValues ReadConfigValues(std::istream& in) {
  ConfigValues values;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  for (const CLI::ConfigItem& item : items) {
    // CLI11 emits bookkeeping entries for section starts and ends.
    if (item.name == "++" || item.name == "--") continue;
    std::string key;
    for (const std::string& p : item.parents) key += p + ".";
    key += item.name;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) {
      value += (i ? "," : "") + item.inputs[i];
    }
    values[key] = value;
  }
  return values;
}

ConfigValues ReadConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return ReadConfigValues(in);
}

namespace {

template <typename T>
T ParseNumber(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      value = static_cast<T>(std::stod(text, &used));
      if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
    }
  } else {
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
      throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + text + "'");
    }
  }
  return value;
}

bool ParseBool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + text + "'");
}

}  // namespace

RunConfig BuildRunConfig(const ConfigValues& values) {
  RunConfig c;
  ConfigValues rest = values;
  if (auto it = rest.find("preset"); it != rest.end()) {
    const Preset& p = FindPreset(it->second);
    c.policy.kind = PolicyKind::kAdaptive;
    c.policy.r = p.r;
    c.policy.t = p.t;
    rest.erase(it);
  }

  std::string strategy = "greedy";
  double top_p = 0.9;
  std::uint64_t decode_seed = 0;
  std::size_t beam_width = 2;
  AttentionIntervention intervention;
  bool has_intervention = false;

  for (const auto& [key, v] : rest) {
    if (key == "model.weights") c.model.weights_path = v;
    else if (key == "model.seed") c.model.seed = ParseNumber<std::uint64_t>(key, v);
    else if (key == "model.layers") c.model.config.num_layers = ParseNumber<std::uint32_t>(key, v);
    else if (key == "model.heads") c.model.config.num_heads = ParseNumber<std::uint32_t>(key, v);
    else if (key == "model.head_dim") c.model.config.head_dim = ParseNumber<std::uint32_t>(key, v);
    else if (key == "model.hidden") c.model.config.hidden_dim = ParseNumber<std::uint32_t>(key, v);
    else if (key == "model.vocab") c.model.config.vocab_size = ParseNumber<std::uint32_t>(key, v);
    else if (key == "model.max_seq_len") c.model.config.max_seq_len = ParseNumber<std::uint32_t>(key, v);
    else if (key == "model.rope_base") c.model.config.rope_base = ParseNumber<float>(key, v);
    else if (key == "prompt.text_tokens") c.prompt.text_tokens = ParseNumber<std::size_t>(key, v);
    else if (key == "prompt.visual_tokens") c.prompt.visual_tokens = ParseNumber<std::size_t>(key, v);
    else if (key == "prompt.seed") c.prompt.seed = ParseNumber<std::uint64_t>(key, v);
    else if (key == "decode.max_new_tokens") c.max_new_tokens = ParseNumber<std::size_t>(key, v);
    else if (key == "decode.strategy") strategy = v;
    else if (key == "decode.top_p") top_p = ParseNumber<double>(key, v);
    else if (key == "decode.seed") decode_seed = ParseNumber<std::uint64_t>(key, v);
    else if (key == "decode.beam_width") beam_width = ParseNumber<std::size_t>(key, v);
    else if (key == "decode.stop_tokens") {
      c.stop_tokens.clear();
      if (v != "none" && !v.empty()) {
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) c.stop_tokens.push_back(ParseNumber<TokenId>(key, item));
      }
    } else if (key == "policy" || key == "policy.kind") c.policy.kind = ParsePolicyKind(v);
    else if (key == "policy.r") c.policy.r = ParseNumber<double>(key, v);
    else if (key == "policy.t") c.policy.t = ParseNumber<std::size_t>(key, v);
    else if (key == "policy.k") c.policy.k = ParseNumber<std::size_t>(key, v);
    else if (key == "policy.seed") c.policy.seed = ParseNumber<std::uint64_t>(key, v);
    else if (key == "policy.history-refresh") c.policy.history_refresh = ParseHistoryRefresh(v);
    else if (key == "policy.shared-indices") c.policy.shared_indices = ParseBool(key, v);
    else if (key == "intervention.factor") {
      intervention.factor = ParseNumber<double>(key, v);
      has_intervention = true;
    } else if (key == "intervention.renormalize") intervention.renormalize = ParseBool(key, v);
    else if (key == "intervention.step") c.intervention_step = ParseNumber<std::size_t>(key, v);
    else if (key == "output.dir") c.output.dir = v;
    else if (key == "output.cache_dump") c.output.cache_dump = v;
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  if (strategy == "greedy") c.strategy = GreedyStrategy{};
  else if (strategy == "nucleus") c.strategy = NucleusStrategy{top_p, decode_seed};
  else if (strategy == "beam") c.strategy = BeamStrategy{beam_width};
  else throw ConfigError("config: decode.strategy must be greedy, nucleus or beam");

  if (has_intervention) {
    intervention.mode = AttentionIntervention::Mode::kAmplifyVisual;
    c.intervention = intervention;
  }
  return c;
}

}  // namespace prunekv
