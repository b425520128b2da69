// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/model.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "prunekv/errors.h"

namespace prunekv {

void DecoderConfig::Validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (num_heads < 1) fail("num_heads must be >= 1");
  if (head_dim < 1) fail("head_dim must be >= 1");
  if (head_dim % 2 != 0) fail("head_dim must be even for rotary embeddings");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (hidden_dim != num_heads * head_dim) {
    fail("hidden_dim " + std::to_string(hidden_dim) + " != num_heads * head_dim (" +
         std::to_string(num_heads * head_dim) + ")");
  }
  if (!std::isfinite(rope_base) || rope_base <= 1.0f) fail("rope_base must be finite and > 1");
}

namespace {

Matrix RandomMatrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(rng.Normal() * stddev);
  return m;
}

std::vector<float> RmsNorm(std::span<const float> x, std::span<const float> gain) {
  double sq = 0.0;
  for (float v : x) sq += static_cast<double>(v) * v;
  const double inv = 1.0 / std::sqrt(sq / static_cast<double>(x.size()) + kRmsEpsilon);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(x[i] * inv * gain[i]);
  }
  return out;
}

float Silu(float x) { return static_cast<float>(x / (1.0 + std::exp(-static_cast<double>(x)))); }

LayerAttention Partition(std::vector<float> row, std::span<const TokenRole> roles) {
  LayerAttention la;
  for (std::size_t i = 0; i < row.size(); ++i) {
    switch (roles[i]) {
      case TokenRole::kPromptText:
        la.text.push_back(row[i]);
        break;
      case TokenRole::kVisual:
        la.visual.push_back(row[i]);
        break;
      case TokenRole::kGenerated:
        la.generated.push_back(row[i]);
        break;
    }
  }
  if (!la.visual.empty()) {
    double sum = 0.0;
    for (float v : la.visual) sum += v;
    la.avg_visual = sum / static_cast<double>(la.visual.size());
  }
  la.row = std::move(row);
  return la;
}

}  // namespace

DecoderWeights init_weights(const DecoderConfig& config, std::uint64_t seed) {
  config.Validate();
  Rng rng(seed);
  const std::size_t d = config.hidden_dim;
  const std::size_t f = config.mlp_dim();
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));

  DecoderWeights w;
  w.config = config;
  std::vector<double> offset(d);
  for (double& v : offset) v = rng.Normal() * kEmbeddingOffset;
  w.embedding = RandomMatrix(config.vocab_size, d, 1.0, rng);
  for (std::size_t t = 0; t < config.vocab_size; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      w.embedding.at(t, j) = static_cast<float>(w.embedding.at(t, j) + offset[j]);
    }
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm.assign(d, 1.0f);
    lw.wq = RandomMatrix(d, d, proj, rng);
    lw.wk = RandomMatrix(d, d, proj, rng);
    lw.wv = RandomMatrix(d, d, proj, rng);
    lw.wo = RandomMatrix(d, d, proj, rng);
    lw.mlp_norm.assign(d, 1.0f);
    lw.w_up = RandomMatrix(d, f, proj, rng);
    lw.w_down = RandomMatrix(f, d, 1.0 / std::sqrt(static_cast<double>(f)), rng);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm.assign(d, 1.0f);
  w.unembedding = RandomMatrix(d, config.vocab_size, proj, rng);
  return w;
}

SegmentedKVCache MakeCache(const DecoderConfig& config) {
  return SegmentedKVCache(config.num_layers, config.hidden_dim);
}

std::vector<double> AttentionSnapshot::AvgVisual() const {
  std::vector<double> out;
  out.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    PRUNEKV_CHECK(layers[i].avg_visual.has_value(),
                  "layer " + std::to_string(i) + " has no visual tokens");
    out.push_back(*layers[i].avg_visual);
  }
  return out;
}

StepOutput forward_step(const DecoderWeights& weights, SegmentedKVCache& cache,
                        TokenId token, std::size_t position,
                        const ForwardOptions& options) {
  const DecoderConfig& cfg = weights.config;
  PRUNEKV_CHECK(cache.num_layers() == cfg.num_layers,
                "cache has " + std::to_string(cache.num_layers()) + " layers, model " +
                    std::to_string(cfg.num_layers));
  PRUNEKV_CHECK(cache.width() == cfg.hidden_dim, "cache width does not match hidden_dim");
  PRUNEKV_CHECK(position < cfg.max_seq_len, "position " + std::to_string(position) +
                                                " exceeds max_seq_len " +
                                                std::to_string(cfg.max_seq_len));
  PRUNEKV_CHECK(token < cfg.vocab_size, "token id " + std::to_string(token) +
                                            " outside vocabulary");

  const std::size_t heads = cfg.num_heads;
  const std::size_t dk = cfg.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  StepOutput out;
  out.snapshot.step = options.step;
  if (options.per_head) options.per_head->assign(cfg.num_layers, {});

  auto emb = weights.embedding.row(token);
  std::vector<float> x(emb.begin(), emb.end());

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& lw = weights.layers[l];
    const std::vector<float> h = RmsNorm(x, lw.attn_norm);
    const std::vector<float> q = rope_apply(matvec(h, lw.wq), position, dk, cfg.rope_base);
    const std::vector<float> k = rope_apply(matvec(h, lw.wk), position, dk, cfg.rope_base);
    const std::vector<float> v = matvec(h, lw.wv);
    cache.append(l, k, v, options.role, position);

    const LayerCache& lc = cache.layer(l);
    const std::size_t n = lc.length();
    std::vector<float> attn_out(cfg.hidden_dim, 0.0f);
    std::vector<double> head_sum(n, 0.0);
    std::vector<float> scores(n);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * dk;
      for (std::size_t t = 0; t < n; ++t) {
        auto key = lc.keys.row(t);
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += static_cast<double>(q[off + c]) * key[off + c];
        scores[t] = static_cast<float>(dot * scale);
      }
      std::vector<float> probs = softmax_row(scores);
      if (options.intervention) {
        apply_intervention(std::span<float>(probs), lc.roles, *options.intervention);
      }
      for (std::size_t c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          acc += static_cast<double>(probs[t]) * lc.values.at(t, off + c);
        }
        attn_out[off + c] = static_cast<float>(acc);
      }
      for (std::size_t t = 0; t < n; ++t) head_sum[t] += probs[t];
      if (options.per_head) (*options.per_head)[l].push_back(std::move(probs));
    }
    std::vector<float> avg(n);
    for (std::size_t t = 0; t < n; ++t) {
      avg[t] = static_cast<float>(head_sum[t] / static_cast<double>(heads));
    }
    out.snapshot.layers.push_back(Partition(std::move(avg), lc.roles));

    const std::vector<float> o = matvec(attn_out, lw.wo);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += o[j];

    const std::vector<float> h2 = RmsNorm(x, lw.mlp_norm);
    std::vector<float> up = matvec(h2, lw.w_up);
    for (float& u : up) u = Silu(u);
    const std::vector<float> down = matvec(up, lw.w_down);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += down[j];
  }

  out.logits = matvec(RmsNorm(x, weights.final_norm), weights.unembedding);
  return out;
}

StepOutput prefill(const DecoderWeights& weights, SegmentedKVCache& cache,
                   std::span<const PromptToken> prompt,
                   const AttentionIntervention* intervention) {
  PRUNEKV_CHECK(!prompt.empty(), "empty prompt");
  PRUNEKV_CHECK(cache.length(0) == 0, "prefill requires an empty cache");
  PRUNEKV_CHECK(prompt.size() <= weights.config.max_seq_len,
                "prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_seq_len");
  StepOutput last;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    ForwardOptions opts;
    opts.role = prompt[i].role;
    opts.step = 1;
    // The intervention only acts at the query position that produces the
    // next token.
    if (i + 1 == prompt.size()) opts.intervention = intervention;
    last = forward_step(weights, cache, prompt[i].id, i, opts);
  }
  return last;
}

// ---------------------------------------------------------------------------
// PKVW serialisation

namespace {

constexpr char kMagic[4] = {'P', 'K', 'V', 'W'};

void PutU32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void PutF32(std::ostream& out, float f) { PutU32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t GetU32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("PKVW: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float GetF32(std::istream& in) { return std::bit_cast<float>(GetU32(in)); }

void PutFloats(std::ostream& out, std::span<const float> values) {
  for (float f : values) PutF32(out, f);
}

std::vector<float> GetFloats(std::istream& in, std::size_t n) {
  std::vector<float> v(n);
  for (float& f : v) {
    f = GetF32(in);
    if (!std::isfinite(f)) throw FormatError("PKVW: non-finite weight");
  }
  return v;
}

Matrix GetMatrix(std::istream& in, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, GetFloats(in, rows * cols));
}

}  // namespace

void SaveWeights(const DecoderWeights& w, std::ostream& out) {
  const DecoderConfig& c = w.config;
  out.write(kMagic, 4);
  PutU32(out, kWeightFileVersion);
  PutU32(out, c.num_layers);
  PutU32(out, c.num_heads);
  PutU32(out, c.head_dim);
  PutU32(out, c.hidden_dim);
  PutU32(out, c.vocab_size);
  PutU32(out, c.max_seq_len);
  PutF32(out, c.rope_base);
  PutFloats(out, w.embedding.data());
  for (const LayerWeights& lw : w.layers) {
    PutFloats(out, lw.attn_norm);
    PutFloats(out, lw.wq.data());
    PutFloats(out, lw.wk.data());
    PutFloats(out, lw.wv.data());
    PutFloats(out, lw.wo.data());
    PutFloats(out, lw.mlp_norm);
    PutFloats(out, lw.w_up.data());
    PutFloats(out, lw.w_down.data());
  }
  PutFloats(out, w.final_norm);
  PutFloats(out, w.unembedding.data());
  if (!out) throw IoError("PKVW: write failed");
}

DecoderWeights LoadWeights(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("PKVW: bad magic bytes");
  }
  const std::uint32_t version = GetU32(in);
  if (version != kWeightFileVersion) {
    throw FormatError("PKVW: unsupported version " + std::to_string(version));
  }
  DecoderWeights w;
  DecoderConfig& c = w.config;
  c.num_layers = GetU32(in);
  c.num_heads = GetU32(in);
  c.head_dim = GetU32(in);
  c.hidden_dim = GetU32(in);
  c.vocab_size = GetU32(in);
  c.max_seq_len = GetU32(in);
  c.rope_base = GetF32(in);
  try {
    c.Validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("PKVW: ") + e.what());
  }
  const std::size_t d = c.hidden_dim;
  const std::size_t f = c.mlp_dim();
  w.embedding = GetMatrix(in, c.vocab_size, d);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = GetFloats(in, d);
    lw.wq = GetMatrix(in, d, d);
    lw.wk = GetMatrix(in, d, d);
    lw.wv = GetMatrix(in, d, d);
    lw.wo = GetMatrix(in, d, d);
    lw.mlp_norm = GetFloats(in, d);
    lw.w_up = GetMatrix(in, d, f);
    lw.w_down = GetMatrix(in, f, d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = GetFloats(in, d);
  w.unembedding = GetMatrix(in, d, c.vocab_size);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("PKVW: trailing bytes");
  return w;
}

void SaveWeightsFile(const DecoderWeights& weights, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  SaveWeights(weights, out);
}

DecoderWeights LoadWeightsFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return LoadWeights(in);
}

}  // namespace prunekv
