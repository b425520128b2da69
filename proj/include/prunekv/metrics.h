// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "prunekv/model.h"

namespace prunekv {

// ---------------------------------------------------------------------------
// FLOPs accounting. One multiply-add counts as 2 FLOPs. Per layer and token:
//   projection      = 4 * 2 * d * d            (Q, K, V, output)
//   attention_score = 2 * num_heads * d_k * w  (w = cache width of the layer)
//   attention_value = 2 * num_heads * d_k * w
//   mlp             = 2 * 2 * d * mlp_dim
// plus unembedding = 2 * d * vocab once per token. Norms, RoPE, softmax and
// activations are not counted.

struct StepFlops {
  std::size_t step = 0;
  std::vector<std::size_t> widths;  // per layer, as attended
  std::uint64_t projection = 0;
  std::uint64_t attention_score = 0;
  std::uint64_t attention_value = 0;
  std::uint64_t mlp = 0;
  std::uint64_t unembedding = 0;

  std::uint64_t attention() const { return attention_score + attention_value; }
  std::uint64_t total() const {
    return projection + attention_score + attention_value + mlp + unembedding;
  }
  bool operator==(const StepFlops&) const = default;
};

StepFlops flops_for_step(const DecoderConfig& config, std::span<const std::size_t> widths);

class FlopsLedger {
 public:
  // Adds `flops` to the entry for `step`, creating it when new. Prefill tokens
  // all accumulate into step 1.
  void Add(std::size_t step, const StepFlops& flops);

  const std::vector<StepFlops>& entries() const { return entries_; }
  std::uint64_t attention_total() const;
  std::uint64_t total() const;

  void WriteJson(std::ostream& out) const;

 private:
  std::vector<StepFlops> entries_;
};

// ---------------------------------------------------------------------------
// Latency

inline constexpr std::size_t kMinLatencySamples = 50;
inline constexpr std::size_t kLatencyWarmup = 3;

struct LatencyStats {
  std::size_t samples = 0;
  double mean_s = 0.0;
  double median_s = 0.0;
  double p95_s = 0.0;
};

// Statistics over per-token decode latencies (prefill excluded by the
// caller). The first kLatencyWarmup samples are dropped; fewer than
// kMinLatencySamples inputs is a contract violation.
LatencyStats measure_latency(std::span<const double> per_token_seconds);

// Mean, median and nearest-rank p95 of the given samples as they are.
LatencyStats latency_stats(std::span<const double> samples);

// ---------------------------------------------------------------------------
// CHAIR

struct AnnotationSet {
  std::map<std::string, std::set<std::string>> objects;  // image id -> labels
  std::map<std::string, std::string> synonyms;           // surface -> canonical
};

// {"images": [{"id": ..., "objects": [...]}], "synonyms": {surface: canonical}}.
// Labels are lowercased; every canonical label also matches itself.
AnnotationSet ParseAnnotations(std::istream& in);
AnnotationSet LoadAnnotationsFile(const std::string& path);

struct Caption {
  std::string id;
  std::string text;
};
// JSONL of {"id": ..., "text": ...}.
std::vector<Caption> ParseCaptions(std::istream& in);
std::vector<Caption> LoadCaptionsFile(const std::string& path);

// Canonical objects mentioned in `text`: lowercase word sequences matched
// against the synonym map on word boundaries, longest phrase first.
std::set<std::string> extract_objects(const std::string& text, const AnnotationSet& annotations);

struct CaptionScore {
  std::string id;
  std::set<std::string> mentioned;
  std::set<std::string> hallucinated;
};

struct ChairReport {
  double chair_s = 0.0;
  double chair_i = 0.0;
  std::size_t num_captions = 0;
  std::size_t hallucinated_captions = 0;
  std::size_t mentioned_objects = 0;
  std::size_t hallucinated_objects = 0;
  std::vector<CaptionScore> per_caption;
};

// CHAIR_I = sum |hallucinated| / sum |mentioned| over per-caption
// deduplicated object sets (0 when nothing is mentioned);
// CHAIR_S = captions with a hallucination / all captions.
ChairReport chair_score(std::span<const Caption> captions, const AnnotationSet& annotations);

void WriteChairReport(const ChairReport& report, std::ostream& out);
ChairReport ParseChairReport(std::istream& in);

}  // namespace prunekv
