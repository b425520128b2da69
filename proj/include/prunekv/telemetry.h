// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunekv/kvcache.h"
#include "prunekv/model.h"

namespace prunekv {

// Per-layer historical average visual attention.
struct AttentionHistory {
  std::vector<double> values;
  std::size_t refresh_step = 0;

  bool operator==(const AttentionHistory&) const = default;
};

AttentionHistory refresh_history(const AttentionHistory& history,
                                 std::span<const double> values, std::size_t step);

inline constexpr std::string_view kTraceSchema = "prunekv.trace";
inline constexpr int kTraceVersion = 1;

struct TraceHeader {
  std::string schema{kTraceSchema};
  int version = kTraceVersion;
  std::size_t num_layers = 0;
  std::size_t initial_visual = 0;
  std::string policy = "none";
  double r = 0.0;
  std::size_t t = 0;
  std::size_t k = 0;
  std::string history_refresh = "prev-step";

  bool operator==(const TraceHeader&) const = default;
};

struct TraceEvent {
  std::size_t step = 0;
  std::vector<std::optional<double>> avg_visual;  // per layer
  std::vector<std::size_t> visual_counts;         // per layer, as attended
  std::size_t vote_count = 0;
  bool prune_triggered = false;
  std::size_t prune_cnt = 0;         // after this step
  std::size_t remaining_visual = 0;  // after this step
  std::vector<std::vector<std::size_t>> retained;  // per layer, when pruned
  std::uint64_t attention_flops = 0;               // cumulative
  double wall_time_s = 0.0;
  std::optional<std::uint32_t> token;  // token selected from this step's logits

  bool operator==(const TraceEvent&) const = default;
};

struct Trace {
  TraceHeader header;
  std::vector<TraceEvent> events;

  bool operator==(const Trace&) const = default;
};

// Policy counters attached to a recorded step.
struct PolicyStatus {
  std::size_t vote_count = 0;
  bool triggered = false;
  std::size_t prune_cnt = 0;
  std::size_t remaining_visual = 0;
};

// Collects TraceEvents in step order and optionally streams them as JSONL,
// flushing after every line.
class TraceRecorder {
 public:
  explicit TraceRecorder(TraceHeader header, std::ostream* sink = nullptr);

  const TraceEvent& record_step(const AttentionSnapshot& snapshot,
                                const PruneReceipt* prune, const PolicyStatus& status,
                                std::uint64_t cumulative_attention_flops,
                                double wall_time_s,
                                std::optional<std::uint32_t> token = std::nullopt);

  const Trace& trace() const { return trace_; }
  Trace Take() && { return std::move(trace_); }

 private:
  Trace trace_;
  std::ostream* sink_;
};

std::string SerializeTraceHeader(const TraceHeader& header);
std::string SerializeTraceEvent(const TraceEvent& event);
void WriteTrace(const Trace& trace, std::ostream& out);
// Throws FormatError on schema/version mismatch or malformed lines.
Trace ParseTrace(std::istream& in);
Trace ReadTraceFile(const std::string& path);

// One row per (step, layer): step,layer,avg_visual,visual_count,prune_triggered.
void WriteTraceCsv(const Trace& trace, std::ostream& out);

// Offline merge of per-beam (or per-run) traces, ordered by step then source.
struct MergedEvent {
  std::size_t source = 0;
  TraceEvent event;
};
std::vector<MergedEvent> merge_traces(std::span<const Trace> traces);

}  // namespace prunekv
