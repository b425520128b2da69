// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "prunekv/decode.h"
#include "prunekv/metrics.h"
#include "prunekv/run_config.h"
#include "prunekv/telemetry.h"

namespace prunekv {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitContract = 3,
  kExitIo = 4,
};

// genmodel: writes seeded weights in PKVW format.
void cmd_genmodel(const DecoderConfig& config, std::uint64_t seed, const std::string& out_path);

// Loads the weight file named by the config or synthesises weights from
// model.seed.
DecoderWeights ResolveWeights(const RunConfig& config);

struct RunArtifacts {
  DecodeResult result;
  std::string tokens_path, trace_path, csv_path, flops_path;
};

// run: decodes one request and writes tokens.txt, trace.jsonl, attention.csv
// and flops.json into output.dir.
RunArtifacts cmd_run(const RunConfig& config);

// Token file: ids separated by single spaces, one trailing newline.
void WriteTokens(const std::vector<TokenId>& tokens, std::ostream& out);

struct ReplayStep {
  std::size_t step = 0;
  std::vector<std::size_t> votes;
  bool trigger = false;
  std::size_t prune_cnt = 0;
  std::size_t remaining_visual = 0;
};

struct Divergence {
  std::size_t step = 0;
  std::string field;
  std::string recorded;
  std::string replayed;
};

struct ReplayReport {
  std::string policy;
  std::string history_refresh;
  std::vector<ReplayStep> steps;
  std::vector<std::size_t> recorded_triggers;
  std::vector<std::size_t> replayed_triggers;
  std::vector<Divergence> divergences;

  std::optional<std::size_t> first_divergence() const {
    if (divergences.empty()) return std::nullopt;
    return divergences.front().step;
  }
};

// Re-runs the pruning control decisions from the recorded per-layer averages
// alone (no model forward) and compares them with the recorded triggers,
// vote counts and visual counts.
ReplayReport replay_trace(const Trace& trace, const PolicyConfig& policy);

void WriteReplayReport(const ReplayReport& report, std::ostream& out);

// replay: trace file plus the policy of a run config (falls back to the
// trace header when `config` is empty).
ReplayReport cmd_replay(const std::string& trace_path, const std::optional<RunConfig>& config);

// Policy block described by a trace header.
PolicyConfig PolicyFromHeader(const TraceHeader& header);

// eval-chair
ChairReport cmd_eval_chair(const std::string& captions_path, const std::string& annotations_path);

inline constexpr std::size_t kMinBenchRepetitions = 3;

struct BenchEntry {
  std::string policy;
  LatencyStats latency;          // pooled post-warmup samples over repetitions
  std::vector<double> rep_mean_s;
  std::uint64_t attention_flops = 0;
  std::uint64_t total_flops = 0;
  std::size_t prune_events = 0;
};

struct BenchReport {
  std::size_t repetitions = 0;
  std::vector<BenchEntry> entries;  // "none" first, then the configured policy

  bool operator==(const BenchReport&) const;
};

// bench: runs the no-prune baseline and the configured policy side by side,
// interleaving repetitions.
BenchReport cmd_bench(const RunConfig& config, std::size_t repetitions);

void WriteBenchReport(const BenchReport& report, std::ostream& out);
BenchReport ParseBenchReport(std::istream& in);

}  // namespace prunekv
