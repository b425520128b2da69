// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/commands.h"

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "prunekv/errors.h"

namespace prunekv {

using nlohmann::json;

namespace {

std::ofstream OpenOut(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

void cmd_genmodel(const DecoderConfig& config, std::uint64_t seed, const std::string& out_path) {
  config.Validate();
  SaveWeightsFile(init_weights(config, seed), out_path);
}

DecoderWeights ResolveWeights(const RunConfig& config) {
  if (!config.model.weights_path.empty()) return LoadWeightsFile(config.model.weights_path);
  return init_weights(config.model.config, config.model.seed);
}

void WriteTokens(const std::vector<TokenId>& tokens, std::ostream& out) {
  for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
  out << '\n';
}

RunArtifacts cmd_run(const RunConfig& config) {
  config.Validate();
  const DecoderWeights weights = ResolveWeights(config);
  const DecodeRequest request = config.ToRequest(weights.config);
  request.Validate(weights.config);

  std::error_code ec;
  std::filesystem::create_directories(config.output.dir, ec);
  if (ec) throw IoError("cannot create output dir '" + config.output.dir + "': " + ec.message());
  const std::filesystem::path dir(config.output.dir);

  RunArtifacts art;
  art.tokens_path = (dir / "tokens.txt").string();
  art.trace_path = (dir / "trace.jsonl").string();
  art.csv_path = (dir / "attention.csv").string();
  art.flops_path = (dir / "flops.json").string();

  std::ofstream trace_out = OpenOut(art.trace_path);
  art.result = decode(weights, request, &trace_out);

  std::ofstream tokens_out = OpenOut(art.tokens_path);
  WriteTokens(art.result.tokens, tokens_out);
  std::ofstream csv_out = OpenOut(art.csv_path);
  WriteTraceCsv(art.result.trace, csv_out);
  std::ofstream flops_out = OpenOut(art.flops_path);
  art.result.flops.WriteJson(flops_out);

  if (!config.output.cache_dump.empty()) {
    // The final cache is reconstructed by replaying the winning token lineage.
    DecodeStream stream(weights, request.policy, TraceHeader{});
    stream.Prefill(request.prompt, nullptr);
    for (std::size_t i = 0; i + 1 < art.result.tokens.size(); ++i) {
      stream.Advance(art.result.tokens[i], request.prompt.size() + i, i + 2, nullptr);
    }
    std::ofstream dump = OpenOut(config.output.cache_dump);
    stream.cache().DumpJsonl(dump);
  }
  return art;
}

// ---------------------------------------------------------------------------
// Replay

PolicyConfig PolicyFromHeader(const TraceHeader& header) {
  PolicyConfig p;
  p.kind = ParsePolicyKind(header.policy);
  p.r = header.r;
  p.t = header.t;
  p.k = header.k;
  p.history_refresh = ParseHistoryRefresh(header.history_refresh);
  return p;
}

namespace {

std::vector<double> DefinedAverages(const TraceEvent& e) {
  std::vector<double> v;
  for (std::size_t l = 0; l < e.avg_visual.size(); ++l) {
    if (!e.avg_visual[l]) {
      throw FormatError("trace: step " + std::to_string(e.step) + " layer " +
                        std::to_string(l) + " has no visual attention average");
    }
    v.push_back(*e.avg_visual[l]);
  }
  return v;
}

}  // namespace

ReplayReport replay_trace(const Trace& trace, const PolicyConfig& policy) {
  ReplayReport report;
  report.policy = std::string(PolicyKindName(policy.kind));
  report.history_refresh = std::string(HistoryRefreshName(policy.history_refresh));
  if (trace.events.empty()) return report;
  PRUNEKV_CHECK(trace.events.front().step == 1, "trace must start at step 1");

  std::optional<PruneState> state;
  if (policy.kind == PolicyKind::kAdaptive) {
    state = PruneState::Initialize(policy.r, policy.t, trace.header.initial_visual,
                                   DefinedAverages(trace.events.front()),
                                   policy.history_refresh, policy.shared_indices);
  }
  std::size_t one_shot_remaining = trace.header.initial_visual;
  std::size_t one_shot_count = 0;

  auto diverge = [&](std::size_t step, const char* field, auto recorded, auto replayed) {
    if (recorded != replayed) {
      report.divergences.push_back(
          {step, field, std::to_string(recorded), std::to_string(replayed)});
    }
  };

  for (const TraceEvent& e : trace.events) {
    if (e.prune_triggered) report.recorded_triggers.push_back(e.step);
    if (e.step == 1) continue;
    ReplayStep rs;
    rs.step = e.step;
    switch (policy.kind) {
      case PolicyKind::kAdaptive: {
        const ControlOutcome ctrl = adaptive_control(*state, DefinedAverages(e), e.step);
        rs.votes = ctrl.votes;
        rs.trigger = ctrl.trigger;
        rs.prune_cnt = state->prune_cnt;
        rs.remaining_visual = state->n;
        break;
      }
      case PolicyKind::kFixedTopK:
      case PolicyKind::kRandomKeep:
      case PolicyKind::kBottomK:
        rs.trigger = e.step == 2;
        if (rs.trigger) {
          one_shot_remaining = policy.k;
          one_shot_count = 1;
        }
        rs.prune_cnt = one_shot_count;
        rs.remaining_visual = one_shot_remaining;
        break;
      case PolicyKind::kNone:
        rs.remaining_visual = trace.header.initial_visual;
        break;
    }
    if (rs.trigger) report.replayed_triggers.push_back(rs.step);
    diverge(e.step, "prune_triggered", static_cast<int>(e.prune_triggered),
            static_cast<int>(rs.trigger));
    diverge(e.step, "vote_count", e.vote_count, rs.votes.size());
    diverge(e.step, "prune_cnt", e.prune_cnt, rs.prune_cnt);
    diverge(e.step, "remaining_visual", e.remaining_visual, rs.remaining_visual);
    report.steps.push_back(std::move(rs));
  }
  return report;
}

void WriteReplayReport(const ReplayReport& report, std::ostream& out) {
  json div = json::array();
  for (const Divergence& d : report.divergences) {
    div.push_back({{"step", d.step},
                   {"field", d.field},
                   {"recorded", d.recorded},
                   {"replayed", d.replayed}});
  }
  const auto first = report.first_divergence();
  json j = {{"policy", report.policy},
            {"history_refresh", report.history_refresh},
            {"recorded_triggers", report.recorded_triggers},
            {"replayed_triggers", report.replayed_triggers},
            {"first_divergence_step", first ? json(*first) : json(nullptr)},
            {"divergences", div}};
  out << j.dump(2) << '\n';
}

ReplayReport cmd_replay(const std::string& trace_path, const std::optional<RunConfig>& config) {
  const Trace trace = ReadTraceFile(trace_path);
  PolicyConfig policy = config ? config->policy : PolicyFromHeader(trace.header);
  return replay_trace(trace, policy);
}

// ---------------------------------------------------------------------------
// CHAIR

ChairReport cmd_eval_chair(const std::string& captions_path, const std::string& annotations_path) {
  const AnnotationSet annotations = LoadAnnotationsFile(annotations_path);
  const std::vector<Caption> captions = LoadCaptionsFile(captions_path);
  return chair_score(captions, annotations);
}

// ---------------------------------------------------------------------------
// Bench

BenchReport cmd_bench(const RunConfig& config, std::size_t repetitions) {
  if (repetitions < kMinBenchRepetitions) {
    throw ConfigError("bench: repetitions must be >= " + std::to_string(kMinBenchRepetitions));
  }
  config.Validate();
  const DecoderWeights weights = ResolveWeights(config);
  const DecodeRequest base = config.ToRequest(weights.config);

  std::vector<PolicyConfig> policies{PolicyConfig{}};
  if (config.policy.kind != PolicyKind::kNone) policies.push_back(config.policy);

  BenchReport report;
  report.repetitions = repetitions;
  std::vector<std::vector<double>> pooled(policies.size());
  report.entries.resize(policies.size());
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t p = 0; p < policies.size(); ++p) {
      DecodeRequest request = base;
      request.policy = policies[p];
      const DecodeResult result = decode(weights, request);
      const LatencyStats run = measure_latency(result.step_latency_s);
      BenchEntry& entry = report.entries[p];
      entry.policy = std::string(PolicyKindName(policies[p].kind));
      entry.rep_mean_s.push_back(run.mean_s);
      entry.attention_flops = result.flops.attention_total();
      entry.total_flops = result.flops.total();
      entry.prune_events = 0;
      for (const TraceEvent& e : result.trace.events) entry.prune_events += e.prune_triggered;
      pooled[p].insert(pooled[p].end(), result.step_latency_s.begin() + kLatencyWarmup,
                       result.step_latency_s.end());
    }
  }
  for (std::size_t p = 0; p < policies.size(); ++p) {
    report.entries[p].latency = latency_stats(pooled[p]);
  }
  return report;
}

bool BenchReport::operator==(const BenchReport& o) const {
  if (repetitions != o.repetitions || entries.size() != o.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const BenchEntry& a = entries[i];
    const BenchEntry& b = o.entries[i];
    if (a.policy != b.policy || a.rep_mean_s != b.rep_mean_s ||
        a.attention_flops != b.attention_flops || a.total_flops != b.total_flops ||
        a.prune_events != b.prune_events || a.latency.samples != b.latency.samples ||
        a.latency.mean_s != b.latency.mean_s || a.latency.median_s != b.latency.median_s ||
        a.latency.p95_s != b.latency.p95_s) {
      return false;
    }
  }
  return true;
}

void WriteBenchReport(const BenchReport& report, std::ostream& out) {
  json entries = json::array();
  for (const BenchEntry& e : report.entries) {
    entries.push_back({{"policy", e.policy},
                       {"latency",
                        {{"samples", e.latency.samples},
                         {"mean_s", e.latency.mean_s},
                         {"median_s", e.latency.median_s},
                         {"p95_s", e.latency.p95_s}}},
                       {"rep_mean_s", e.rep_mean_s},
                       {"attention_flops", e.attention_flops},
                       {"total_flops", e.total_flops},
                       {"prune_events", e.prune_events}});
  }
  json j = {{"repetitions", report.repetitions}, {"entries", entries}};
  out << j.dump(2) << '\n';
}

BenchReport ParseBenchReport(std::istream& in) {
  try {
    const json j = json::parse(in);
    BenchReport r;
    r.repetitions = j.at("repetitions").get<std::size_t>();
    for (const json& e : j.at("entries")) {
      BenchEntry b;
      b.policy = e.at("policy").get<std::string>();
      const json& l = e.at("latency");
      b.latency.samples = l.at("samples").get<std::size_t>();
      b.latency.mean_s = l.at("mean_s").get<double>();
      b.latency.median_s = l.at("median_s").get<double>();
      b.latency.p95_s = l.at("p95_s").get<double>();
      b.rep_mean_s = e.at("rep_mean_s").get<std::vector<double>>();
      b.attention_flops = e.at("attention_flops").get<std::uint64_t>();
      b.total_flops = e.at("total_flops").get<std::uint64_t>();
      b.prune_events = e.at("prune_events").get<std::size_t>();
      r.entries.push_back(std::move(b));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bench report: ") + e.what());
  }
}

}  // namespace prunekv
