// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/telemetry.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "prunekv/errors.h"

namespace prunekv {

using nlohmann::json;

AttentionHistory refresh_history(const AttentionHistory& history,
                                 std::span<const double> values, std::size_t step) {
  PRUNEKV_CHECK(history.values.empty() || values.size() == history.values.size(),
                "history has " + std::to_string(history.values.size()) +
                    " layers, refresh supplies " + std::to_string(values.size()));
  return AttentionHistory{{values.begin(), values.end()}, step};
}

TraceRecorder::TraceRecorder(TraceHeader header, std::ostream* sink) : sink_(sink) {
  trace_.header = std::move(header);
  if (sink_) {
    *sink_ << SerializeTraceHeader(trace_.header) << '\n';
    sink_->flush();
  }
}

const TraceEvent& TraceRecorder::record_step(const AttentionSnapshot& snapshot,
                                             const PruneReceipt* prune,
                                             const PolicyStatus& status,
                                             std::uint64_t cumulative_attention_flops,
                                             double wall_time_s,
                                             std::optional<std::uint32_t> token) {
  PRUNEKV_CHECK(trace_.events.empty() || snapshot.step > trace_.events.back().step,
                "step " + std::to_string(snapshot.step) + " recorded out of order");
  PRUNEKV_CHECK(!status.triggered || prune != nullptr, "triggered step without a receipt");
  TraceEvent ev;
  ev.step = snapshot.step;
  for (const LayerAttention& la : snapshot.layers) {
    ev.avg_visual.push_back(la.avg_visual);
    ev.visual_counts.push_back(la.visual.size());
  }
  ev.vote_count = status.vote_count;
  ev.prune_triggered = status.triggered;
  ev.prune_cnt = status.prune_cnt;
  ev.remaining_visual = status.remaining_visual;
  if (prune) {
    for (const LayerPrune& lp : prune->layers) ev.retained.push_back(lp.retained);
  }
  ev.attention_flops = cumulative_attention_flops;
  ev.wall_time_s = wall_time_s;
  ev.token = token;
  trace_.events.push_back(std::move(ev));
  if (sink_) {
    *sink_ << SerializeTraceEvent(trace_.events.back()) << '\n';
    sink_->flush();
  }
  return trace_.events.back();
}

std::string SerializeTraceHeader(const TraceHeader& h) {
  json j = {{"schema", h.schema},
            {"version", h.version},
            {"num_layers", h.num_layers},
            {"initial_visual", h.initial_visual},
            {"policy", h.policy},
            {"r", h.r},
            {"t", h.t},
            {"k", h.k},
            {"history_refresh", h.history_refresh}};
  return j.dump();
}

std::string SerializeTraceEvent(const TraceEvent& e) {
  json avg = json::array();
  for (const auto& a : e.avg_visual) avg.push_back(a ? json(*a) : json(nullptr));
  json j = {{"step", e.step},
            {"avg_visual", avg},
            {"visual_counts", e.visual_counts},
            {"vote_count", e.vote_count},
            {"prune_triggered", e.prune_triggered},
            {"prune_cnt", e.prune_cnt},
            {"remaining_visual", e.remaining_visual},
            {"retained", e.retained},
            {"attention_flops", e.attention_flops},
            {"wall_time_s", e.wall_time_s},
            {"token", e.token ? json(*e.token) : json(nullptr)}};
  return j.dump();
}

void WriteTrace(const Trace& trace, std::ostream& out) {
  out << SerializeTraceHeader(trace.header) << '\n';
  for (const TraceEvent& e : trace.events) out << SerializeTraceEvent(e) << '\n';
}

namespace {

TraceHeader ParseHeader(const json& j) {
  TraceHeader h;
  h.schema = j.at("schema").get<std::string>();
  h.version = j.at("version").get<int>();
  if (h.schema != kTraceSchema) throw FormatError("trace: unknown schema '" + h.schema + "'");
  if (h.version != kTraceVersion) {
    throw FormatError("trace: schema version " + std::to_string(h.version) +
                      " does not match supported version " + std::to_string(kTraceVersion));
  }
  h.num_layers = j.at("num_layers").get<std::size_t>();
  h.initial_visual = j.at("initial_visual").get<std::size_t>();
  h.policy = j.at("policy").get<std::string>();
  h.r = j.at("r").get<double>();
  h.t = j.at("t").get<std::size_t>();
  h.k = j.at("k").get<std::size_t>();
  h.history_refresh = j.at("history_refresh").get<std::string>();
  return h;
}

TraceEvent ParseEvent(const json& j) {
  TraceEvent e;
  e.step = j.at("step").get<std::size_t>();
  for (const json& a : j.at("avg_visual")) {
    e.avg_visual.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
  }
  e.visual_counts = j.at("visual_counts").get<std::vector<std::size_t>>();
  e.vote_count = j.at("vote_count").get<std::size_t>();
  e.prune_triggered = j.at("prune_triggered").get<bool>();
  e.prune_cnt = j.at("prune_cnt").get<std::size_t>();
  e.remaining_visual = j.at("remaining_visual").get<std::size_t>();
  e.retained = j.at("retained").get<std::vector<std::vector<std::size_t>>>();
  e.attention_flops = j.at("attention_flops").get<std::uint64_t>();
  e.wall_time_s = j.at("wall_time_s").get<double>();
  if (!j.at("token").is_null()) e.token = j.at("token").get<std::uint32_t>();
  return e;
}

}  // namespace

Trace ParseTrace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        trace.header = ParseHeader(j);
        have_header = true;
        continue;
      }
      TraceEvent e = ParseEvent(j);
      if (!trace.events.empty() && e.step <= trace.events.back().step) {
        throw FormatError("events out of step order");
      }
      trace.events.push_back(std::move(e));
    } catch (const FormatError& e) {
      throw FormatError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    } catch (const json::exception& e) {
      throw FormatError("trace: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError("trace: missing header line");
  return trace;
}

Trace ReadTraceFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace '" + path + "'");
  return ParseTrace(in);
}

void WriteTraceCsv(const Trace& trace, std::ostream& out) {
  out << "step,layer,avg_visual,visual_count,prune_triggered\n";
  const auto old_precision = out.precision(17);
  for (const TraceEvent& e : trace.events) {
    for (std::size_t l = 0; l < e.avg_visual.size(); ++l) {
      out << e.step << ',' << l << ',';
      if (e.avg_visual[l]) out << *e.avg_visual[l];
      out << ',' << (l < e.visual_counts.size() ? e.visual_counts[l] : 0) << ','
          << (e.prune_triggered ? 1 : 0) << '\n';
    }
  }
  out.precision(old_precision);
}

std::vector<MergedEvent> merge_traces(std::span<const Trace> traces) {
  std::vector<MergedEvent> merged;
  for (std::size_t s = 0; s < traces.size(); ++s) {
    for (const TraceEvent& e : traces[s].events) merged.push_back({s, e});
  }
  std::stable_sort(merged.begin(), merged.end(), [](const MergedEvent& a, const MergedEvent& b) {
    return a.event.step != b.event.step ? a.event.step < b.event.step : a.source < b.source;
  });
  return merged;
}

}  // namespace prunekv
