// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include "prunekv/metrics.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "prunekv/errors.h"

namespace prunekv {

using nlohmann::json;

StepFlops flops_for_step(const DecoderConfig& config, std::span<const std::size_t> widths) {
  PRUNEKV_CHECK(widths.size() == config.num_layers, "one width per layer required");
  const std::uint64_t d = config.hidden_dim;
  const std::uint64_t per_head = 2ull * config.num_heads * config.head_dim;
  StepFlops f;
  f.widths.assign(widths.begin(), widths.end());
  for (std::size_t w : widths) {
    PRUNEKV_CHECK(w >= 1, "cache width must be >= 1");
    f.projection += 8 * d * d;
    f.attention_score += per_head * w;
    f.attention_value += per_head * w;
    f.mlp += 4 * d * config.mlp_dim();
  }
  f.unembedding = 2 * d * config.vocab_size;
  return f;
}

void FlopsLedger::Add(std::size_t step, const StepFlops& flops) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const StepFlops& e) { return e.step == step; });
  if (it == entries_.end()) {
    PRUNEKV_CHECK(entries_.empty() || step > entries_.back().step, "ledger steps out of order");
    StepFlops e = flops;
    e.step = step;
    entries_.push_back(std::move(e));
    return;
  }
  it->projection += flops.projection;
  it->attention_score += flops.attention_score;
  it->attention_value += flops.attention_value;
  it->mlp += flops.mlp;
  it->unembedding += flops.unembedding;
  it->widths = flops.widths;
}

std::uint64_t FlopsLedger::attention_total() const {
  std::uint64_t s = 0;
  for (const StepFlops& e : entries_) s += e.attention();
  return s;
}

std::uint64_t FlopsLedger::total() const {
  std::uint64_t s = 0;
  for (const StepFlops& e : entries_) s += e.total();
  return s;
}

void FlopsLedger::WriteJson(std::ostream& out) const {
  json steps = json::array();
  for (const StepFlops& e : entries_) {
    steps.push_back({{"step", e.step},
                     {"widths", e.widths},
                     {"projection", e.projection},
                     {"attention_score", e.attention_score},
                     {"attention_value", e.attention_value},
                     {"mlp", e.mlp},
                     {"unembedding", e.unembedding},
                     {"total", e.total()}});
  }
  json j = {{"steps", steps}, {"attention_total", attention_total()}, {"total", total()}};
  out << j.dump(2) << '\n';
}

LatencyStats measure_latency(std::span<const double> per_token_seconds) {
  PRUNEKV_CHECK(per_token_seconds.size() >= kMinLatencySamples,
                "latency needs >= " + std::to_string(kMinLatencySamples) +
                    " decode steps, got " + std::to_string(per_token_seconds.size()));
  return latency_stats(per_token_seconds.subspan(kLatencyWarmup));
}

LatencyStats latency_stats(std::span<const double> samples) {
  PRUNEKV_CHECK(!samples.empty(), "no latency samples");
  std::vector<double> s(samples.begin(), samples.end());
  LatencyStats st;
  st.samples = s.size();
  double sum = 0.0;
  for (double v : s) sum += v;
  st.mean_s = sum / static_cast<double>(s.size());
  std::sort(s.begin(), s.end());
  const std::size_t mid = s.size() / 2;
  st.median_s = s.size() % 2 ? s[mid] : 0.5 * (s[mid - 1] + s[mid]);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(s.size())));
  st.p95_s = s[std::max<std::size_t>(rank, 1) - 1];
  return st;
}

// ---------------------------------------------------------------------------
// CHAIR

namespace {

std::string Lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> Words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace

AnnotationSet ParseAnnotations(std::istream& in) {
  AnnotationSet a;
  try {
    const json j = json::parse(in);
    for (const json& img : j.at("images")) {
      const std::string id = img.at("id").is_string() ? img.at("id").get<std::string>()
                                                      : img.at("id").dump();
      auto& labels = a.objects[id];
      for (const json& o : img.at("objects")) labels.insert(Lower(o.get<std::string>()));
    }
    if (j.contains("synonyms")) {
      for (const auto& [surface, canonical] : j.at("synonyms").items()) {
        const std::string key = Lower(surface);
        const std::string value = Lower(canonical.get<std::string>());
        auto [it, inserted] = a.synonyms.emplace(key, value);
        if (!inserted && it->second != value) {
          throw FormatError("annotations: surface form '" + key + "' maps to two labels");
        }
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotations: ") + e.what());
  }
  std::vector<std::string> canon;
  for (const auto& [surface, label] : a.synonyms) canon.push_back(label);
  for (const auto& [id, labels] : a.objects) canon.insert(canon.end(), labels.begin(), labels.end());
  for (const std::string& c : canon) a.synonyms.emplace(c, c);
  return a;
}

AnnotationSet LoadAnnotationsFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations '" + path + "'");
  return ParseAnnotations(in);
}

std::vector<Caption> ParseCaptions(std::istream& in) {
  std::vector<Caption> captions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Caption c;
      c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      c.text = j.at("text").get<std::string>();
      captions.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw FormatError("captions: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return captions;
}

std::vector<Caption> LoadCaptionsFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open captions '" + path + "'");
  return ParseCaptions(in);
}

std::set<std::string> extract_objects(const std::string& text, const AnnotationSet& annotations) {
  // Surface forms split into word sequences, grouped by length (longest first).
  std::map<std::size_t, std::vector<std::pair<std::vector<std::string>, const std::string*>>,
           std::greater<>>
      phrases;
  for (const auto& [surface, canonical] : annotations.synonyms) {
    std::vector<std::string> w = Words(surface);
    if (!w.empty()) phrases[w.size()].emplace_back(std::move(w), &canonical);
  }
  const std::vector<std::string> words = Words(text);
  std::set<std::string> found;
  for (std::size_t i = 0; i < words.size();) {
    std::size_t advance = 1;
    for (const auto& [len, group] : phrases) {
      if (i + len > words.size()) continue;
      const auto match = std::find_if(group.begin(), group.end(), [&](const auto& p) {
        return std::equal(p.first.begin(), p.first.end(), words.begin() + static_cast<std::ptrdiff_t>(i));
      });
      if (match != group.end()) {
        found.insert(*match->second);
        advance = len;
        break;
      }
    }
    i += advance;
  }
  return found;
}

ChairReport chair_score(std::span<const Caption> captions, const AnnotationSet& annotations) {
  ChairReport r;
  for (const Caption& c : captions) {
    auto gt = annotations.objects.find(c.id);
    PRUNEKV_CHECK(gt != annotations.objects.end(),
                  "caption '" + c.id + "' has no annotation entry");
    CaptionScore s;
    s.id = c.id;
    s.mentioned = extract_objects(c.text, annotations);
    for (const std::string& o : s.mentioned) {
      if (!gt->second.count(o)) s.hallucinated.insert(o);
    }
    r.mentioned_objects += s.mentioned.size();
    r.hallucinated_objects += s.hallucinated.size();
    r.hallucinated_captions += s.hallucinated.empty() ? 0 : 1;
    r.per_caption.push_back(std::move(s));
  }
  r.num_captions = captions.size();
  r.chair_i = r.mentioned_objects == 0 ? 0.0
                                       : static_cast<double>(r.hallucinated_objects) /
                                             static_cast<double>(r.mentioned_objects);
  r.chair_s = r.num_captions == 0 ? 0.0
                                  : static_cast<double>(r.hallucinated_captions) /
                                        static_cast<double>(r.num_captions);
  return r;
}

void WriteChairReport(const ChairReport& r, std::ostream& out) {
  json per = json::array();
  for (const CaptionScore& s : r.per_caption) {
    per.push_back({{"id", s.id}, {"mentioned", s.mentioned}, {"hallucinated", s.hallucinated}});
  }
  json j = {{"chair_s", r.chair_s},
            {"chair_i", r.chair_i},
            {"num_captions", r.num_captions},
            {"hallucinated_captions", r.hallucinated_captions},
            {"mentioned_objects", r.mentioned_objects},
            {"hallucinated_objects", r.hallucinated_objects},
            {"per_caption", per}};
  out << j.dump(2) << '\n';
}

ChairReport ParseChairReport(std::istream& in) {
  try {
    const json j = json::parse(in);
    ChairReport r;
    r.chair_s = j.at("chair_s").get<double>();
    r.chair_i = j.at("chair_i").get<double>();
    r.num_captions = j.at("num_captions").get<std::size_t>();
    r.hallucinated_captions = j.at("hallucinated_captions").get<std::size_t>();
    r.mentioned_objects = j.at("mentioned_objects").get<std::size_t>();
    r.hallucinated_objects = j.at("hallucinated_objects").get<std::size_t>();
    for (const json& p : j.at("per_caption")) {
      r.per_caption.push_back({p.at("id").get<std::string>(),
                               p.at("mentioned").get<std::set<std::string>>(),
                               p.at("hallucinated").get<std::set<std::string>>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("chair report: ") + e.what());
  }
}

}  // namespace prunekv
