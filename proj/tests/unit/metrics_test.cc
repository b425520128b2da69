// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "prunekv/errors.h"
#include "prunekv/metrics.h"

namespace prunekv {
namespace {

const std::string kChairDir = std::string(PRUNEKV_FIXTURES) + "/chair/";

TEST(Flops, HandFormulaForOneStep) {
  const DecoderConfig c;  // 4 layers, 4 heads, d_k 16, d 64, vocab 256
  const std::vector<std::size_t> widths{81, 81, 81, 81};
  const StepFlops f = flops_for_step(c, widths);
  EXPECT_EQ(f.projection, 4u * 8 * 64 * 64);
  EXPECT_EQ(f.attention_score, 4u * 2 * 4 * 16 * 81);
  EXPECT_EQ(f.attention_value, f.attention_score);
  EXPECT_EQ(f.mlp, 4u * 4 * 64 * 256);
  EXPECT_EQ(f.unembedding, 2u * 64 * 256);
  EXPECT_EQ(f.total(), f.projection + f.attention() + f.mlp + f.unembedding);
}

TEST(Flops, AttentionIsLinearInWidth) {
  const DecoderConfig c;
  for (std::size_t w = 2; w < 200; w += 2) {
    const std::vector<std::size_t> full(4, w), half(4, w / 2);
    const StepFlops a = flops_for_step(c, full), b = flops_for_step(c, half);
    EXPECT_EQ(a.attention(), 2 * b.attention());
    EXPECT_GE(a.attention(), b.attention());
    EXPECT_EQ(a.projection + a.mlp, b.projection + b.mlp);
  }
}

TEST(Flops, RejectsBadWidths) {
  const DecoderConfig c;
  EXPECT_THROW(flops_for_step(c, std::vector<std::size_t>{1, 2}), ContractViolation);
  EXPECT_THROW(flops_for_step(c, std::vector<std::size_t>{1, 0, 1, 1}), ContractViolation);
}

TEST(FlopsLedger, PrefillOnlyTotalsMatchStepSum) {
  const DecoderConfig c;
  FlopsLedger ledger;
  std::uint64_t expect = 0, expect_attn = 0;
  for (std::size_t i = 1; i <= 80; ++i) {
    const StepFlops f = flops_for_step(c, std::vector<std::size_t>(4, i));
    ledger.Add(1, f);
    expect += f.total();
    expect_attn += f.attention();
  }
  ASSERT_EQ(ledger.entries().size(), 1u);
  EXPECT_EQ(ledger.total(), expect);
  EXPECT_EQ(ledger.attention_total(), expect_attn);
  EXPECT_EQ(ledger.entries()[0].widths, std::vector<std::size_t>(4, 80));
  EXPECT_THROW(ledger.Add(0, flops_for_step(c, std::vector<std::size_t>(4, 1))),
               ContractViolation);

  std::stringstream ss;
  ledger.WriteJson(ss);
  const auto j = nlohmann::json::parse(ss.str());
  EXPECT_EQ(j["total"].get<std::uint64_t>(), expect);
  EXPECT_EQ(j["steps"].size(), 1u);
}

TEST(Latency, StatisticsAfterWarmup) {
  std::vector<double> s(53);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i < kLatencyWarmup ? 100.0 : double(i - 2);
  // Post-warmup samples are 1..50.
  const LatencyStats st = measure_latency(s);
  EXPECT_EQ(st.samples, 50u);
  EXPECT_DOUBLE_EQ(st.mean_s, 25.5);
  EXPECT_DOUBLE_EQ(st.median_s, 25.5);
  EXPECT_DOUBLE_EQ(st.p95_s, 48.0);
}

TEST(Latency, RequiresEnoughSamples) {
  EXPECT_THROW(measure_latency(std::vector<double>(kMinLatencySamples - 1, 1.0)),
               ContractViolation);
  EXPECT_NO_THROW(measure_latency(std::vector<double>(kMinLatencySamples, 1.0)));
}

AnnotationSet FixtureAnnotations() { return LoadAnnotationsFile(kChairDir + "annotations.json"); }

TEST(Chair, SingleCaptionThirdHallucinated) {
  std::stringstream a(R"({"images":[{"id":"x","objects":["dog","frisbee"]},
                                    {"id":"y","objects":["car"]}]})");
  const AnnotationSet ann = ParseAnnotations(a);
  const std::vector<Caption> caps{{"x", "A dog leaps for a frisbee beside a car."}};
  const ChairReport r = chair_score(caps, ann);
  EXPECT_EQ(r.chair_i, 1.0 / 3.0);
  EXPECT_EQ(r.chair_s, 1.0);
  EXPECT_EQ(r.per_caption[0].hallucinated, std::set<std::string>{"car"});
}

TEST(Chair, OneCleanOneHallucinated) {
  const AnnotationSet ann = FixtureAnnotations();
  const std::vector<Caption> caps{{"2", "A cat on a couch."}, {"5", "A bus and a dog."}};
  EXPECT_EQ(chair_score(caps, ann).chair_s, 0.5);
}

TEST(Chair, FixtureCorpusMatchesHandComputation) {
  const ChairReport r =
      chair_score(LoadCaptionsFile(kChairDir + "captions.jsonl"), FixtureAnnotations());
  std::ifstream in(kChairDir + "expected.json");
  const auto expected = nlohmann::json::parse(in);

  EXPECT_EQ(r.mentioned_objects, expected["mentioned_objects"].get<std::size_t>());
  EXPECT_EQ(r.hallucinated_objects, expected["hallucinated_objects"].get<std::size_t>());
  EXPECT_EQ(r.hallucinated_captions, expected["hallucinated_captions"].get<std::size_t>());
  EXPECT_EQ(r.chair_i, 7.0 / 22.0);
  EXPECT_EQ(r.chair_s, 6.0 / 10.0);
  ASSERT_EQ(r.per_caption.size(), expected["per_caption"].size());
  for (std::size_t i = 0; i < r.per_caption.size(); ++i) {
    const auto& e = expected["per_caption"][i];
    EXPECT_EQ(r.per_caption[i].id, e["id"].get<std::string>());
    EXPECT_EQ(r.per_caption[i].mentioned, e["mentioned"].get<std::set<std::string>>()) << i;
    EXPECT_EQ(r.per_caption[i].hallucinated, e["hallucinated"].get<std::set<std::string>>()) << i;
  }
}

TEST(Chair, LongestPhraseWins) {
  const AnnotationSet ann = FixtureAnnotations();
  EXPECT_EQ(extract_objects("a dining table", ann), std::set<std::string>{"dining table"});
  EXPECT_EQ(extract_objects("the table", ann), std::set<std::string>{"dining table"});
  EXPECT_EQ(extract_objects("teddy bear", ann), std::set<std::string>{"teddy bear"});
  EXPECT_EQ(extract_objects("dogsled carpet", ann), std::set<std::string>{});
}

TEST(Chair, NothingMentionedGivesZero) {
  const AnnotationSet ann = FixtureAnnotations();
  const std::vector<Caption> caps{{"8", "An empty sky."}};
  const ChairReport r = chair_score(caps, ann);
  EXPECT_EQ(r.chair_i, 0.0);
  EXPECT_EQ(r.chair_s, 0.0);
}

TEST(Chair, MissingAnnotationIsContractViolation) {
  const std::vector<Caption> caps{{"404", "A dog."}};
  EXPECT_THROW(chair_score(caps, FixtureAnnotations()), ContractViolation);
}

TEST(Chair, ConflictingSynonymsRejected) {
  std::stringstream a(R"({"images":[],"synonyms":{"Bike":"bicycle","bike":"motorcycle"}})");
  EXPECT_THROW(ParseAnnotations(a), FormatError);
  std::stringstream b("not json");
  EXPECT_THROW(ParseAnnotations(b), FormatError);
  std::stringstream c("{\"id\": \"1\"}\n");
  EXPECT_THROW(ParseCaptions(c), FormatError);
}

TEST(Chair, ReportRoundTrips) {
  const ChairReport r =
      chair_score(LoadCaptionsFile(kChairDir + "captions.jsonl"), FixtureAnnotations());
  std::stringstream ss;
  WriteChairReport(r, ss);
  const ChairReport back = ParseChairReport(ss);
  EXPECT_EQ(back.chair_i, r.chair_i);
  EXPECT_EQ(back.chair_s, r.chair_s);
  ASSERT_EQ(back.per_caption.size(), r.per_caption.size());
  for (std::size_t i = 0; i < r.per_caption.size(); ++i) {
    EXPECT_EQ(back.per_caption[i].hallucinated, r.per_caption[i].hallucinated);
  }
}

}  // namespace
}  // namespace prunekv
