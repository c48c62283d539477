// Copyright 2026 The SlotForge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "slotforge/evaluation.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace slotforge;

namespace {

std::string random_word(std::mt19937_64 &rng) {
  static const std::string alphabet = "abc d";
  std::string s;
  const int n = static_cast<int>(rng() % 7);
  for (int i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

ReferenceSchema reference(std::map<std::string, std::set<std::string>> slots) {
  ReferenceSchema r;
  for (const auto &[name, values] : slots) r.in_corpus_slots.insert(name);
  r.slots = std::move(slots);
  return r;
}

InducedSchema schema_with_values(const std::vector<std::vector<std::string>> &values) {
  InducedSchema s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SlotCluster c;
    c.label = std::to_string(i);
    for (const auto &v : values[i]) c.values.push_back({v, 1});
    s.slots.push_back(std::move(c));
  }
  return s;
}

SlotMapping named(const std::vector<std::optional<std::string>> &names) {
  SlotMapping m;
  for (const auto &n : names) m.push_back({n, 1.0});
  return m;
}

}  // namespace

TEST(Fuzzy, Examples) {
  EXPECT_EQ(fuzzy("cheap", "cheap"), 1.0);
  EXPECT_EQ(fuzzy("Cheap ", "cheap"), 1.0);
  EXPECT_DOUBLE_EQ(fuzzy("cheap", "cheep"), 0.8);
  EXPECT_EQ(fuzzy("abc", "xyz"), 0.0);
  EXPECT_EQ(fuzzy("", ""), 1.0);
  EXPECT_EQ(fuzzy("", "abc"), 0.0);
}

TEST(Fuzzy, MatchesLevenshteinOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_word(rng), b = random_word(rng);
    const auto x = normalize_text(a), y = normalize_text(b);
    EXPECT_EQ(levenshtein(x, y), oracle::levenshtein(x, y));
    const double f = fuzzy(a, b);
    EXPECT_EQ(f, fuzzy(b, a));
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    EXPECT_EQ(f == 1.0, x == y) << '"' << a << "\" vs \"" << b << '"';
    const std::size_t m = std::max(x.size(), y.size());
    if (m > 0) EXPECT_DOUBLE_EQ(f, 1.0 - static_cast<double>(oracle::levenshtein(x, y)) / m);
  }
}

TEST(TypePrf, CountsAssignedNames) {
  const auto ref = reference({{"area", {}}, {"food", {}}, {"price", {}}, {"day", {}}});
  const auto t = schema_type_prf(named({"area", "food", std::nullopt, "area", "hotel-name"}), ref);
  EXPECT_EQ(t.n_clusters, 5u);
  EXPECT_EQ(t.assigned.size(), 3u);
  EXPECT_DOUBLE_EQ(t.prf.p, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.prf.r, 0.5);
  EXPECT_DOUBLE_EQ(t.prf.f1, 2 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5));
}

TEST(TypePrf, NothingAssignedScoresZero) {
  const auto t = schema_type_prf(named({std::nullopt}), reference({{"area", {}}}));
  EXPECT_EQ(t.prf.p, 0.0);
  EXPECT_EQ(t.prf.r, 0.0);
  EXPECT_EQ(t.prf.f1, 0.0);
  EXPECT_THROW(schema_type_prf({}, ReferenceSchema{}), Error);
}

TEST(TypePrf, RecallIsDistinctCorrectNamesOverReferenceSize) {
  std::mt19937_64 rng(9);
  const std::vector<std::string> pool{"a", "b", "c", "d", "e", "x", "y"};
  const auto ref = reference({{"a", {}}, {"b", {}}, {"c", {}}, {"d", {}}, {"e", {}}});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::optional<std::string>> names;
    std::set<std::string> distinct;
    const int k = static_cast<int>(rng() % 10);
    for (int i = 0; i < k; ++i) {
      if (rng() % 4 == 0) {
        names.push_back(std::nullopt);
      } else {
        names.push_back(pool[rng() % pool.size()]);
        distinct.insert(*names.back());
      }
    }
    std::size_t correct = 0;
    for (const auto &n : distinct) correct += ref.in_corpus_slots.count(n);
    const auto t = schema_type_prf(named(names), ref);
    EXPECT_DOUBLE_EQ(t.prf.r, correct / 5.0);
    EXPECT_DOUBLE_EQ(t.prf.p, distinct.empty() ? 0.0 : static_cast<double>(correct) / distinct.size());
  }
}

TEST(ValuePrf, ExactAndFuzzyValues) {
  const auto ref = reference({{"area", {"north", "south"}}, {"food", {"thai"}}});
  const auto schema = schema_with_values({{"north", "south"}, {"thai", "thaii"}, {"junk"}});
  const auto v = schema_value_prf(schema, named({"area", "food", std::nullopt}), ref);
  ASSERT_EQ(v.per_type.size(), 2u);
  EXPECT_EQ(v.per_type.at("area").p, 1.0);
  EXPECT_EQ(v.per_type.at("area").r, 1.0);
  // "thaii" scores 0.8 against "thai".
  EXPECT_DOUBLE_EQ(v.per_type.at("food").p, 0.9);
  EXPECT_DOUBLE_EQ(v.per_type.at("food").r, 1.0);
  EXPECT_DOUBLE_EQ(v.prf.p, 0.95);
  EXPECT_DOUBLE_EQ(v.prf.f1, (1.0 + v.per_type.at("food").f1) / 2.0);
}

TEST(ValuePrf, ClustersSharingANameArePooled) {
  const auto ref = reference({{"area", {"north", "south"}}});
  const auto v = schema_value_prf(schema_with_values({{"north"}, {"south"}}), named({"area", "area"}), ref);
  EXPECT_EQ(v.prf.p, 1.0);
  EXPECT_EQ(v.prf.r, 1.0);
}

TEST(ValuePrf, NoMappedTypeScoresZero) {
  const auto ref = reference({{"area", {"north"}}});
  const auto v = schema_value_prf(schema_with_values({{"north"}}), named({std::nullopt}), ref);
  EXPECT_TRUE(v.per_type.empty());
  EXPECT_EQ(v.prf.f1, 0.0);
}

TEST(Dst, TurnAndJointExamples) {
  // Turn 1 is right, turn 2 misses the new day value.
  const std::vector<DialogTurns> gold{{{{"area", "north"}}, {{"day", "friday"}}}};
  const std::vector<DialogTurns> pred{{{{"area", "north"}}, {}}};
  const auto s = dst_scores(pred, gold);
  EXPECT_EQ(s.turns, 2u);
  EXPECT_DOUBLE_EQ(s.turn_f1, 0.5);
  // Joint at turn 2: pred {area}, gold {area, day} -> p 1, r 0.5.
  EXPECT_DOUBLE_EQ(s.joint_f1, (1.0 + 2.0 / 3.0) / 2.0);
}

TEST(Dst, EmptyAgainstEmptyIsPerfect) {
  const auto s = dst_scores({{{}, {}}}, {{{}, {}}});
  EXPECT_EQ(s.turn_f1, 1.0);
  EXPECT_EQ(s.joint_f1, 1.0);
  EXPECT_EQ(dst_scores({{{{"a", "x"}}}}, {{{}}}).turn_f1, 0.0);
}

TEST(Dst, LastPredictionPerSlotWins) {
  const std::vector<DialogTurns> gold{{{{"area", "north"}}}};
  EXPECT_EQ(dst_scores({{{{"area", "vwxyz"}, {"area", "north"}}}}, gold).turn_f1, 1.0);
  EXPECT_EQ(dst_scores({{{{"area", "north"}, {"area", "vwxyz"}}}}, gold).turn_f1, 0.0);
}

TEST(Dst, SingleTurnDialogsHaveEqualTurnAndJoint) {
  std::mt19937_64 rng(10);
  const std::vector<std::string> slots{"a", "b", "c"}, values{"x", "y", "xy"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DialogTurns> pred, gold;
    for (int d = 0; d < 5; ++d) {
      TurnState p, g;
      for (int i = 0; i < static_cast<int>(rng() % 4); ++i) p.push_back({slots[rng() % 3], values[rng() % 3]});
      for (int i = 0; i < static_cast<int>(rng() % 4); ++i) g.push_back({slots[rng() % 3], values[rng() % 3]});
      pred.push_back({p});
      gold.push_back({g});
    }
    const auto s = dst_scores(pred, gold);
    EXPECT_DOUBLE_EQ(s.turn_f1, s.joint_f1);
  }
}

TEST(Dst, WrongSlotNeverRaisesTheScore) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> slots{"a", "b", "c"}, values{"x", "y", "xy"};
  for (int trial = 0; trial < 100; ++trial) {
    TurnState p, g;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 3); ++i) p.push_back({slots[rng() % 3], values[rng() % 3]});
    for (int i = 0; i < 1 + static_cast<int>(rng() % 3); ++i) g.push_back({slots[rng() % 3], values[rng() % 3]});
    TurnState more = p;
    more.push_back({"z", "x"});
    EXPECT_LE(dst_scores({{more}}, {{g}}).turn_f1, dst_scores({{p}}, {{g}}).turn_f1 + 1e-15);
  }
}

TEST(Dst, ShapeMismatchIsAnError) {
  EXPECT_THROW(dst_scores({{}}, {}), Error);
  EXPECT_THROW(dst_scores({{{}}}, {{{}, {}}}), Error);
}

TEST(Dst, AlignSkipsSystemTurns) {
  Corpus corpus({Dialog{"d",
                        {make_utterance("d", 0, Speaker::user, "north please", DialogState{{"area", "north"}}),
                         make_utterance("d", 1, Speaker::system, "ok"),
                         make_utterance("d", 2, Speaker::user, "thanks")}}});
  PredictionMap preds;
  preds["d:0"] = {{"area", "north"}};
  const auto [p, g] = align_dst(corpus, preds);
  ASSERT_EQ(p.size(), 1u);
  ASSERT_EQ(p[0].size(), 2u);
  EXPECT_TRUE(g[0][1].empty());
  EXPECT_EQ(dst_scores(p, g).turn_f1, 1.0);
}

TEST(SpanRecall, AcceptableFormsAndMisses) {
  const std::map<std::string, std::vector<SpanCandidate>> extracted{
      {"d:0", {{"d:0", 0, 2, "i want"}, {"d:0", 2, 5, "in the East"}}}};
  EXPECT_EQ(span_recall(extracted, {{"d:0", {{"east", "the east", "in the east"}}}}), 1.0);
  EXPECT_EQ(span_recall(extracted, {{"d:0", {{"east", "the east"}}}}), 0.0);
  EXPECT_EQ(span_recall(extracted, {{"d:0", {{"in the east"}, {"cheap"}}}, {"d:9", {{"x"}}}}), 1.0 / 3.0);
  EXPECT_THROW(span_recall(extracted, {}), Error);
  Corpus corpus({Dialog{"d", {make_utterance("d", 0, Speaker::user, "i want in the east")}}});
  EXPECT_THROW(span_recall(extracted, {{"d:9", {{"x"}}}}, &corpus), Error);
}

TEST(SpanRecall, ReadsGoldFile) {
  const auto dir = fixtures::scratch_dir("span_gold");
  detail::write_text_file(dir / "g.jsonl", R"({"uid": "d:0", "groups": [["east", "the east"], ["cheap"]]})"
                                           "\n");
  const auto g = read_gold_span_groups(dir / "g.jsonl");
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].groups.size(), 2u);
  detail::write_text_file(dir / "bad.jsonl", R"({"uid": "d:0"})"
                                             "\n");
  EXPECT_THROW(read_gold_span_groups(dir / "bad.jsonl"), Error);
}

TEST(Report, JsonFields) {
  EvalReport r;
  r.n_clusters = 7;
  r.slot_type = make_prf(0.5, 1.0);
  const auto j = report_to_json(r);
  EXPECT_EQ(j["n_clusters"], 7);
  EXPECT_DOUBLE_EQ(j["slot_type"]["f1"].get<double>(), 2.0 / 3.0);
  EXPECT_TRUE(j["dst"].is_null());
  EXPECT_TRUE(j["span_recall"].is_null());
  EXPECT_TRUE(j["metadata"].contains("interpretive"));
  r.dst = DstScores{0.5, 0.25, 4};
  EXPECT_EQ(report_to_json(r)["dst"]["turns"], 4);
}
