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

#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "slotforge/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace slotforge;
namespace fs = std::filesystem;
using detail::Json;

namespace {

// A small planted corpus and a config around it.
RunConfig small_run(const fs::path &dir, Json overrides = Json::object(), int user_turns = 60) {
  write_generic_corpus(fixtures::planted_corpus(11, user_turns, "p-"), dir / "corpus.jsonl");
  Json j = {{"corpus", {{"path", "corpus.jsonl"}}},
            {"embedder", {{"kind", "oracle"}, {"dim", 16}, {"sigma", 0.05}}},
            {"pcfg", {{"nonterminals", 3}, {"preterminals", 6}, {"max_iters", 3}}},
            {"use_pcfg_constraint", false},
            {"output_dir", "out"}};
  j.merge_patch(overrides);
  detail::write_text_file(dir / "config.json", j.dump(2));
  return load_config(dir / "config.json");
}

std::string slurp(const fs::path &p) { return detail::read_text_file(p); }

bool inside_some(const SpanCandidate &c, const std::vector<SpanCandidate> &lm) {
  for (const auto &l : lm) {
    if (l.uid == c.uid && l.start <= c.start && c.end <= l.end) return true;
  }
  return false;
}

}  // namespace

TEST(Config, RelativePathsResolveAgainstConfigDirectory) {
  const auto dir = fixtures::scratch_dir("cfg_paths");
  const auto cfg = small_run(dir, {{"ontology", "/abs/ontology.json"}, {"gold_spans", "g/spans.jsonl"}});
  EXPECT_EQ(cfg.corpus.path, dir / "corpus.jsonl");
  EXPECT_EQ(cfg.output_dir, dir / "out");
  EXPECT_EQ(*cfg.ontology, fs::path("/abs/ontology.json"));
  EXPECT_EQ(*cfg.gold_spans, dir / "g/spans.jsonl");
}

TEST(Config, Defaults) {
  const auto cfg = config_from_json(Json{{"corpus", {{"path", "c.jsonl"}}}});
  EXPECT_EQ(cfg.embedder.kind, EmbedderKind::mock);
  EXPECT_EQ(cfg.clustering.divisors, clustering::default_divisors());
  EXPECT_EQ(cfg.clustering.metric, clustering::Metric::cosine);
  EXPECT_EQ(cfg.clustering.filter, clustering::FilterMode::distinct_values);
  EXPECT_EQ(cfg.mapping_threshold, 0.8);
  EXPECT_TRUE(cfg.use_pcfg_constraint);
  EXPECT_EQ(cfg.threads, 1);
  EXPECT_EQ(cfg.pcfg.nonterminals, 16);
  EXPECT_EQ(cfg.pcfg.preterminals, 16);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  const Json base{{"corpus", {{"path", "c.jsonl"}}}};
  for (const Json &patch : {Json{{"colour", 1}}, Json{{"pcfg", {{"iters", 3}}}}, Json{{"embedder", {{"kind", "bert"}}}},
                            Json{{"clustering", {{"divisors", Json::array()}}}}, Json{{"threads", 0}},
                            Json{{"pcfg", {{"tol", "huge"}}}}, Json{{"corpus", {{"path", "c"}, {"format", "x"}}}}}) {
    Json j = base;
    j.merge_patch(patch);
    EXPECT_THROW(config_from_json(j), Error) << patch.dump();
  }
  EXPECT_THROW(config_from_json(Json::object()), Error);
}

TEST(Config, ExternalEmbedderNeedsFiles) {
  EXPECT_THROW(config_from_json(Json{{"corpus", {{"path", "c"}}}, {"embedder", {{"kind", "external"}}}}), Error);
  const auto cfg = config_from_json(Json{{"corpus", {{"path", "c"}}},
                                         {"embedder",
                                          {{"kind", "external"},
                                           {"name", "enc"},
                                           {"features", "f.jsonl"},
                                           {"span_embeddings", "s.jsonl"}}}});
  EXPECT_EQ(embedder_identity(cfg), "external:enc");
}

TEST(Config, HashIgnoresLocationAndThreads) {
  const auto a = small_run(fixtures::scratch_dir("hash_a"));
  const auto b = small_run(fixtures::scratch_dir("hash_b"), {{"threads", 4}});
  const auto c = small_run(fixtures::scratch_dir("hash_c"), {{"seed", 9}});
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(TrainPcfg, InfiniteToleranceStopsAfterOneIteration) {
  const auto dir = fixtures::scratch_dir("tol_inf");
  const auto cfg = small_run(dir, {{"pcfg", {{"tol", "inf"}, {"max_iters", 5}}}});
  EXPECT_EQ(cfg.pcfg.tol, std::numeric_limits<double>::infinity());
  const auto rep = cmd_train_pcfg(cfg);
  EXPECT_EQ(rep.iterations, 1);
  const auto report = Json::parse(slurp(dir / "out/train_report.json"));
  EXPECT_EQ(report["iterations"], 1);
  EXPECT_TRUE(fs::exists(dir / "out/grammar.json"));
}

TEST(Pipeline, RerunsAreByteIdentical) {
  const auto dir = fixtures::scratch_dir("rerun");
  auto cfg = small_run(dir);
  cmd_pipeline(cfg);
  const auto schema = slurp(dir / "out/schema.json");
  const auto spans = slurp(dir / "out/spans.jsonl");
  cmd_pipeline(cfg);
  EXPECT_EQ(slurp(dir / "out/schema.json"), schema);
  cfg.threads = 4;
  cmd_pipeline(cfg);
  EXPECT_EQ(slurp(dir / "out/schema.json"), schema);
  EXPECT_EQ(slurp(dir / "out/spans.jsonl"), spans);

  const auto manifest = Json::parse(slurp(dir / "out/manifest.json"));
  EXPECT_EQ(manifest["config_hash"], config_hash(cfg));
  EXPECT_TRUE(manifest["commands"].contains("induce"));
  EXPECT_TRUE(manifest["commands"].contains("evaluate"));
  EXPECT_TRUE(fs::exists(dir / "out/eval_report.json"));
  EXPECT_TRUE(fs::exists(dir / "out/cluster_tree.json"));
}

TEST(ExtractSpans, EmptyCorpusGivesEmptySpansFile) {
  const auto dir = fixtures::scratch_dir("empty_corpus");
  detail::write_text_file(dir / "empty.jsonl", "");
  detail::write_text_file(dir / "config.json", Json{{"corpus", {{"path", "empty.jsonl"}}}, {"use_pcfg_constraint", false}}.dump());
  const auto cfg = load_config(dir / "config.json");
  cmd_extract_spans(cfg);
  EXPECT_TRUE(read_spans(dir / "out/spans.jsonl", Corpus(std::vector<Dialog>{})).empty());
}

TEST(ExtractSpans, ConstraintRefinesUnconstrainedSpans) {
  const auto dir = fixtures::scratch_dir("refine");
  auto cfg = small_run(dir, {{"embedder", {{"kind", "mock"}, {"dim", 16}}}, {"use_pcfg_constraint", true}});
  const Corpus corpus = load_corpus(cfg.corpus.path, CorpusFormat::generic);
  cmd_train_pcfg(cfg);
  cmd_extract_spans(cfg);
  std::vector<SpanCandidate> constrained;
  for (auto &[uid, s] : read_spans(dir / "out/spans.jsonl", corpus)) constrained.insert(constrained.end(), s.begin(), s.end());
  EXPECT_TRUE(fs::exists(dir / "out/trees.jsonl"));
  cfg.use_pcfg_constraint = false;
  cmd_extract_spans(cfg);
  std::vector<SpanCandidate> lm;
  for (auto &[uid, s] : read_spans(dir / "out/spans.jsonl", corpus)) lm.insert(lm.end(), s.begin(), s.end());
  EXPECT_GE(constrained.size(), lm.size());
  for (const auto &c : constrained) EXPECT_TRUE(inside_some(c, lm)) << c.uid << " " << c.text;
}

TEST(ExtractSpans, ConstraintWithoutGrammarIsAnError) {
  const auto dir = fixtures::scratch_dir("no_grammar");
  EXPECT_THROW(cmd_extract_spans(small_run(dir, {{"use_pcfg_constraint", true}})), Error);
}

TEST(ExtractSpans, MissingFeaturesNameTheUid) {
  const auto dir = fixtures::scratch_dir("missing_uid");
  auto cfg = small_run(dir);
  const Corpus corpus = load_corpus(cfg.corpus.path, CorpusFormat::generic);
  auto recs = mock_features(corpus, 8, 1);
  const std::string dropped = recs.back().first;
  recs.pop_back();
  write_features(dir / "features.jsonl", 8, recs);
  cfg.embedder.kind = EmbedderKind::external;
  cfg.embedder.features = dir / "features.jsonl";
  cfg.embedder.span_embeddings = dir / "span_embeddings.jsonl";
  try {
    cmd_extract_spans(cfg);
    FAIL() << "expected an error";
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find(dropped), std::string::npos) << e.what();
  }
}

TEST(Evaluate, NeedsSchemaFromTheSameEmbedder) {
  const auto dir = fixtures::scratch_dir("eval_guard");
  auto cfg = small_run(dir);
  EXPECT_THROW(cmd_evaluate(cfg), Error);
  cmd_extract_spans(cfg);
  cmd_induce(cfg);
  cfg.embedder.sigma = 0.2;
  EXPECT_THROW(cmd_evaluate(cfg), Error);
}

TEST(Evaluate, ReferenceSchemaScoresPerfectly) {
  const auto dir = fixtures::scratch_dir("perfect");
  const auto cfg = small_run(dir, {{"embedder", {{"sigma", 0.0}}}});
  cmd_extract_spans(cfg);
  const auto induced = cmd_induce(cfg);
  ASSERT_TRUE(induced.reference.has_value());
  ASSERT_TRUE(induced.reference->excluded_slots.empty());
  const auto ref = build_reference_schema(load_corpus(cfg.corpus.path, CorpusFormat::generic));

  // One slot per reference type, centred on its reference centroid.
  InducedSchema schema;
  schema.embedder = embedder_identity(cfg);
  SlotMapping mapping;
  for (const auto &[name, centroid] : induced.reference->refs.centroids) {
    SlotCluster slot;
    slot.label = name;
    slot.centroid = centroid;
    for (const auto &v : ref.slots.at(name)) slot.values.push_back(ValueCount{v, 1});
    schema.slots.push_back(slot);
    mapping.push_back({name, 1.0});
  }
  detail::write_text_file(dir / "out/schema.json", schema_to_json(schema, mapping).dump(2));
  const auto rep = cmd_evaluate(cfg);
  EXPECT_EQ(rep.n_clusters, ref.in_corpus_slots.size());
  EXPECT_DOUBLE_EQ(rep.slot_type.f1, 1.0);
  EXPECT_DOUBLE_EQ(rep.slot_value.f1, 1.0);
  ASSERT_TRUE(rep.dst.has_value());
  EXPECT_EQ(rep.dst->turns, 60u);
}

TEST(InduceIntents, SingleUtteranceIsOneLeaf) {
  const auto dir = fixtures::scratch_dir("one_intent");
  write_generic_corpus(Corpus({Dialog{"d", {make_utterance("d", 0, Speaker::user, "book a table")}}}),
                       dir / "corpus.jsonl");
  detail::write_text_file(dir / "config.json", Json{{"corpus", {{"path", "corpus.jsonl"}}}}.dump());
  const auto leaves = cmd_induce_intents(load_config(dir / "config.json"));
  ASSERT_EQ(leaves.size(), 1u);
  EXPECT_EQ(leaves[0].label, "0-0");
  EXPECT_TRUE(fs::exists(dir / "out/intent_tree.json"));
}

TEST(InduceIntents, PlantedDomainsSplitAtTheTop) {
  const auto dir = fixtures::scratch_dir("intents");
  const auto cfg = small_run(dir);
  const auto leaves = cmd_induce_intents(cfg);
  const Corpus corpus = load_corpus(cfg.corpus.path, CorpusFormat::generic);
  // Every top-level cluster holds one domain only; even dialogs are restaurant.
  std::map<std::string, std::set<int>> domains;
  for (const auto &leaf : leaves) {
    const auto top = leaf.label.substr(0, leaf.label.find('-'));
    for (const auto &uid : leaf.uids) domains[top].insert(std::stoi(uid.substr(2, uid.find(':') - 2)) % 2);
  }
  EXPECT_EQ(domains.size(), 2u);
  for (const auto &[top, d] : domains) EXPECT_EQ(d.size(), 1u) << top;
}
