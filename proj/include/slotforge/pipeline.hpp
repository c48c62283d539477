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

// Run configuration and the pipeline commands.
//
// Every phase reads and writes files in the output directory, so phases can
// be rerun individually and an external embedder can be run between them:
//
//   train-pcfg      grammar.json, train_report.json
//   extract-spans   features.jsonl, trees.jsonl, spans.jsonl, span_requests.jsonl
//   induce          span_embeddings.jsonl, cluster_tree.json, schema.json
//   evaluate        predictions.jsonl, eval_report.json
//   induce-intents  intent_tree.json
//
// Files for a separate evaluation corpus carry an "eval_" prefix. Each
// command also refreshes manifest.json.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "slotforge/clustering.hpp"
#include "slotforge/corpus.hpp"
#include "slotforge/detail/hash.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/embedding_io.hpp"
#include "slotforge/error.hpp"
#include "slotforge/evaluation.hpp"
#include "slotforge/pcfg.hpp"
#include "slotforge/schema.hpp"
#include "slotforge/span_extraction.hpp"

namespace slotforge {

enum class EmbedderKind { mock, oracle, external };

struct CorpusConfig {
  std::filesystem::path path;
  CorpusFormat format = CorpusFormat::generic;
};

struct EmbedderConfig {
  EmbedderKind kind = EmbedderKind::mock;
  int dim = 64;         // mock and oracle
  double sigma = 0.05;  // oracle noise
  std::optional<std::uint64_t> seed;
  std::string name;  // identity of an external embedder
  std::optional<std::filesystem::path> features, span_embeddings;
  std::optional<std::filesystem::path> eval_features, eval_span_embeddings;
};

struct PcfgConfig {
  int nonterminals = 16;
  int preterminals = 16;
  int max_iters = 20;
  double tol = 1e-4;  // "inf" in JSON stops after one iteration
  long min_word_freq = 2;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> trees, eval_trees;  // external parses
};

struct RunConfig {
  CorpusConfig corpus;
  std::optional<CorpusConfig> eval_corpus;  // defaults to the training corpus
  std::optional<std::filesystem::path> ontology;
  std::optional<std::filesystem::path> gold_spans;
  EmbedderConfig embedder;
  PcfgConfig pcfg;
  bool use_pcfg_constraint = true;
  clustering::ClusterOptions clustering;
  double mapping_threshold = kDefaultMappingThreshold;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  int threads = 1;

  std::uint64_t pcfg_seed() const { return pcfg.seed.value_or(seed); }
  std::uint64_t embedder_seed() const { return embedder.seed.value_or(seed); }
};

namespace detail {

inline void check_keys(const Json &j, const char *where, std::initializer_list<const char *> allowed) {
  if (!j.is_object()) throw Error(std::string("config: '") + where + "' must be an object");
  for (const auto &[key, _] : j.items()) {
    bool ok = false;
    for (const char *a : allowed) ok = ok || key == a;
    if (!ok) throw Error(std::string("config: unknown key '") + key + "' in '" + where + "'");
  }
}

template <typename T>
T config_value(const Json &j, const char *key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception &) {
    throw Error(std::string("config: '") + key + "' has wrong type");
  }
}

inline std::filesystem::path resolve(const std::filesystem::path &base, const std::string &p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline std::optional<std::filesystem::path> optional_path(const Json &j, const char *key,
                                                          const std::filesystem::path &base) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return resolve(base, config_value<std::string>(j, key, ""));
}

inline CorpusConfig corpus_config(const Json &j, const std::filesystem::path &base) {
  check_keys(j, "corpus", {"path", "format"});
  if (!j.contains("path")) throw Error("config: corpus needs a 'path'");
  return {resolve(base, config_value<std::string>(j, "path", "")),
          parse_corpus_format(config_value<std::string>(j, "format", "generic"))};
}

inline double tolerance_value(const Json &j) {
  if (!j.contains("tol")) return 1e-4;
  if (j["tol"].is_string()) {
    if (j["tol"] == "inf") return std::numeric_limits<double>::infinity();
    throw Error("config: pcfg.tol must be a number or \"inf\"");
  }
  return config_value<double>(j, "tol", 1e-4);
}

}  // namespace detail

// Relative paths are resolved against `base_dir`, normally the directory of
// the config file. Defaults:
//   embedder.kind mock, dim 64, sigma 0.05; pcfg N 16, P 16, 20 iterations,
//   tol 1e-4, min_word_freq 2; use_pcfg_constraint true; clustering divisors
//   [5, 10, 15, 20, 25], metric cosine, filter distinct_values;
//   mapping_threshold 0.8; seed 1; threads 1. JSD uses natural log.
inline RunConfig config_from_json(const detail::Json &j, const std::filesystem::path &base_dir = ".") {
  using detail::config_value;
  detail::check_keys(j, "config",
                     {"corpus", "eval_corpus", "ontology", "gold_spans", "embedder", "pcfg",
                      "use_pcfg_constraint", "clustering", "mapping_threshold", "output_dir", "seed",
                      "threads"});
  RunConfig c;
  if (!j.contains("corpus")) throw Error("config: missing 'corpus'");
  c.corpus = detail::corpus_config(j["corpus"], base_dir);
  if (j.contains("eval_corpus") && !j["eval_corpus"].is_null()) {
    c.eval_corpus = detail::corpus_config(j["eval_corpus"], base_dir);
  }
  c.ontology = detail::optional_path(j, "ontology", base_dir);
  c.gold_spans = detail::optional_path(j, "gold_spans", base_dir);

  if (j.contains("embedder")) {
    const auto &e = j["embedder"];
    detail::check_keys(e, "embedder",
                       {"kind", "dim", "sigma", "seed", "name", "features", "span_embeddings",
                        "eval_features", "eval_span_embeddings"});
    const auto kind = config_value<std::string>(e, "kind", "mock");
    if (kind == "mock") {
      c.embedder.kind = EmbedderKind::mock;
    } else if (kind == "oracle") {
      c.embedder.kind = EmbedderKind::oracle;
    } else if (kind == "external") {
      c.embedder.kind = EmbedderKind::external;
    } else {
      throw Error("config: unknown embedder kind '" + kind + "'");
    }
    c.embedder.dim = config_value<int>(e, "dim", c.embedder.dim);
    c.embedder.sigma = config_value<double>(e, "sigma", c.embedder.sigma);
    if (e.contains("seed")) c.embedder.seed = config_value<std::uint64_t>(e, "seed", 0);
    c.embedder.name = config_value<std::string>(e, "name", "");
    c.embedder.features = detail::optional_path(e, "features", base_dir);
    c.embedder.span_embeddings = detail::optional_path(e, "span_embeddings", base_dir);
    c.embedder.eval_features = detail::optional_path(e, "eval_features", base_dir);
    c.embedder.eval_span_embeddings = detail::optional_path(e, "eval_span_embeddings", base_dir);
  }
  if (c.embedder.kind == EmbedderKind::external && (!c.embedder.features || !c.embedder.span_embeddings)) {
    throw Error("config: external embedder requires 'features' and 'span_embeddings'");
  }
  if (c.embedder.sigma < 0.0) throw Error("config: embedder.sigma must be non-negative");

  if (j.contains("pcfg")) {
    const auto &p = j["pcfg"];
    detail::check_keys(p, "pcfg",
                       {"nonterminals", "preterminals", "max_iters", "tol", "min_word_freq", "seed", "trees",
                        "eval_trees"});
    c.pcfg.nonterminals = config_value<int>(p, "nonterminals", c.pcfg.nonterminals);
    c.pcfg.preterminals = config_value<int>(p, "preterminals", c.pcfg.preterminals);
    c.pcfg.max_iters = config_value<int>(p, "max_iters", c.pcfg.max_iters);
    c.pcfg.tol = detail::tolerance_value(p);
    c.pcfg.min_word_freq = config_value<long>(p, "min_word_freq", c.pcfg.min_word_freq);
    if (p.contains("seed")) c.pcfg.seed = config_value<std::uint64_t>(p, "seed", 0);
    c.pcfg.trees = detail::optional_path(p, "trees", base_dir);
    c.pcfg.eval_trees = detail::optional_path(p, "eval_trees", base_dir);
  }
  c.use_pcfg_constraint = config_value<bool>(j, "use_pcfg_constraint", true);

  if (j.contains("clustering")) {
    const auto &k = j["clustering"];
    detail::check_keys(k, "clustering", {"divisors", "metric", "filter"});
    c.clustering.divisors = config_value<std::vector<int>>(k, "divisors", c.clustering.divisors);
    if (c.clustering.divisors.empty()) throw Error("config: clustering.divisors must not be empty");
    for (int d : c.clustering.divisors) {
      if (d <= 0) throw Error("config: clustering.divisors must be positive");
    }
    c.clustering.metric = clustering::parse_metric(config_value<std::string>(k, "metric", "cosine"));
    c.clustering.filter = clustering::parse_filter_mode(config_value<std::string>(k, "filter", "distinct_values"));
  }
  c.mapping_threshold = config_value<double>(j, "mapping_threshold", c.mapping_threshold);
  c.output_dir = detail::resolve(base_dir, config_value<std::string>(j, "output_dir", "out"));
  c.seed = config_value<std::uint64_t>(j, "seed", c.seed);
  c.threads = config_value<int>(j, "threads", c.threads);
  if (c.threads < 1) throw Error("config: threads must be at least 1");
  return c;
}

inline RunConfig load_config(const std::filesystem::path &path) {
  detail::Json j;
  try {
    j = detail::Json::parse(detail::read_text_file(path));
  } catch (const detail::Json::parse_error &e) {
    throw Error(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

// Settings that determine outputs. Paths appear by file name only so runs
// in different directories hash alike; threads and output_dir are excluded.
inline detail::Json effective_config(const RunConfig &c) {
  using detail::Json;
  auto name = [](const std::optional<std::filesystem::path> &p) {
    return p ? Json(p->filename().string()) : Json(nullptr);
  };
  static const char *kinds[] = {"mock", "oracle", "external"};
  static const char *formats[] = {"generic", "multiwoz", "sgd"};
  static const char *filters[] = {"distinct_values", "frequent_span", "none"};
  Json j;
  j["corpus"] = {{"path", c.corpus.path.filename().string()}, {"format", formats[static_cast<int>(c.corpus.format)]}};
  j["eval_corpus"] = c.eval_corpus ? Json{{"path", c.eval_corpus->path.filename().string()},
                                          {"format", formats[static_cast<int>(c.eval_corpus->format)]}}
                                   : Json(nullptr);
  j["ontology"] = name(c.ontology);
  j["gold_spans"] = name(c.gold_spans);
  j["embedder"] = {{"kind", kinds[static_cast<int>(c.embedder.kind)]},
                   {"dim", c.embedder.dim},
                   {"sigma", c.embedder.sigma},
                   {"seed", c.embedder_seed()},
                   {"name", c.embedder.name},
                   {"features", name(c.embedder.features)},
                   {"span_embeddings", name(c.embedder.span_embeddings)},
                   {"eval_features", name(c.embedder.eval_features)},
                   {"eval_span_embeddings", name(c.embedder.eval_span_embeddings)}};
  j["pcfg"] = {{"nonterminals", c.pcfg.nonterminals},
               {"preterminals", c.pcfg.preterminals},
               {"max_iters", c.pcfg.max_iters},
               {"tol", std::isinf(c.pcfg.tol) ? Json("inf") : Json(c.pcfg.tol)},
               {"min_word_freq", c.pcfg.min_word_freq},
               {"seed", c.pcfg_seed()},
               {"trees", name(c.pcfg.trees)},
               {"eval_trees", name(c.pcfg.eval_trees)}};
  j["use_pcfg_constraint"] = c.use_pcfg_constraint;
  j["clustering"] = {{"divisors", c.clustering.divisors},
                     {"metric", c.clustering.metric == clustering::Metric::cosine ? "cosine" : "euclidean"},
                     {"filter", filters[static_cast<int>(c.clustering.filter)]}};
  j["mapping_threshold"] = c.mapping_threshold;
  j["seed"] = c.seed;
  return j;
}

inline std::string config_hash(const RunConfig &c) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << detail::fnv1a64(effective_config(c).dump());
  return ss.str();
}

inline std::string embedder_identity(const RunConfig &c) {
  const auto &e = c.embedder;
  switch (e.kind) {
    case EmbedderKind::mock:
      return "mock:dim=" + std::to_string(e.dim) + ":seed=" + std::to_string(c.embedder_seed());
    case EmbedderKind::oracle: {
      std::ostringstream ss;
      ss << "oracle:dim=" << e.dim << ":sigma=" << e.sigma << ":seed=" << c.embedder_seed();
      return ss.str();
    }
    case EmbedderKind::external:
      return "external:" + (e.name.empty() ? e.span_embeddings->filename().string() : e.name);
  }
  return "unknown";
}

using LogFn = std::function<void(const std::string &)>;

// ---------------------------------------------------------------------------
// Commands

namespace detail {

struct Dataset {
  std::string prefix;  // "" for training, "eval_" for the evaluation corpus
  Corpus corpus;
  std::optional<std::filesystem::path> features, span_embeddings, trees;
};

class Workspace {
 public:
  Workspace(const RunConfig &cfg, LogFn log) : cfg_(cfg), log_(std::move(log)) {
    if (!log_) log_ = [](const std::string &) {};
  }

  const RunConfig &cfg() const { return cfg_; }
  void log(const std::string &msg) const { log_(msg); }
  std::filesystem::path out(const std::string &name) const { return cfg_.output_dir / name; }

  const Dataset &train() {
    if (!train_) {
      train_ = Dataset{"", load_corpus(cfg_.corpus.path, cfg_.corpus.format), cfg_.embedder.features,
                       cfg_.embedder.span_embeddings, cfg_.pcfg.trees};
      log("loaded " + cfg_.corpus.path.string() + ": " + std::to_string(train_->corpus.dialogs().size()) +
          " dialogs");
    }
    return *train_;
  }

  bool has_eval() const { return cfg_.eval_corpus.has_value(); }

  const Dataset &eval() {
    if (!has_eval()) return train();
    if (!eval_) {
      eval_ = Dataset{"eval_", load_corpus(cfg_.eval_corpus->path, cfg_.eval_corpus->format),
                      cfg_.embedder.eval_features, cfg_.embedder.eval_span_embeddings, cfg_.pcfg.eval_trees};
      if (cfg_.embedder.kind == EmbedderKind::external && (!eval_->features || !eval_->span_embeddings)) {
        throw Error("config: external embedder with eval_corpus requires 'eval_features' and 'eval_span_embeddings'");
      }
    }
    return *eval_;
  }

  const OracleEmbedder &oracle() {
    if (!oracle_) {
      std::vector<const Corpus *> corpora{&train().corpus};
      if (has_eval()) corpora.push_back(&eval().corpus);
      oracle_.emplace(corpora, cfg_.embedder.dim, cfg_.embedder.sigma, cfg_.embedder_seed());
    }
    return *oracle_;
  }

  // Word-level features for every user utterance of the dataset.
  FeatureMap features(const Dataset &ds) {
    if (cfg_.embedder.kind == EmbedderKind::external) return read_features(*ds.features);
    std::vector<std::pair<std::string, FeatureRecord>> recs =
        cfg_.embedder.kind == EmbedderKind::mock ? mock_features(ds.corpus, cfg_.embedder.dim, cfg_.embedder_seed())
                                                 : oracle_features(oracle(), ds.corpus);
    FeatureMap out;
    for (auto &[uid, r] : recs) out.emplace(uid, std::move(r));
    return out;
  }

  std::vector<SpanEmbedding> span_embeddings(const Dataset &ds, const std::vector<SpanCandidate> &requests) {
    switch (cfg_.embedder.kind) {
      case EmbedderKind::mock:
        return mock_span_embeddings(ds.corpus, requests, cfg_.embedder.dim, cfg_.embedder_seed());
      case EmbedderKind::oracle:
        return oracle_embed(oracle(), ds.corpus, requests).spans;
      case EmbedderKind::external:
        return read_span_embeddings(*ds.span_embeddings);
    }
    return {};
  }

  std::map<std::string, UtteranceEmbedding> utterance_embeddings(const Dataset &ds) {
    std::map<std::string, UtteranceEmbedding> out;
    for (auto &[uid, r] : features(ds)) out.emplace(uid, std::move(r.utterance));
    return out;
  }

  void update_manifest(const std::string &command, const std::vector<std::string> &artifacts) {
    const auto path = out("manifest.json");
    Json m = Json::object();
    if (std::filesystem::exists(path)) {
      try {
        m = Json::parse(read_text_file(path));
      } catch (const Json::parse_error &) {
        m = Json::object();
      }
    }
    m["config_hash"] = config_hash(cfg_);
    m["config"] = effective_config(cfg_);
    m["seeds"] = {{"global", cfg_.seed}, {"pcfg", cfg_.pcfg_seed()}, {"embedder", cfg_.embedder_seed()}};
    m["embedder"] = embedder_identity(cfg_);
    if (!m.contains("commands") || !m["commands"].is_object()) m["commands"] = Json::object();
    m["commands"][command] = artifacts;
    write_text_file(path, m.dump(2) + "\n");
  }

 private:
  const RunConfig &cfg_;
  LogFn log_;
  std::optional<Dataset> train_, eval_;
  std::optional<OracleEmbedder> oracle_;
};

inline std::string format_missing(const std::vector<std::string> &uids) {
  std::string s;
  for (std::size_t i = 0; i < uids.size() && i < 10; ++i) s += (i ? ", " : "") + uids[i];
  if (uids.size() > 10) s += ", ... (" + std::to_string(uids.size()) + " total)";
  return s;
}

inline pcfg::Grammar load_grammar(const Workspace &ws) {
  const auto path = ws.out("grammar.json");
  if (!std::filesystem::exists(path)) throw Error(path.string() + " not found; run train-pcfg first");
  try {
    return pcfg::grammar_from_json(Json::parse(read_text_file(path)));
  } catch (const Json::parse_error &e) {
    throw Error(path.string() + ": invalid JSON: " + e.what());
  }
}

inline std::vector<std::pair<std::string, std::vector<SpanCandidate>>> extract_dataset(Workspace &ws,
                                                                                       const Dataset &ds) {
  const RunConfig &cfg = ws.cfg();
  const auto users = ds.corpus.user_utterances();
  const FeatureMap feats = ws.features(ds);
  std::vector<std::string> missing;
  for (const Utterance *u : users) {
    if (!u->tokens.empty() && !feats.count(u->uid)) missing.push_back(u->uid);
  }
  if (!missing.empty()) throw Error("features missing for uids: " + format_missing(missing));
  for (const Utterance *u : users) {
    auto it = feats.find(u->uid);
    if (it != feats.end() && it->second.tokens != u->tokens) {
      throw Error("features for " + u->uid + " were computed on a different tokenization");
    }
  }
  if (cfg.embedder.kind != EmbedderKind::external) {
    std::vector<std::pair<std::string, FeatureRecord>> recs;
    for (const Utterance *u : users) {
      if (auto it = feats.find(u->uid); it != feats.end()) recs.emplace_back(u->uid, it->second);
    }
    write_features(ws.out(ds.prefix + "features.jsonl"), cfg.embedder.dim, recs);
  }

  std::unordered_map<std::string, pcfg::ParseTree> trees;
  if (cfg.use_pcfg_constraint) {
    if (ds.trees) {
      trees = pcfg::read_trees(*ds.trees);
    } else {
      const pcfg::Grammar g = load_grammar(ws);
      const pcfg::WordIndex index(g.vocab);
      std::vector<std::pair<std::string, pcfg::ParseTree>> parsed;
      for (const Utterance *u : users) {
        if (u->tokens.size() < 2) continue;
        parsed.emplace_back(u->uid, pcfg::viterbi_parse(g, index.encode(u->tokens)));
      }
      pcfg::write_trees(ws.out(ds.prefix + "trees.jsonl"), parsed);
      for (auto &[uid, t] : parsed) trees.emplace(uid, std::move(t));
    }
  }

  std::vector<std::pair<std::string, std::vector<SpanCandidate>>> spans;
  for (const Utterance *u : users) {
    if (u->tokens.empty()) {
      spans.emplace_back(u->uid, std::vector<SpanCandidate>{});
      continue;
    }
    if (u->tokens.size() == 1) {
      spans.emplace_back(u->uid, std::vector<SpanCandidate>{{u->uid, 0, 1, u->tokens[0]}});
      continue;
    }
    const auto dist = token_distances(feats.at(u->uid).attention);
    if (cfg.use_pcfg_constraint) {
      auto it = trees.find(u->uid);
      if (it == trees.end()) throw Error("no parse tree for " + u->uid);
      spans.emplace_back(u->uid, extract_spans_constrained(*u, dist, it->second));
    } else {
      spans.emplace_back(u->uid, extract_spans_lm(*u, dist));
    }
  }
  write_spans(ws.out(ds.prefix + "spans.jsonl"), spans, Json{{"format", "spans"}, {"version", kFormatVersion}});

  // Embedding requests: extracted spans plus located gold values.
  const auto gold = locate_gold_spans(ds.corpus);
  std::map<std::string, std::set<std::pair<int, int>>> extra;
  for (const auto &g : gold.located) extra[g.uid].emplace(g.start, g.end);
  std::vector<std::pair<std::string, std::vector<SpanCandidate>>> requests;
  for (const auto &[uid, list] : spans) {
    std::set<std::pair<int, int>> keys;
    for (const auto &s : list) keys.emplace(s.start, s.end);
    if (auto it = extra.find(uid); it != extra.end()) keys.insert(it->second.begin(), it->second.end());
    const Utterance *u = ds.corpus.find(uid);
    std::vector<SpanCandidate> req;
    for (const auto &[s, e] : keys) req.push_back({uid, s, e, join_tokens(u->tokens, s, e)});
    requests.emplace_back(uid, std::move(req));
  }
  write_span_requests(ws.out(ds.prefix + "span_requests.jsonl"), requests);
  return spans;
}

inline std::vector<SpanCandidate> flatten(const std::vector<std::pair<std::string, std::vector<SpanCandidate>>> &xs) {
  std::vector<SpanCandidate> out;
  for (const auto &[_, list] : xs) out.insert(out.end(), list.begin(), list.end());
  return out;
}

// Span embeddings for every request of the dataset, written for the
// built-in embedders.
inline std::vector<SpanEmbedding> embed_requests(Workspace &ws, const Dataset &ds) {
  const auto req_path = ws.out(ds.prefix + "span_requests.jsonl");
  if (!std::filesystem::exists(req_path)) throw Error(req_path.string() + " not found; run extract-spans first");
  const auto requests = flatten(read_spans(req_path, ds.corpus));
  auto embs = ws.span_embeddings(ds, requests);
  if (ws.cfg().embedder.kind != EmbedderKind::external) {
    write_span_embeddings(ws.out(ds.prefix + "span_embeddings.jsonl"), ws.cfg().embedder.dim, embs);
  }
  return embs;
}

inline std::vector<SpanCandidate> load_extracted(const Workspace &ws, const Dataset &ds) {
  const auto path = ws.out(ds.prefix + "spans.jsonl");
  if (!std::filesystem::exists(path)) throw Error(path.string() + " not found; run extract-spans first");
  return flatten(read_spans(path, ds.corpus));
}

inline void write_json(const std::filesystem::path &path, const Json &j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace detail

inline pcfg::TrainReport cmd_train_pcfg(const RunConfig &cfg, LogFn log = {}) {
  detail::Workspace ws(cfg, std::move(log));
  const Corpus &corpus = ws.train().corpus;
  const auto index = pcfg::WordIndex::from_corpus(corpus, cfg.pcfg.min_word_freq);
  auto g = pcfg::init_grammar(cfg.pcfg.nonterminals, cfg.pcfg.preterminals, index.size(), cfg.pcfg_seed());
  pcfg::TrainOptions opts{cfg.pcfg.max_iters, cfg.pcfg.tol, cfg.threads};
  ws.log("training PCFG: N=" + std::to_string(cfg.pcfg.nonterminals) + " P=" + std::to_string(cfg.pcfg.preterminals) +
         " V=" + std::to_string(index.size()));
  auto [grammar, report] = pcfg::em_train(std::move(g), corpus, index, opts);
  detail::write_json(ws.out("grammar.json"), pcfg::grammar_to_json(grammar));
  detail::write_json(ws.out("train_report.json"),
                     {{"initial_log_likelihood", report.initial_log_likelihood},
                      {"log_likelihood", report.log_likelihood},
                      {"iterations", report.iterations},
                      {"converged", report.converged},
                      {"sentences", pcfg::trainable_sentences(corpus, index).size()}});
  ws.update_manifest("train-pcfg", {"grammar.json", "train_report.json"});
  ws.log("EM finished after " + std::to_string(report.iterations) + " iterations");
  return report;
}

inline void cmd_extract_spans(const RunConfig &cfg, LogFn log = {}) {
  detail::Workspace ws(cfg, std::move(log));
  std::vector<std::string> artifacts{"spans.jsonl", "span_requests.jsonl"};
  const auto spans = detail::extract_dataset(ws, ws.train());
  ws.log("extracted " + std::to_string(detail::flatten(spans).size()) + " spans");
  if (ws.has_eval()) {
    detail::extract_dataset(ws, ws.eval());
    artifacts.insert(artifacts.end(), {"eval_spans.jsonl", "eval_span_requests.jsonl"});
  }
  ws.update_manifest("extract-spans", artifacts);
}

struct InduceResult {
  clustering::ClusterTree tree;
  InducedSchema schema;
  SlotMapping mapping;
  std::optional<ReferenceReport> reference;
};

inline InduceResult cmd_induce(const RunConfig &cfg, LogFn log = {}) {
  detail::Workspace ws(cfg, std::move(log));
  const auto &ds = ws.train();
  const auto spans = detail::load_extracted(ws, ds);
  const auto embs = detail::embed_requests(ws, ds);
  const SpanEmbeddingIndex index(embs);
  for (const auto &s : spans) {
    if (!index.find({s.uid, s.start, s.end})) {
      throw Error("missing span embedding for " + SpanKey{s.uid, s.start, s.end}.to_string());
    }
  }
  InduceResult r;
  clustering::ClusterOptions copts = cfg.clustering;
  copts.threads = cfg.threads;
  r.tree = clustering::multi_step_cluster(spans, index, ws.utterance_embeddings(ds), copts);
  detail::write_json(ws.out("cluster_tree.json"), clustering::tree_to_json(r.tree));
  r.schema = build_schema(r.tree, index, embedder_identity(cfg));
  ws.log("induced " + std::to_string(r.schema.slots.size()) + " slot clusters");

  if (ds.corpus.annotated()) {
    const auto ref = build_reference_schema(ds.corpus);
    r.reference = reference_centroids(locate_gold_spans(ds.corpus), ref, index, embedder_identity(cfg));
    if (r.reference->skipped > 0) {
      ws.log("reference centroids: skipped " + std::to_string(r.reference->skipped) + " unlocated gold values");
    }
    r.mapping = map_clusters(r.schema, r.reference->refs, cfg.mapping_threshold);
  } else {
    r.mapping.assign(r.schema.slots.size(), SlotAssignment{});
  }
  detail::write_json(ws.out("schema.json"), schema_to_json(r.schema, r.mapping));
  ws.update_manifest("induce", {"span_embeddings.jsonl", "cluster_tree.json", "schema.json"});
  return r;
}

inline EvalReport cmd_evaluate(const RunConfig &cfg, LogFn log = {}) {
  detail::Workspace ws(cfg, std::move(log));
  const auto schema_path = ws.out("schema.json");
  if (!std::filesystem::exists(schema_path)) throw Error(schema_path.string() + " not found; run induce first");
  const auto &ds = ws.eval();
  auto [schema, mapping] = schema_from_json(detail::Json::parse(detail::read_text_file(schema_path)));
  if (schema.embedder != embedder_identity(cfg)) {
    throw Error("schema was induced with embedder '" + schema.embedder + "' but this run uses '" +
                embedder_identity(cfg) + "'");
  }
  const auto spans = detail::load_extracted(ws, ds);
  const auto embs = detail::embed_requests(ws, ds);
  const SpanEmbeddingIndex index(embs);
  PredictionMap preds;
  std::map<std::string, std::vector<SpanCandidate>> by_uid;
  for (const auto &s : spans) by_uid[s.uid].push_back(s);
  std::vector<std::string> uids;
  for (const Utterance *u : ds.corpus.user_utterances()) {
    uids.push_back(u->uid);
    auto it = by_uid.find(u->uid);
    if (it == by_uid.end()) continue;
    auto p = apply_schema(schema, mapping, it->second, index, cfg.mapping_threshold);
    if (!p.empty()) preds[u->uid] = std::move(p);
  }
  write_predictions(ws.out(ds.prefix + "predictions.jsonl"), uids, preds);

  EvalReport rep;
  rep.n_clusters = schema.slots.size();
  auto ref = build_reference_schema(ds.corpus);
  if (cfg.ontology) merge_ontology(ref, detail::Json::parse(detail::read_text_file(*cfg.ontology)));
  rep.slot_type = schema_type_prf(mapping, ref).prf;
  const auto values = schema_value_prf(schema, mapping, ref);
  if (values.per_type.empty()) ws.log("warning: no cluster is mapped to a reference slot; value scores are 0");
  rep.slot_value = values.prf;
  const auto [p, g] = align_dst(ds.corpus, preds);
  rep.dst = dst_scores(p, g);
  if (cfg.gold_spans) rep.span_recall = span_recall(by_uid, read_gold_span_groups(*cfg.gold_spans), &ds.corpus);
  detail::write_json(ws.out("eval_report.json"), report_to_json(rep));
  ws.update_manifest("evaluate", {ds.prefix + "predictions.jsonl", "eval_report.json"});
  return rep;
}

inline std::vector<clustering::IntentLeaf> cmd_induce_intents(const RunConfig &cfg, LogFn log = {}) {
  detail::Workspace ws(cfg, std::move(log));
  const auto &ds = ws.train();
  const auto embs = ws.utterance_embeddings(ds);
  std::vector<UtteranceEmbedding> utts;
  for (const Utterance *u : ds.corpus.user_utterances()) {
    if (auto it = embs.find(u->uid); it != embs.end()) utts.push_back(it->second);
  }
  clustering::ClusterOptions copts = cfg.clustering;
  copts.threads = cfg.threads;
  const auto leaves = clustering::induce_intents(utts, copts);
  detail::Json arr = detail::Json::array();
  for (const auto &l : leaves) arr.push_back({{"label", l.label}, {"uids", l.uids}});
  detail::write_json(ws.out("intent_tree.json"), {{"leaves", std::move(arr)}});
  ws.update_manifest("induce-intents", {"intent_tree.json"});
  return leaves;
}

// All phases in order. Training runs only when the constraint needs parses
// that are not supplied; evaluation only when the evaluation corpus is
// annotated.
inline std::optional<EvalReport> cmd_pipeline(const RunConfig &cfg, LogFn log = {}) {
  if (cfg.use_pcfg_constraint && !cfg.pcfg.trees) cmd_train_pcfg(cfg, log);
  cmd_extract_spans(cfg, log);
  cmd_induce(cfg, log);
  const auto &eval_cfg = cfg.eval_corpus ? *cfg.eval_corpus : cfg.corpus;
  if (!load_corpus(eval_cfg.path, eval_cfg.format).annotated()) return std::nullopt;
  return cmd_evaluate(cfg, log);
}

}  // namespace slotforge
