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

// Induced schema assembly, naming by reference centroids, and application to
// new utterances.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slotforge/clustering.hpp"
#include "slotforge/corpus.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/detail/numeric.hpp"
#include "slotforge/embedding_io.hpp"
#include "slotforge/error.hpp"

namespace slotforge {

inline constexpr double kDefaultMappingThreshold = 0.8;

struct ValueCount {
  std::string text;
  int count = 0;

  friend bool operator==(const ValueCount &, const ValueCount &) = default;
};

struct SlotCluster {
  std::string label;
  std::vector<ValueCount> values;  // normalized texts, sorted by text
  std::vector<double> centroid;
  std::vector<clustering::ClusterMember> members;
};

struct InducedSchema {
  std::string embedder;  // identity of the embedder behind every centroid
  std::vector<SlotCluster> slots;
};

struct SlotAssignment {
  std::optional<std::string> name;
  double similarity = -1.0;
};

using SlotMapping = std::vector<SlotAssignment>;  // parallel to InducedSchema::slots

struct ReferenceCentroids {
  std::string embedder;
  std::map<std::string, std::vector<double>> centroids;
};

namespace detail {

inline std::vector<double> normalized_mean(const std::vector<const std::vector<double> *> &vs) {
  std::vector<double> sum(vs.front()->size(), 0.0);
  for (const auto *v : vs) {
    if (v->size() != sum.size()) throw Error("centroid: vectors have different dimensions");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*v)[i];
  }
  return normalized(sum);
}

}  // namespace detail

inline InducedSchema build_schema(const clustering::ClusterTree &tree, const SpanEmbeddingIndex &embs,
                                  std::string embedder) {
  InducedSchema schema;
  schema.embedder = std::move(embedder);
  for (const auto &leaf : tree.leaves) {
    if (leaf.members.empty()) throw Error("build_schema: leaf " + leaf.label + " has no members");
    SlotCluster slot;
    slot.label = leaf.label;
    slot.members = leaf.members;
    std::vector<const std::vector<double> *> vecs;
    std::map<std::string, int> counts;
    for (const auto &m : leaf.members) {
      vecs.push_back(&embs.at(m.key()));
      ++counts[normalize_text(m.text)];
    }
    for (const auto &[text, c] : counts) slot.values.push_back({text, c});
    slot.centroid = detail::normalized_mean(vecs);
    schema.slots.push_back(std::move(slot));
  }
  return schema;
}

struct GoldSpan {
  std::string uid;
  std::string slot;
  std::string value;  // normalized
  int start = 0;
  int end = 0;

  SpanKey key() const { return {uid, start, end}; }
};

struct GoldLocation {
  std::vector<GoldSpan> located;
  std::vector<GoldSpan> skipped;  // start = end = 0
};

// First exact token-subsequence match of every gold value in its user
// utterance. Tokens are lowercased by tokenize(), so matching is
// case-insensitive.
inline GoldLocation locate_gold_spans(const Corpus &corpus) {
  GoldLocation out;
  for (const Utterance *u : corpus.user_utterances()) {
    if (!u->gold_state) continue;
    for (const auto &sv : *u->gold_state) {
      const auto value = tokenize(sv.value);
      GoldSpan g{u->uid, sv.slot, normalize_text(sv.value), 0, 0};
      const int n = static_cast<int>(u->tokens.size());
      const int m = static_cast<int>(value.size());
      bool found = false;
      for (int s = 0; m > 0 && s + m <= n && !found; ++s) {
        found = std::equal(value.begin(), value.end(), u->tokens.begin() + s);
        if (found) {
          g.start = s;
          g.end = s + m;
        }
      }
      (found ? out.located : out.skipped).push_back(std::move(g));
    }
  }
  return out;
}

struct ReferenceReport {
  ReferenceCentroids refs;
  std::size_t located = 0;
  std::size_t skipped = 0;
  std::vector<std::string> excluded_slots;  // reference slots with no located occurrence
};

// Per slot, the normalized mean masked-span embedding over located gold
// occurrences.
inline ReferenceReport reference_centroids(const GoldLocation &gold, const ReferenceSchema &ref,
                                           const SpanEmbeddingIndex &embs, std::string embedder) {
  ReferenceReport rep;
  rep.refs.embedder = std::move(embedder);
  rep.located = gold.located.size();
  rep.skipped = gold.skipped.size();
  std::map<std::string, std::vector<const std::vector<double> *>> by_slot;
  for (const auto &g : gold.located) by_slot[g.slot].push_back(&embs.at(g.key()));
  for (const auto &[slot, vecs] : by_slot) rep.refs.centroids[slot] = detail::normalized_mean(vecs);
  for (const auto &slot : ref.in_corpus_slots) {
    if (!rep.refs.centroids.count(slot)) rep.excluded_slots.push_back(slot);
  }
  return rep;
}

// Argmax cosine over reference names (ties keep the first name in order);
// the name is assigned only when the similarity reaches the threshold.
inline SlotMapping map_clusters(const InducedSchema &schema, const ReferenceCentroids &refs,
                                double threshold = kDefaultMappingThreshold) {
  if (schema.embedder != refs.embedder) {
    throw Error("map_clusters: schema embedded with '" + schema.embedder +
                "' but reference centroids with '" + refs.embedder + "'");
  }
  SlotMapping out;
  for (const auto &slot : schema.slots) {
    SlotAssignment a;
    std::string best;
    double best_sim = -2.0;
    for (const auto &[name, c] : refs.centroids) {
      if (c.size() != slot.centroid.size()) {
        throw Error("map_clusters: dimension mismatch between slot " + slot.label + " and " + name);
      }
      const double sim = detail::cosine_similarity(slot.centroid, c);
      if (sim > best_sim) {
        best_sim = sim;
        best = name;
      }
    }
    if (!refs.centroids.empty()) a.similarity = best_sim;
    if (!refs.centroids.empty() && best_sim >= threshold) a.name = best;
    out.push_back(a);
  }
  return out;
}

struct Prediction {
  std::string slot;
  std::string value;
  int start = 0;
  int end = 0;
};

using PredictionMap = std::map<std::string, std::vector<Prediction>>;  // uid -> predictions

// Each span goes to its nearest induced slot; a prediction is emitted when
// that slot is named and the similarity reaches the threshold.
inline std::vector<Prediction> apply_schema(const InducedSchema &schema, const SlotMapping &mapping,
                                            const std::vector<SpanCandidate> &spans,
                                            const SpanEmbeddingIndex &embs,
                                            double threshold = kDefaultMappingThreshold) {
  if (mapping.size() != schema.slots.size()) throw Error("apply_schema: mapping does not match schema");
  std::vector<Prediction> out;
  if (schema.slots.empty()) return out;
  for (const auto &s : spans) {
    const auto &v = embs.at({s.uid, s.start, s.end});
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < schema.slots.size(); ++i) {
      const double sim = detail::cosine_similarity(v, schema.slots[i].centroid);
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    if (mapping[best].name && best_sim >= threshold) {
      out.push_back({*mapping[best].name, normalize_text(s.text), s.start, s.end});
    }
  }
  return out;
}

inline detail::Json schema_to_json(const InducedSchema &schema, const SlotMapping &mapping) {
  if (mapping.size() != schema.slots.size()) throw Error("schema_to_json: mapping does not match schema");
  detail::Json slots = detail::Json::array();
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    const auto &s = schema.slots[i];
    detail::Json values = detail::Json::array();
    for (const auto &v : s.values) values.push_back({{"text", v.text}, {"count", v.count}});
    detail::Json members = detail::Json::array();
    for (const auto &m : s.members) members.push_back({m.uid, m.start, m.end});
    slots.push_back({{"label", s.label},
                     {"mapped_name", mapping[i].name ? detail::Json(*mapping[i].name) : detail::Json(nullptr)},
                     {"similarity", mapping[i].similarity},
                     {"values", std::move(values)},
                     {"centroid", s.centroid},
                     {"members", std::move(members)}});
  }
  return {{"embedder", schema.embedder}, {"slots", std::move(slots)}};
}

inline std::pair<InducedSchema, SlotMapping> schema_from_json(const detail::Json &j, const Corpus *corpus = nullptr) {
  InducedSchema schema;
  SlotMapping mapping;
  try {
    schema.embedder = j.value("embedder", std::string());
    for (const auto &s : j.at("slots")) {
      SlotCluster slot;
      slot.label = s.at("label").get<std::string>();
      for (const auto &v : s.at("values")) slot.values.push_back({v.at("text").get<std::string>(), v.at("count").get<int>()});
      slot.centroid = s.at("centroid").get<std::vector<double>>();
      if (s.contains("members")) {
        for (const auto &m : s["members"]) {
          clustering::ClusterMember cm{m.at(0).get<std::string>(), m.at(1).get<int>(), m.at(2).get<int>(), ""};
          if (corpus) {
            const Utterance *u = corpus->find(cm.uid);
            if (u && cm.end <= static_cast<int>(u->tokens.size())) cm.text = join_tokens(u->tokens, cm.start, cm.end);
          }
          slot.members.push_back(std::move(cm));
        }
      }
      SlotAssignment a;
      if (!s.at("mapped_name").is_null()) a.name = s["mapped_name"].get<std::string>();
      a.similarity = s.at("similarity").get<double>();
      schema.slots.push_back(std::move(slot));
      mapping.push_back(std::move(a));
    }
  } catch (const detail::Json::exception &e) {
    throw Error(std::string("schema: malformed JSON: ") + e.what());
  }
  return {std::move(schema), std::move(mapping)};
}

inline void write_predictions(const std::filesystem::path &path, const std::vector<std::string> &uids,
                              const PredictionMap &preds) {
  std::string out;
  for (const auto &uid : uids) {
    detail::Json arr = detail::Json::array();
    if (auto it = preds.find(uid); it != preds.end()) {
      for (const auto &p : it->second) arr.push_back({{"slot", p.slot}, {"value", p.value}});
    }
    out += detail::dump_line({{"uid", uid}, {"predictions", std::move(arr)}});
  }
  detail::write_text_file(path, out);
}

inline PredictionMap read_predictions(const std::filesystem::path &path) {
  PredictionMap out;
  detail::for_each_jsonl(path, [&](const detail::Json &rec, int line) {
    auto uid = detail::field<std::string>(rec, "uid", line);
    auto &list = out[uid];
    for (const auto &p : detail::field<detail::Json>(rec, "predictions", line)) {
      list.push_back({detail::field<std::string>(p, "slot", line), detail::field<std::string>(p, "value", line)});
    }
  });
  return out;
}

}  // namespace slotforge
