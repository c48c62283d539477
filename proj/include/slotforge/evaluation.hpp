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

// Schema and dialog-state metrics.
//
// String similarity is normalized Levenshtein on lowercased,
// whitespace-collapsed text. Slot types are scored by the distinct names the
// mapping assigns; slot values by per-type fuzzy overlap, macro-averaged over
// the types that received at least one cluster. DST is scored per user turn
// (turn level) and on the state accumulated so far (joint level), both
// macro-averaged over turns.

#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "slotforge/corpus.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/detail/numeric.hpp"
#include "slotforge/error.hpp"
#include "slotforge/schema.hpp"
#include "slotforge/span_extraction.hpp"

namespace slotforge {

// Edit distance over bytes.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double fuzzy(std::string_view a, std::string_view b) {
  const std::string x = normalize_text(a), y = normalize_text(b);
  const std::size_t m = std::max(x.size(), y.size());
  if (m == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(x, y)) / static_cast<double>(m);
}

using Scorer = std::function<double(std::string_view, std::string_view)>;

inline const Scorer &default_scorer() {
  static const Scorer s = [](std::string_view a, std::string_view b) { return fuzzy(a, b); };
  return s;
}

struct PRF {
  double p = 0.0;
  double r = 0.0;
  double f1 = 0.0;
};

inline PRF make_prf(double p, double r) { return {p, r, detail::harmonic_f1(p, r)}; }

struct TypeScores {
  PRF prf;
  std::size_t n_clusters = 0;
  std::set<std::string> assigned;
};

inline TypeScores schema_type_prf(const SlotMapping &mapping, const ReferenceSchema &ref) {
  if (ref.in_corpus_slots.empty()) throw Error("schema_type_prf: reference has no slots");
  TypeScores out;
  out.n_clusters = mapping.size();
  for (const auto &a : mapping) {
    if (a.name) out.assigned.insert(*a.name);
  }
  std::size_t hit = 0;
  for (const auto &name : out.assigned) hit += ref.in_corpus_slots.count(name);
  const double p = out.assigned.empty() ? 0.0 : static_cast<double>(hit) / out.assigned.size();
  const double r = static_cast<double>(hit) / ref.in_corpus_slots.size();
  out.prf = make_prf(p, r);
  return out;
}

namespace detail {

// Mean over xs of the best score against ys; 0 when ys is empty.
inline double mean_best(const std::set<std::string> &xs, const std::set<std::string> &ys,
                        const Scorer &score) {
  if (xs.empty()) return 0.0;
  double total = 0.0;
  for (const auto &x : xs) {
    double best = 0.0;
    for (const auto &y : ys) best = std::max(best, score(x, y));
    total += best;
  }
  return total / static_cast<double>(xs.size());
}

}  // namespace detail

struct ValueScores {
  PRF prf;
  std::map<std::string, PRF> per_type;
};

// Returns zeros when no cluster is mapped to a reference type.
inline ValueScores schema_value_prf(const InducedSchema &schema, const SlotMapping &mapping,
                                    const ReferenceSchema &ref, const Scorer &score = default_scorer()) {
  if (mapping.size() != schema.slots.size()) throw Error("schema_value_prf: mapping does not match schema");
  std::map<std::string, std::set<std::string>> predicted;
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    if (!mapping[i].name) continue;
    auto &vp = predicted[*mapping[i].name];
    for (const auto &v : schema.slots[i].values) vp.insert(normalize_text(v.text));
  }
  ValueScores out;
  double sp = 0.0, sr = 0.0, sf = 0.0;
  for (const auto &[name, vp] : predicted) {
    auto it = ref.slots.find(name);
    if (it == ref.slots.end()) continue;
    std::set<std::string> vg;
    for (const auto &v : it->second) vg.insert(normalize_text(v));
    const PRF t = make_prf(detail::mean_best(vp, vg, score), detail::mean_best(vg, vp, score));
    out.per_type[name] = t;
    sp += t.p;
    sr += t.r;
    sf += t.f1;
  }
  if (!out.per_type.empty()) {
    const double k = static_cast<double>(out.per_type.size());
    out.prf = {sp / k, sr / k, sf / k};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dialog state tracking

using TurnState = std::vector<SlotValue>;
using DialogTurns = std::vector<TurnState>;  // one entry per user turn

struct DstScores {
  double turn_f1 = 0.0;
  double joint_f1 = 0.0;
  std::size_t turns = 0;
};

namespace detail {

// Latest value per slot.
inline std::map<std::string, std::string> latest_by_slot(const TurnState &s) {
  std::map<std::string, std::string> out;
  for (const auto &sv : s) out[sv.slot] = sv.value;
  return out;
}

inline double state_f1(const std::map<std::string, std::string> &pred,
                       const std::map<std::string, std::string> &gold, const Scorer &score) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  double tp = 0.0;
  for (const auto &[slot, value] : pred) {
    auto it = gold.find(slot);
    if (it != gold.end()) tp += score(value, it->second);
  }
  return harmonic_f1(tp / pred.size(), tp / gold.size());
}

}  // namespace detail

// Predicted and gold turn states per dialog, aligned by user turn. Within a
// turn, repeated predictions for one slot keep the last value.
inline DstScores dst_scores(const std::vector<DialogTurns> &predicted, const std::vector<DialogTurns> &gold,
                            const Scorer &score = default_scorer()) {
  if (predicted.size() != gold.size()) throw Error("dst_scores: dialog count mismatch");
  DstScores out;
  double turn_sum = 0.0, joint_sum = 0.0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    if (predicted[d].size() != gold[d].size()) {
      throw Error("dst_scores: dialog " + std::to_string(d) + " has " + std::to_string(predicted[d].size()) +
                  " predicted turns and " + std::to_string(gold[d].size()) + " gold turns");
    }
    std::map<std::string, std::string> acc_pred, acc_gold;
    for (std::size_t t = 0; t < gold[d].size(); ++t) {
      const auto p = detail::latest_by_slot(predicted[d][t]);
      const auto g = detail::latest_by_slot(gold[d][t]);
      turn_sum += detail::state_f1(p, g, score);
      for (const auto &[s, v] : p) acc_pred[s] = v;
      for (const auto &[s, v] : g) acc_gold[s] = v;
      joint_sum += detail::state_f1(acc_pred, acc_gold, score);
      ++out.turns;
    }
  }
  if (out.turns > 0) {
    out.turn_f1 = turn_sum / out.turns;
    out.joint_f1 = joint_sum / out.turns;
  }
  return out;
}

// Aligns predictions with the corpus's annotated user turns. Unannotated
// user turns count as empty gold states.
inline std::pair<std::vector<DialogTurns>, std::vector<DialogTurns>> align_dst(const Corpus &corpus,
                                                                               const PredictionMap &preds) {
  std::vector<DialogTurns> p, g;
  for (const auto &dialog : corpus.dialogs()) {
    DialogTurns dp, dg;
    for (const auto &u : dialog.turns) {
      if (u.speaker != Speaker::user) continue;
      TurnState ps;
      if (auto it = preds.find(u.uid); it != preds.end()) {
        for (const auto &pr : it->second) ps.push_back({pr.slot, pr.value});
      }
      dp.push_back(std::move(ps));
      dg.push_back(u.gold_state.value_or(TurnState{}));
    }
    p.push_back(std::move(dp));
    g.push_back(std::move(dg));
  }
  return {std::move(p), std::move(g)};
}

// ---------------------------------------------------------------------------
// Span recall against acceptable-form annotations

struct GoldSpanGroups {
  std::string uid;
  std::vector<std::vector<std::string>> groups;
};

inline std::vector<GoldSpanGroups> read_gold_span_groups(const std::filesystem::path &path) {
  std::vector<GoldSpanGroups> out;
  detail::for_each_jsonl(path, [&](const detail::Json &rec, int line) {
    out.push_back({detail::field<std::string>(rec, "uid", line),
                   detail::field<std::vector<std::vector<std::string>>>(rec, "groups", line)});
  });
  return out;
}

// Fraction of gold groups with at least one form equal (after
// normalization) to an extracted span of the same utterance.
inline double span_recall(const std::map<std::string, std::vector<SpanCandidate>> &extracted,
                          const std::vector<GoldSpanGroups> &gold, const Corpus *corpus = nullptr) {
  std::size_t total = 0, hit = 0;
  for (const auto &g : gold) {
    if (corpus && !corpus->find(g.uid)) throw Error("span_recall: gold uid " + g.uid + " not in corpus");
    std::set<std::string> texts;
    if (auto it = extracted.find(g.uid); it != extracted.end()) {
      for (const auto &s : it->second) texts.insert(normalize_text(s.text));
    }
    for (const auto &group : g.groups) {
      ++total;
      hit += std::any_of(group.begin(), group.end(),
                         [&](const std::string &form) { return texts.count(normalize_text(form)) > 0; });
    }
  }
  if (total == 0) throw Error("span_recall: no gold span groups");
  return static_cast<double>(hit) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
  std::size_t n_clusters = 0;
  PRF slot_type;
  PRF slot_value;
  std::optional<DstScores> dst;
  std::optional<double> span_recall;
};

inline detail::Json prf_json(const PRF &x) { return {{"p", x.p}, {"r", x.r}, {"f1", x.f1}}; }

inline detail::Json report_to_json(const EvalReport &r) {
  detail::Json j{{"n_clusters", r.n_clusters},
                 {"slot_type", prf_json(r.slot_type)},
                 {"slot_value", prf_json(r.slot_value)}};
  j["dst"] = r.dst ? detail::Json{{"turn_f1", r.dst->turn_f1}, {"joint_f1", r.dst->joint_f1}, {"turns", r.dst->turns}}
                   : detail::Json(nullptr);
  j["span_recall"] = r.span_recall ? detail::Json(*r.span_recall) : detail::Json(nullptr);
  j["metadata"] = {
      {"fuzzy", "1 - levenshtein / max length on lowercased, whitespace-collapsed text"},
      {"interpretive",
       {"slot_type precision counts assigned names absent from the evaluation corpus as errors",
        "dst turn and joint F1 are macro-averaged over user turns",
        "a turn with empty prediction and empty gold scores F1 = 1",
        "repeated predictions for one slot within a turn keep the last value"}}};
  return j;
}

}  // namespace slotforge
