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

// Interchange files shared with the feature extractor, plus two built-in
// embedders that let the pipeline run without a language model.
//
// Every file starts with a header record
//
//   {"format": "features" | "span_requests" | "span_embeddings", "version": 1, "dim": D}
//
// followed by one JSON record per line:
//
//   features         {"uid", "tokens": [str], "attention": [[float]], "utt_vec": [float]}
//   span_requests    {"uid", "spans": [[start, end], ...]}          (end exclusive)
//   span_embeddings  {"uid", "start", "end", "masked_vec": [float]}
//
// Doubles are written with shortest round-trip precision.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slotforge/corpus.hpp"
#include "slotforge/detail/hash.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/detail/numeric.hpp"
#include "slotforge/error.hpp"
#include "slotforge/span_extraction.hpp"

namespace slotforge {

inline constexpr int kFormatVersion = 1;

struct SpanKey {
  std::string uid;
  int start = 0;
  int end = 0;

  friend bool operator==(const SpanKey &, const SpanKey &) = default;
  friend auto operator<=>(const SpanKey &, const SpanKey &) = default;

  std::string to_string() const {
    return uid + "[" + std::to_string(start) + "," + std::to_string(end) + ")";
  }
};

struct SpanEmbedding {
  std::string uid;
  int start = 0;
  int end = 0;
  std::vector<double> vec;

  SpanKey key() const { return {uid, start, end}; }
};

struct UtteranceEmbedding {
  std::string uid;
  std::vector<double> vec;
};

struct FeatureRecord {
  std::vector<std::string> tokens;
  AttentionProfile attention;
  UtteranceEmbedding utterance;
};

using FeatureMap = std::map<std::string, FeatureRecord>;

// Lookup of span embeddings by (uid, start, end).
class SpanEmbeddingIndex {
 public:
  SpanEmbeddingIndex() = default;
  explicit SpanEmbeddingIndex(const std::vector<SpanEmbedding> &embs) {
    for (std::size_t i = 0; i < embs.size(); ++i) {
      if (!index_.emplace(embs[i].key(), &embs[i].vec).second) {
        throw Error("duplicate span embedding " + embs[i].key().to_string());
      }
    }
  }
  SpanEmbeddingIndex(std::vector<SpanEmbedding> &&) = delete;  // the index borrows its storage

  const std::vector<double> *find(const SpanKey &key) const {
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : it->second;
  }

  const std::vector<double> &at(const SpanKey &key) const {
    const auto *v = find(key);
    if (!v) throw Error("missing span embedding for " + key.to_string());
    return *v;
  }

 private:
  std::map<SpanKey, const std::vector<double> *> index_;
};

namespace detail {

inline Json file_header(const std::string &format, int dim) {
  return {{"format", format}, {"version", kFormatVersion}, {"dim", dim}};
}

// Reads a header-prefixed file. Returns the declared dim, or -1 for an empty
// file. fn is called for every record after the header.
inline int read_with_header(const std::filesystem::path &path, const std::string &format,
                            const std::function<void(const Json &, int, int)> &fn) {
  int dim = -1;
  bool have_header = false;
  for_each_jsonl(path, [&](const Json &rec, int line) {
    if (!have_header) {
      if (!rec.contains("format")) {
        throw Error(path.string() + ":" + std::to_string(line) + ": missing header record");
      }
      if (rec["format"] != format) {
        throw Error(path.string() + ": expected format '" + format + "', found " +
                    rec["format"].dump());
      }
      if (field<int>(rec, "version", line) != kFormatVersion) {
        throw Error(path.string() + ": unsupported version");
      }
      dim = field<int>(rec, "dim", line);
      have_header = true;
      return;
    }
    fn(rec, line, dim);
  });
  return dim;
}

inline std::vector<double> finite_vector(const Json &rec, const char *name, int line,
                                         const std::string &uid) {
  auto v = field<std::vector<double>>(rec, name, line);
  for (double x : v) {
    if (!std::isfinite(x)) throw Error("line " + std::to_string(line) + " (" + uid + "): non-finite value in '" + name + "'");
  }
  return v;
}

}  // namespace detail

inline FeatureMap read_features(const std::filesystem::path &path) {
  FeatureMap out;
  detail::read_with_header(path, "features", [&](const detail::Json &rec, int line, int dim) {
    auto uid = detail::field<std::string>(rec, "uid", line);
    const std::string where = "line " + std::to_string(line) + " (" + uid + ")";
    FeatureRecord r;
    r.tokens = detail::field<std::vector<std::string>>(rec, "tokens", line);
    auto att = detail::field<std::vector<std::vector<double>>>(rec, "attention", line);
    const int n = static_cast<int>(r.tokens.size());
    if (static_cast<int>(att.size()) != n) {
      throw Error(where + ": attention has " + std::to_string(att.size()) + " rows for " +
                  std::to_string(n) + " tokens");
    }
    r.attention.uid = uid;
    r.attention.n = n;
    r.attention.rows.reserve(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(att[i].size()) != n) {
        throw Error(where + ": attention row " + std::to_string(i) + " has wrong length");
      }
      double total = 0.0;
      for (double x : att[i]) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
          throw Error(where + ": attention row " + std::to_string(i) + " has a negative or non-finite entry");
        }
        total += x;
      }
      if (std::abs(total - 1.0) > kStochasticTolerance) {
        throw Error(where + ": attention row " + std::to_string(i) + " sums to " + std::to_string(total));
      }
      r.attention.rows.insert(r.attention.rows.end(), att[i].begin(), att[i].end());
    }
    r.utterance.uid = uid;
    r.utterance.vec = detail::finite_vector(rec, "utt_vec", line, uid);
    if (static_cast<int>(r.utterance.vec.size()) != dim) {
      throw Error(where + ": utt_vec has dimension " + std::to_string(r.utterance.vec.size()) +
                  ", header declares " + std::to_string(dim));
    }
    if (!out.emplace(uid, std::move(r)).second) throw Error(where + ": duplicate uid");
  });
  return out;
}

// Records are written in the given order.
inline void write_features(const std::filesystem::path &path, int dim,
                           const std::vector<std::pair<std::string, FeatureRecord>> &records) {
  std::string out = detail::dump_line(detail::file_header("features", dim));
  for (const auto &[uid, r] : records) {
    detail::Json att = detail::Json::array();
    for (int i = 0; i < r.attention.n; ++i) {
      auto row = r.attention.row(i);
      att.push_back(std::vector<double>(row.begin(), row.end()));
    }
    out += detail::dump_line({{"uid", uid}, {"tokens", r.tokens}, {"attention", std::move(att)},
                              {"utt_vec", r.utterance.vec}});
  }
  detail::write_text_file(path, out);
}

inline std::vector<SpanEmbedding> read_span_embeddings(const std::filesystem::path &path) {
  std::vector<SpanEmbedding> out;
  std::set<SpanKey> seen;
  detail::read_with_header(path, "span_embeddings", [&](const detail::Json &rec, int line, int dim) {
    SpanEmbedding e;
    e.uid = detail::field<std::string>(rec, "uid", line);
    e.start = detail::field<int>(rec, "start", line);
    e.end = detail::field<int>(rec, "end", line);
    const std::string where = "line " + std::to_string(line) + " (" + e.key().to_string() + ")";
    if (e.start < 0 || e.end <= e.start) throw Error(where + ": invalid span bounds");
    e.vec = detail::finite_vector(rec, "masked_vec", line, e.uid);
    if (static_cast<int>(e.vec.size()) != dim) {
      throw Error(where + ": masked_vec has dimension " + std::to_string(e.vec.size()) +
                  ", header declares " + std::to_string(dim));
    }
    if (!seen.insert(e.key()).second) throw Error(where + ": duplicate span");
    out.push_back(std::move(e));
  });
  return out;
}

inline void write_span_embeddings(const std::filesystem::path &path, int dim,
                                  const std::vector<SpanEmbedding> &embs) {
  std::string out = detail::dump_line(detail::file_header("span_embeddings", dim));
  for (const auto &e : embs) {
    out += detail::dump_line({{"uid", e.uid}, {"start", e.start}, {"end", e.end}, {"masked_vec", e.vec}});
  }
  detail::write_text_file(path, out);
}

inline void write_span_requests(const std::filesystem::path &path,
                                const std::vector<std::pair<std::string, std::vector<SpanCandidate>>> &spans) {
  write_spans(path, spans, detail::file_header("span_requests", 0));
}

// ---------------------------------------------------------------------------
// Mock embedder: deterministic hashing, no model.

struct MockEmbedding {
  std::vector<SpanEmbedding> spans;
  std::map<std::string, UtteranceEmbedding> utterances;
  std::map<std::string, AttentionProfile> attention;
};

namespace detail {

inline constexpr int kMockContextWindow = 3;
inline constexpr int kMockAttentionBuckets = 4;
inline constexpr double kMockLocalMass = 0.6;

inline void add_signed_hash(std::vector<double> &v, const std::string &token, std::uint64_t seed) {
  const std::uint64_t h = seeded_hash(token, seed);
  const std::size_t bucket = h % v.size();
  v[bucket] += (h >> 63) ? -1.0 : 1.0;
}

inline std::vector<double> finish_bag(std::vector<double> v, std::uint64_t seed) {
  if (l2_norm(v) == 0.0) add_signed_hash(v, "<empty>", seed);
  return normalized(v);
}

inline void check_mock_dim(int dim) {
  if (dim < 8) throw Error("mock embedder: dim must be at least 8");
}

}  // namespace detail

// Attention row i mixes 0.6 mass spread over the other tokens, weighted by
// hash-bucket agreement and decaying with distance, with 0.4 uniform mass.
inline AttentionProfile mock_attention(const Utterance &u, std::uint64_t seed) {
  AttentionProfile att;
  att.uid = u.uid;
  att.n = static_cast<int>(u.tokens.size());
  const int n = att.n;
  att.rows.assign(static_cast<std::size_t>(n) * n, 0.0);
  if (n == 0) return att;
  if (n == 1) {
    att.rows[0] = 1.0;
    return att;
  }
  std::vector<std::uint64_t> bucket(n);
  for (int i = 0; i < n; ++i) {
    bucket[i] = detail::seeded_hash(u.tokens[i], seed ^ 0xa77e471017ULL) % detail::kMockAttentionBuckets;
  }
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    std::vector<double> w(n, 0.0);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      w[j] = (bucket[i] == bucket[j] ? 2.0 : 1.0) / (1.0 + std::abs(i - j));
      total += w[j];
    }
    for (int j = 0; j < n; ++j) {
      att.rows[static_cast<std::size_t>(i) * n + j] =
          detail::kMockLocalMass * w[j] / total + (1.0 - detail::kMockLocalMass) / n;
    }
  }
  return att;
}

// Masked-span vector: signed-hash bag of the tokens within 3 positions on
// each side of the span, span tokens excluded.
inline std::vector<double> mock_span_vector(const Utterance &u, int start, int end, int dim,
                                            std::uint64_t seed) {
  detail::check_mock_dim(dim);
  std::vector<double> v(dim, 0.0);
  const int n = static_cast<int>(u.tokens.size());
  for (int i = std::max(0, start - detail::kMockContextWindow); i < start; ++i) {
    detail::add_signed_hash(v, u.tokens[i], seed);
  }
  for (int i = end; i < std::min(n, end + detail::kMockContextWindow); ++i) {
    detail::add_signed_hash(v, u.tokens[i], seed);
  }
  return detail::finish_bag(std::move(v), seed);
}

inline std::vector<double> mock_utterance_vector(const Utterance &u, int dim, std::uint64_t seed) {
  detail::check_mock_dim(dim);
  std::vector<double> v(dim, 0.0);
  for (const auto &t : u.tokens) detail::add_signed_hash(v, t, seed ^ 0x5eed0ULL);
  return detail::finish_bag(std::move(v), seed);
}

// Features for every user utterance, in corpus order.
inline std::vector<std::pair<std::string, FeatureRecord>> mock_features(const Corpus &corpus, int dim,
                                                                        std::uint64_t seed) {
  detail::check_mock_dim(dim);
  std::vector<std::pair<std::string, FeatureRecord>> out;
  for (const Utterance *u : corpus.user_utterances()) {
    FeatureRecord r;
    r.tokens = u->tokens;
    r.attention = mock_attention(*u, seed);
    r.utterance = {u->uid, mock_utterance_vector(*u, dim, seed)};
    out.emplace_back(u->uid, std::move(r));
  }
  return out;
}

inline std::vector<SpanEmbedding> mock_span_embeddings(const Corpus &corpus,
                                                       const std::vector<SpanCandidate> &spans,
                                                       int dim, std::uint64_t seed) {
  std::vector<SpanEmbedding> out;
  out.reserve(spans.size());
  for (const auto &s : spans) {
    const Utterance *u = corpus.find(s.uid);
    if (!u) throw Error("mock embedder: uid " + s.uid + " not in corpus");
    out.push_back({s.uid, s.start, s.end, mock_span_vector(*u, s.start, s.end, dim, seed)});
  }
  return out;
}

inline MockEmbedding mock_embed(const Corpus &corpus, const std::vector<SpanCandidate> &spans,
                                int dim, std::uint64_t seed) {
  MockEmbedding out;
  out.spans = mock_span_embeddings(corpus, spans, dim, seed);
  for (auto &[uid, rec] : mock_features(corpus, dim, seed)) {
    out.utterances.emplace(uid, rec.utterance);
    out.attention.emplace(uid, std::move(rec.attention));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle embedder for corpora with planted slot labels.
//
// A span's planted label is the gold slot whose value it spells exactly in
// its utterance, or the background label. An utterance's planted domain is
// the prefix before '-' of its first gold slot, or the no-domain label.

inline constexpr const char *kBackgroundLabel = "<background>";
inline constexpr const char *kNoDomainLabel = "<none>";

inline std::string slot_domain(const std::string &slot) {
  auto dash = slot.find('-');
  return dash == std::string::npos ? slot : slot.substr(0, dash);
}

inline std::string planted_span_label(const Utterance &u, int start, int end) {
  if (!u.gold_state) return kBackgroundLabel;
  const std::string text = join_tokens(u.tokens, start, end);
  for (const auto &sv : *u.gold_state) {
    const auto value = tokenize(sv.value);
    if (join_tokens(value, 0, value.size()) == text) return sv.slot;
  }
  return kBackgroundLabel;
}

inline std::string planted_domain(const Utterance &u) {
  if (!u.gold_state || u.gold_state->empty()) return kNoDomainLabel;
  return slot_domain(u.gold_state->front().slot);
}

class OracleEmbedder {
 public:
  // Label sets of all corpora the embedder will see; basis indices follow
  // sorted label order.
  OracleEmbedder(const std::vector<const Corpus *> &corpora, int dim, double sigma,
                 std::uint64_t seed)
      : dim_(dim), sigma_(sigma), seed_(seed) {
    std::set<std::string> spans{kBackgroundLabel}, domains{kNoDomainLabel};
    for (const Corpus *c : corpora) {
      for (const Utterance *u : c->user_utterances()) {
        domains.insert(planted_domain(*u));
        if (!u->gold_state) continue;
        for (const auto &sv : *u->gold_state) spans.insert(sv.slot);
      }
    }
    if (static_cast<int>(spans.size()) > dim || static_cast<int>(domains.size()) > dim) {
      throw Error("oracle embedder: " + std::to_string(std::max(spans.size(), domains.size())) +
                  " planted labels exceed dim " + std::to_string(dim));
    }
    int i = 0;
    for (const auto &s : spans) span_basis_[s] = i++;
    i = 0;
    for (const auto &d : domains) domain_basis_[d] = i++;
  }

  std::vector<double> span_vector(const SpanKey &key, const std::string &label) const {
    return noisy_basis(basis(span_basis_, label), key.to_string());
  }

  std::vector<double> utterance_vector(const std::string &uid, const std::string &domain) const {
    return noisy_basis(basis(domain_basis_, domain), "utt:" + uid);
  }

  int dim() const { return dim_; }

 private:
  static int basis(const std::map<std::string, int> &m, const std::string &label) {
    auto it = m.find(label);
    if (it == m.end()) throw Error("oracle embedder: unknown planted label '" + label + "'");
    return it->second;
  }

  // One-hot plus N(0, sigma^2) noise, L2-normalized. The noise stream is
  // seeded per key, so a vector does not depend on which other spans are
  // embedded in the same run.
  std::vector<double> noisy_basis(int index, const std::string &key) const {
    std::vector<double> v(dim_, 0.0);
    v[index] = 1.0;
    if (sigma_ > 0.0) {
      std::mt19937_64 rng(detail::seeded_hash(key, seed_));
      for (double &x : v) x += sigma_ * detail::standard_normal(rng);
    }
    return detail::normalized(v);
  }

  int dim_;
  double sigma_;
  std::uint64_t seed_;
  std::map<std::string, int> span_basis_;
  std::map<std::string, int> domain_basis_;
};

struct OracleEmbedding {
  std::vector<SpanEmbedding> spans;
  std::map<std::string, UtteranceEmbedding> utterances;
};

inline OracleEmbedding oracle_embed(const OracleEmbedder &embedder, const Corpus &corpus,
                                    const std::vector<SpanCandidate> &spans) {
  OracleEmbedding out;
  for (const auto &s : spans) {
    const Utterance *u = corpus.find(s.uid);
    if (!u) throw Error("oracle embedder: uid " + s.uid + " not in corpus");
    SpanKey key{s.uid, s.start, s.end};
    out.spans.push_back({s.uid, s.start, s.end,
                         embedder.span_vector(key, planted_span_label(*u, s.start, s.end))});
  }
  for (const Utterance *u : corpus.user_utterances()) {
    out.utterances.emplace(u->uid, UtteranceEmbedding{u->uid, embedder.utterance_vector(u->uid, planted_domain(*u))});
  }
  return out;
}

inline OracleEmbedding oracle_embed(const Corpus &corpus, const std::vector<SpanCandidate> &spans,
                                    int dim, double sigma, std::uint64_t seed) {
  return oracle_embed(OracleEmbedder({&corpus}, dim, sigma, seed), corpus, spans);
}

// Attention profiles for a planted corpus. Tokens are grouped into segments:
// each located gold value is one segment and every maximal run of other
// tokens is another. A token attends only within its own segment, so
// adjacent tokens of different segments are ln 2 apart; inside a segment the
// distance is small for values and moderate for background runs.
inline AttentionProfile oracle_attention(const Utterance &u) {
  const int n = static_cast<int>(u.tokens.size());
  std::vector<int> segment(n, -1);
  std::vector<bool> is_value(n, false);
  int next = 0;
  if (u.gold_state) {
    for (const auto &sv : *u.gold_state) {
      const auto value = tokenize(sv.value);
      const int m = static_cast<int>(value.size());
      for (int s = 0; m > 0 && s + m <= n; ++s) {
        bool match = true;
        for (int k = 0; k < m && match; ++k) match = u.tokens[s + k] == value[k] && segment[s + k] < 0;
        if (!match) continue;
        for (int k = 0; k < m; ++k) {
          segment[s + k] = next;
          is_value[s + k] = true;
        }
        ++next;
        break;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    if (segment[i] >= 0) continue;
    segment[i] = (i > 0 && !is_value[i - 1]) ? segment[i - 1] : next++;
  }
  AttentionProfile att;
  att.uid = u.uid;
  att.n = n;
  att.rows.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<int> members;
    for (int j = 0; j < n; ++j) {
      if (segment[j] == segment[i]) members.push_back(j);
    }
    const double self_mass = is_value[i] ? 0.05 : 0.5;
    const double m = static_cast<double>(members.size());
    for (int j : members) {
      att.rows[static_cast<std::size_t>(i) * n + j] = (1.0 - self_mass) / m + (j == i ? self_mass : 0.0);
    }
  }
  return att;
}

inline std::vector<std::pair<std::string, FeatureRecord>> oracle_features(
    const OracleEmbedder &embedder, const Corpus &corpus) {
  std::vector<std::pair<std::string, FeatureRecord>> out;
  for (const Utterance *u : corpus.user_utterances()) {
    FeatureRecord r;
    r.tokens = u->tokens;
    r.attention = oracle_attention(*u);
    r.utterance = {u->uid, embedder.utterance_vector(u->uid, planted_domain(*u))};
    out.emplace_back(u->uid, std::move(r));
  }
  return out;
}

}  // namespace slotforge
