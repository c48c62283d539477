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

// Bottom-up span extraction from attention profiles.
//
// Adjacent tokens are compared by the Jensen-Shannon divergence of their
// attention rows. Boundaries are visited from the smallest distance to the
// largest and merged while the distance is strictly below the utterance's
// median distance. Distances are never recomputed after a merge. In the
// constrained variant a merge additionally requires the two current groups to
// be sibling nodes of a binary parse tree; the merged group then takes the
// place of their parent.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slotforge/corpus.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/detail/union_find.hpp"
#include "slotforge/error.hpp"
#include "slotforge/pcfg.hpp"

namespace slotforge {

inline constexpr double kStochasticTolerance = 1e-4;

// Row i is the attention distribution of token i over all n tokens.
struct AttentionProfile {
  std::string uid;
  int n = 0;
  std::vector<double> rows;  // n x n, row-major

  std::span<const double> row(int i) const {
    return std::span<const double>(rows).subspan(static_cast<std::size_t>(i) * n, n);
  }
};

struct DistanceSequence {
  std::vector<double> d;  // d[i] between tokens i and i+1
  double tau = 0.0;
};

struct SpanCandidate {
  std::string uid;
  int start = 0;
  int end = 0;  // exclusive
  std::string text;

  friend bool operator==(const SpanCandidate &, const SpanCandidate &) = default;
};

namespace detail {

inline void check_distribution(std::span<const double> p, const char *name) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || std::isinf(x)) throw Error(std::string("jsd: ") + name + " has a negative or non-finite entry");
    total += x;
  }
  if (std::abs(total - 1.0) > kStochasticTolerance) {
    throw Error(std::string("jsd: ") + name + " does not sum to 1");
  }
}

inline double kl_to_mixture(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / (0.5 * (p[i] + q[i])));
  }
  return total;
}

}  // namespace detail

// Jensen-Shannon divergence in nats; lies in [0, ln 2].
inline double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("jsd: length mismatch");
  detail::check_distribution(p, "p");
  detail::check_distribution(q, "q");
  const double v = 0.5 * detail::kl_to_mixture(p, q) + 0.5 * detail::kl_to_mixture(q, p);
  return std::clamp(v, 0.0, std::log(2.0));
}

// Median; an even count averages the two middle values.
inline double median(std::vector<double> xs) {
  if (xs.empty()) throw Error("median of empty sequence");
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

inline DistanceSequence make_distances(std::vector<double> d) {
  DistanceSequence out;
  out.tau = median(d);
  out.d = std::move(d);
  return out;
}

inline DistanceSequence token_distances(const AttentionProfile &att) {
  if (att.n < 2) throw Error("token_distances: " + att.uid + " needs at least 2 tokens");
  std::vector<double> d(att.n - 1);
  for (int i = 0; i + 1 < att.n; ++i) d[i] = jsd(att.row(i), att.row(i + 1));
  return make_distances(std::move(d));
}

namespace detail {

inline void check_lengths(const Utterance &u, const DistanceSequence &dist) {
  if (u.tokens.size() >= 2 && dist.d.size() != u.tokens.size() - 1) {
    throw Error("span extraction: " + u.uid + " has " + std::to_string(u.tokens.size()) +
                " tokens but " + std::to_string(dist.d.size()) + " distances");
  }
}

// Boundary indices by increasing distance; equal distances keep the leftmost
// boundary first.
inline std::vector<int> boundary_order(const std::vector<double> &d) {
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  return order;
}

// Maximal groups of the union-find over token positions, left to right.
inline std::vector<SpanCandidate> collect_groups(const Utterance &u, UnionFind &groups) {
  std::vector<SpanCandidate> out;
  const int n = static_cast<int>(u.tokens.size());
  int start = 0;
  for (int i = 1; i <= n; ++i) {
    if (i == n || groups.find(i) != groups.find(i - 1)) {
      out.push_back({u.uid, start, i, join_tokens(u.tokens, start, i)});
      start = i;
    }
  }
  return out;
}

}  // namespace detail

// Attention-only extraction. A single-token utterance yields one unigram.
inline std::vector<SpanCandidate> extract_spans_lm(const Utterance &u,
                                                   const DistanceSequence &dist) {
  detail::check_lengths(u, dist);
  detail::UnionFind groups(u.tokens.size());
  if (u.tokens.size() >= 2) {
    for (int i : detail::boundary_order(dist.d)) {
      if (dist.d[i] < dist.tau) groups.unite(i, i + 1);
    }
  }
  return detail::collect_groups(u, groups);
}

// Extraction regularized by a binary parse tree over the same tokens.
inline std::vector<SpanCandidate> extract_spans_constrained(const Utterance &u,
                                                            const DistanceSequence &dist,
                                                            const pcfg::ParseTree &tree) {
  detail::check_lengths(u, dist);
  const int n = static_cast<int>(u.tokens.size());
  if (tree.length() != n) {
    throw Error("span extraction: tree for " + u.uid + " covers " +
                std::to_string(tree.length()) + " tokens, utterance has " + std::to_string(n));
  }
  pcfg::validate_tree(tree, n);

  std::vector<int> parent(tree.nodes.size(), -1);
  std::vector<int> leaf_of(n, -1);
  for (int id = 0; id < static_cast<int>(tree.nodes.size()); ++id) {
    const pcfg::TreeNode &node = tree.nodes[id];
    if (node.is_leaf()) {
      leaf_of[node.start] = id;
    } else {
      parent[node.left] = id;
      parent[node.right] = id;
    }
  }
  // group root position -> current tree node of that group
  std::vector<int> node_of(leaf_of);
  detail::UnionFind groups(n);
  if (n >= 2) {
    for (int i : detail::boundary_order(dist.d)) {
      if (!(dist.d[i] < dist.tau)) continue;
      const int gl = groups.find(i), gr = groups.find(i + 1);
      const int left = node_of[gl], right = node_of[gr];
      const int p = parent[left];
      if (p < 0 || p != parent[right]) continue;
      // The merged node is the former parent; its parent (the grandparent of
      // the two children) is unchanged.
      node_of[groups.unite(gl, gr)] = p;
    }
  }
  return detail::collect_groups(u, groups);
}

// Spans JSONL: {"uid": str, "spans": [[start, end], ...]}. `header` is an
// optional first record.
inline void write_spans(const std::filesystem::path &path,
                        const std::vector<std::pair<std::string, std::vector<SpanCandidate>>> &spans,
                        const detail::Json &header = nullptr) {
  std::string out;
  if (!header.is_null()) out += detail::dump_line(header);
  for (const auto &[uid, list] : spans) {
    detail::Json arr = detail::Json::array();
    for (const auto &s : list) arr.push_back({s.start, s.end});
    out += detail::dump_line({{"uid", uid}, {"spans", std::move(arr)}});
  }
  detail::write_text_file(path, out);
}

// Reads a spans file and re-derives span text from the corpus. A leading
// header record ({"format": ...}) is skipped.
inline std::vector<std::pair<std::string, std::vector<SpanCandidate>>> read_spans(
    const std::filesystem::path &path, const Corpus &corpus) {
  std::vector<std::pair<std::string, std::vector<SpanCandidate>>> out;
  detail::for_each_jsonl(path, [&](const detail::Json &rec, int line) {
    if (rec.contains("format")) return;
    auto uid = detail::field<std::string>(rec, "uid", line);
    const Utterance *u = corpus.find(uid);
    if (!u) throw Error("line " + std::to_string(line) + ": uid " + uid + " not in corpus");
    std::vector<SpanCandidate> list;
    for (const auto &pair : detail::field<detail::Json>(rec, "spans", line)) {
      if (!pair.is_array() || pair.size() != 2) {
        throw Error("line " + std::to_string(line) + ": field 'spans' entries must be [start, end]");
      }
      const int s = pair[0].get<int>(), e = pair[1].get<int>();
      if (s < 0 || e <= s || e > static_cast<int>(u->tokens.size())) {
        throw Error("line " + std::to_string(line) + ": span [" + std::to_string(s) + "," +
                    std::to_string(e) + ") out of bounds for " + uid);
      }
      list.push_back({uid, s, e, join_tokens(u->tokens, s, e)});
    }
    out.emplace_back(uid, std::move(list));
  });
  return out;
}

}  // namespace slotforge
