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

// Density clustering and the coarse-to-fine span clustering built on it.
//
// hdbscan() follows the usual construction: core distances, mutual
// reachability, an exact minimum spanning tree, the single-linkage
// hierarchy, the condensed tree at min_cluster_size, and excess-of-mass
// selection with lambda = 1 / distance. The root is never selected, so a
// dataset without density structure comes back as noise.
//
// auto_tune() runs hdbscan once per candidate min_cluster_size (the point
// count divided by each divisor) and keeps the assignment with the best mean
// silhouette.
//
// multi_step_cluster() clusters masked-span vectors, drops clusters that
// realize a single value, re-clusters each survivor by utterance vectors and
// then each of those by masked-span vectors again. Leaves are labeled
// "i-j-k" by the cluster index at each step.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "slotforge/corpus.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/detail/numeric.hpp"
#include "slotforge/detail/parallel.hpp"
#include "slotforge/detail/union_find.hpp"
#include "slotforge/embedding_io.hpp"
#include "slotforge/error.hpp"
#include "slotforge/span_extraction.hpp"

namespace slotforge::clustering {

enum class Metric { cosine, euclidean };

inline Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "euclidean") return Metric::euclidean;
  throw Error("unknown metric '" + std::string(name) + "'");
}

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // kNoise or 0..k-1
  int k = 0;
  int min_cluster_size = 0;
  int min_samples = 0;
  bool fallback = false;  // degenerate single-cluster result from auto_tune
  double silhouette = -1.0;
};

struct SilhouetteReport {
  std::vector<double> a;  // NaN for noise points
  std::vector<double> b;
  double mean_s = -1.0;
};

using PointSet = std::vector<std::vector<double>>;

// Distances for one point set. Cosine distance is 1 - cos on pre-normalized
// vectors, clamped at 0. Small sets cache the full matrix.
class Distances {
 public:
  static constexpr std::size_t kCacheLimit = 4096;

  Distances(const PointSet &points, Metric metric) : metric_(metric) {
    if (points.empty()) throw Error("clustering: empty input");
    const std::size_t dim = points[0].size();
    for (const auto &p : points) {
      if (p.size() != dim) throw Error("clustering: points have different dimensions");
    }
    points_.reserve(points.size());
    for (const auto &p : points) {
      points_.push_back(metric == Metric::cosine ? detail::normalized(p) : p);
    }
    if (points_.size() <= kCacheLimit) {
      const std::size_t n = points_.size();
      cache_.assign(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          cache_[i * n + j] = cache_[j * n + i] = compute(i, j);
        }
      }
    }
  }

  std::size_t size() const { return points_.size(); }

  double operator()(std::size_t i, std::size_t j) const {
    if (!cache_.empty()) return cache_[i * points_.size() + j];
    return i == j ? 0.0 : compute(i, j);
  }

 private:
  double compute(std::size_t i, std::size_t j) const {
    const auto &a = points_[i];
    const auto &b = points_[j];
    if (metric_ == Metric::cosine) return std::max(0.0, 1.0 - detail::dot(a, b));
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  }

  Metric metric_;
  PointSet points_;
  std::vector<double> cache_;
};

// Linkage distances below this are treated as equal to it, bounding lambda.
inline constexpr double kMinLinkageDistance = 1e-10;

inline double lambda_of(double distance) {
  return 1.0 / std::max(distance, kMinLinkageDistance);
}

struct Edge {
  int a = 0;  // a < b
  int b = 0;
  double w = 0.0;
};

// Strict total order on edges: weight, then index pair.
inline bool edge_less(const Edge &x, const Edge &y) {
  return std::tie(x.w, x.a, x.b) < std::tie(y.w, y.a, y.b);
}

// Distance to the min_samples-th nearest neighbor, the point itself counting
// as the first.
inline std::vector<double> core_distances(const Distances &dist, int min_samples) {
  const std::size_t n = dist.size();
  std::vector<double> core(n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = dist(i, j);
    std::nth_element(row.begin(), row.begin() + (min_samples - 1), row.end());
    core[i] = row[min_samples - 1];
  }
  return core;
}

// Prim's algorithm over the complete mutual-reachability graph. Under the
// strict edge order the minimum spanning tree is unique.
inline std::vector<Edge> mutual_reachability_mst(const Distances &dist,
                                                 const std::vector<double> &core) {
  const int n = static_cast<int>(dist.size());
  std::vector<Edge> out;
  if (n < 2) return out;
  std::vector<bool> in_tree(n, false);
  std::vector<Edge> best(n);
  auto mr = [&](int i, int j) { return std::max({core[i], core[j], dist(i, j)}); };
  in_tree[0] = true;
  for (int v = 1; v < n; ++v) best[v] = {0, v, mr(0, v)};
  for (int step = 1; step < n; ++step) {
    int pick = -1;
    for (int v = 0; v < n; ++v) {
      if (!in_tree[v] && (pick < 0 || edge_less(best[v], best[pick]))) pick = v;
    }
    in_tree[pick] = true;
    out.push_back(best[pick]);
    for (int v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      Edge cand{std::min(pick, v), std::max(pick, v), mr(pick, v)};
      if (edge_less(cand, best[v])) best[v] = cand;
    }
  }
  return out;
}

// Single-linkage dendrogram: leaves 0..n-1, merge i creates node n+i.
struct Dendrogram {
  struct Merge {
    int left, right;
    double distance;
    int size;
  };
  int n_points = 0;
  std::vector<Merge> merges;

  int size_of(int node) const { return node < n_points ? 1 : merges[node - n_points].size; }
};

inline Dendrogram single_linkage(int n, std::vector<Edge> mst) {
  std::sort(mst.begin(), mst.end(), edge_less);
  Dendrogram dendro;
  dendro.n_points = n;
  detail::UnionFind uf(n);
  std::vector<int> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);
  for (const Edge &e : mst) {
    const int ra = uf.find(e.a), rb = uf.find(e.b);
    const int na = node_of[ra], nb = node_of[rb];
    const int size = dendro.size_of(na) + dendro.size_of(nb);
    dendro.merges.push_back({na, nb, e.w, size});
    node_of[uf.unite(ra, rb)] = n + static_cast<int>(dendro.merges.size()) - 1;
  }
  return dendro;
}

// Condensed tree: clusters are numbered from 0 (the root) in creation order.
struct CondensedTree {
  struct Entry {
    int parent;   // cluster id
    int child;    // point index, or cluster id when is_cluster
    bool is_cluster;
    double lambda;
    int size;
  };
  std::vector<Entry> entries;
  std::vector<double> birth;  // per cluster
  std::vector<int> parent;    // per cluster, -1 for root

  int n_clusters() const { return static_cast<int>(birth.size()); }
};

inline CondensedTree condense(const Dendrogram &dendro, int min_cluster_size) {
  CondensedTree tree;
  const int n = dendro.n_points;
  tree.birth.push_back(0.0);
  tree.parent.push_back(-1);
  if (dendro.merges.empty()) {
    for (int p = 0; p < n; ++p) tree.entries.push_back({0, p, false, 0.0, 1});
    return tree;
  }
  auto points_under = [&](int node, std::vector<int> &out) {
    std::vector<int> stack{node};
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      if (x < n) {
        out.push_back(x);
      } else {
        stack.push_back(dendro.merges[x - n].left);
        stack.push_back(dendro.merges[x - n].right);
      }
    }
  };
  // (dendrogram node, cluster it belongs to), processed top-down
  std::vector<std::pair<int, int>> queue{{n + static_cast<int>(dendro.merges.size()) - 1, 0}};
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const auto [node, cluster] = queue[q];
    const auto &m = dendro.merges[node - n];
    const double lambda = lambda_of(m.distance);
    const int ls = dendro.size_of(m.left), rs = dendro.size_of(m.right);
    auto fall_out = [&](int child) {
      std::vector<int> pts;
      points_under(child, pts);
      std::sort(pts.begin(), pts.end());
      for (int p : pts) tree.entries.push_back({cluster, p, false, lambda, 1});
    };
    auto continue_as = [&](int child, int owner) {
      if (child < n) {
        tree.entries.push_back({owner, child, false, lambda, 1});
      } else {
        queue.emplace_back(child, owner);
      }
    };
    if (ls >= min_cluster_size && rs >= min_cluster_size) {
      for (int child : {m.left, m.right}) {
        const int id = tree.n_clusters();
        tree.birth.push_back(lambda);
        tree.parent.push_back(cluster);
        tree.entries.push_back({cluster, id, true, lambda, dendro.size_of(child)});
        continue_as(child, id);
      }
    } else if (ls < min_cluster_size && rs < min_cluster_size) {
      fall_out(m.left);
      fall_out(m.right);
    } else if (ls < min_cluster_size) {
      fall_out(m.left);
      continue_as(m.right, cluster);
    } else {
      fall_out(m.right);
      continue_as(m.left, cluster);
    }
  }
  return tree;
}

inline std::vector<double> stabilities(const CondensedTree &tree) {
  std::vector<double> s(tree.n_clusters(), 0.0);
  for (const auto &e : tree.entries) {
    s[e.parent] += (e.lambda - tree.birth[e.parent]) * e.size;
  }
  return s;
}

// Excess-of-mass selection over non-root clusters.
inline std::vector<bool> select_clusters(const CondensedTree &tree) {
  const int c = tree.n_clusters();
  auto stability = stabilities(tree);
  std::vector<std::vector<int>> children(c);
  for (int id = 1; id < c; ++id) children[tree.parent[id]].push_back(id);
  std::vector<bool> selected(c, true);
  selected[0] = false;
  auto deselect_below = [&](int root) {
    std::vector<int> stack(children[root]);
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      selected[x] = false;
      stack.insert(stack.end(), children[x].begin(), children[x].end());
    }
  };
  // Children always have larger ids than their parent.
  for (int id = c - 1; id >= 1; --id) {
    double subtree = 0.0;
    for (int ch : children[id]) subtree += stability[ch];
    if (!children[id].empty() && subtree > stability[id]) {
      selected[id] = false;
      stability[id] = subtree;
    } else {
      deselect_below(id);
    }
  }
  return selected;
}

// Renumbers non-noise labels by the order of each cluster's first point.
inline int canonical_labels(std::vector<int> &labels) {
  std::map<int, int> remap;
  for (int &l : labels) {
    if (l == kNoise) continue;
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  return static_cast<int>(remap.size());
}

// hdbscan over precomputed distances.
inline ClusterAssignment hdbscan(const Distances &dist, int min_cluster_size, int min_samples) {
  if (min_cluster_size < 2) throw Error("hdbscan: min_cluster_size must be at least 2");
  if (min_samples < 1) throw Error("hdbscan: min_samples must be at least 1");
  const int n = static_cast<int>(dist.size());
  ClusterAssignment out;
  out.min_cluster_size = min_cluster_size;
  out.min_samples = min_samples;
  out.labels.assign(n, kNoise);
  if (n < min_samples || n < min_cluster_size) return out;

  const auto core = core_distances(dist, min_samples);
  const auto dendro = single_linkage(n, mutual_reachability_mst(dist, core));
  const auto tree = condense(dendro, min_cluster_size);
  const auto selected = select_clusters(tree);

  // Each point belongs to the nearest selected ancestor of the cluster it
  // fell out of, or is noise.
  std::vector<int> owner(tree.n_clusters(), -1);
  for (int id = 0; id < tree.n_clusters(); ++id) {
    if (selected[id]) {
      owner[id] = id;
    } else if (tree.parent[id] >= 0) {
      owner[id] = owner[tree.parent[id]];
    }
  }
  for (const auto &e : tree.entries) {
    if (!e.is_cluster && owner[e.parent] >= 0) out.labels[e.child] = owner[e.parent];
  }
  out.k = canonical_labels(out.labels);
  return out;
}

inline ClusterAssignment hdbscan(const PointSet &points, int min_cluster_size, int min_samples,
                                 Metric metric = Metric::cosine) {
  if (points.empty()) throw Error("hdbscan: empty input");
  return hdbscan(Distances(points, metric), min_cluster_size, min_samples);
}

// Mean silhouette over clustered points. Noise is excluded everywhere,
// singleton clusters score 0, and fewer than two clusters yields -1.
inline SilhouetteReport silhouette(const Distances &dist, const std::vector<int> &labels) {
  const std::size_t n = dist.size();
  if (labels.size() != n) throw Error("silhouette: label count does not match points");
  SilhouetteReport rep;
  rep.a.assign(n, std::numeric_limits<double>::quiet_NaN());
  rep.b.assign(n, std::numeric_limits<double>::quiet_NaN());
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  std::vector<int> count(k, 0);
  for (int l : labels) {
    if (l != kNoise) ++count[l];
  }
  const int nonempty = static_cast<int>(std::count_if(count.begin(), count.end(), [](int c) { return c > 0; }));
  if (nonempty < 2) {
    rep.mean_s = -1.0;
    return rep;
  }
  double total = 0.0;
  int clustered = 0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kNoise) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] != kNoise) sums[labels[j]] += dist(i, j);
    }
    const int own = labels[i];
    ++clustered;
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own && count[c] > 0) b = std::min(b, sums[c] / count[c]);
    }
    rep.b[i] = b;
    if (count[own] == 1) {
      rep.a[i] = 0.0;
      continue;  // s = 0
    }
    const double a = sums[own] / (count[own] - 1);
    rep.a[i] = a;
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  rep.mean_s = total / clustered;
  return rep;
}

inline SilhouetteReport silhouette(const PointSet &points, const ClusterAssignment &assignment,
                                   Metric metric = Metric::cosine) {
  return silhouette(Distances(points, metric), assignment.labels);
}

inline const std::vector<int> &default_divisors() {
  static const std::vector<int> divisors{5, 10, 15, 20, 25};
  return divisors;
}

inline constexpr int kMinAutoTunePoints = 10;

inline ClusterAssignment single_cluster(std::size_t n) {
  ClusterAssignment out;
  out.labels.assign(n, 0);
  out.k = 1;
  out.fallback = true;
  return out;
}

// Picks min_cluster_size = max(2, n / divisor) with the best mean
// silhouette (min_samples equal to it); ties keep the smaller size. Inputs
// with fewer than 10 points, or where no candidate finds two clusters, come
// back as one flagged cluster.
inline ClusterAssignment auto_tune(const PointSet &points, Metric metric = Metric::cosine,
                                   const std::vector<int> &divisors = default_divisors()) {
  const int n = static_cast<int>(points.size());
  if (n < kMinAutoTunePoints) return single_cluster(points.size());
  std::set<int> sizes;
  for (int c : divisors) {
    if (c <= 0) throw Error("auto_tune: divisors must be positive");
    sizes.insert(std::max(2, n / c));
  }
  const Distances dist(points, metric);
  std::optional<ClusterAssignment> best;
  for (int mcs : sizes) {
    ClusterAssignment cand = hdbscan(dist, mcs, mcs);
    cand.silhouette = silhouette(dist, cand.labels).mean_s;
    if (!best || cand.silhouette > best->silhouette) best = std::move(cand);
  }
  if (!best || best->k < 2) {
    auto out = single_cluster(points.size());
    if (best) out.min_cluster_size = out.min_samples = best->min_cluster_size;
    return out;
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Multi-step clustering

enum class FilterMode {
  distinct_values,  // drop a step-1 cluster whose members have one distinct text
  frequent_span,    // drop it when every step-2 sub-cluster has the same most frequent text
  none,
};

inline FilterMode parse_filter_mode(std::string_view name) {
  if (name == "distinct_values") return FilterMode::distinct_values;
  if (name == "frequent_span") return FilterMode::frequent_span;
  if (name == "none") return FilterMode::none;
  throw Error("unknown filter mode '" + std::string(name) + "'");
}

struct ClusterOptions {
  std::vector<int> divisors = default_divisors();
  Metric metric = Metric::cosine;
  FilterMode filter = FilterMode::distinct_values;
  int threads = 1;
};

struct ClusterMember {
  std::string uid;
  int start = 0;
  int end = 0;
  std::string text;

  SpanKey key() const { return {uid, start, end}; }
};

struct ClusterLeaf {
  std::string label;  // "i-j-k"
  std::vector<ClusterMember> members;
};

struct ClusterNode {
  std::string label;  // "i", "i-j", ...
  int step = 0;
  std::size_t size = 0;
  double silhouette = -1.0;  // of the sub-clustering of this node
  bool filtered = false;
};

struct ClusterTree {
  std::vector<ClusterNode> nodes;
  std::vector<ClusterLeaf> leaves;
};

namespace impl {

inline std::string most_frequent_text(const std::vector<std::string> &texts) {
  std::map<std::string, int> counts;
  for (const auto &t : texts) ++counts[t];
  std::string best;
  int top = 0;
  for (const auto &[t, c] : counts) {
    if (c > top) {
      top = c;
      best = t;
    }
  }
  return best;
}

// Groups item ids by label in label order; noise is dropped.
inline std::vector<std::vector<std::size_t>> group_by_label(const std::vector<std::size_t> &items,
                                                            const ClusterAssignment &a) {
  std::vector<std::vector<std::size_t>> groups(a.k);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (a.labels[i] != kNoise) groups[a.labels[i]].push_back(items[i]);
  }
  return groups;
}

inline ClusterAssignment tune_subset(const std::vector<const std::vector<double> *> &vectors,
                                     const std::vector<std::size_t> &items,
                                     const ClusterOptions &opts) {
  PointSet pts;
  pts.reserve(items.size());
  for (std::size_t i : items) pts.push_back(*vectors[i]);
  return auto_tune(pts, opts.metric, opts.divisors);
}

// Hierarchical clustering of items; level l clusters with level_vectors[l].
// `keep` decides after the first level whether a cluster continues.
struct Hierarchy {
  std::vector<ClusterNode> nodes;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> leaves;
};

inline void descend(const std::vector<std::vector<const std::vector<double> *>> &level_vectors,
                    std::size_t level, const std::vector<std::size_t> &items,
                    const std::string &prefix, const ClusterOptions &opts, Hierarchy &out) {
  const auto a = tune_subset(level_vectors[level], items, opts);
  out.nodes.back().silhouette = a.silhouette;
  const auto groups = group_by_label(items, a);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    const std::string label = prefix + "-" + std::to_string(g);
    out.nodes.push_back({label, static_cast<int>(level) + 1, groups[g].size()});
    if (level + 1 < level_vectors.size()) {
      descend(level_vectors, level + 1, groups[g], label, opts, out);
    } else {
      out.leaves.emplace_back(label, groups[g]);
    }
  }
}

inline Hierarchy cluster_levels(const std::vector<std::vector<const std::vector<double> *>> &level_vectors,
                                const std::vector<std::string> &texts, bool filter_first_level,
                                const ClusterOptions &opts) {
  const std::size_t n = level_vectors[0].size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  const auto top = tune_subset(level_vectors[0], all, opts);
  const auto groups = group_by_label(all, top);

  std::vector<Hierarchy> parts(groups.size());
  slotforge::detail::parallel_for(groups.size(), opts.threads, [&](std::size_t g) {
    Hierarchy &h = parts[g];
    const std::string label = std::to_string(g);
    h.nodes.push_back({label, 1, groups[g].size()});
    if (filter_first_level && opts.filter == FilterMode::distinct_values) {
      std::set<std::string> distinct;
      for (std::size_t i : groups[g]) distinct.insert(texts[i]);
      if (distinct.size() <= 1) {
        h.nodes.back().filtered = true;
        return;
      }
    }
    if (filter_first_level && opts.filter == FilterMode::frequent_span && level_vectors.size() > 1) {
      const auto sub = tune_subset(level_vectors[1], groups[g], opts);
      std::set<std::string> frequent;
      for (const auto &members : group_by_label(groups[g], sub)) {
        std::vector<std::string> ts;
        for (std::size_t i : members) ts.push_back(texts[i]);
        if (!ts.empty()) frequent.insert(most_frequent_text(ts));
      }
      if (frequent.size() <= 1) {
        h.nodes.back().filtered = true;
        return;
      }
    }
    if (level_vectors.size() > 1) {
      descend(level_vectors, 1, groups[g], label, opts, h);
    } else {
      h.leaves.emplace_back(label, groups[g]);
    }
  });

  Hierarchy out;
  for (auto &h : parts) {
    out.nodes.insert(out.nodes.end(), h.nodes.begin(), h.nodes.end());
    out.leaves.insert(out.leaves.end(), h.leaves.begin(), h.leaves.end());
  }
  return out;
}

}  // namespace impl

inline ClusterTree multi_step_cluster(const std::vector<SpanCandidate> &spans,
                                      const SpanEmbeddingIndex &span_embs,
                                      const std::map<std::string, UtteranceEmbedding> &utt_embs,
                                      const ClusterOptions &opts = {}) {
  if (spans.empty()) throw Error("multi_step_cluster: no spans");
  std::vector<const std::vector<double> *> masked, utterance;
  std::vector<std::string> texts;
  for (const auto &s : spans) {
    masked.push_back(&span_embs.at({s.uid, s.start, s.end}));
    auto it = utt_embs.find(s.uid);
    if (it == utt_embs.end()) throw Error("multi_step_cluster: missing utterance embedding for " + s.uid);
    utterance.push_back(&it->second.vec);
    texts.push_back(normalize_text(s.text));
  }
  const auto h = impl::cluster_levels({masked, utterance, masked}, texts, true, opts);
  ClusterTree tree;
  tree.nodes = h.nodes;
  for (const auto &[label, items] : h.leaves) {
    ClusterLeaf leaf{label, {}};
    for (std::size_t i : items) {
      leaf.members.push_back({spans[i].uid, spans[i].start, spans[i].end, spans[i].text});
    }
    tree.leaves.push_back(std::move(leaf));
  }
  return tree;
}

struct IntentLeaf {
  std::string label;  // "i-j"
  std::vector<std::string> uids;
};

// Two-step clustering directly over utterance vectors.
inline std::vector<IntentLeaf> induce_intents(const std::vector<UtteranceEmbedding> &utts,
                                              const ClusterOptions &opts = {}) {
  if (utts.empty()) throw Error("induce_intents: no utterances");
  std::vector<const std::vector<double> *> vecs;
  for (const auto &u : utts) vecs.push_back(&u.vec);
  ClusterOptions o = opts;
  o.filter = FilterMode::none;
  const auto h = impl::cluster_levels({vecs, vecs}, {}, false, o);
  std::vector<IntentLeaf> out;
  for (const auto &[label, items] : h.leaves) {
    IntentLeaf leaf{label, {}};
    for (std::size_t i : items) leaf.uids.push_back(utts[i].uid);
    out.push_back(std::move(leaf));
  }
  return out;
}

inline detail::Json tree_to_json(const ClusterTree &tree) {
  detail::Json leaves = detail::Json::array();
  for (const auto &leaf : tree.leaves) {
    detail::Json members = detail::Json::array();
    for (const auto &m : leaf.members) {
      members.push_back({{"uid", m.uid}, {"start", m.start}, {"end", m.end}, {"text", m.text}});
    }
    leaves.push_back({{"label", leaf.label}, {"members", std::move(members)}});
  }
  detail::Json nodes = detail::Json::array();
  for (const auto &n : tree.nodes) {
    nodes.push_back({{"label", n.label}, {"step", n.step}, {"size", n.size},
                     {"silhouette", n.silhouette}, {"filtered", n.filtered}});
  }
  return {{"leaves", std::move(leaves)}, {"nodes", std::move(nodes)}};
}

inline ClusterTree tree_from_json(const detail::Json &j) {
  ClusterTree tree;
  try {
    for (const auto &leaf : j.at("leaves")) {
      ClusterLeaf l{leaf.at("label").get<std::string>(), {}};
      for (const auto &m : leaf.at("members")) {
        l.members.push_back({m.at("uid").get<std::string>(), m.at("start").get<int>(),
                             m.at("end").get<int>(), m.at("text").get<std::string>()});
      }
      tree.leaves.push_back(std::move(l));
    }
    if (j.contains("nodes")) {
      for (const auto &n : j["nodes"]) {
        tree.nodes.push_back({n.at("label").get<std::string>(), n.at("step").get<int>(),
                              n.at("size").get<std::size_t>(), n.value("silhouette", -1.0),
                              n.value("filtered", false)});
      }
    }
  } catch (const detail::Json::exception &e) {
    throw Error(std::string("cluster tree: malformed JSON: ") + e.what());
  }
  return tree;
}

}  // namespace slotforge::clustering
