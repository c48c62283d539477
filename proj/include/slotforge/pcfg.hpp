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

// Unsupervised PCFG in Chomsky normal form.
//
// Symbols 0..N-1 are nonterminals and N..N+P-1 are preterminals. Rules are
//
//   ROOT -> A            (log_root, N entries)
//   A -> B C             (log_binary, N x (N+P) x (N+P))
//   T -> w               (log_emit, P x V)
//
// Nonterminals only span two or more words and preterminals exactly one, so a
// rule A -> B C with preterminal B applies only when the left child is a
// single word. Training is classic EM with inside-outside expected counts;
// decoding is Viterbi CKY with a fixed tie-break.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slotforge/corpus.hpp"
#include "slotforge/detail/jsonl.hpp"
#include "slotforge/detail/numeric.hpp"
#include "slotforge/detail/parallel.hpp"
#include "slotforge/error.hpp"

namespace slotforge::pcfg {

using detail::kNegInf;

struct Grammar {
  int n_nonterminals = 0;
  int n_preterminals = 0;
  int vocab_size = 0;
  std::vector<std::string> vocab;  // optional, id order
  std::vector<double> log_root;    // [A]
  std::vector<double> log_binary;  // [A][B][C] row-major
  std::vector<double> log_emit;    // [T][w] row-major

  int n_symbols() const { return n_nonterminals + n_preterminals; }

  std::size_t binary_index(int a, int b, int c) const {
    const std::size_t s = static_cast<std::size_t>(n_symbols());
    return (static_cast<std::size_t>(a) * s + static_cast<std::size_t>(b)) * s +
           static_cast<std::size_t>(c);
  }
  double binary(int a, int b, int c) const { return log_binary[binary_index(a, b, c)]; }
  double &binary(int a, int b, int c) { return log_binary[binary_index(a, b, c)]; }

  // `t` is a preterminal index in [0, P), not a symbol id.
  double emit(int t, int w) const {
    return log_emit[static_cast<std::size_t>(t) * vocab_size + w];
  }
  double &emit(int t, int w) {
    return log_emit[static_cast<std::size_t>(t) * vocab_size + w];
  }
};

struct TreeNode {
  int start = 0;
  int end = 0;     // exclusive
  int label = -1;  // symbol id; -1 when unknown (external trees)
  int left = -1;
  int right = -1;
  int word = -1;   // leaves only

  bool is_leaf() const { return left < 0; }
};

struct ParseTree {
  std::vector<TreeNode> nodes;
  int root = -1;
  double log_prob = kNegInf;

  int length() const { return root < 0 ? 0 : nodes[root].end; }
};

struct TrainReport {
  double initial_log_likelihood = kNegInf;
  std::vector<double> log_likelihood;  // after each iteration
  int iterations = 0;
  bool converged = false;
};

struct TrainOptions {
  int max_iters = 20;
  double tol = 1e-4;
  int threads = 1;
};

// Maps words to grammar vocabulary ids. Id 0 is the shared unknown word.
class WordIndex {
 public:
  static constexpr const char *kUnk = "<unk>";

  WordIndex() : words_{kUnk} { ids_.emplace(kUnk, 0); }

  explicit WordIndex(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.empty() || words_[0] != kUnk) throw Error("vocabulary must start with <unk>");
    for (std::size_t i = 0; i < words_.size(); ++i) {
      ids_.emplace(words_[i], static_cast<int>(i));
    }
  }

  // Words seen fewer than `min_freq` times share the unknown id.
  static WordIndex from_corpus(const Corpus &corpus, long min_freq = 2) {
    std::vector<std::pair<int, std::string>> kept;
    for (const auto &[word, entry] : corpus.vocabulary()) {
      if (entry.frequency >= min_freq) kept.emplace_back(entry.id, word);
    }
    std::sort(kept.begin(), kept.end());
    std::vector<std::string> words{kUnk};
    for (auto &kv : kept) words.push_back(std::move(kv.second));
    return WordIndex(std::move(words));
  }

  int id(const std::string &word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? 0 : it->second;
  }

  std::vector<int> encode(const std::vector<std::string> &tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto &t : tokens) out.push_back(id(t));
    return out;
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string> &words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

inline Grammar init_grammar(int n_nonterminals, int n_preterminals, int vocab_size,
                            std::uint64_t seed) {
  if (n_nonterminals < 1 || n_preterminals < 1 || vocab_size < 1) {
    throw Error("init_grammar: symbol and vocabulary counts must be positive");
  }
  Grammar g;
  g.n_nonterminals = n_nonterminals;
  g.n_preterminals = n_preterminals;
  g.vocab_size = vocab_size;
  std::mt19937_64 rng(seed);
  auto to_log = [](const std::vector<double> &p) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(p[i]);
    return out;
  };
  g.log_root = to_log(detail::dirichlet_ones(n_nonterminals, rng));
  const std::size_t s = g.n_symbols();
  g.log_binary.reserve(n_nonterminals * s * s);
  for (int a = 0; a < n_nonterminals; ++a) {
    auto row = to_log(detail::dirichlet_ones(s * s, rng));
    g.log_binary.insert(g.log_binary.end(), row.begin(), row.end());
  }
  g.log_emit.reserve(static_cast<std::size_t>(n_preterminals) * vocab_size);
  for (int t = 0; t < n_preterminals; ++t) {
    auto row = to_log(detail::dirichlet_ones(vocab_size, rng));
    g.log_emit.insert(g.log_emit.end(), row.begin(), row.end());
  }
  return g;
}

// Checks shapes and that every distribution sums to one within `tol`.
inline void validate_grammar(const Grammar &g, double tol = 1e-6) {
  const std::size_t s = g.n_symbols();
  if (g.n_nonterminals < 1 || g.n_preterminals < 1 || g.vocab_size < 1 ||
      g.log_root.size() != static_cast<std::size_t>(g.n_nonterminals) ||
      g.log_binary.size() != g.n_nonterminals * s * s ||
      g.log_emit.size() != static_cast<std::size_t>(g.n_preterminals) * g.vocab_size) {
    throw Error("grammar: inconsistent dimensions");
  }
  auto check = [&](std::span<const double> row, const std::string &what) {
    double total = 0.0;
    for (double x : row) {
      if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
        throw Error("grammar: non-finite entry in " + what);
      }
      total += std::exp(x);
    }
    if (std::abs(total - 1.0) > tol) throw Error("grammar: " + what + " does not sum to 1");
  };
  check(g.log_root, "root");
  for (int a = 0; a < g.n_nonterminals; ++a) {
    check(std::span<const double>(g.log_binary).subspan(a * s * s, s * s),
          "binary rules of " + std::to_string(a));
  }
  for (int t = 0; t < g.n_preterminals; ++t) {
    check(std::span<const double>(g.log_emit).subspan(static_cast<std::size_t>(t) * g.vocab_size,
                                                      g.vocab_size),
          "emissions of " + std::to_string(t));
  }
}

namespace detail {

using slotforge::detail::log_add;

inline void check_sentence(const Grammar &g, std::span<const int> sentence) {
  if (sentence.size() < 2) throw Error("sentence too short for CNF");
  for (int w : sentence) {
    if (w < 0 || w >= g.vocab_size) {
      throw Error("word id " + std::to_string(w) + " out of vocabulary");
    }
  }
}

// Inside and outside scores over all spans. Nonterminal scores live in
// `inside`/`outside` (only meaningful for width >= 2), preterminal scores in
// `pre_inside`/`pre_outside` (width 1).
class Chart {
 public:
  Chart(const Grammar &g, int n)
      : n_(n), nt_(g.n_nonterminals), pt_(g.n_preterminals),
        inside_(static_cast<std::size_t>(n + 1) * (n + 1) * nt_, kNegInf),
        outside_(inside_.size(), kNegInf),
        pre_inside_(static_cast<std::size_t>(n) * pt_, kNegInf),
        pre_outside_(pre_inside_.size(), kNegInf) {}

  double *nt(std::vector<double> &v, int i, int j) {
    return v.data() + (static_cast<std::size_t>(i) * (n_ + 1) + j) * nt_;
  }
  double *in(int i, int j) { return nt(inside_, i, j); }
  double *out(int i, int j) { return nt(outside_, i, j); }
  double *pre_in(int i) { return pre_inside_.data() + static_cast<std::size_t>(i) * pt_; }
  double *pre_out(int i) { return pre_outside_.data() + static_cast<std::size_t>(i) * pt_; }

  // Child cell of span [i, j): pointer to its scores, symbol offset, count.
  struct Cell {
    double *in;
    double *out;
    int offset;
    int count;
  };
  Cell cell(int i, int j) {
    if (j - i == 1) return {pre_in(i), pre_out(i), nt_, pt_};
    return {in(i, j), out(i, j), 0, nt_};
  }

 private:
  int n_, nt_, pt_;
  std::vector<double> inside_, outside_, pre_inside_, pre_outside_;
};

inline double max_of(const double *v, int n) {
  double m = kNegInf;
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  return m;
}

inline void exp_shifted(const double *v, int n, double shift, std::vector<double> &out) {
  out.resize(n);
  for (int i = 0; i < n; ++i) out[i] = std::exp(v[i] - shift);
}

// Linear-space rule probabilities; cached per E-step.
inline std::vector<double> rule_probs(const Grammar &g) {
  std::vector<double> p(g.log_binary.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(g.log_binary[i]);
  return p;
}

// Fills the inside chart and returns the sentence log probability.
inline double run_inside(const Grammar &g, const std::vector<double> &rule_p,
                         std::span<const int> sentence, Chart &chart) {
  const int n = static_cast<int>(sentence.size());
  const int nt = g.n_nonterminals;
  const std::size_t s = g.n_symbols();
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < g.n_preterminals; ++t) chart.pre_in(i)[t] = g.emit(t, sentence[i]);
  }
  std::vector<double> el, er, acc(nt);
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      double *target = chart.in(i, j);
      for (int k = i + 1; k < j; ++k) {
        auto l = chart.cell(i, k);
        auto r = chart.cell(k, j);
        double ml = max_of(l.in, l.count), mr = max_of(r.in, r.count);
        if (ml == kNegInf || mr == kNegInf) continue;
        exp_shifted(l.in, l.count, ml, el);
        exp_shifted(r.in, r.count, mr, er);
        for (int a = 0; a < nt; ++a) {
          double total = 0.0;
          for (int b = 0; b < l.count; ++b) {
            if (el[b] == 0.0) continue;
            const double *row = rule_p.data() + (a * s + (l.offset + b)) * s + r.offset;
            double inner = 0.0;
            for (int c = 0; c < r.count; ++c) inner += row[c] * er[c];
            total += el[b] * inner;
          }
          if (total > 0.0) target[a] = log_add(target[a], std::log(total) + ml + mr);
        }
      }
    }
  }
  double z = kNegInf;
  const double *top = chart.in(0, n);
  for (int a = 0; a < nt; ++a) z = log_add(z, g.log_root[a] + top[a]);
  return z;
}

// Expected rule counts in linear space, laid out like Grammar.
struct Counts {
  std::vector<double> root, binary, emit;
  double log_likelihood = 0.0;
  int sentences = 0;
  int skipped = 0;

  explicit Counts(const Grammar &g)
      : root(g.log_root.size(), 0.0), binary(g.log_binary.size(), 0.0),
        emit(g.log_emit.size(), 0.0) {}

  void add(const Counts &o) {
    for (std::size_t i = 0; i < root.size(); ++i) root[i] += o.root[i];
    for (std::size_t i = 0; i < binary.size(); ++i) binary[i] += o.binary[i];
    for (std::size_t i = 0; i < emit.size(); ++i) emit[i] += o.emit[i];
    log_likelihood += o.log_likelihood;
    sentences += o.sentences;
    skipped += o.skipped;
  }
};

// Outside pass plus count accumulation for one sentence.
inline void accumulate_counts(const Grammar &g, const std::vector<double> &rule_p,
                              std::span<const int> sentence, Counts &counts) {
  const int n = static_cast<int>(sentence.size());
  const int nt = g.n_nonterminals;
  const std::size_t s = g.n_symbols();
  Chart chart(g, n);
  const double z = run_inside(g, rule_p, sentence, chart);
  if (z == kNegInf) {
    ++counts.skipped;
    return;
  }
  counts.log_likelihood += z;
  ++counts.sentences;

  double *top_in = chart.in(0, n);
  double *top_out = chart.out(0, n);
  for (int a = 0; a < nt; ++a) {
    top_out[a] = g.log_root[a];
    counts.root[a] += std::exp(g.log_root[a] + top_in[a] - z);
  }

  std::vector<double> pa, el, er, left_acc, right_acc;
  for (int w = n; w >= 2; --w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      const double *parent_out = chart.out(i, j);
      const double ma = max_of(parent_out, nt);
      if (ma == kNegInf) continue;
      exp_shifted(parent_out, nt, ma, pa);
      for (int k = i + 1; k < j; ++k) {
        auto l = chart.cell(i, k);
        auto r = chart.cell(k, j);
        double ml = max_of(l.in, l.count), mr = max_of(r.in, r.count);
        if (ml == kNegInf || mr == kNegInf) continue;
        exp_shifted(l.in, l.count, ml, el);
        exp_shifted(r.in, r.count, mr, er);
        left_acc.assign(l.count, 0.0);
        right_acc.assign(r.count, 0.0);
        const double scale = std::exp(ma + ml + mr - z);
        for (int a = 0; a < nt; ++a) {
          if (pa[a] == 0.0) continue;
          for (int b = 0; b < l.count; ++b) {
            const std::size_t base = (a * s + (l.offset + b)) * s + r.offset;
            const double *row = rule_p.data() + base;
            double *crow = counts.binary.data() + base;
            double inner = 0.0;
            const double pab = pa[a] * el[b];
            for (int c = 0; c < r.count; ++c) {
              const double pr = row[c];
              inner += pr * er[c];
              right_acc[c] += pa[a] * pr * el[b];
              crow[c] += scale * pab * pr * er[c];
            }
            left_acc[b] += pa[a] * inner;
          }
        }
        for (int b = 0; b < l.count; ++b) {
          if (left_acc[b] > 0.0) l.out[b] = log_add(l.out[b], std::log(left_acc[b]) + ma + mr);
        }
        for (int c = 0; c < r.count; ++c) {
          if (right_acc[c] > 0.0) r.out[c] = log_add(r.out[c], std::log(right_acc[c]) + ma + ml);
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < g.n_preterminals; ++t) {
      double lp = chart.pre_out(i)[t] + chart.pre_in(i)[t] - z;
      if (lp != kNegInf) {
        counts.emit[static_cast<std::size_t>(t) * g.vocab_size + sentence[i]] += std::exp(lp);
      }
    }
  }
}

// Fixed-size blocks keep the floating-point reduction order independent of
// the thread count.
inline constexpr std::size_t kEStepBlock = 8;

inline Counts e_step(const Grammar &g, const std::vector<std::vector<int>> &sentences,
                     int threads) {
  const auto rule_p = rule_probs(g);
  const std::size_t blocks = (sentences.size() + kEStepBlock - 1) / kEStepBlock;
  std::vector<Counts> partial(blocks, Counts(g));
  slotforge::detail::parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t end = std::min(sentences.size(), (b + 1) * kEStepBlock);
    for (std::size_t i = b * kEStepBlock; i < end; ++i) {
      accumulate_counts(g, rule_p, sentences[i], partial[b]);
    }
  });
  Counts total(g);
  for (const Counts &c : partial) total.add(c);
  return total;
}

// Renormalizes `counts` into `log_out`; rows without mass keep their old
// parameters.
inline void normalize_rows(const std::vector<double> &counts, std::vector<double> &log_out,
                           std::size_t row_len) {
  for (std::size_t r = 0; r * row_len < counts.size(); ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < row_len; ++i) total += counts[r * row_len + i];
    if (!(total > 0.0)) continue;
    for (std::size_t i = 0; i < row_len; ++i) {
      double c = counts[r * row_len + i];
      log_out[r * row_len + i] = c > 0.0 ? std::log(c / total) : kNegInf;
    }
  }
}

inline void m_step(Grammar &g, const Counts &counts) {
  const std::size_t s = g.n_symbols();
  normalize_rows(counts.root, g.log_root, g.log_root.size());
  normalize_rows(counts.binary, g.log_binary, s * s);
  normalize_rows(counts.emit, g.log_emit, g.vocab_size);
}

}  // namespace detail

// Log of the total probability of all CNF parses of `sentence`.
inline double inside_log_prob(const Grammar &g, std::span<const int> sentence) {
  detail::check_sentence(g, sentence);
  detail::Chart chart(g, static_cast<int>(sentence.size()));
  return detail::run_inside(g, detail::rule_probs(g), sentence, chart);
}

// EM training. Sentences shorter than two words are ignored. Each iteration
// runs an M-step on the current expected counts and then re-scores the corpus;
// training stops after `max_iters` iterations or once the per-iteration gain
// in corpus log-likelihood falls below `tol`.
inline std::pair<Grammar, TrainReport> em_train(Grammar g,
                                                const std::vector<std::vector<int>> &sentences,
                                                const TrainOptions &opts = {}) {
  std::vector<std::vector<int>> trainable;
  for (const auto &s : sentences) {
    if (s.size() >= 2) {
      detail::check_sentence(g, s);
      trainable.push_back(s);
    }
  }
  if (trainable.empty()) throw Error("em_train: no trainable sentences (length >= 2)");
  TrainReport report;
  auto counts = detail::e_step(g, trainable, opts.threads);
  double previous = counts.log_likelihood;
  report.initial_log_likelihood = previous;
  for (int it = 0; it < opts.max_iters; ++it) {
    detail::m_step(g, counts);
    counts = detail::e_step(g, trainable, opts.threads);
    const double current = counts.log_likelihood;
    report.log_likelihood.push_back(current);
    report.iterations = it + 1;
    if (current - previous < opts.tol) {
      report.converged = true;
      break;
    }
    previous = current;
  }
  return {std::move(g), std::move(report)};
}

// User utterances of the corpus encoded with `index`; only those with at
// least two tokens are returned.
inline std::vector<std::vector<int>> trainable_sentences(const Corpus &corpus,
                                                         const WordIndex &index) {
  std::vector<std::vector<int>> out;
  for (const Utterance *u : corpus.user_utterances()) {
    if (u->tokens.size() >= 2) out.push_back(index.encode(u->tokens));
  }
  return out;
}

inline std::pair<Grammar, TrainReport> em_train(Grammar g, const Corpus &corpus,
                                                const WordIndex &index,
                                                const TrainOptions &opts = {}) {
  if (g.vocab_size != index.size()) throw Error("em_train: grammar/vocabulary size mismatch");
  auto result = em_train(std::move(g), trainable_sentences(corpus, index), opts);
  result.first.vocab = index.words();
  return result;
}

// Highest-probability parse. Among equal scores the smaller
// (left-child length, left symbol, right symbol) wins, and the smaller root
// symbol.
inline ParseTree viterbi_parse(const Grammar &g, std::span<const int> sentence) {
  detail::check_sentence(g, sentence);
  const int n = static_cast<int>(sentence.size());
  const int nt = g.n_nonterminals;
  const int pt = g.n_preterminals;
  struct Back {
    int split = -1, left = -1, right = -1;
  };
  const std::size_t cells = static_cast<std::size_t>(n + 1) * (n + 1);
  std::vector<double> best(cells * nt, kNegInf);
  std::vector<Back> back(cells * nt);
  auto idx = [&](int i, int j) { return (static_cast<std::size_t>(i) * (n + 1) + j) * nt; };
  // Score of symbol `sym` over [i, j).
  auto score = [&](int i, int j, int sym) -> double {
    if (j - i == 1) return sym >= nt ? g.emit(sym - nt, sentence[i]) : kNegInf;
    return sym < nt ? best[idx(i, j) + sym] : kNegInf;
  };
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      for (int a = 0; a < nt; ++a) {
        double top = kNegInf;
        Back bp;
        for (int k = i + 1; k < j; ++k) {
          const int lo = (k - i == 1) ? nt : 0, lc = (k - i == 1) ? pt : nt;
          const int ro = (j - k == 1) ? nt : 0, rc = (j - k == 1) ? pt : nt;
          for (int b = lo; b < lo + lc; ++b) {
            const double sb = score(i, k, b);
            if (sb == kNegInf) continue;
            for (int c = ro; c < ro + rc; ++c) {
              const double v = g.binary(a, b, c) + sb + score(k, j, c);
              if (v > top) {
                top = v;
                bp = {k, b, c};
              }
            }
          }
        }
        best[idx(i, j) + a] = top;
        back[idx(i, j) + a] = bp;
      }
    }
  }
  double top = kNegInf;
  int root_sym = -1;
  for (int a = 0; a < nt; ++a) {
    const double v = g.log_root[a] + best[idx(0, n) + a];
    if (v > top) {
      top = v;
      root_sym = a;
    }
  }
  if (root_sym < 0 || top == kNegInf) throw Error("unparseable");

  ParseTree tree;
  tree.log_prob = top;
  auto build = [&](auto &&self, int i, int j, int sym) -> int {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({i, j, sym, -1, -1, -1});
    if (j - i == 1) {
      tree.nodes[id].word = sentence[i];
      return id;
    }
    const Back bp = back[idx(i, j) + sym];
    const int l = self(self, i, bp.split, bp.left);
    const int r = self(self, bp.split, j, bp.right);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  };
  tree.root = build(build, 0, n, root_sym);
  return tree;
}

// Log probability of a fully labeled tree under `g`.
inline double tree_log_prob(const Grammar &g, const ParseTree &tree) {
  double total = g.log_root[tree.nodes[tree.root].label];
  for (const TreeNode &node : tree.nodes) {
    if (node.is_leaf()) {
      total += g.emit(node.label - g.n_nonterminals, node.word);
    } else {
      total += g.binary(node.label, tree.nodes[node.left].label, tree.nodes[node.right].label);
    }
  }
  return total;
}

// Structural validation: strictly binary, adjacent children partitioning
// their parent, width-1 leaves, root covering [0, n).
inline void validate_tree(const ParseTree &tree, int n) {
  if (tree.root < 0 || tree.root >= static_cast<int>(tree.nodes.size())) {
    throw Error("tree: missing root");
  }
  const TreeNode &root = tree.nodes[tree.root];
  if (root.start != 0 || root.end != n) {
    throw Error("tree: root spans [" + std::to_string(root.start) + "," +
                std::to_string(root.end) + ") but sentence has " + std::to_string(n) + " tokens");
  }
  std::vector<int> seen(tree.nodes.size(), 0);
  std::vector<int> leaf_hits(n, 0);
  std::vector<int> stack{tree.root};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (id < 0 || id >= static_cast<int>(tree.nodes.size()) || seen[id]++) {
      throw Error("tree: node reached twice or out of range");
    }
    const TreeNode &node = tree.nodes[id];
    if (node.is_leaf()) {
      if (node.right >= 0 || node.end - node.start != 1) throw Error("tree: leaf must span one token");
      ++leaf_hits[node.start];
      continue;
    }
    if (node.right < 0) throw Error("tree: internal node is not binary");
    const TreeNode &l = tree.nodes[node.left];
    const TreeNode &r = tree.nodes[node.right];
    if (l.start != node.start || l.end != r.start || r.end != node.end ||
        l.end <= l.start || r.end <= r.start) {
      throw Error("tree: children do not partition parent span");
    }
    stack.push_back(node.left);
    stack.push_back(node.right);
  }
  for (int h : leaf_hits) {
    if (h != 1) throw Error("tree: leaves do not cover every token once");
  }
}

// Tree file encoding: nested [start, end, [left], [right]]; leaves [pos, pos+1].
inline slotforge::detail::Json tree_to_json(const ParseTree &tree) {
  auto enc = [&](auto &&self, int id) -> slotforge::detail::Json {
    const TreeNode &node = tree.nodes[id];
    slotforge::detail::Json j = {node.start, node.end};
    if (!node.is_leaf()) {
      j.push_back(self(self, node.left));
      j.push_back(self(self, node.right));
    }
    return j;
  };
  return enc(enc, tree.root);
}

inline ParseTree tree_from_json(const slotforge::detail::Json &j) {
  ParseTree tree;
  auto dec = [&](auto &&self, const slotforge::detail::Json &node) -> int {
    if (!node.is_array() || (node.size() != 2 && node.size() != 4)) {
      throw Error("tree: node must be [start, end] or [start, end, left, right]");
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({node[0].get<int>(), node[1].get<int>()});
    if (node.size() == 4) {
      const int l = self(self, node[2]);
      const int r = self(self, node[3]);
      tree.nodes[id].left = l;
      tree.nodes[id].right = r;
    }
    return id;
  };
  tree.root = dec(dec, j);
  return tree;
}

inline void write_trees(const std::filesystem::path &path,
                        const std::vector<std::pair<std::string, ParseTree>> &trees) {
  std::string out;
  for (const auto &[uid, tree] : trees) {
    out += slotforge::detail::dump_line({{"uid", uid}, {"tree", tree_to_json(tree)}});
  }
  slotforge::detail::write_text_file(path, out);
}

inline std::unordered_map<std::string, ParseTree> read_trees(const std::filesystem::path &path) {
  std::unordered_map<std::string, ParseTree> out;
  slotforge::detail::for_each_jsonl(path, [&](const slotforge::detail::Json &rec, int line) {
    auto uid = slotforge::detail::field<std::string>(rec, "uid", line);
    ParseTree tree;
    try {
      tree = tree_from_json(slotforge::detail::field<slotforge::detail::Json>(rec, "tree", line));
      validate_tree(tree, tree.length());
    } catch (const Error &e) {
      throw Error("line " + std::to_string(line) + " (" + uid + "): " + e.what());
    }
    if (!out.emplace(uid, std::move(tree)).second) {
      throw Error("line " + std::to_string(line) + ": duplicate uid " + uid);
    }
  });
  return out;
}

// Grammar JSON. Impossible events (-inf) are written as null.
inline slotforge::detail::Json grammar_to_json(const Grammar &g) {
  using slotforge::detail::Json;
  auto val = [](double x) -> Json { return x == kNegInf ? Json(nullptr) : Json(x); };
  auto arr = [&](std::span<const double> xs) {
    Json a = Json::array();
    for (double x : xs) a.push_back(val(x));
    return a;
  };
  const std::size_t s = g.n_symbols();
  Json binary = Json::array();
  for (int a = 0; a < g.n_nonterminals; ++a) {
    Json rows = Json::array();
    for (std::size_t b = 0; b < s; ++b) {
      rows.push_back(arr(std::span<const double>(g.log_binary).subspan((a * s + b) * s, s)));
    }
    binary.push_back(std::move(rows));
  }
  Json emit = Json::array();
  for (int t = 0; t < g.n_preterminals; ++t) {
    emit.push_back(arr(std::span<const double>(g.log_emit)
                           .subspan(static_cast<std::size_t>(t) * g.vocab_size, g.vocab_size)));
  }
  return {{"N", g.n_nonterminals}, {"P", g.n_preterminals}, {"vocab", g.vocab},
          {"log_root", arr(g.log_root)}, {"log_binary", std::move(binary)},
          {"log_emit", std::move(emit)}};
}

inline Grammar grammar_from_json(const slotforge::detail::Json &j) {
  using slotforge::detail::Json;
  Grammar g;
  try {
    g.n_nonterminals = j.at("N").get<int>();
    g.n_preterminals = j.at("P").get<int>();
    g.vocab = j.at("vocab").get<std::vector<std::string>>();
    auto val = [](const Json &x) { return x.is_null() ? kNegInf : x.get<double>(); };
    for (const Json &x : j.at("log_root")) g.log_root.push_back(val(x));
    for (const Json &rows : j.at("log_binary")) {
      for (const Json &row : rows) {
        for (const Json &x : row) g.log_binary.push_back(val(x));
      }
    }
    const Json &emit = j.at("log_emit");
    g.vocab_size = emit.empty() ? 0 : static_cast<int>(emit[0].size());
    for (const Json &row : emit) {
      if (static_cast<int>(row.size()) != g.vocab_size) throw Error("grammar: ragged log_emit");
      for (const Json &x : row) g.log_emit.push_back(val(x));
    }
  } catch (const Json::exception &e) {
    throw Error(std::string("grammar: malformed JSON: ") + e.what());
  }
  if (!g.vocab.empty() && static_cast<int>(g.vocab.size()) != g.vocab_size) {
    throw Error("grammar: vocab length does not match log_emit width");
  }
  validate_grammar(g);
  return g;
}

}  // namespace slotforge::pcfg
