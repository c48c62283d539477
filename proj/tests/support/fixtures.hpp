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

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "slotforge/slotforge.hpp"

namespace fixtures {

// Fresh scratch directory under the system temp dir, unique per process.
inline std::filesystem::path scratch_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("slotforge_test_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// The restaurant sentence with hand-set distances and its binary tree.

struct Figure2 {
  slotforge::Utterance utterance;
  slotforge::DistanceSequence distances;
  slotforge::pcfg::ParseTree tree;
};

// Builds a ParseTree from nested brackets over the token positions, e.g.
// "(0 (1 ((2 3) (4 5))))". Leaves carry label -1.
inline slotforge::pcfg::ParseTree tree_from_brackets(const std::string &s) {
  slotforge::pcfg::ParseTree t;
  std::size_t pos = 0;
  std::function<int()> parse = [&]() -> int {
    while (s[pos] == ' ') ++pos;
    if (s[pos] == '(') {
      ++pos;
      const int left = parse();
      const int right = parse();
      while (s[pos] == ' ') ++pos;
      ++pos;  // ')'
      slotforge::pcfg::TreeNode node;
      node.start = t.nodes[left].start;
      node.end = t.nodes[right].end;
      node.left = left;
      node.right = right;
      t.nodes.push_back(node);
      return static_cast<int>(t.nodes.size()) - 1;
    }
    std::size_t end = pos;
    while (std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
    const int i = std::stoi(s.substr(pos, end - pos));
    pos = end;
    slotforge::pcfg::TreeNode leaf;
    leaf.start = i;
    leaf.end = i + 1;
    t.nodes.push_back(leaf);
    return static_cast<int>(t.nodes.size()) - 1;
  };
  t.root = parse();
  return t;
}

inline Figure2 figure2() {
  Figure2 f;
  f.utterance = slotforge::make_utterance("fig2", 0, slotforge::Speaker::user,
                                          "i want a restaurant which serves modern global cuisine");
  // i|want|a|restaurant|which|serves|modern|global|cuisine
  f.distances = slotforge::make_distances({0.52, 0.45, 0.12, 0.33, 0.42, 0.48, 0.25, 0.10});
  f.tree = tree_from_brackets("(0 (1 ((2 3) (4 (5 (6 (7 8)))))))");
  return f;
}

// ---------------------------------------------------------------------------
// Planted-schema corpus: templated utterances whose slot values are known.

struct PlantedTemplate {
  const char *domain;
  const char *text;  // {slot} placeholders
};

struct PlantedSlot {
  const char *name;
  std::vector<const char *> values;
};

inline const std::vector<PlantedSlot> &planted_slots() {
  static const std::vector<PlantedSlot> slots{
      {"restaurant-food", {"indian", "chinese", "italian", "thai", "french", "korean", "modern european"}},
      {"restaurant-area", {"north", "south", "east", "west", "centre"}},
      {"restaurant-pricerange", {"cheap", "moderate", "expensive"}},
      {"train-destination", {"cambridge", "london", "norwich", "ely", "peterborough", "bishops stortford"}},
      {"train-departure", {"stevenage", "leicester", "birmingham", "broxbourne", "kings lynn"}},
      {"train-day", {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
  };
  return slots;
}

// Every template names all slots of its domain, so each slot type holds a
// fixed share of the extracted spans.
inline const std::vector<PlantedTemplate> &planted_templates() {
  static const std::vector<PlantedTemplate> t{
      {"restaurant", "a {restaurant-pricerange} {restaurant-food} restaurant in the {restaurant-area}"},
      {"restaurant", "{restaurant-food} food in the {restaurant-area} , {restaurant-pricerange} please"},
      {"restaurant", "i want {restaurant-pricerange} {restaurant-food} food in the {restaurant-area}"},
      {"restaurant", "the {restaurant-area} , {restaurant-food} , {restaurant-pricerange}"},
      {"restaurant", "find {restaurant-food} in the {restaurant-area} that is {restaurant-pricerange}"},
      {"restaurant", "{restaurant-pricerange} place in the {restaurant-area} serving {restaurant-food}"},
      {"train", "train to {train-destination} from {train-departure} on {train-day}"},
      {"train", "from {train-departure} to {train-destination} on {train-day}"},
      {"train", "{train-day} , leaving {train-departure} for {train-destination}"},
      {"train", "on {train-day} i go from {train-departure} to {train-destination}"},
      {"train", "a train on {train-day} from {train-departure} to {train-destination}"},
      {"train", "{train-departure} to {train-destination} on {train-day} please"},
  };
  return t;
}

inline std::size_t pick(std::mt19937_64 &rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

inline slotforge::Utterance planted_utterance(std::mt19937_64 &rng, const std::string &dialog_id, std::size_t turn,
                                              const PlantedTemplate &tpl) {
  std::string text = tpl.text;
  slotforge::DialogState state;
  for (const auto &slot : planted_slots()) {
    const std::string key = std::string("{") + slot.name + "}";
    const auto at = text.find(key);
    if (at == std::string::npos) continue;
    const std::string value = slot.values[pick(rng, slot.values.size())];
    text.replace(at, key.size(), value);
    state.push_back({slot.name, value});
  }
  return slotforge::make_utterance(dialog_id, turn, slotforge::Speaker::user, text, state);
}

// Dialogs of two user turns from one domain with a system turn between.
// Domains alternate by dialog.
inline slotforge::Corpus planted_corpus(std::uint64_t seed, int n_user_turns, const std::string &prefix) {
  std::mt19937_64 rng(seed);
  const auto &tpls = planted_templates();
  std::vector<slotforge::Dialog> dialogs;
  for (int d = 0; d < n_user_turns / 2; ++d) {
    slotforge::Dialog dialog;
    dialog.dialog_id = prefix + std::to_string(d);
    const std::string domain = d % 2 == 0 ? "restaurant" : "train";
    std::vector<const PlantedTemplate *> pool;
    for (const auto &t : tpls) {
      if (domain == t.domain) pool.push_back(&t);
    }
    dialog.turns.push_back(planted_utterance(rng, dialog.dialog_id, 0, *pool[pick(rng, pool.size())]));
    dialog.turns.push_back(slotforge::make_utterance(dialog.dialog_id, 1, slotforge::Speaker::system,
                                                     "sure , anything else ?"));
    dialog.turns.push_back(planted_utterance(rng, dialog.dialog_id, 2, *pool[pick(rng, pool.size())]));
    dialogs.push_back(std::move(dialog));
  }
  return slotforge::Corpus(std::move(dialogs));
}

struct PlantedBenchmark {
  slotforge::Corpus train;
  slotforge::Corpus heldout;
};

inline constexpr std::uint64_t kPlantedSeed = 20240611;

inline PlantedBenchmark planted_benchmark(std::uint64_t seed = kPlantedSeed) {
  return {planted_corpus(seed, 300, "train-"), planted_corpus(seed + 1, 60, "heldout-")};
}

// Writes both corpora and a config for the oracle embedder under `dir`.
inline slotforge::RunConfig planted_config(const std::filesystem::path &dir, const PlantedBenchmark &b,
                                           bool use_pcfg = false) {
  std::filesystem::create_directories(dir);
  slotforge::write_generic_corpus(b.train, dir / "train.jsonl");
  slotforge::write_generic_corpus(b.heldout, dir / "heldout.jsonl");
  slotforge::detail::Json j = {
      {"corpus", {{"path", "train.jsonl"}, {"format", "generic"}}},
      {"eval_corpus", {{"path", "heldout.jsonl"}, {"format", "generic"}}},
      {"embedder", {{"kind", "oracle"}, {"dim", 16}, {"sigma", 0.05}}},
      {"pcfg", {{"nonterminals", 4}, {"preterminals", 8}, {"max_iters", 10}}},
      {"use_pcfg_constraint", use_pcfg},
      {"output_dir", "out"},
      {"seed", 7},
  };
  slotforge::detail::write_text_file(dir / "config.json", j.dump(2));
  return slotforge::load_config(dir / "config.json");
}

// ---------------------------------------------------------------------------
// Numeric data

// Isotropic Gaussian blobs around well-separated centers.
inline std::vector<std::vector<double>> blobs(std::uint64_t seed, int k, int per_blob, int dim, double spread,
                                              std::vector<int> *truth = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<std::vector<double>> out;
  for (int c = 0; c < k; ++c) {
    std::vector<double> center(dim, 0.0);
    center[c % dim] = 10.0 * (1 + c / dim);
    for (int i = 0; i < per_blob; ++i) {
      auto p = center;
      for (double &x : p) x += noise(rng);
      out.push_back(std::move(p));
      if (truth) truth->push_back(c);
    }
  }
  return out;
}

inline std::vector<std::vector<double>> uniform_points(std::uint64_t seed, int n, int dim) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto &p : out) {
    for (double &x : p) x = u(rng);
  }
  return out;
}

inline std::vector<int> random_sentence(std::mt19937_64 &rng, int length, int vocab) {
  std::vector<int> s(length);
  for (int &w : s) w = static_cast<int>(rng() % vocab);
  return s;
}

}  // namespace fixtures
