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

// Dialog corpora, tokenization, and reference ontologies.
//
// The canonical input is a JSONL file with one dialog per line:
//
//   {"dialog_id": "d1", "turns": [{"speaker": "user", "text": "...",
//                                  "state": [{"slot": "food", "value": "thai"}]}]}
//
// "state" is optional and holds the slot/value pairs newly expressed in that
// turn. MultiWOZ and SGD files are mapped onto the same model by thin
// adapters which convert their cumulative states into per-turn deltas.

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slotforge/detail/jsonl.hpp"
#include "slotforge/error.hpp"

namespace slotforge {

enum class Speaker { user, system };

struct SlotValue {
  std::string slot;
  std::string value;

  friend bool operator==(const SlotValue &, const SlotValue &) = default;
  friend auto operator<=>(const SlotValue &, const SlotValue &) = default;
};

using DialogState = std::vector<SlotValue>;

struct Utterance {
  std::string uid;  // "<dialog_id>:<turn_index>"
  Speaker speaker = Speaker::user;
  std::string text;
  std::vector<std::string> tokens;
  std::optional<DialogState> gold_state;

  bool is_user() const { return speaker == Speaker::user; }
};

struct Dialog {
  std::string dialog_id;
  std::vector<Utterance> turns;
};

struct VocabEntry {
  int id = 0;
  long frequency = 0;
};

class Corpus {
 public:
  Corpus() = default;

  // Builds the vocabulary and uid index. Throws on duplicate uids.
  explicit Corpus(std::vector<Dialog> dialogs) : dialogs_(std::move(dialogs)) {
    for (std::size_t d = 0; d < dialogs_.size(); ++d) {
      for (std::size_t t = 0; t < dialogs_[d].turns.size(); ++t) {
        const Utterance &u = dialogs_[d].turns[t];
        if (!index_.emplace(u.uid, std::make_pair(d, t)).second) {
          throw Error("duplicate uid " + u.uid);
        }
        for (const std::string &tok : u.tokens) {
          auto [it, inserted] = vocabulary_.try_emplace(
              tok, VocabEntry{static_cast<int>(vocabulary_.size()), 0});
          ++it->second.frequency;
        }
      }
    }
  }

  const std::vector<Dialog> &dialogs() const { return dialogs_; }
  const std::map<std::string, VocabEntry> &vocabulary() const {
    return vocabulary_;
  }

  // User turns in file order.
  std::vector<const Utterance *> user_utterances() const {
    std::vector<const Utterance *> out;
    for (const Dialog &d : dialogs_) {
      for (const Utterance &u : d.turns) {
        if (u.is_user()) out.push_back(&u);
      }
    }
    return out;
  }

  const Utterance *find(std::string_view uid) const {
    auto it = index_.find(std::string(uid));
    if (it == index_.end()) return nullptr;
    return &dialogs_[it->second.first].turns[it->second.second];
  }

  bool annotated() const {
    for (const Dialog &d : dialogs_) {
      for (const Utterance &u : d.turns) {
        if (u.gold_state) return true;
      }
    }
    return false;
  }

 private:
  std::vector<Dialog> dialogs_;
  std::map<std::string, VocabEntry> vocabulary_;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> index_;
};

struct ReferenceSchema {
  std::map<std::string, std::set<std::string>> slots;
  std::set<std::string> in_corpus_slots;
};

enum class CorpusFormat { generic, multiwoz, sgd };

inline CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "generic") return CorpusFormat::generic;
  if (name == "multiwoz") return CorpusFormat::multiwoz;
  if (name == "sgd") return CorpusFormat::sgd;
  throw Error("unknown corpus format '" + std::string(name) + "'");
}

namespace detail {

inline bool is_split_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char &c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Lowercases, splits on whitespace, and peels leading/trailing .,!?;: into
// single-character tokens. Inner punctuation ("7:45", "3.5") is kept.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string lowered = detail::ascii_lower(text);
  std::size_t i = 0;
  const std::size_t n = lowered.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(lowered[j]))) ++j;
    if (j > i) {
      std::string_view chunk(lowered.data() + i, j - i);
      std::size_t b = 0, e = chunk.size();
      while (b < e && detail::is_split_punct(chunk[b])) {
        out.emplace_back(1, chunk[b]);
        ++b;
      }
      std::size_t core_end = e;
      while (core_end > b && detail::is_split_punct(chunk[core_end - 1])) --core_end;
      if (core_end > b) out.emplace_back(chunk.substr(b, core_end - b));
      for (std::size_t k = core_end; k < e; ++k) out.emplace_back(1, chunk[k]);
    }
    i = j;
  }
  return out;
}

// Lowercase, trim, and collapse internal whitespace runs to one space.
inline std::string normalize_text(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string> &tokens,
                               std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline Utterance make_utterance(std::string dialog_id, std::size_t turn,
                                Speaker speaker, std::string text,
                                std::optional<DialogState> state = std::nullopt) {
  Utterance u;
  u.uid = dialog_id + ":" + std::to_string(turn);
  u.speaker = speaker;
  u.tokens = tokenize(text);
  u.text = std::move(text);
  u.gold_state = std::move(state);
  return u;
}

namespace detail {

inline Corpus load_generic(const std::filesystem::path &path) {
  std::vector<Dialog> dialogs;
  for_each_jsonl(path, [&](const Json &rec, int line) {
    Dialog d;
    d.dialog_id = field<std::string>(rec, "dialog_id", line);
    auto turns = field<Json>(rec, "turns", line);
    if (!turns.is_array()) {
      throw Error("line " + std::to_string(line) + ": field 'turns' is not an array");
    }
    for (std::size_t t = 0; t < turns.size(); ++t) {
      const Json &turn = turns[t];
      std::string where = "line " + std::to_string(line) + ": turns[" +
                          std::to_string(t) + "]";
      if (!turn.is_object()) throw Error(where + " is not an object");
      auto speaker = field<std::string>(turn, "speaker", line);
      if (speaker != "user" && speaker != "system") {
        throw Error(where + ": field 'speaker' must be user or system");
      }
      auto text = field<std::string>(turn, "text", line);
      std::optional<DialogState> state;
      if (auto it = turn.find("state"); it != turn.end()) {
        if (!it->is_array()) throw Error(where + ": field 'state' is not an array");
        state.emplace();
        for (const Json &sv : *it) {
          if (!sv.is_object()) throw Error(where + ": field 'state' entry is not an object");
          auto slot = field<std::string>(sv, "slot", line);
          auto value = field<std::string>(sv, "value", line);
          if (slot.empty()) throw Error(where + ": field 'state.slot' is empty");
          state->push_back({std::move(slot), std::move(value)});
        }
      }
      d.turns.push_back(make_utterance(
          d.dialog_id, t, speaker == "user" ? Speaker::user : Speaker::system,
          std::move(text), std::move(state)));
    }
    dialogs.push_back(std::move(d));
  });
  return Corpus(std::move(dialogs));
}

inline bool is_empty_value(const std::string &v) {
  std::string n = normalize_text(v);
  return n.empty() || n == "not mentioned" || n == "none";
}

// Pairs of `now` that are new or changed relative to `before`.
inline DialogState state_delta(const std::map<std::string, std::string> &before,
                               const std::map<std::string, std::string> &now) {
  DialogState out;
  for (const auto &[slot, value] : now) {
    auto it = before.find(slot);
    if (it == before.end() || it->second != value) out.push_back({slot, value});
  }
  return out;
}

inline Corpus load_multiwoz(const std::filesystem::path &path) {
  Json root;
  try {
    root = Json::parse(read_text_file(path));
  } catch (const Json::parse_error &e) {
    throw Error(path.string() + ": invalid JSON: " + e.what());
  }
  if (!root.is_object()) throw Error(path.string() + ": expected an object of dialogs");
  std::vector<Dialog> dialogs;
  for (const auto &[id, body] : root.items()) {
    auto log_it = body.find("log");
    if (log_it == body.end() || !log_it->is_array()) {
      throw Error("dialog " + id + ": missing field 'log'");
    }
    const Json &log = *log_it;
    Dialog d;
    d.dialog_id = id;
    std::map<std::string, std::string> previous;
    for (std::size_t t = 0; t < log.size(); ++t) {
      if (!log[t].contains("text") || !log[t]["text"].is_string()) {
        throw Error("dialog " + id + ": log[" + std::to_string(t) + "] missing field 'text'");
      }
      bool user = t % 2 == 0;
      std::optional<DialogState> state;
      if (user && t + 1 < log.size() && log[t + 1].contains("metadata")) {
        std::map<std::string, std::string> now;
        for (const auto &[domain, parts] : log[t + 1]["metadata"].items()) {
          for (const char *part : {"semi", "book"}) {
            if (!parts.contains(part)) continue;
            for (const auto &[slot, value] : parts[part].items()) {
              if (!value.is_string() || is_empty_value(value.get<std::string>())) continue;
              std::string name = domain + "-" + (std::string(part) == "book" ? "book " : "") + slot;
              now[detail::ascii_lower(name)] = value.get<std::string>();
            }
          }
        }
        state = state_delta(previous, now);
        previous = std::move(now);
      }
      d.turns.push_back(make_utterance(id, t, user ? Speaker::user : Speaker::system,
                                       log[t]["text"].get<std::string>(), std::move(state)));
    }
    dialogs.push_back(std::move(d));
  }
  return Corpus(std::move(dialogs));
}

inline void append_sgd_dialogs(const Json &arr, const std::string &source,
                               std::vector<Dialog> &dialogs) {
  if (!arr.is_array()) throw Error(source + ": expected an array of dialogs");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const Json &rec = arr[i];
    std::string where = source + ": dialog " + std::to_string(i);
    if (!rec.contains("dialogue_id")) throw Error(where + ": missing field 'dialogue_id'");
    if (!rec.contains("turns")) throw Error(where + ": missing field 'turns'");
    Dialog d;
    d.dialog_id = rec["dialogue_id"].get<std::string>();
    std::map<std::string, std::string> previous;
    const Json &turns = rec["turns"];
    for (std::size_t t = 0; t < turns.size(); ++t) {
      const Json &turn = turns[t];
      if (!turn.contains("speaker") || !turn.contains("utterance")) {
        throw Error(where + ": turns[" + std::to_string(t) + "] missing field 'speaker' or 'utterance'");
      }
      bool user = turn["speaker"].get<std::string>() == "USER";
      std::optional<DialogState> state;
      if (user) {
        std::map<std::string, std::string> now;
        const Json frames = turn.value("frames", Json::array());
        for (const Json &frame : frames) {
          std::string service = frame.value("service", "");
          if (!frame.contains("state")) continue;
          const Json slot_values = frame["state"].value("slot_values", Json::object());
          for (const auto &[slot, values] : slot_values.items()) {
            if (!values.is_array() || values.empty()) continue;
            now[detail::ascii_lower(service + "-" + slot)] = values[0].get<std::string>();
          }
        }
        state = state_delta(previous, now);
        previous = std::move(now);
      }
      d.turns.push_back(make_utterance(d.dialog_id, t, user ? Speaker::user : Speaker::system,
                                       turn["utterance"].get<std::string>(), std::move(state)));
    }
    dialogs.push_back(std::move(d));
  }
}

inline Corpus load_sgd(const std::filesystem::path &path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto &entry : std::filesystem::directory_iterator(path)) {
      auto name = entry.path().filename().string();
      if (name.rfind("dialogues_", 0) == 0 && entry.path().extension() == ".json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<Dialog> dialogs;
  for (const auto &f : files) {
    Json arr;
    try {
      arr = Json::parse(read_text_file(f));
    } catch (const Json::parse_error &e) {
      throw Error(f.string() + ": invalid JSON: " + e.what());
    }
    append_sgd_dialogs(arr, f.string(), dialogs);
  }
  return Corpus(std::move(dialogs));
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path &path, CorpusFormat format) {
  if (!std::filesystem::exists(path)) throw Error("corpus not found: " + path.string());
  switch (format) {
    case CorpusFormat::generic:
      return detail::load_generic(path);
    case CorpusFormat::multiwoz:
      return detail::load_multiwoz(path);
    case CorpusFormat::sgd:
      return detail::load_sgd(path);
  }
  throw Error("unknown corpus format");
}

inline void write_generic_corpus(const Corpus &corpus, const std::filesystem::path &path) {
  std::string out;
  for (const Dialog &d : corpus.dialogs()) {
    detail::Json turns = detail::Json::array();
    for (const Utterance &u : d.turns) {
      detail::Json t = {{"speaker", u.is_user() ? "user" : "system"}, {"text", u.text}};
      if (u.gold_state) {
        detail::Json st = detail::Json::array();
        for (const auto &sv : *u.gold_state) st.push_back({{"slot", sv.slot}, {"value", sv.value}});
        t["state"] = std::move(st);
      }
      turns.push_back(std::move(t));
    }
    out += detail::dump_line({{"dialog_id", d.dialog_id}, {"turns", std::move(turns)}});
  }
  detail::write_text_file(path, out);
}

// Aggregates every gold (slot, value) pair of the corpus. Values are stored
// normalized.
inline ReferenceSchema build_reference_schema(const Corpus &corpus) {
  ReferenceSchema ref;
  bool any = false;
  for (const Dialog &d : corpus.dialogs()) {
    for (const Utterance &u : d.turns) {
      if (!u.gold_state) continue;
      any = true;
      for (const SlotValue &sv : *u.gold_state) {
        std::string v = normalize_text(sv.value);
        if (v.empty()) continue;
        ref.slots[sv.slot].insert(std::move(v));
        ref.in_corpus_slots.insert(sv.slot);
      }
    }
  }
  if (!any) throw Error("unannotated corpus");
  return ref;
}

// Adds ontology slots ({"slot": ["value", ...]}) that may not occur in the
// corpus. in_corpus_slots is left untouched.
inline void merge_ontology(ReferenceSchema &ref, const detail::Json &ontology) {
  if (!ontology.is_object()) throw Error("ontology must be a JSON object");
  for (const auto &[slot, values] : ontology.items()) {
    if (!values.is_array() || values.empty()) {
      throw Error("ontology slot '" + slot + "' needs a non-empty value list");
    }
    for (const auto &v : values) ref.slots[slot].insert(normalize_text(v.get<std::string>()));
  }
}

}  // namespace slotforge
