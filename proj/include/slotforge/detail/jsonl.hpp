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

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "slotforge/error.hpp"

namespace slotforge::detail {

using Json = nlohmann::json;

inline std::string read_text_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path &path,
                            const std::string &text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Calls fn(record, line_number) for every non-blank line. Line numbers are
// 1-based.
inline void for_each_jsonl(const std::filesystem::path &path,
                           const std::function<void(const Json &, int)> &fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json rec;
    try {
      rec = Json::parse(line);
    } catch (const Json::parse_error &e) {
      throw Error(path.string() + ":" + std::to_string(line_no) +
                  ": invalid JSON: " + e.what());
    }
    fn(rec, line_no);
  }
}

// Fetches a required field, naming the line and field on failure.
template <typename T>
T field(const Json &rec, const char *name, int line_no) {
  auto it = rec.find(name);
  if (it == rec.end()) {
    throw Error("line " + std::to_string(line_no) + ": missing field '" +
                name + "'");
  }
  try {
    return it->get<T>();
  } catch (const Json::exception &) {
    throw Error("line " + std::to_string(line_no) + ": field '" + name +
                "' has wrong type");
  }
}

// Serializes with the shortest round-trip representation of doubles
// (up to 17 significant digits).
inline std::string dump_line(const Json &j) { return j.dump() + "\n"; }

}  // namespace slotforge::detail
