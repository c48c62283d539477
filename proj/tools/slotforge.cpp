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

#include <cstdlib>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "slotforge/slotforge.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App *cmd, CommonFlags &flags) {
  cmd->add_option("--config", flags.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", flags.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seed", flags.seed, "Global seed (overrides seed)");
  cmd->add_option("--threads", flags.threads, "Worker threads")->check(CLI::PositiveNumber);
}

slotforge::RunConfig resolve_config(const CommonFlags &flags) {
  auto cfg = slotforge::load_config(flags.config);
  if (flags.out) cfg.output_dir = *flags.out;
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.threads) cfg.threads = *flags.threads;
  return cfg;
}

void set_log_level() {
  const char *env = std::getenv("SLOTFORGE_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

void log_report(const slotforge::EvalReport &r) {
  spdlog::info("clusters {}  type P/R/F1 {:.4f}/{:.4f}/{:.4f}  value P/R/F1 {:.4f}/{:.4f}/{:.4f}", r.n_clusters,
               r.slot_type.p, r.slot_type.r, r.slot_type.f1, r.slot_value.p, r.slot_value.r, r.slot_value.f1);
  if (r.dst) spdlog::info("dst turn F1 {:.4f}  joint F1 {:.4f}", r.dst->turn_f1, r.dst->joint_f1);
  if (r.span_recall) spdlog::info("span recall {:.4f}", *r.span_recall);
}

}  // namespace

int main(int argc, char **argv) {
  set_log_level();
  CLI::App app{"Slot schema induction from task-oriented dialog"};
  app.require_subcommand(1);
  CommonFlags flags;
  const slotforge::LogFn log = [](const std::string &msg) { spdlog::info("{}", msg); };

  auto *train = app.add_subcommand("train-pcfg", "Train the PCFG by inside-outside EM");
  auto *extract = app.add_subcommand("extract-spans", "Extract candidate spans from attention profiles");
  auto *induce = app.add_subcommand("induce", "Cluster spans and write the induced schema");
  auto *evaluate = app.add_subcommand("evaluate", "Apply the schema and score it against gold annotations");
  auto *intents = app.add_subcommand("induce-intents", "Cluster utterances into intents");
  auto *pipeline = app.add_subcommand("pipeline", "Run every phase in order");
  for (auto *cmd : {train, extract, induce, evaluate, intents, pipeline}) add_common(cmd, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve_config(flags);
    if (train->parsed()) {
      const auto rep = slotforge::cmd_train_pcfg(cfg, log);
      spdlog::info("log-likelihood {:.4f} -> {:.4f}", rep.initial_log_likelihood, rep.log_likelihood.back());
    } else if (extract->parsed()) {
      slotforge::cmd_extract_spans(cfg, log);
    } else if (induce->parsed()) {
      const auto r = slotforge::cmd_induce(cfg, log);
      std::size_t mapped = 0;
      for (const auto &a : r.mapping) mapped += a.name.has_value();
      spdlog::info("{} of {} clusters mapped to reference slots", mapped, r.mapping.size());
    } else if (evaluate->parsed()) {
      log_report(slotforge::cmd_evaluate(cfg, log));
    } else if (intents->parsed()) {
      spdlog::info("{} intent clusters", slotforge::cmd_induce_intents(cfg, log).size());
    } else if (pipeline->parsed()) {
      if (const auto rep = slotforge::cmd_pipeline(cfg, log)) log_report(*rep);
    }
  } catch (const std::exception &e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
