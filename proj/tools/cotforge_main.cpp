// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// cotforge: curate, search, extract, emit-sft, infer, eval.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cotforge/app.hpp"
#include "cotforge/config.hpp"

namespace {

using cotforge::Json;
using cotforge::config::Override;

struct GlobalFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string input;
  std::string output;
  std::string checkpoints;
  bool verbose = false;
};

std::vector<Override> overrides_from(const GlobalFlags& g) {
  std::vector<Override> out;
  // Generic --set entries first so the dedicated flags win over them.
  for (const auto& entry : g.sets) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw cotforge::ConfigError("--set expects KEY=VALUE, got '" + entry + "'");
    }
    out.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  auto quoted = [](const std::string& s) { return Json(s).dump(); };
  if (g.seed) out.emplace_back("seed", std::to_string(*g.seed));
  if (g.workers) out.emplace_back("workers", std::to_string(*g.workers));
  if (!g.input.empty()) out.emplace_back("paths.input", quoted(g.input));
  if (!g.output.empty()) out.emplace_back("paths.output", quoted(g.output));
  if (!g.checkpoints.empty()) out.emplace_back("paths.checkpoints", quoted(g.checkpoints));
  return out;
}

void add_global_flags(CLI::App& cmd, GlobalFlags& g) {
  cmd.add_option("-c,--config", g.config_file, "JSON config file");
  cmd.add_option("--set", g.sets, "Override a config key: dotted.key=value (repeatable)");
  cmd.add_option("--seed", g.seed, "Top-level seed");
  cmd.add_option("--workers", g.workers, "Worker threads");
  cmd.add_option("--input", g.input, "Curation input corpus");
  cmd.add_option("--output", g.output, "Output directory");
  cmd.add_option("--checkpoints", g.checkpoints, "Checkpoint directory");
  cmd.add_flag("-v,--verbose", g.verbose, "Log progress");
}

int report(const cotforge::app::Outcome& outcome) {
  if (outcome.failure) return cotforge::app::exit_code(*outcome.failure);
  return cotforge::app::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cotforge: safety-aligned reasoning data pipeline"};
  app.require_subcommand(1);
  GlobalFlags g;

  auto* curate = app.add_subcommand("curate", "Sample, synthesize and adapt instances");
  auto* search = app.add_subcommand("search", "Run tree search over every instance");
  auto* extract = app.add_subcommand("extract", "Extract preference pairs from finished trees");
  auto* emit_sft = app.add_subcommand("emit-sft", "Build the reasoning SFT file");
  auto* infer = app.add_subcommand("infer", "Generate traces with test-time scaling");
  auto* eval = app.add_subcommand("eval", "Judge responses and report attack success rates");
  auto* show = app.add_subcommand("config", "Print the effective configuration and digest");
  for (auto* cmd : {curate, search, extract, emit_sft, infer, eval, show}) {
    add_global_flags(*cmd, g);
  }

  std::optional<int> stop_after;
  search->add_option("--stop-after", stop_after, "Iterations per tree before stopping")
      ->check(CLI::PositiveNumber);

  std::optional<std::string> strategy;
  std::optional<int> beam_width;
  std::optional<int> expansions;
  std::optional<int> best_of;
  infer->add_option("--strategy", strategy, "none, beam or best_of_n");
  infer->add_option("--beam-width", beam_width, "Beams kept per stage (W)");
  infer->add_option("--expansions", expansions, "Candidates per beam per stage (E)");
  infer->add_option("-n,--best-of", best_of, "Complete traces for best-of-n");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cotforge::app::kExitConfig;
  }

  spdlog::set_level(g.verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    auto overrides = overrides_from(g);
    if (strategy) overrides.emplace_back("scaling.strategy", Json(*strategy).dump());
    if (beam_width) overrides.emplace_back("scaling.beam_width", std::to_string(*beam_width));
    if (expansions) overrides.emplace_back("scaling.expansions", std::to_string(*expansions));
    if (best_of) overrides.emplace_back("scaling.n", std::to_string(*best_of));
    const auto config = cotforge::config::load(g.config_file, overrides);

    if (show->parsed()) {
      auto doc = cotforge::config::to_json(config);
      doc["config_digest"] = config.digest();
      std::cout << doc.dump(2) << "\n";
      return 0;
    }
    if (curate->parsed()) {
      const auto out = cotforge::app::cmd_curate(config);
      std::cout << "curate: " << out.report["instances"] << " instances\n";
      return report(out);
    }
    if (search->parsed()) {
      const auto out = cotforge::app::cmd_search(config, {stop_after});
      std::cout << "search: " << out.report["status_counts"].dump() << "\n";
      return report(out);
    }
    if (extract->parsed()) {
      const auto out = cotforge::app::cmd_extract(config);
      std::cout << "extract: " << out.report["pairs"] << " pairs\n";
      return report(out);
    }
    if (emit_sft->parsed()) {
      const auto out = cotforge::app::cmd_emit_sft(config);
      std::cout << "emit-sft: " << out.report["total"] << " records\n";
      return report(out);
    }
    if (infer->parsed()) {
      const auto out = cotforge::app::cmd_infer(config);
      std::cout << "infer: " << out.report["traces"] << " traces, multiplier "
                << out.report["multiplier"] << "\n";
      return report(out);
    }
    if (eval->parsed()) {
      const auto out = cotforge::app::cmd_eval(config);
      std::cout << out.report["table"].get<std::string>();
      return report(out);
    }
  } catch (const cotforge::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cotforge::app::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return cotforge::app::kExitInternal;
  }
  return cotforge::app::kExitInternal;
}
