// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the cotforge binary. Each command reads
// its inputs from the locations in RunConfig, writes its artifacts
// atomically and returns the JSON report it also persisted.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "cotforge/backend.hpp"
#include "cotforge/config.hpp"
#include "cotforge/error.hpp"

namespace cotforge::app {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInput = 3;
inline constexpr int kExitBackend = 4;
inline constexpr int kExitInternal = 5;

int exit_code(ErrorCategory category);

// A command that finished but had per-item failures (e.g. one tree out of
// many). Carries the category of the first failure for the exit code.
struct Outcome {
  Json report;
  std::optional<ErrorCategory> failure;
};

// Runs fn(i) for i in [0, count) on `workers` threads. Indices are handed
// out in order; the caller stores results by index so output never depends
// on scheduling.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

// Creates the backend for each role the caller needs; others stay null.
backend::BackendSet make_backends(const config::RunConfig& config, bool policy,
                                  bool safety_judge, bool reference_scorer,
                                  bool self_reward);

// File name for an instance's checkpoint inside the checkpoint directory.
std::string checkpoint_name(const std::string& instance_id);

struct SearchOptions {
  // Iterations per tree in this invocation; emulates an interruption.
  std::optional<int> stop_after;
};

Outcome cmd_curate(const config::RunConfig& config);
Outcome cmd_search(const config::RunConfig& config, const SearchOptions& options = {});
Outcome cmd_extract(const config::RunConfig& config);
Outcome cmd_emit_sft(const config::RunConfig& config);
Outcome cmd_infer(const config::RunConfig& config);
// The report's "table" field holds the rendered rate table.
Outcome cmd_eval(const config::RunConfig& config);

}  // namespace cotforge::app
