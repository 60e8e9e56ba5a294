// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference-time scaling with self-reward: step-wise beam search and
// best-of-n over complete traces, with call accounting.
//
// Budget accounting. The baseline generates one candidate per stage. Beam
// search compares W*E candidates per stage and best-of-n compares n complete
// traces, so the multipliers are W*E and n. Closed-form call counts for a
// four-stage trace without malformed candidates:
//   none:       4 policy calls, 0 reward calls
//   beam:       4*W*E policy calls, 4*W*E reward calls
//   best_of_n:  4*n policy calls, n reward calls

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotforge/backend.hpp"
#include "cotforge/records.hpp"
#include "cotforge/trace.hpp"

namespace cotforge::tts {

enum class Strategy { kNone, kBeam, kBestOfN };

std::string_view to_string(Strategy strategy);
std::optional<Strategy> strategy_from_string(std::string_view name);

struct ScalingConfig {
  Strategy strategy = Strategy::kNone;
  int beam_width = 2;  // W
  int expansions = 4;  // E, candidates per beam per stage
  int n = 8;           // best-of-n
  std::uint64_t seed = 0;
  // Rank beams by the sum of their step scores instead of the last one.
  bool cumulative = false;
  // Run the beams of a stage concurrently.
  bool parallel = true;

  void validate() const;
  std::int64_t comparisons_per_step() const;
};

struct BudgetReport {
  std::int64_t comparisons_per_step = 1;
  std::int64_t multiplier = 1;
  std::int64_t total_policy_calls = 0;
  std::int64_t total_reward_calls = 0;
  // Some candidates were malformed or starved and the search went on with
  // the rest.
  bool degraded = false;

  bool operator==(const BudgetReport&) const = default;
};

struct ScaledTrace {
  trace::ReasoningTrace trace;
  std::optional<double> score;  // absent for the baseline
  BudgetReport budget;
};

// One greedy candidate (sample 0) per stage.
ScaledTrace run_none(const InstanceRecord& instance, const ScalingConfig& config,
                     const backend::BackendSet& backends);

// W beams start empty; at each stage beam b draws E candidates at sample
// offsets b*E.. and every candidate is scored by self-reward given its
// prefix. The top W candidates by score (ties in generation order) become
// the next beams. Returns the best complete trace.
ScaledTrace run_beam(const InstanceRecord& instance, const ScalingConfig& config,
                     const backend::BackendSet& backends);

// n independent traces (trace j draws sample j at every stage), each scored
// by self-reward on its OUTPUT given the first three stages. Returns the
// highest-scoring trace, ties to the lowest index.
ScaledTrace run_best_of_n(const InstanceRecord& instance, const ScalingConfig& config,
                          const backend::BackendSet& backends);

ScaledTrace run(const InstanceRecord& instance, const ScalingConfig& config,
                const backend::BackendSet& backends);

Json to_json(const BudgetReport& report);

}  // namespace cotforge::tts
