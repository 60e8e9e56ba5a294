// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Step-level preference pairs from finished search trees, and the SFT
// quality gate and emission.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotforge/backend.hpp"
#include "cotforge/mcts.hpp"
#include "cotforge/records.hpp"

namespace cotforge::prefgen {

struct ExtractionConfig {
  double epsilon = 0.4;  // required value margin
  double theta = 0.8;    // minimum value of the chosen step
  // Also pair same-level steps under different parents. Such pairs do not
  // share a prefix; rejected_prefix_text records the rejected side's.
  bool cross_parent = false;

  void validate() const;
};

struct PreferencePair {
  std::string pair_id;
  std::string instance_id;
  std::string tree_id;
  int level = 0;
  std::vector<std::string> image_refs;
  std::string query;
  std::string prefix_text;
  std::string chosen_text;
  std::string rejected_text;
  double chosen_value = 0.0;
  double rejected_value = 0.0;
  std::optional<std::string> rejected_prefix_text;

  bool operator==(const PreferencePair&) const = default;
};

// chosen > rejected + epsilon and chosen >= theta.
bool prefers(double chosen, double rejected, const ExtractionConfig& config);

// Every ordered pair of visited sibling steps satisfying `prefers` on mean
// value Q/N, over all levels. Sorted by level, then parent and child index
// of the chosen step, then of the rejected step.
std::vector<PreferencePair> extract_pairs(const mcts::SearchTree& tree,
                                          const ExtractionConfig& config = {});

Json to_json(const PreferencePair& pair);
PreferencePair pair_from_json(const Json& json);

// One record per line. Throws InputError on a repeated pair_id.
std::string dpo_jsonl(const std::vector<PreferencePair>& pairs);
void emit_dpo(const std::vector<PreferencePair>& pairs, const std::string& path);
std::vector<PreferencePair> load_pairs(const std::string& path);

struct Rejection {
  SftRecord record;
  std::string reason;  // "format" or "jailbroken"
  std::string detail;
};

struct FilterResult {
  std::vector<SftRecord> kept;  // quality_checked set
  std::vector<Rejection> rejected;
  std::vector<Rejection> undetermined;  // reason "undetermined"
};

struct FilterConfig {
  // OUTPUT safety scores below this reject a should-refuse record.
  double jailbreak_threshold = 0.5;
};

// Drops records whose trace does not parse into four stages, and
// should-refuse records whose OUTPUT the judge scores as unsafe. Judge
// failures leave a record undetermined. `judge` may be null when no record
// needs judging.
FilterResult quality_filter(const std::vector<SftRecord>& records,
                            const backend::Backend* judge,
                            const FilterConfig& config = {});

struct SftManifest {
  std::int64_t total = 0;
  std::int64_t safety = 0;
  std::int64_t benign = 0;
  std::map<std::string, std::int64_t> per_category;
  std::vector<std::string> warnings;
};

// Merges and shuffles the two record sets with a seeded permutation.
// Throws InputError if a record has not passed quality_filter.
std::vector<SftRecord> merge_sft(const std::vector<SftRecord>& safety_records,
                                 const std::vector<SftRecord>& benign_records,
                                 std::uint64_t seed, SftManifest* manifest = nullptr);

std::string sft_jsonl(const std::vector<SftRecord>& records);

// merge_sft followed by an atomic write of the merged records.
SftManifest emit_sft(const std::vector<SftRecord>& safety_records,
                     const std::vector<SftRecord>& benign_records,
                     std::uint64_t seed, const std::string& path);
std::vector<SftRecord> load_sft(const std::string& path);

Json to_json(const SftManifest& manifest);

}  // namespace cotforge::prefgen
