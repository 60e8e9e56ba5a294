// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/prefgen.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "cotforge/util.hpp"

namespace cotforge::prefgen {

using mcts::NodeId;
using mcts::SearchTree;
using mcts::TreeNode;

void ExtractionConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("extraction.epsilon must be >= 0");
  }
  if (!(theta >= 0.0 && theta <= 1.0)) {
    throw ConfigError("extraction.theta must lie in [0, 1]");
  }
}

bool prefers(double chosen, double rejected, const ExtractionConfig& config) {
  return chosen > rejected + config.epsilon && chosen >= config.theta;
}

namespace {

struct Candidate {
  NodeId id;
  NodeId parent;
  std::size_t index;  // position among the parent's children
  double value;
};

std::string prefix_of(const SearchTree& tree, NodeId parent) {
  return trace::serialize_trace(tree.path_trace(parent));
}

}  // namespace

std::vector<PreferencePair> extract_pairs(const SearchTree& tree,
                                          const ExtractionConfig& config) {
  config.validate();
  // Visited steps grouped by level, in (parent id, child index) order.
  std::vector<std::vector<Candidate>> by_level(5);
  for (const auto& node : tree.nodes) {
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      const auto& child = tree.node(node.children[i]);
      if (child.n <= 0) continue;
      by_level[static_cast<std::size_t>(child.level)].push_back(
          {child.id, node.id, i, child.mean_value()});
    }
  }

  std::vector<PreferencePair> pairs;
  for (int level = 1; level <= 4; ++level) {
    const auto& steps = by_level[static_cast<std::size_t>(level)];
    for (const auto& a : steps) {
      for (const auto& b : steps) {
        if (a.id == b.id) continue;
        if (a.parent != b.parent && !config.cross_parent) continue;
        if (!prefers(a.value, b.value, config)) continue;
        PreferencePair pair;
        pair.pair_id = tree.tree_id() + ":" + std::to_string(a.id) + ":" +
                       std::to_string(b.id);
        pair.instance_id = tree.instance.instance_id;
        pair.tree_id = tree.tree_id();
        pair.level = level;
        pair.image_refs = tree.instance.image_refs;
        pair.query = tree.instance.query;
        pair.prefix_text = prefix_of(tree, a.parent);
        pair.chosen_text = tree.node(a.id).step_text;
        pair.rejected_text = tree.node(b.id).step_text;
        pair.chosen_value = a.value;
        pair.rejected_value = b.value;
        if (config.cross_parent) pair.rejected_prefix_text = prefix_of(tree, b.parent);
        pairs.push_back(std::move(pair));
      }
    }
  }
  return pairs;
}

Json to_json(const PreferencePair& pair) {
  Json out;
  out["pair_id"] = pair.pair_id;
  out["instance_id"] = pair.instance_id;
  out["tree_id"] = pair.tree_id;
  out["level"] = pair.level;
  out["image_refs"] = pair.image_refs;
  out["query"] = pair.query;
  out["prefix_text"] = pair.prefix_text;
  out["chosen_text"] = pair.chosen_text;
  out["rejected_text"] = pair.rejected_text;
  out["chosen_value"] = pair.chosen_value;
  out["rejected_value"] = pair.rejected_value;
  if (pair.rejected_prefix_text) out["rejected_prefix_text"] = *pair.rejected_prefix_text;
  return out;
}

PreferencePair pair_from_json(const Json& json) {
  PreferencePair pair;
  pair.pair_id = require_string(json, "pair_id");
  pair.instance_id = require_string(json, "instance_id");
  pair.tree_id = require_string(json, "tree_id");
  const auto& level = require_field(json, "level");
  if (!level.is_number_integer()) throw InputError("pair field 'level' must be an integer");
  pair.level = level.get<int>();
  pair.image_refs = string_list(json, "image_refs");
  pair.query = require_string(json, "query");
  pair.prefix_text = require_string(json, "prefix_text");
  pair.chosen_text = require_string(json, "chosen_text");
  pair.rejected_text = require_string(json, "rejected_text");
  for (auto [key, target] : {std::pair{"chosen_value", &pair.chosen_value},
                             std::pair{"rejected_value", &pair.rejected_value}}) {
    const auto& v = require_field(json, key);
    if (!v.is_number()) throw InputError(std::string("pair field '") + key + "' must be a number");
    *target = v.get<double>();
  }
  pair.rejected_prefix_text = optional_string(json, "rejected_prefix_text");
  return pair;
}

std::string dpo_jsonl(const std::vector<PreferencePair>& pairs) {
  std::set<std::string> seen;
  std::string out;
  for (const auto& pair : pairs) {
    if (!seen.insert(pair.pair_id).second) {
      throw InputError("duplicate pair_id '" + pair.pair_id + "'");
    }
    out += to_json(pair).dump();
    out.push_back('\n');
  }
  return out;
}

void emit_dpo(const std::vector<PreferencePair>& pairs, const std::string& path) {
  write_file_atomic(path, dpo_jsonl(pairs));
}

std::vector<PreferencePair> load_pairs(const std::string& path) {
  std::vector<PreferencePair> pairs;
  for (const auto& line : read_lines(path)) {
    pairs.push_back(pair_from_json(Json::parse(line)));
  }
  return pairs;
}

namespace {

InstanceRecord instance_of(const SftRecord& record) {
  InstanceRecord instance;
  instance.instance_id = record.instance_id;
  instance.image_refs = record.image_refs;
  instance.query = record.query;
  instance.category = record.category;
  instance.violation_type = record.violation_type;
  return instance;
}

}  // namespace

FilterResult quality_filter(const std::vector<SftRecord>& records,
                            const backend::Backend* judge,
                            const FilterConfig& config) {
  FilterResult result;
  for (const auto& record : records) {
    trace::ReasoningTrace parsed;
    try {
      parsed = trace::parse_trace(record.trace_text,
                                  judge ? judge->delimiters() : trace::Delimiters::defaults());
      if (!parsed.complete()) throw trace::TraceError(trace::TraceErrorCode::kUnbalanced,
                                                      "trace has fewer than four stages");
    } catch (const trace::TraceError& e) {
      result.rejected.push_back({record, "format", e.what()});
      continue;
    }
    if (should_refuse(record.category)) {
      if (!judge) throw ConfigError("quality filter needs a safety_judge backend");
      const auto& stages = parsed.stages();
      trace::ReasoningTrace prefix(
          std::vector<trace::Stage>(stages.begin(), stages.begin() + 3));
      backend::StepCandidate output{trace::StageKind::kOutput, stages[3].text, "",
                                    judge->name()};
      try {
        const auto score = backend::score_safety(*judge, instance_of(record), prefix, output);
        if (score.value < config.jailbreak_threshold) {
          result.rejected.push_back(
              {record, "jailbroken", "OUTPUT safety score " + Json(score.value).dump()});
          continue;
        }
      } catch (const backend::BackendError& e) {
        spdlog::warn("record '{}': judge failed: {}", record.instance_id, e.what());
        result.undetermined.push_back({record, "undetermined", e.what()});
        continue;
      }
    }
    auto kept = record;
    kept.quality_checked = true;
    result.kept.push_back(std::move(kept));
  }
  return result;
}

std::vector<SftRecord> merge_sft(const std::vector<SftRecord>& safety_records,
                                 const std::vector<SftRecord>& benign_records,
                                 std::uint64_t seed, SftManifest* manifest) {
  std::vector<SftRecord> merged;
  merged.reserve(safety_records.size() + benign_records.size());
  for (const auto* set : {&safety_records, &benign_records}) {
    for (const auto& record : *set) {
      if (!record.quality_checked) {
        throw InputError("record '" + record.instance_id + "' has not passed the quality filter");
      }
      merged.push_back(record);
    }
  }
  Rng rng(derive_seed(seed, "emit-sft"));
  seeded_shuffle(merged, rng);
  if (manifest) {
    SftManifest m;
    m.total = static_cast<std::int64_t>(merged.size());
    for (const auto& record : merged) {
      m.per_category[std::string(to_string(record.category))] += 1;
      (should_refuse(record.category) ? m.safety : m.benign) += 1;
    }
    if (m.benign == 0) m.warnings.push_back("imbalance: no benign records");
    if (m.safety == 0) m.warnings.push_back("imbalance: no safety records");
    for (const auto& w : m.warnings) spdlog::warn("emit-sft: {}", w);
    *manifest = std::move(m);
  }
  return merged;
}

std::string sft_jsonl(const std::vector<SftRecord>& records) {
  std::string out;
  for (const auto& record : records) {
    out += to_json(record).dump();
    out.push_back('\n');
  }
  return out;
}

SftManifest emit_sft(const std::vector<SftRecord>& safety_records,
                     const std::vector<SftRecord>& benign_records,
                     std::uint64_t seed, const std::string& path) {
  SftManifest manifest;
  const auto merged = merge_sft(safety_records, benign_records, seed, &manifest);
  write_file_atomic(path, sft_jsonl(merged));
  return manifest;
}

std::vector<SftRecord> load_sft(const std::string& path) {
  std::vector<SftRecord> records;
  for (const auto& line : read_lines(path)) {
    records.push_back(sft_from_json(Json::parse(line)));
  }
  return records;
}

Json to_json(const SftManifest& manifest) {
  Json out;
  out["total"] = manifest.total;
  out["safety"] = manifest.safety;
  out["benign"] = manifest.benign;
  out["per_category"] = Json::object();
  for (const auto& [category, count] : manifest.per_category) {
    out["per_category"][category] = count;
  }
  out["warnings"] = manifest.warnings;
  return out;
}

}  // namespace cotforge::prefgen
