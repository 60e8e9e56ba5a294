// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/app.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "cotforge/curate.hpp"
#include "cotforge/eval.hpp"
#include "cotforge/mcts.hpp"
#include "cotforge/prefgen.hpp"
#include "cotforge/tts.hpp"
#include "cotforge/util.hpp"

namespace cotforge::app {

namespace fs = std::filesystem;
using config::RunConfig;

namespace {

std::string dump(const Json& json) { return json.dump(2) + "\n"; }

void write_json(const std::string& path, const Json& json) {
  write_file_atomic(path, dump(json));
}

Json error_json(const Error& e) {
  static constexpr const char* kNames[] = {"config", "input", "backend", "internal"};
  return {{"category", kNames[static_cast<int>(e.category())]}, {"message", e.what()}};
}

// Manifest header shared by every artifact.
Json header(const RunConfig& config, const std::string& command) {
  Json out;
  out["command"] = command;
  out["config_digest"] = config.digest();
  out["seed"] = config.seed;
  return out;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not configured");
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

std::vector<InstanceRecord> load_checked_instances(const RunConfig& config) {
  const auto path = config.instances_path();
  require_file(path, "instances file");
  auto instances = load_instances(path);
  std::set<std::string> ids;
  for (const auto& instance : instances) {
    validate_instance(instance, &config.taxonomy);
    if (!ids.insert(instance.instance_id).second) {
      throw InputError(path + ": duplicate instance_id '" + instance.instance_id + "'");
    }
  }
  return instances;
}

std::string checkpoint_path(const RunConfig& config, const std::string& id) {
  return (fs::path(config.checkpoints_dir()) / checkpoint_name(id)).string();
}

bool finished(const mcts::SearchTree& tree, const mcts::SearchConfig& search) {
  return tree.exhausted || tree.iterations_done >= search.max_iterations;
}

std::map<std::string, std::int64_t> count_categories(
    const std::vector<InstanceRecord>& records) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& r : records) ++counts[std::string(to_string(r.category))];
  return counts;
}

Json skipped_json(const std::vector<curate::Skipped>& skipped) {
  Json out = Json::array();
  for (const auto& s : skipped) {
    out.push_back({{"instance_id", s.instance_id}, {"kind", s.kind}, {"reason", s.reason}});
  }
  return out;
}

}  // namespace

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig:
      return kExitConfig;
    case ErrorCategory::kInput:
      return kExitInput;
    case ErrorCategory::kBackend:
      return kExitBackend;
    case ErrorCategory::kInternal:
      return kExitInternal;
  }
  return kExitInternal;
}

void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& thread : pool) thread.join();
  if (first_error) std::rethrow_exception(first_error);
}

backend::BackendSet make_backends(const RunConfig& config, bool policy, bool safety_judge,
                                  bool reference_scorer, bool self_reward) {
  auto make = [&](backend::Role role) -> std::shared_ptr<const backend::Backend> {
    return backend::Backend::create(config.profile(role), config.delimiters, config.taxonomy);
  };
  backend::BackendSet set;
  if (policy) set.policy = make(backend::Role::kPolicy);
  if (safety_judge) set.safety_judge = make(backend::Role::kSafetyJudge);
  if (reference_scorer) set.reference_scorer = make(backend::Role::kReferenceScorer);
  if (self_reward) set.self_reward = make(backend::Role::kSelfReward);
  return set;
}

std::string checkpoint_name(const std::string& instance_id) {
  bool plain = !instance_id.empty() && instance_id.front() != '.';
  for (char c : instance_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    if (!ok) plain = false;
  }
  if (plain) return instance_id + ".ckpt.json";
  // Ids that are unsafe as file names get a stable hashed name.
  std::string safe;
  for (char c : instance_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_';
    safe.push_back(ok ? c : '_');
  }
  return safe.substr(0, 64) + "-" + sha256_hex(instance_id).substr(0, 12) + ".ckpt.json";
}

// ---------------------------------------------------------------- curate

Outcome cmd_curate(const RunConfig& config) {
  require_file(config.paths.input, "paths.input");
  if (!config.paths.benign_input.empty()) {
    require_file(config.paths.benign_input, "paths.benign_input");
  }

  const auto corpus = curate::ingest_file(config.paths.input, config.taxonomy);

  curate::SampleReport sample_report;
  const auto sampled = curate::stratified_sample(
      corpus, config.curate.per_category, derive_seed(config.seed, "curate:sample"),
      &sample_report, config.curate.required_strata);

  const auto synthesis = curate::synthesize_combination_unsafe(
      sampled, config.curate.transforms, derive_seed(config.seed, "curate:synthesize"),
      config.curate.synthesis);

  curate::BenignResult benign;
  if (!config.paths.benign_input.empty()) {
    std::vector<Json> external;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(config.paths.benign_input)) {
      ++line_no;
      try {
        external.push_back(Json::parse(line));
      } catch (const Json::exception& e) {
        throw InputError(config.paths.benign_input + ":" + std::to_string(line_no) + ": " +
                         e.what());
      }
    }
    benign = curate::adapt_benign(external, derive_seed(config.seed, "curate:benign"),
                                  config.delimiters);
  }

  std::vector<InstanceRecord> instances = sampled;
  instances.insert(instances.end(), synthesis.instances.begin(), synthesis.instances.end());
  std::vector<SftRecord> benign_sft;
  for (const auto& adapted : benign.records) {
    instances.push_back(adapted.instance);
    benign_sft.push_back(adapted.sft);
  }
  std::set<std::string> ids;
  for (const auto& instance : instances) {
    if (!ids.insert(instance.instance_id).second) {
      throw InputError("duplicate instance_id '" + instance.instance_id +
                       "' after synthesis and benign adaptation");
    }
  }

  save_instances(config.instances_path(), instances);
  write_file_atomic(config.benign_sft_path(), prefgen::sft_jsonl(benign_sft));

  Json report = header(config, "curate");
  report["input_records"] = corpus.size();
  report["input_per_category"] = count_categories(corpus);
  report["instances"] = instances.size();
  report["per_category"] = count_categories(instances);
  Json strata = Json::object();
  for (const auto& [stratum, available] : sample_report.available) {
    const auto it = sample_report.selected.find(stratum);
    strata[stratum] = {{"available", available},
                       {"selected", it == sample_report.selected.end() ? 0 : it->second}};
  }
  report["strata"] = strata;
  std::map<std::string, std::int64_t> per_kind;
  for (const auto& instance : synthesis.instances) {
    ++per_kind[std::string(to_string(instance.transform_meta->kind))];
  }
  report["synthesized"] = per_kind;
  report["synthesis_skipped"] = skipped_json(synthesis.skipped);
  report["benign_adapted"] = benign.records.size();
  report["benign_rejected"] = skipped_json(benign.rejected);
  report["warnings"] = sample_report.warnings;
  write_json(config.output_file("curate_manifest.json"), report);
  return {report, std::nullopt};
}

// ---------------------------------------------------------------- search

Outcome cmd_search(const RunConfig& config, const SearchOptions& options) {
  const auto instances = load_checked_instances(config);
  const auto backends = make_backends(config, true, true, true, false);
  const auto digest = config.search_digest();
  fs::create_directories(config.checkpoints_dir());

  std::vector<Json> entries(instances.size());
  std::vector<std::optional<ErrorCategory>> failures(instances.size());

  parallel_for(instances.size(), config.workers, [&](std::size_t i) {
    const auto& instance = instances[i];
    const auto path = checkpoint_path(config, instance.instance_id);
    Json entry;
    entry["instance_id"] = instance.instance_id;
    entry["checkpoint"] = checkpoint_name(instance.instance_id);
    try {
      mcts::SearchTree tree;
      bool resumed = false;
      if (fs::exists(path)) {
        tree = mcts::restore(read_file(path));
        if (tree.config_digest != digest) {
          throw ConfigError("checkpoint " + path +
                            " was written under a different search configuration");
        }
        if (!(tree.instance == instance)) {
          throw InputError("checkpoint " + path + " belongs to a different instance record");
        }
        resumed = true;
      } else {
        tree = mcts::SearchTree::create(instance, config.search, digest);
      }
      mcts::RunOptions run;
      run.stop_after = options.stop_after;
      run.on_iteration = [&](const mcts::SearchTree& t) {
        if (t.iterations_done % config.checkpoint_every == 0) {
          write_file_atomic(path, mcts::checkpoint(t));
        }
      };
      if (!finished(tree, config.search)) mcts::run_search(tree, config.search, backends, run);
      write_file_atomic(path, mcts::checkpoint(tree));

      entry["status"] = tree.exhausted ? "exhausted"
                        : finished(tree, config.search) ? "finished"
                                                        : "interrupted";
      entry["resumed"] = resumed;
      entry["iterations"] = tree.iterations_done;
      entry["nodes"] = tree.nodes.size();
      entry["evaluations"] = tree.stats.evaluations;
      entry["scoring_errors"] = tree.stats.scoring_errors;
      entry["starved_nodes"] = tree.stats.starved_nodes;
      entry["malformed_candidates"] = tree.stats.malformed_candidates;
      entry["duplicate_candidates"] = tree.stats.duplicate_candidates;
    } catch (const Error& e) {
      // One tree's failure never stops the others; the last periodic
      // checkpoint (if any) stays valid for a later resume.
      spdlog::error("search '{}' failed: {}", instance.instance_id, e.what());
      entry["status"] = "failed";
      entry["error"] = error_json(e);
      failures[i] = e.category();
    }
    entries[i] = std::move(entry);
  });

  Json report = header(config, "search");
  report["search_digest"] = digest;
  report["trees"] = entries;
  std::map<std::string, std::int64_t> statuses;
  for (const auto& e : entries) ++statuses[e["status"].get<std::string>()];
  report["status_counts"] = statuses;
  write_json(config.output_file("search_report.json"), report);

  Outcome outcome{report, std::nullopt};
  for (const auto& f : failures) {
    if (f) {
      outcome.failure = f;
      break;
    }
  }
  return outcome;
}

// ---------------------------------------------------------------- extract

Outcome cmd_extract(const RunConfig& config) {
  const auto instances = load_checked_instances(config);
  const auto digest = config.search_digest();
  std::vector<prefgen::PreferencePair> pairs;
  std::map<std::string, std::int64_t> per_category;
  std::map<std::string, std::int64_t> per_level;
  Json per_tree = Json::object();
  for (const auto& instance : instances) {
    const auto path = checkpoint_path(config, instance.instance_id);
    if (!fs::exists(path)) throw InputError("no checkpoint for '" + instance.instance_id + "'");
    const auto tree = mcts::restore(read_file(path));
    if (tree.config_digest != digest) {
      throw ConfigError("checkpoint " + path +
                        " was written under a different search configuration");
    }
    if (!finished(tree, config.search)) {
      throw InputError("search for '" + instance.instance_id +
                       "' is not finished; resume it before extracting");
    }
    auto tree_pairs = prefgen::extract_pairs(tree, config.extraction);
    per_tree[instance.instance_id] = tree_pairs.size();
    per_category[std::string(to_string(instance.category))] +=
        static_cast<std::int64_t>(tree_pairs.size());
    for (const auto& p : tree_pairs) ++per_level[std::to_string(p.level)];
    pairs.insert(pairs.end(), tree_pairs.begin(), tree_pairs.end());
  }
  prefgen::emit_dpo(pairs, config.output_file("dpo_pairs.jsonl"));

  Json report = header(config, "extract");
  report["epsilon"] = config.extraction.epsilon;
  report["theta"] = config.extraction.theta;
  report["cross_parent"] = config.extraction.cross_parent;
  report["pairs"] = pairs.size();
  report["per_category"] = per_category;
  report["per_level"] = per_level;
  report["per_tree"] = per_tree;
  write_json(config.output_file("dpo_pairs.manifest.json"), report);
  return {report, std::nullopt};
}

// ---------------------------------------------------------------- emit-sft

Outcome cmd_emit_sft(const RunConfig& config) {
  const auto instances = load_checked_instances(config);
  const bool benign_configured = !config.paths.benign_sft.empty();
  if (benign_configured) require_file(config.paths.benign_sft, "paths.benign_sft");
  const auto backends = make_backends(config, true, true, false, false);

  std::vector<InstanceRecord> unsafe;
  for (const auto& instance : instances) {
    if (should_refuse(instance.category)) unsafe.push_back(instance);
  }

  // Greedy (single-sample) generation for every should-refuse instance.
  tts::ScalingConfig greedy;
  greedy.strategy = tts::Strategy::kNone;
  greedy.seed = derive_seed(config.seed, "emit-sft:generate");
  std::vector<std::optional<SftRecord>> generated(unsafe.size());
  std::vector<std::optional<std::string>> generation_errors(unsafe.size());
  parallel_for(unsafe.size(), config.workers, [&](std::size_t i) {
    const auto& instance = unsafe[i];
    try {
      const auto result = tts::run_none(instance, greedy, backends);
      SftRecord record;
      record.instance_id = instance.instance_id;
      record.image_refs = instance.image_refs;
      record.query = instance.query;
      record.category = instance.category;
      record.violation_type = instance.violation_type;
      record.trace_text = trace::serialize_trace(result.trace, config.delimiters);
      generated[i] = std::move(record);
    } catch (const backend::BackendError& e) {
      if (e.code() == backend::BackendErrorCode::kTransport) throw;
      generation_errors[i] = e.what();
    }
  });

  std::vector<SftRecord> safety_records;
  Json rejected = Json::array();
  for (std::size_t i = 0; i < unsafe.size(); ++i) {
    if (generated[i]) {
      safety_records.push_back(*generated[i]);
    } else {
      rejected.push_back({{"instance_id", unsafe[i].instance_id},
                          {"reason", "generation"},
                          {"detail", *generation_errors[i]}});
    }
  }

  std::vector<SftRecord> benign_records;
  std::vector<std::string> warnings;
  const auto benign_path = config.benign_sft_path();
  if (fs::exists(benign_path)) {
    benign_records = prefgen::load_sft(benign_path);
  } else {
    warnings.push_back("no benign SFT file at " + benign_path);
  }

  const auto safety_checked =
      prefgen::quality_filter(safety_records, backends.safety_judge.get(), config.sft);
  const auto benign_checked =
      prefgen::quality_filter(benign_records, backends.safety_judge.get(), config.sft);

  Json undetermined = Json::array();
  for (const auto* result : {&safety_checked, &benign_checked}) {
    for (const auto& r : result->rejected) {
      rejected.push_back({{"instance_id", r.record.instance_id},
                          {"reason", r.reason},
                          {"detail", r.detail}});
    }
    for (const auto& r : result->undetermined) {
      undetermined.push_back({{"instance_id", r.record.instance_id}, {"detail", r.detail}});
    }
  }

  const auto manifest = prefgen::emit_sft(safety_checked.kept, benign_checked.kept,
                                          config.seed, config.output_file("cot_sft.jsonl"));

  Json report = header(config, "emit-sft");
  const Json manifest_json = prefgen::to_json(manifest);
  for (const auto& [key, value] : manifest_json.items()) report[key] = value;
  for (const auto& w : warnings) report["warnings"].push_back(w);
  report["rejected"] = rejected;
  report["undetermined"] = undetermined;
  write_json(config.output_file("cot_sft.manifest.json"), report);
  return {report, std::nullopt};
}

// ---------------------------------------------------------------- infer

Outcome cmd_infer(const RunConfig& config) {
  const auto instances = load_checked_instances(config);
  const bool needs_reward = config.scaling.strategy != tts::Strategy::kNone;
  const auto backends = make_backends(config, true, false, false, needs_reward);

  std::vector<std::optional<Json>> lines(instances.size());
  std::vector<Json> errors(instances.size());
  std::vector<std::optional<ErrorCategory>> failures(instances.size());
  parallel_for(instances.size(), config.workers, [&](std::size_t i) {
    const auto& instance = instances[i];
    try {
      const auto result = tts::run(instance, config.scaling, backends);
      Json out;
      out["instance_id"] = instance.instance_id;
      out["category"] = to_string(instance.category);
      out["violation_type"] =
          instance.violation_type ? Json(*instance.violation_type) : Json(nullptr);
      out["query"] = instance.query;
      out["image_refs"] = instance.image_refs;
      out["strategy"] = to_string(config.scaling.strategy);
      out["response_text"] = trace::serialize_trace(result.trace, config.delimiters);
      out["score"] = result.score ? Json(*result.score) : Json(nullptr);
      out["budget"] = tts::to_json(result.budget);
      lines[i] = std::move(out);
    } catch (const Error& e) {
      spdlog::error("inference for '{}' failed: {}", instance.instance_id, e.what());
      errors[i] = error_json(e);
      failures[i] = e.category();
    }
  });

  std::string jsonl;
  std::int64_t policy_calls = 0;
  std::int64_t reward_calls = 0;
  std::int64_t degraded = 0;
  Json failed = Json::array();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!lines[i]) {
      failed.push_back({{"instance_id", instances[i].instance_id}, {"error", errors[i]}});
      continue;
    }
    const auto& budget = (*lines[i])["budget"];
    policy_calls += budget["total_policy_calls"].get<std::int64_t>();
    reward_calls += budget["total_reward_calls"].get<std::int64_t>();
    if (budget["degraded"].get<bool>()) ++degraded;
    jsonl += lines[i]->dump() + "\n";
  }
  write_file_atomic(config.output_file("inference.jsonl"), jsonl);

  Json report = header(config, "infer");
  report["strategy"] = to_string(config.scaling.strategy);
  report["beam_width"] = config.scaling.beam_width;
  report["expansions"] = config.scaling.expansions;
  report["n"] = config.scaling.n;
  report["cumulative"] = config.scaling.cumulative;
  report["multiplier"] = config.scaling.comparisons_per_step();
  report["traces"] = instances.size() - failed.size();
  report["total_policy_calls"] = policy_calls;
  report["total_reward_calls"] = reward_calls;
  report["degraded"] = degraded;
  report["failed"] = failed;
  write_json(config.output_file("inference.manifest.json"), report);

  Outcome outcome{report, std::nullopt};
  for (const auto& f : failures) {
    if (f) {
      outcome.failure = f;
      break;
    }
  }
  return outcome;
}

// ---------------------------------------------------------------- eval

Outcome cmd_eval(const RunConfig& config) {
  const auto path = config.responses_path();
  require_file(path, "responses file");
  const auto responses = eval::load_responses(path);
  const auto backends = make_backends(config, false, true, false, false);
  eval::JudgeConfig judge_config;
  judge_config.unsafe_below = config.unsafe_below;
  const auto judged = eval::judge_responses(responses, *backends.safety_judge, judge_config);
  const auto table = eval::compute_asr(judged);
  const auto rendered = eval::render_table(table);

  Json report = header(config, "eval");
  report["responses"] = judged.size();
  const Json table_json = eval::to_json(table);
  for (const auto& [key, value] : table_json.items()) report[key] = value;
  Json records = Json::array();
  for (const auto& r : judged) records.push_back(eval::to_json(r));
  report["records"] = records;
  write_json(config.output_file("eval_report.json"), report);
  write_file_atomic(config.output_file("eval_table.txt"), rendered);

  Json returned = report;
  returned["table"] = rendered;
  return {returned, std::nullopt};
}

}  // namespace cotforge::app
