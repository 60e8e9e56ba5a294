// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/tts.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <future>

#include "cotforge/util.hpp"

namespace cotforge::tts {

using backend::BackendError;
using backend::BackendErrorCode;
using trace::ReasoningTrace;
using trace::StageKind;

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kNone:
      return "none";
    case Strategy::kBeam:
      return "beam";
    case Strategy::kBestOfN:
      return "best_of_n";
  }
  return "unknown";
}

std::optional<Strategy> strategy_from_string(std::string_view name) {
  for (Strategy s : {Strategy::kNone, Strategy::kBeam, Strategy::kBestOfN}) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

void ScalingConfig::validate() const {
  if (beam_width < 1) throw ConfigError("scaling.beam_width must be positive");
  if (expansions < 1) throw ConfigError("scaling.expansions must be positive");
  if (n < 1) throw ConfigError("scaling.n must be positive");
}

std::int64_t ScalingConfig::comparisons_per_step() const {
  switch (strategy) {
    case Strategy::kNone:
      return 1;
    case Strategy::kBeam:
      return static_cast<std::int64_t>(beam_width) * expansions;
    case Strategy::kBestOfN:
      return n;
  }
  return 1;
}

namespace {

void require(const backend::BackendSet& backends, bool needs_reward) {
  if (!backends.policy) throw ConfigError("no policy backend configured");
  if (needs_reward && !backends.self_reward) {
    throw ConfigError("no self_reward backend configured");
  }
}

BudgetReport budget_for(const ScalingConfig& config) {
  BudgetReport report;
  report.comparisons_per_step = config.comparisons_per_step();
  report.multiplier = report.comparisons_per_step;
  return report;
}

std::uint64_t request_seed(const ScalingConfig& config, const InstanceRecord& instance,
                           StageKind kind, int stream) {
  return derive_seed(config.seed, "tts:" + instance.instance_id + ":" +
                                      std::string(trace::stage_name(kind)) + ":" +
                                      std::to_string(stream));
}

// One candidate at `sample`, or nullopt when it is malformed.
std::optional<backend::StepCandidate> single_step(const backend::Backend& policy,
                                                  const InstanceRecord& instance,
                                                  const ReasoningTrace& prefix, StageKind kind,
                                                  int sample, std::uint64_t seed,
                                                  BudgetReport& budget) {
  backend::GenerationOptions options;
  options.sample_offset = sample;
  options.request_seed = seed;
  try {
    auto result = backend::generate_steps(policy, instance, prefix, kind, 1, options);
    budget.total_policy_calls += result.requests;
    return std::move(result.candidates.front());
  } catch (const BackendError& e) {
    if (e.code() != BackendErrorCode::kCandidateStarvation) throw;
    budget.total_policy_calls += 1;
    return std::nullopt;
  }
}

}  // namespace

ScaledTrace run_none(const InstanceRecord& instance, const ScalingConfig& config,
                     const backend::BackendSet& backends) {
  config.validate();
  require(backends, false);
  ScaledTrace out;
  out.budget = budget_for(ScalingConfig{});
  for (StageKind kind : trace::kAllStages) {
    auto step = single_step(*backends.policy, instance, out.trace, kind, 0,
                            request_seed(config, instance, kind, 0), out.budget);
    if (!step) {
      throw BackendError(BackendErrorCode::kCandidateStarvation,
                         "instance '" + instance.instance_id + "': malformed " +
                             std::string(trace::stage_name(kind)) + " step");
    }
    out.trace.append({kind, step->text, std::nullopt});
  }
  return out;
}

namespace {

struct Beam {
  ReasoningTrace trace;
  double score = 0.0;  // last step score, or the running sum
};

struct Expansion {
  std::vector<Beam> beams;
  std::int64_t policy_calls = 0;
  std::int64_t reward_calls = 0;
  bool degraded = false;
};

Expansion expand_beam(const Beam& beam, int index, StageKind kind,
                      const InstanceRecord& instance, const ScalingConfig& config,
                      const backend::BackendSet& backends) {
  Expansion out;
  backend::GenerationOptions options;
  options.sample_offset = index * config.expansions;
  options.request_seed = request_seed(config, instance, kind, index);
  backend::GenerationResult generated;
  try {
    generated = backend::generate_steps(*backends.policy, instance, beam.trace, kind,
                                        config.expansions, options);
  } catch (const BackendError& e) {
    if (e.code() != BackendErrorCode::kCandidateStarvation) throw;
    out.policy_calls = config.expansions;
    out.degraded = true;
    return out;
  }
  out.policy_calls = generated.requests;
  out.degraded = generated.malformed > 0;
  for (const auto& candidate : generated.candidates) {
    const auto score = backend::self_reward(*backends.self_reward, instance, beam.trace, candidate);
    ++out.reward_calls;
    Beam next;
    next.trace = beam.trace;
    next.trace.append({kind, candidate.text, std::nullopt});
    next.score = config.cumulative ? beam.score + score.value : score.value;
    out.beams.push_back(std::move(next));
  }
  return out;
}

}  // namespace

ScaledTrace run_beam(const InstanceRecord& instance, const ScalingConfig& config,
                     const backend::BackendSet& backends) {
  config.validate();
  require(backends, true);
  ScaledTrace out;
  auto beam_config = config;
  beam_config.strategy = Strategy::kBeam;
  out.budget = budget_for(beam_config);

  std::vector<Beam> beams(static_cast<std::size_t>(config.beam_width));
  for (StageKind kind : trace::kAllStages) {
    std::vector<Expansion> expansions(beams.size());
    if (config.parallel && beams.size() > 1) {
      std::vector<std::future<Expansion>> futures;
      for (std::size_t b = 0; b < beams.size(); ++b) {
        futures.push_back(std::async(std::launch::async, expand_beam, std::cref(beams[b]),
                                     static_cast<int>(b), kind, std::cref(instance),
                                     std::cref(config), std::cref(backends)));
      }
      // get() in order; the first failure propagates after all finish.
      std::exception_ptr error;
      for (std::size_t b = 0; b < beams.size(); ++b) {
        try {
          expansions[b] = futures[b].get();
        } catch (...) {
          if (!error) error = std::current_exception();
        }
      }
      if (error) std::rethrow_exception(error);
    } else {
      for (std::size_t b = 0; b < beams.size(); ++b) {
        expansions[b] = expand_beam(beams[b], static_cast<int>(b), kind, instance, config, backends);
      }
    }

    std::vector<Beam> pool;
    for (auto& e : expansions) {
      out.budget.total_policy_calls += e.policy_calls;
      out.budget.total_reward_calls += e.reward_calls;
      out.budget.degraded = out.budget.degraded || e.degraded;
      for (auto& b : e.beams) pool.push_back(std::move(b));
    }
    if (pool.empty()) {
      throw BackendError(BackendErrorCode::kCandidateStarvation,
                         "instance '" + instance.instance_id + "': no parseable " +
                             std::string(trace::stage_name(kind)) + " candidate in any beam");
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Beam& a, const Beam& b) { return a.score > b.score; });
    if (pool.size() > static_cast<std::size_t>(config.beam_width)) {
      pool.resize(static_cast<std::size_t>(config.beam_width));
    }
    beams = std::move(pool);
  }
  if (out.budget.degraded) {
    spdlog::warn("instance '{}': beam search continued past malformed candidates",
                 instance.instance_id);
  }
  out.trace = beams.front().trace;
  out.score = beams.front().score;
  return out;
}

ScaledTrace run_best_of_n(const InstanceRecord& instance, const ScalingConfig& config,
                          const backend::BackendSet& backends) {
  config.validate();
  require(backends, true);
  ScaledTrace out;
  auto bon_config = config;
  bon_config.strategy = Strategy::kBestOfN;
  out.budget = budget_for(bon_config);

  std::optional<std::size_t> best;
  double best_score = 0.0;
  std::vector<ReasoningTrace> traces;
  for (int j = 0; j < config.n; ++j) {
    ReasoningTrace current;
    std::optional<backend::StepCandidate> output;
    bool malformed = false;
    for (StageKind kind : trace::kAllStages) {
      auto step = single_step(*backends.policy, instance, current, kind, j,
                              request_seed(config, instance, kind, j), out.budget);
      if (!step) {
        malformed = true;
        break;
      }
      if (kind == StageKind::kOutput) {
        output = step;
      } else {
        current.append({kind, step->text, std::nullopt});
      }
    }
    if (malformed) {
      out.budget.degraded = true;
      continue;
    }
    const auto score = backend::self_reward(*backends.self_reward, instance, current, *output);
    out.budget.total_reward_calls += 1;
    current.append({StageKind::kOutput, output->text, std::nullopt});
    if (!best || score.value > best_score) {
      best = traces.size();
      best_score = score.value;
    }
    traces.push_back(std::move(current));
  }
  if (!best) {
    throw BackendError(BackendErrorCode::kCandidateStarvation,
                       "instance '" + instance.instance_id + "': all " +
                           std::to_string(config.n) + " traces were malformed");
  }
  out.trace = traces[*best];
  out.score = best_score;
  return out;
}

ScaledTrace run(const InstanceRecord& instance, const ScalingConfig& config,
                const backend::BackendSet& backends) {
  switch (config.strategy) {
    case Strategy::kNone:
      return run_none(instance, config, backends);
    case Strategy::kBeam:
      return run_beam(instance, config, backends);
    case Strategy::kBestOfN:
      return run_best_of_n(instance, config, backends);
  }
  throw InternalError("unknown strategy");
}

Json to_json(const BudgetReport& report) {
  Json out;
  out["comparisons_per_step"] = report.comparisons_per_step;
  out["multiplier"] = report.multiplier;
  out["total_policy_calls"] = report.total_policy_calls;
  out["total_reward_calls"] = report.total_reward_calls;
  out["degraded"] = report.degraded;
  return out;
}

}  // namespace cotforge::tts
