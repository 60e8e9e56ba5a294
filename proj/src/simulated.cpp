// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/simulated.hpp"

#include <cctype>

#include "cotforge/util.hpp"

namespace cotforge::backend {

ScenarioTable load_scenario(const std::string& path) {
  ScenarioTable table;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + e.what());
    }
    if (!record.is_object() || !record.contains("output_text") ||
        !record["output_text"].is_string()) {
      throw InputError(where + "scenario record needs a string output_text");
    }
    std::string digest;
    if (record.contains("input_digest")) {
      if (!record["input_digest"].is_string()) {
        throw InputError(where + "input_digest must be a string");
      }
      digest = record["input_digest"].get<std::string>();
    } else if (record.contains("input")) {
      digest = input_digest(record["input"]);
    } else {
      throw InputError(where + "scenario record needs input_digest or input");
    }
    const auto output = record["output_text"].get<std::string>();
    auto [it, inserted] = table.emplace(digest, output);
    if (!inserted && it->second != output) {
      throw InputError(where + "conflicting outputs for digest " + digest);
    }
  }
  return table;
}

SimulatedTransport::SimulatedTransport(BackendProfile profile,
                                       trace::Delimiters delimiters,
                                       ScenarioTable scenario)
    : profile_(std::move(profile)),
      delimiters_(std::move(delimiters)),
      scenario_(std::move(scenario)) {
  if (!profile_.decoding.seed) {
    throw ConfigError("simulated backend requires a seed");
  }
}

std::string SimulatedTransport::complete(const Request& request) {
  const std::string digest = input_digest(request.inputs);
  if (auto it = scenario_.find(digest); it != scenario_.end()) {
    return it->second;
  }
  if (profile_.simulation.strict) {
    throw BackendError(BackendErrorCode::kTransport,
                       "no scenario entry for " + request.inputs.dump() +
                           " (digest " + digest + ")");
  }
  return fallback(request, splitmix64(*profile_.decoding.seed ^ digest64(digest)));
}

namespace {

bool contains_any(const std::string& text, const std::vector<std::string>& tokens) {
  for (const auto& token : tokens) {
    if (!token.empty() && text.find(token) != std::string::npos) return true;
  }
  return false;
}

std::string format_score(double value) {
  return "score: " + nlohmann::json(value).dump();
}

std::string hex(std::uint64_t value, int digits) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace

std::string SimulatedTransport::fallback(const Request& request,
                                         std::uint64_t mix) const {
  const auto& inputs = request.inputs;
  const std::string family = inputs.value("family", "");
  const auto& sim = profile_.simulation;
  const double hashed = static_cast<double>(mix % 1001) / 1000.0;

  if (family == "policy") {
    const auto kind_name = inputs.value("kind", "");
    const auto kind = trace::stage_from_name(kind_name);
    if (!kind) throw InternalError("simulated policy: unknown kind " + kind_name);
    std::string body;
    if (*kind == trace::StageKind::kOutput) {
      body = (mix % 3 == 0)
                 ? "I cannot help with this request. [" + hex(mix, 12) + "]"
                 : "Here is a direct answer. [" + hex(mix, 12) + "]";
    } else {
      std::string lower(kind_name);
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      body = lower + " step " + hex(mix, 12);
    }
    return delimiters_.open(*kind) + body + delimiters_.close(*kind);
  }

  if (family == "safety") {
    if (sim.fallback == Fallback::kHashed) return format_score(hashed);
    const auto step = inputs.value("step", "");
    if (contains_any(step, sim.flag_tokens)) return format_score(0.0);
    if (contains_any(step, sim.reward_tokens)) return format_score(1.0);
    return format_score(sim.default_score);
  }

  if (family == "helpfulness") {
    switch (sim.fallback) {
      case Fallback::kHashed:
        return format_score(hashed);
      case Fallback::kKeyword: {
        const auto step = inputs.value("step", "");
        if (contains_any(step, sim.flag_tokens)) return format_score(0.0);
        if (contains_any(step, sim.reward_tokens)) return format_score(1.0);
        return format_score(sim.default_score);
      }
      case Fallback::kAuto:
      case Fallback::kLcs:
        return format_score(
            lcs_ratio(inputs.value("step", ""), inputs.value("ground_truth", "")));
    }
  }

  throw InternalError("simulated backend: unsupported request family '" +
                      family + "'");
}

}  // namespace cotforge::backend
