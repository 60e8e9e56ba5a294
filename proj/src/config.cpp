// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/config.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "cotforge/util.hpp"

namespace cotforge::config {

namespace fs = std::filesystem;
using backend::Role;

namespace {

constexpr Role kRoles[] = {Role::kPolicy, Role::kSafetyJudge, Role::kReferenceScorer,
                           Role::kSelfReward};

// Reads one JSON object and remembers which keys were consumed, so that
// leftovers (typos) can be reported with their full path.
class Reader {
 public:
  Reader(const Json& json, std::string where) : json_(json), where_(std::move(where)) {
    if (!json_.is_object()) throw ConfigError(label() + " must be an object");
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = json_.find(key);
    if (it == json_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::string path(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  void read(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key) + " must be a boolean");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(path(key) + " must be an integer");
      const auto value = v->get<std::int64_t>();
      if (value < std::numeric_limits<int>::min() || value > std::numeric_limits<int>::max()) {
        throw ConfigError(path(key) + " is out of range");
      }
      out = static_cast<int>(value);
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const Json* v = find(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      } else {
        throw ConfigError(path(key) + " must be a non-negative integer");
      }
    }
  }

  void read(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key) + " must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(path(key) + " must be finite");
    }
  }

  void read(const std::string& key, std::vector<std::string>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path(key) + " must be an array of strings");
      out.clear();
      for (const auto& item : *v) {
        if (!item.is_string()) throw ConfigError(path(key) + " must be an array of strings");
        out.push_back(item.get<std::string>());
      }
    }
  }

  std::optional<Reader> object(const std::string& key) {
    if (const Json* v = find(key)) return Reader(*v, path(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [key, value] : json_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : where_; }

  const Json& json_;
  std::string where_;
  std::set<std::string> seen_;
};

std::optional<backend::Fallback> fallback_from_string(std::string_view name) {
  for (auto f : {backend::Fallback::kAuto, backend::Fallback::kKeyword,
                 backend::Fallback::kHashed, backend::Fallback::kLcs}) {
    if (to_string(f) == name) return f;
  }
  return std::nullopt;
}

backend::BackendProfile default_profile(Role role, std::uint64_t seed) {
  backend::BackendProfile profile;
  profile.role = role;
  profile.prompt_template = backend::default_template(role);
  profile.decoding.seed = derive_seed(seed, "backend:" + std::string(to_string(role)));
  return profile;
}

void read_profile(Reader& r, backend::BackendProfile& p) {
  r.read("endpoint", p.endpoint);
  r.read("prompt_template", p.prompt_template);
  if (auto d = r.object("decoding")) {
    d->read("temperature", p.decoding.temperature);
    d->read("max_length", p.decoding.max_length);
    std::uint64_t seed = p.decoding.seed.value_or(0);
    if (d->find("seed")) {
      d->read("seed", seed);
      p.decoding.seed = seed;
    }
    d->finish();
  }
  if (auto retry = r.object("retry")) {
    retry->read("max_attempts", p.retry.max_attempts);
    retry->read("backoff_initial_ms", p.retry.backoff_initial_ms);
    retry->read("backoff_factor", p.retry.backoff_factor);
    retry->finish();
  }
  r.read("api_key_env", p.api_key_env);
  r.read("max_in_flight", p.max_in_flight);
  r.read("timeout_ms", p.timeout_ms);
  r.read("score_pattern", p.score_pattern);
  if (auto s = r.object("simulation")) {
    s->read("scenario", p.simulation.scenario_path);
    s->read("strict", p.simulation.strict);
    std::string fallback(to_string(p.simulation.fallback));
    s->read("fallback", fallback);
    auto parsed = fallback_from_string(fallback);
    if (!parsed) throw ConfigError(s->path("fallback") + ": unknown mode '" + fallback + "'");
    p.simulation.fallback = *parsed;
    s->read("flag_tokens", p.simulation.flag_tokens);
    s->read("reward_tokens", p.simulation.reward_tokens);
    s->read("default_score", p.simulation.default_score);
    s->finish();
  }
  r.finish();
}

Json profile_json(const backend::BackendProfile& p) {
  Json out;
  out["endpoint"] = p.endpoint;
  out["prompt_template"] = p.prompt_template;
  out["decoding"] = {{"temperature", p.decoding.temperature},
                     {"max_length", p.decoding.max_length},
                     {"seed", p.decoding.seed ? Json(*p.decoding.seed) : Json(nullptr)}};
  out["retry"] = {{"max_attempts", p.retry.max_attempts},
                  {"backoff_initial_ms", p.retry.backoff_initial_ms},
                  {"backoff_factor", p.retry.backoff_factor}};
  out["api_key_env"] = p.api_key_env;
  out["max_in_flight"] = p.max_in_flight;
  out["timeout_ms"] = p.timeout_ms;
  out["score_pattern"] = p.score_pattern;
  out["simulation"] = {{"scenario", p.simulation.scenario_path},
                       {"strict", p.simulation.strict},
                       {"fallback", to_string(p.simulation.fallback)},
                       {"flag_tokens", p.simulation.flag_tokens},
                       {"reward_tokens", p.simulation.reward_tokens},
                       {"default_score", p.simulation.default_score}};
  return out;
}

std::string resolve(const fs::path& base, const std::string& value) {
  if (value.empty()) return value;
  fs::path p(value);
  if (p.is_absolute()) return value;
  return (base / p).lexically_normal().string();
}

// Rewrites relative paths of a file document against the file's directory.
void resolve_paths(Json& doc, const fs::path& base) {
  if (!doc.is_object()) return;
  if (auto it = doc.find("paths"); it != doc.end() && it->is_object()) {
    for (auto& [key, value] : it->items()) {
      if (value.is_string()) value = resolve(base, value.get<std::string>());
    }
  }
  if (auto it = doc.find("backends"); it != doc.end() && it->is_object()) {
    for (auto& [role, profile] : it->items()) {
      if (!profile.is_object()) continue;
      auto sim = profile.find("simulation");
      if (sim == profile.end() || !sim->is_object()) continue;
      auto scenario = sim->find("scenario");
      if (scenario != sim->end() && scenario->is_string()) {
        *scenario = resolve(base, scenario->get<std::string>());
      }
    }
  }
}

void apply_override(Json& doc, const Override& entry) {
  const auto& [key, raw] = entry;
  if (key.empty()) throw ConfigError("empty override key");
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::exception&) {
    value = raw;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + key + "'");
    if (!node->is_object()) throw ConfigError("override '" + key + "' crosses a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

std::string canonical_digest(const Json& doc) {
  // Sorted keys make the digest independent of key order in the file.
  return sha256_hex(nlohmann::json::parse(doc.dump()).dump());
}

Json digest_document(const Json& full) {
  Json doc = full;
  doc.erase("paths");
  doc.erase("workers");
  doc["search"].erase("parallel_evaluation");
  doc["search"].erase("checkpoint_every");
  doc["scaling"].erase("parallel");
  for (auto& [role, profile] : doc["backends"].items()) {
    auto& sim = profile["simulation"];
    const auto scenario = sim["scenario"].get<std::string>();
    sim.erase("scenario");
    if (!scenario.empty()) {
      try {
        sim["scenario_sha256"] = sha256_hex(read_file(scenario));
      } catch (const InputError&) {
        throw ConfigError("backends." + role + ": scenario file not found: " + scenario);
      }
    }
  }
  return doc;
}

}  // namespace

std::string_view to_string(backend::Fallback fallback) {
  switch (fallback) {
    case backend::Fallback::kAuto:
      return "auto";
    case backend::Fallback::kKeyword:
      return "keyword";
    case backend::Fallback::kHashed:
      return "hashed";
    case backend::Fallback::kLcs:
      return "lcs";
  }
  return "auto";
}

bool CurateSettings::operator==(const CurateSettings& other) const {
  return per_category == other.per_category && required_strata == other.required_strata &&
         transforms == other.transforms &&
         synthesis.carrier_template == other.synthesis.carrier_template &&
         synthesis.word_map == other.synthesis.word_map;
}

std::string RunConfig::output_file(const std::string& name) const {
  return (fs::path(paths.output) / name).string();
}

std::string RunConfig::instances_path() const {
  return paths.instances.empty() ? output_file("instances.jsonl") : paths.instances;
}

std::string RunConfig::benign_sft_path() const {
  return paths.benign_sft.empty() ? output_file("benign_sft.jsonl") : paths.benign_sft;
}

std::string RunConfig::responses_path() const {
  return paths.responses.empty() ? output_file("inference.jsonl") : paths.responses;
}

std::string RunConfig::checkpoints_dir() const {
  return paths.checkpoints.empty() ? output_file("checkpoints") : paths.checkpoints;
}

const backend::BackendProfile& RunConfig::profile(Role role) const {
  auto it = backends.find(role);
  if (it == backends.end()) {
    throw ConfigError("no backend configured for role " + std::string(to_string(role)));
  }
  return it->second;
}

RunConfig from_json(const Json& document) {
  RunConfig c;
  Reader root(document, "");
  root.read("seed", c.seed);
  root.read("workers", c.workers);
  if (c.workers < 1) throw ConfigError("workers must be positive");

  std::vector<std::string> taxonomy = c.taxonomy.entries();
  root.read("taxonomy", taxonomy);
  c.taxonomy = trace::Taxonomy(taxonomy);

  if (auto d = root.object("delimiters")) {
    std::array<trace::Delimiters::Pair, 4> pairs;
    for (int level = 1; level <= 4; ++level) {
      const auto kind = *trace::stage_from_ordinal(level);
      const std::string name(trace::stage_name(kind));
      std::vector<std::string> pair = {c.delimiters.open(kind), c.delimiters.close(kind)};
      d->read(name, pair);
      if (pair.size() != 2) throw ConfigError(d->path(name) + " must be [open, close]");
      pairs[level - 1] = {pair[0], pair[1]};
    }
    d->finish();
    c.delimiters = trace::Delimiters(pairs);
  }

  if (auto p = root.object("paths")) {
    p->read("input", c.paths.input);
    p->read("benign_input", c.paths.benign_input);
    p->read("output", c.paths.output);
    p->read("checkpoints", c.paths.checkpoints);
    p->read("instances", c.paths.instances);
    p->read("benign_sft", c.paths.benign_sft);
    p->read("responses", c.paths.responses);
    p->finish();
  }
  if (c.paths.output.empty()) throw ConfigError("paths.output must not be empty");

  if (auto cur = root.object("curate")) {
    cur->read("per_category", c.curate.per_category);
    cur->read("required_strata", c.curate.required_strata);
    std::vector<std::string> kinds;
    for (auto k : c.curate.transforms) kinds.emplace_back(to_string(k));
    cur->read("transforms", kinds);
    c.curate.transforms.clear();
    for (const auto& name : kinds) {
      auto kind = transform_kind_from_string(name);
      if (!kind) throw ConfigError("curate.transforms: unknown kind '" + name + "'");
      c.curate.transforms.push_back(*kind);
    }
    cur->read("carrier_template", c.curate.synthesis.carrier_template);
    if (const Json* map = cur->find("word_map")) {
      if (!map->is_object()) throw ConfigError("curate.word_map must be an object");
      c.curate.synthesis.word_map.clear();
      for (const auto& [from, to] : map->items()) {
        if (!to.is_string()) throw ConfigError("curate.word_map values must be strings");
        c.curate.synthesis.word_map.emplace_back(from, to.get<std::string>());
      }
    }
    cur->finish();
  }
  if (c.curate.per_category < 0) throw ConfigError("curate.per_category must be >= 0");

  if (auto s = root.object("search")) {
    s->read("C", c.search.exploration);
    s->read("k", c.search.k);
    s->read("max_iterations", c.search.max_iterations);
    s->read("eval_retry_budget", c.search.eval_retry_budget);
    s->read("refusal_markers", c.search.refusal_markers);
    s->read("parallel_evaluation", c.search.parallel_evaluation);
    s->read("checkpoint_every", c.checkpoint_every);
    s->finish();
  }
  c.search.seed = derive_seed(c.seed, "search");
  c.search.validate();
  if (c.checkpoint_every < 1) throw ConfigError("search.checkpoint_every must be positive");

  if (auto e = root.object("extraction")) {
    e->read("epsilon", c.extraction.epsilon);
    e->read("theta", c.extraction.theta);
    e->read("cross_parent", c.extraction.cross_parent);
    e->finish();
  }
  c.extraction.validate();

  if (auto s = root.object("sft")) {
    s->read("jailbreak_threshold", c.sft.jailbreak_threshold);
    s->finish();
  }

  if (auto s = root.object("scaling")) {
    std::string strategy(to_string(c.scaling.strategy));
    s->read("strategy", strategy);
    auto parsed = tts::strategy_from_string(strategy);
    if (!parsed) throw ConfigError("scaling.strategy: unknown strategy '" + strategy + "'");
    c.scaling.strategy = *parsed;
    s->read("beam_width", c.scaling.beam_width);
    s->read("expansions", c.scaling.expansions);
    s->read("n", c.scaling.n);
    s->read("cumulative", c.scaling.cumulative);
    s->read("parallel", c.scaling.parallel);
    s->finish();
  }
  c.scaling.seed = derive_seed(c.seed, "infer");
  c.scaling.validate();

  if (auto e = root.object("eval")) {
    e->read("unsafe_below", c.unsafe_below);
    e->finish();
  }

  for (Role role : kRoles) c.backends[role] = default_profile(role, c.seed);
  if (auto b = root.object("backends")) {
    for (Role role : kRoles) {
      if (auto r = b->object(std::string(to_string(role)))) read_profile(*r, c.backends[role]);
    }
    b->finish();
  }
  for (const auto& [role, profile] : c.backends) profile.validate();

  root.finish();
  return c;
}

Json to_json(const RunConfig& c) {
  Json out;
  out["seed"] = c.seed;
  out["workers"] = c.workers;
  out["taxonomy"] = c.taxonomy.entries();
  Json delims = Json::object();
  for (int level = 1; level <= 4; ++level) {
    const auto kind = *trace::stage_from_ordinal(level);
    delims[std::string(trace::stage_name(kind))] = {c.delimiters.open(kind),
                                                    c.delimiters.close(kind)};
  }
  out["delimiters"] = delims;
  out["paths"] = {{"input", c.paths.input},
                  {"benign_input", c.paths.benign_input},
                  {"output", c.paths.output},
                  {"checkpoints", c.paths.checkpoints},
                  {"instances", c.paths.instances},
                  {"benign_sft", c.paths.benign_sft},
                  {"responses", c.paths.responses}};
  Json kinds = Json::array();
  for (auto k : c.curate.transforms) kinds.push_back(to_string(k));
  Json word_map = Json::object();
  for (const auto& [from, to] : c.curate.synthesis.word_map) word_map[from] = to;
  out["curate"] = {{"per_category", c.curate.per_category},
                   {"required_strata", c.curate.required_strata},
                   {"transforms", kinds},
                   {"carrier_template", c.curate.synthesis.carrier_template},
                   {"word_map", word_map}};
  out["search"] = {{"C", c.search.exploration},
                   {"k", c.search.k},
                   {"max_iterations", c.search.max_iterations},
                   {"eval_retry_budget", c.search.eval_retry_budget},
                   {"refusal_markers", c.search.refusal_markers},
                   {"parallel_evaluation", c.search.parallel_evaluation},
                   {"checkpoint_every", c.checkpoint_every}};
  out["extraction"] = {{"epsilon", c.extraction.epsilon},
                       {"theta", c.extraction.theta},
                       {"cross_parent", c.extraction.cross_parent}};
  out["sft"] = {{"jailbreak_threshold", c.sft.jailbreak_threshold}};
  out["scaling"] = {{"strategy", to_string(c.scaling.strategy)},
                    {"beam_width", c.scaling.beam_width},
                    {"expansions", c.scaling.expansions},
                    {"n", c.scaling.n},
                    {"cumulative", c.scaling.cumulative},
                    {"parallel", c.scaling.parallel}};
  out["eval"] = {{"unsafe_below", c.unsafe_below}};
  Json backends = Json::object();
  for (Role role : kRoles) {
    backends[std::string(to_string(role))] = profile_json(c.profile(role));
  }
  out["backends"] = backends;
  return out;
}

std::string RunConfig::digest() const {
  return canonical_digest(digest_document(to_json(*this)));
}

std::string RunConfig::search_digest() const {
  const Json doc = digest_document(to_json(*this));
  Json subset;
  subset["seed"] = doc["seed"];
  subset["taxonomy"] = doc["taxonomy"];
  subset["delimiters"] = doc["delimiters"];
  subset["search"] = doc["search"];
  for (Role role : {Role::kPolicy, Role::kSafetyJudge, Role::kReferenceScorer}) {
    const std::string name(to_string(role));
    subset["backends"][name] = doc["backends"][name];
  }
  return canonical_digest(subset);
}

RunConfig load(const std::string& file, const std::vector<Override>& overrides) {
  Json doc = Json::object();
  if (!file.empty()) {
    std::string text;
    try {
      text = read_file(file);
    } catch (const InputError&) {
      throw ConfigError("cannot read config file " + file);
    }
    try {
      doc = Json::parse(text);
    } catch (const Json::exception& e) {
      throw ConfigError("config file " + file + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file " + file + " must hold an object");
    resolve_paths(doc, fs::path(file).parent_path());
  }
  for (const auto& entry : overrides) apply_override(doc, entry);
  return from_json(doc);
}

}  // namespace cotforge::config
