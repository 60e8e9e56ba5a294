// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON file, optional flag overrides, strict parsing.
//
// Precedence is flags > file > defaults. Relative paths in the file resolve
// against the file's directory; paths given as flags resolve against the
// working directory. Every unknown key is a ConfigError.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cotforge/backend.hpp"
#include "cotforge/curate.hpp"
#include "cotforge/mcts.hpp"
#include "cotforge/prefgen.hpp"
#include "cotforge/records.hpp"
#include "cotforge/trace.hpp"
#include "cotforge/tts.hpp"

namespace cotforge::config {

struct Paths {
  std::string input;         // curate: interchange corpus
  std::string benign_input;  // curate: external benign CoT corpus (optional)
  std::string output = "out";
  std::string checkpoints;   // default <output>/checkpoints
  // Intermediate artifacts; each defaults to a file under `output`.
  std::string instances;
  std::string benign_sft;
  std::string responses;

  bool operator==(const Paths&) const = default;
};

struct CurateSettings {
  int per_category = 100;
  std::vector<std::string> required_strata;
  std::vector<TransformKind> transforms = {TransformKind::kWordReplace,
                                           TransformKind::kBase64,
                                           TransformKind::kRotation};
  curate::SynthesisConfig synthesis;

  bool operator==(const CurateSettings&) const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  trace::Taxonomy taxonomy = trace::Taxonomy::defaults();
  trace::Delimiters delimiters = trace::Delimiters::defaults();
  Paths paths;
  CurateSettings curate;
  mcts::SearchConfig search;       // search.seed is derived, not read
  int checkpoint_every = 10;       // iterations between periodic checkpoints
  prefgen::ExtractionConfig extraction;
  prefgen::FilterConfig sft;
  tts::ScalingConfig scaling;      // scaling.seed is derived, not read
  double unsafe_below = 0.5;       // eval verdict threshold
  std::map<backend::Role, backend::BackendProfile> backends;

  // Resolved artifact locations.
  std::string instances_path() const;
  std::string benign_sft_path() const;
  std::string responses_path() const;
  std::string checkpoints_dir() const;
  std::string output_file(const std::string& name) const;

  const backend::BackendProfile& profile(backend::Role role) const;

  // Digest of everything that affects artifact content. Paths, workers and
  // run-control flags are excluded; scenario files contribute their content
  // hash instead of their location.
  std::string digest() const;
  // Narrower digest stored in checkpoints: only what shapes a search tree.
  std::string search_digest() const;
};

// Dotted-path override, e.g. {"search.k", "2"}. Values parse as JSON when
// possible and as plain strings otherwise.
using Override = std::pair<std::string, std::string>;

// `file` may be empty for an all-defaults run. Throws ConfigError.
RunConfig load(const std::string& file, const std::vector<Override>& overrides = {});

// Parses an already merged document. Paths are taken as given.
RunConfig from_json(const Json& document);

// The effective configuration with every default spelled out.
Json to_json(const RunConfig& config);

std::string_view to_string(backend::Fallback fallback);

}  // namespace cotforge::config
