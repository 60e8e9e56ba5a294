// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "cotforge/backend.hpp"

namespace cotforge::backend {

// input_digest -> output_text
using ScenarioTable = std::map<std::string, std::string>;

// Reads a line-delimited scenario file. Each record is
//   {"input_digest": "<sha256 hex>", "output_text": "..."}
// or, for hand-written fixtures,
//   {"input": {<canonical inputs>}, "output_text": "..."}
// whose digest is computed on load. Duplicate keys with different outputs
// are rejected.
ScenarioTable load_scenario(const std::string& path);

// Deterministic stand-in for a model endpoint. Output is a pure function of
// (profile seed, request inputs); the rendered prompt is ignored.
class SimulatedTransport : public Transport {
 public:
  SimulatedTransport(BackendProfile profile, trace::Delimiters delimiters,
                     ScenarioTable scenario);

  std::string complete(const Request& request) override;

 private:
  std::string fallback(const Request& request, std::uint64_t mix) const;

  BackendProfile profile_;
  trace::Delimiters delimiters_;
  ScenarioTable scenario_;
};

}  // namespace cotforge::backend
