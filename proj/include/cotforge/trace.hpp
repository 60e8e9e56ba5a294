// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Four-stage reasoning traces and their delimiter-token wire format.
//
// A serialized trace wraps every stage in its open/close delimiter pair and
// joins stages with a single newline:
//
//   <PROBLEM>...</PROBLEM>
//   <CAPTION>...</CAPTION>
//   <REASONING>...</REASONING>
//   <OUTPUT>...</OUTPUT>
//
// Partial traces (a contiguous prefix of the four stages) are valid values;
// tree search operates on them.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cotforge/error.hpp"

namespace cotforge::trace {

enum class StageKind : int {
  kProblem = 1,
  kCaption = 2,
  kReasoning = 3,
  kOutput = 4,
};

inline constexpr std::array<StageKind, 4> kAllStages = {
    StageKind::kProblem, StageKind::kCaption, StageKind::kReasoning,
    StageKind::kOutput};

constexpr int ordinal(StageKind kind) { return static_cast<int>(kind); }

std::optional<StageKind> stage_from_ordinal(int level);

// Upper-case stage name, e.g. "REASONING".
std::string_view stage_name(StageKind kind);
std::optional<StageKind> stage_from_name(std::string_view name);

// The eight violation identifiers a deployment recognises.
class Taxonomy {
 public:
  static constexpr std::size_t kSize = 8;

  explicit Taxonomy(std::vector<std::string> entries);
  static Taxonomy defaults();

  bool contains(std::string_view id) const;
  const std::vector<std::string>& entries() const { return entries_; }

  bool operator==(const Taxonomy&) const = default;

 private:
  std::vector<std::string> entries_;
};

struct Stage {
  StageKind kind = StageKind::kProblem;
  std::string text;
  // Side metadata; not part of the wire format.
  std::optional<std::string> violation;

  bool operator==(const Stage&) const = default;
};

// Open/close spellings for each stage. Eight distinct strings, none a
// substring of another.
class Delimiters {
 public:
  using Pair = std::pair<std::string, std::string>;

  explicit Delimiters(std::array<Pair, 4> pairs);
  static const Delimiters& defaults();

  const std::string& open(StageKind kind) const;
  const std::string& close(StageKind kind) const;

  // True when `text` contains any of the eight delimiter strings.
  bool contains_reserved(std::string_view text) const;

  bool operator==(const Delimiters&) const = default;

 private:
  std::array<Pair, 4> pairs_;
};

enum class TraceErrorCode {
  kEmptyStage,
  kReservedSubstring,
  kUnknownDelimiter,
  kOutOfOrder,
  kUnbalanced,
  kDuplicateStage,
  kStrayText,
};

std::string_view to_string(TraceErrorCode code);

class TraceError : public InputError {
 public:
  TraceError(TraceErrorCode code, const std::string& detail)
      : InputError(std::string(to_string(code)) + ": " + detail), code_(code) {}

  TraceErrorCode code() const noexcept { return code_; }

 private:
  TraceErrorCode code_;
};

class ReasoningTrace {
 public:
  ReasoningTrace() = default;
  // Throws TraceError(kOutOfOrder / kDuplicateStage) unless `stages` is a
  // contiguous prefix PROBLEM, CAPTION, ...
  explicit ReasoningTrace(std::vector<Stage> stages);

  const std::vector<Stage>& stages() const { return stages_; }
  bool empty() const { return stages_.empty(); }
  std::size_t size() const { return stages_.size(); }
  bool complete() const { return stages_.size() == kAllStages.size(); }

  const Stage* find(StageKind kind) const;

  // Appends the next stage; throws TraceError if it is not next in order.
  void append(Stage stage);

  bool operator==(const ReasoningTrace&) const = default;

 private:
  std::vector<Stage> stages_;
};

std::optional<StageKind> next_stage(const ReasoningTrace& trace);

std::string serialize_trace(const ReasoningTrace& trace,
                            const Delimiters& delimiters = Delimiters::defaults());

ReasoningTrace parse_trace(std::string_view text,
                           const Delimiters& delimiters = Delimiters::defaults());

// Validates a single stage body: non-empty after trimming, no reserved
// substrings.
void validate_stage_text(std::string_view text, const Delimiters& delimiters);

}  // namespace cotforge::trace
