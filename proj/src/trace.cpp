// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/trace.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "cotforge/util.hpp"

namespace cotforge::trace {

std::optional<StageKind> stage_from_ordinal(int level) {
  if (level < 1 || level > 4) return std::nullopt;
  return static_cast<StageKind>(level);
}

std::string_view stage_name(StageKind kind) {
  switch (kind) {
    case StageKind::kProblem:
      return "PROBLEM";
    case StageKind::kCaption:
      return "CAPTION";
    case StageKind::kReasoning:
      return "REASONING";
    case StageKind::kOutput:
      return "OUTPUT";
  }
  return "UNKNOWN";
}

std::optional<StageKind> stage_from_name(std::string_view name) {
  for (StageKind kind : kAllStages) {
    if (stage_name(kind) == name) return kind;
  }
  return std::nullopt;
}

Taxonomy::Taxonomy(std::vector<std::string> entries)
    : entries_(std::move(entries)) {
  if (entries_.size() != kSize) {
    throw ConfigError("taxonomy must have exactly 8 entries, got " +
                      std::to_string(entries_.size()));
  }
  std::set<std::string> seen;
  for (const auto& id : entries_) {
    if (trim(id).empty()) throw ConfigError("taxonomy entry is empty");
    if (!seen.insert(id).second) {
      throw ConfigError("duplicate taxonomy entry: " + id);
    }
  }
}

Taxonomy Taxonomy::defaults() {
  return Taxonomy({"violent_crime", "non_violent_crime", "sexual_content",
                   "child_safety", "hate_and_harassment", "self_harm",
                   "privacy_violation", "dangerous_weapons"});
}

bool Taxonomy::contains(std::string_view id) const {
  return std::find(entries_.begin(), entries_.end(), id) != entries_.end();
}

Delimiters::Delimiters(std::array<Pair, 4> pairs) : pairs_(std::move(pairs)) {
  std::vector<std::string> all;
  for (const auto& [open, close] : pairs_) {
    all.push_back(open);
    all.push_back(close);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].empty()) throw ConfigError("delimiter strings must be non-empty");
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (i != j && all[j].find(all[i]) != std::string::npos) {
        throw ConfigError("delimiter '" + all[i] + "' overlaps '" + all[j] + "'");
      }
    }
  }
}

const Delimiters& Delimiters::defaults() {
  static const Delimiters kDefaults({{
      {"<PROBLEM>", "</PROBLEM>"},
      {"<CAPTION>", "</CAPTION>"},
      {"<REASONING>", "</REASONING>"},
      {"<OUTPUT>", "</OUTPUT>"},
  }});
  return kDefaults;
}

const std::string& Delimiters::open(StageKind kind) const {
  return pairs_[ordinal(kind) - 1].first;
}

const std::string& Delimiters::close(StageKind kind) const {
  return pairs_[ordinal(kind) - 1].second;
}

bool Delimiters::contains_reserved(std::string_view text) const {
  for (const auto& [open, close] : pairs_) {
    if (text.find(open) != std::string_view::npos ||
        text.find(close) != std::string_view::npos) {
      return true;
    }
  }
  return false;
}

std::string_view to_string(TraceErrorCode code) {
  switch (code) {
    case TraceErrorCode::kEmptyStage:
      return "empty-stage";
    case TraceErrorCode::kReservedSubstring:
      return "reserved-substring";
    case TraceErrorCode::kUnknownDelimiter:
      return "unknown-delimiter";
    case TraceErrorCode::kOutOfOrder:
      return "out-of-order";
    case TraceErrorCode::kUnbalanced:
      return "unbalanced-delimiters";
    case TraceErrorCode::kDuplicateStage:
      return "duplicate-stage";
    case TraceErrorCode::kStrayText:
      return "stray-text";
  }
  return "unknown";
}

namespace {

void check_next(const std::vector<Stage>& existing, StageKind kind) {
  for (const auto& stage : existing) {
    if (stage.kind == kind) {
      throw TraceError(TraceErrorCode::kDuplicateStage,
                       std::string(stage_name(kind)) + " appears twice");
    }
  }
  const int expected = static_cast<int>(existing.size()) + 1;
  if (ordinal(kind) != expected) {
    throw TraceError(TraceErrorCode::kOutOfOrder,
                     std::string(stage_name(kind)) + " at position " +
                         std::to_string(expected));
  }
}

struct DelimiterHit {
  std::size_t pos = std::string_view::npos;
  StageKind kind = StageKind::kProblem;
  bool is_open = false;
  std::size_t length = 0;
};

// Earliest delimiter occurrence at or after `from`.
DelimiterHit find_delimiter(std::string_view text, std::size_t from,
                            const Delimiters& delimiters) {
  DelimiterHit best;
  for (StageKind kind : kAllStages) {
    for (bool is_open : {true, false}) {
      const auto& token = is_open ? delimiters.open(kind) : delimiters.close(kind);
      const auto pos = text.find(token, from);
      if (pos < best.pos) best = {pos, kind, is_open, token.size()};
    }
  }
  return best;
}

// Text starts with something shaped like a tag, e.g. "<FOO>" or "</foo_bar>".
bool looks_like_tag(std::string_view text) {
  if (text.size() < 3 || text.front() != '<') return false;
  std::size_t i = 1;
  if (text[i] == '/') ++i;
  const std::size_t name_start = i;
  while (i < text.size() &&
         (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) {
    ++i;
  }
  return i > name_start && i < text.size() && text[i] == '>';
}

}  // namespace

ReasoningTrace::ReasoningTrace(std::vector<Stage> stages) {
  stages_.reserve(stages.size());
  for (auto& stage : stages) append(std::move(stage));
}

const Stage* ReasoningTrace::find(StageKind kind) const {
  for (const auto& stage : stages_) {
    if (stage.kind == kind) return &stage;
  }
  return nullptr;
}

void ReasoningTrace::append(Stage stage) {
  check_next(stages_, stage.kind);
  stages_.push_back(std::move(stage));
}

std::optional<StageKind> next_stage(const ReasoningTrace& trace) {
  return stage_from_ordinal(static_cast<int>(trace.size()) + 1);
}

void validate_stage_text(std::string_view text, const Delimiters& delimiters) {
  if (trim(text).empty()) {
    throw TraceError(TraceErrorCode::kEmptyStage, "stage text is empty");
  }
  if (delimiters.contains_reserved(text)) {
    throw TraceError(TraceErrorCode::kReservedSubstring,
                     "stage text contains a delimiter token");
  }
}

std::string serialize_trace(const ReasoningTrace& trace,
                            const Delimiters& delimiters) {
  std::string out;
  for (const auto& stage : trace.stages()) {
    validate_stage_text(stage.text, delimiters);
    if (!out.empty()) out.push_back('\n');
    out += delimiters.open(stage.kind);
    out += stage.text;
    out += delimiters.close(stage.kind);
  }
  return out;
}

ReasoningTrace parse_trace(std::string_view text, const Delimiters& delimiters) {
  std::vector<Stage> stages;
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < text.size() &&
           std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
    }
  };

  skip_space();
  while (pos < text.size()) {
    const DelimiterHit hit = find_delimiter(text, pos, delimiters);
    if (hit.pos != pos) {
      if (looks_like_tag(text.substr(pos))) {
        throw TraceError(TraceErrorCode::kUnknownDelimiter,
                         "unrecognised tag at offset " + std::to_string(pos));
      }
      throw TraceError(TraceErrorCode::kStrayText,
                       "unstructured text at offset " + std::to_string(pos));
    }
    if (!hit.is_open) {
      throw TraceError(TraceErrorCode::kUnbalanced,
                       "close delimiter without open at offset " +
                           std::to_string(pos));
    }
    check_next(stages, hit.kind);

    const std::size_t body_start = pos + hit.length;
    const DelimiterHit end = find_delimiter(text, body_start, delimiters);
    if (end.pos == std::string_view::npos || end.is_open || end.kind != hit.kind) {
      throw TraceError(TraceErrorCode::kUnbalanced,
                       std::string(stage_name(hit.kind)) + " is not closed");
    }
    std::string body(text.substr(body_start, end.pos - body_start));
    if (trim(body).empty()) {
      throw TraceError(TraceErrorCode::kEmptyStage,
                       std::string(stage_name(hit.kind)) + " is empty");
    }
    stages.push_back(Stage{hit.kind, std::move(body), std::nullopt});
    pos = end.pos + end.length;
    skip_space();
  }
  return ReasoningTrace(std::move(stages));
}

}  // namespace cotforge::trace
