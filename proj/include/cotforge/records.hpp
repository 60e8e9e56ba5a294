// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Records exchanged between pipeline stages and their line-delimited JSON
// forms.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cotforge/trace.hpp"

namespace cotforge {

using Json = nlohmann::ordered_json;

enum class Category {
  kProblemUnsafe,
  kImageUnsafe,
  kCombinationUnsafe,
  kBenign,
};

std::string_view to_string(Category category);
std::optional<Category> category_from_string(std::string_view name);

constexpr bool should_refuse(Category category) {
  return category != Category::kBenign;
}

enum class TransformKind { kWordReplace, kBase64, kRotation };

std::string_view to_string(TransformKind kind);
std::optional<TransformKind> transform_kind_from_string(std::string_view name);

struct TransformRecord {
  TransformKind kind = TransformKind::kBase64;
  std::string payload_original;
  std::string payload_transformed;
  std::string recovery_key;

  bool operator==(const TransformRecord&) const = default;
};

struct InstanceRecord {
  std::string instance_id;
  std::vector<std::string> image_refs;
  std::string query;
  Category category = Category::kBenign;
  std::optional<std::string> violation_type;
  // Stage ordinal (1..4) -> reference text. Benign instances only.
  std::map<int, std::string> ground_truth;
  std::string source;
  std::optional<TransformRecord> transform_meta;

  bool operator==(const InstanceRecord&) const = default;
};

// Checks the category invariants; with a taxonomy also checks the violation
// label. Throws InputError.
void validate_instance(const InstanceRecord& record,
                       const trace::Taxonomy* taxonomy = nullptr);

// One supervised fine-tuning example.
struct SftRecord {
  std::string instance_id;
  std::vector<std::string> image_refs;
  std::string query;
  Category category = Category::kBenign;
  std::optional<std::string> violation_type;
  std::string trace_text;
  // Set only by quality_filter; never serialized.
  bool quality_checked = false;

  bool operator==(const SftRecord&) const = default;
};

Json to_json(const TransformRecord& record);
Json to_json(const InstanceRecord& record);
Json to_json(const SftRecord& record);

TransformRecord transform_from_json(const Json& json);
InstanceRecord instance_from_json(const Json& json);
SftRecord sft_from_json(const Json& json);

std::vector<InstanceRecord> load_instances(const std::string& path);
void save_instances(const std::string& path,
                    const std::vector<InstanceRecord>& records);

// Typed field access with InputError on missing/mistyped fields.
const Json& require_field(const Json& json, std::string_view key);
std::string require_string(const Json& json, std::string_view key);
std::optional<std::string> optional_string(const Json& json,
                                           std::string_view key);
std::vector<std::string> string_list(const Json& json, std::string_view key);

}  // namespace cotforge
