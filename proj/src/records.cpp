// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/records.hpp"

#include "cotforge/util.hpp"

namespace cotforge {

std::string_view to_string(Category category) {
  switch (category) {
    case Category::kProblemUnsafe:
      return "problem_unsafe";
    case Category::kImageUnsafe:
      return "image_unsafe";
    case Category::kCombinationUnsafe:
      return "combination_unsafe";
    case Category::kBenign:
      return "benign";
  }
  return "unknown";
}

std::optional<Category> category_from_string(std::string_view name) {
  for (Category c : {Category::kProblemUnsafe, Category::kImageUnsafe,
                     Category::kCombinationUnsafe, Category::kBenign}) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kWordReplace:
      return "word_replace";
    case TransformKind::kBase64:
      return "base64";
    case TransformKind::kRotation:
      return "rotation";
  }
  return "unknown";
}

std::optional<TransformKind> transform_kind_from_string(std::string_view name) {
  for (TransformKind k : {TransformKind::kWordReplace, TransformKind::kBase64,
                          TransformKind::kRotation}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

void validate_instance(const InstanceRecord& record,
                       const trace::Taxonomy* taxonomy) {
  const std::string where = "instance '" + record.instance_id + "': ";
  if (record.instance_id.empty()) throw InputError("instance_id is empty");
  if (record.category == Category::kBenign) {
    if (record.violation_type) {
      throw InputError(where + "benign instance carries a violation_type");
    }
  } else if (!record.ground_truth.empty()) {
    throw InputError(where + "non-benign instance carries ground_truth");
  }
  if (record.category == Category::kCombinationUnsafe && !record.transform_meta) {
    throw InputError(where + "combination_unsafe instance lacks transform_meta");
  }
  for (const auto& [level, text] : record.ground_truth) {
    if (level < 1 || level > 4) {
      throw InputError(where + "ground_truth level out of range");
    }
  }
  if (taxonomy && record.violation_type &&
      !taxonomy->contains(*record.violation_type)) {
    throw InputError(where + "violation_type '" + *record.violation_type +
                     "' is not in the taxonomy");
  }
}

const Json& require_field(const Json& json, std::string_view key) {
  if (!json.is_object()) throw InputError("expected a JSON object");
  auto it = json.find(key);
  if (it == json.end()) {
    throw InputError("missing field '" + std::string(key) + "'");
  }
  return *it;
}

std::string require_string(const Json& json, std::string_view key) {
  const Json& value = require_field(json, key);
  if (!value.is_string()) {
    throw InputError("field '" + std::string(key) + "' must be a string");
  }
  return value.get<std::string>();
}

std::optional<std::string> optional_string(const Json& json,
                                           std::string_view key) {
  auto it = json.find(key);
  if (it == json.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw InputError("field '" + std::string(key) + "' must be a string");
  }
  return it->get<std::string>();
}

std::vector<std::string> string_list(const Json& json, std::string_view key) {
  auto it = json.find(key);
  if (it == json.end() || it->is_null()) return {};
  if (!it->is_array()) {
    throw InputError("field '" + std::string(key) + "' must be an array");
  }
  std::vector<std::string> out;
  for (const auto& item : *it) {
    if (!item.is_string()) {
      throw InputError("field '" + std::string(key) + "' must hold strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

namespace {

Category parse_category(const Json& json) {
  const auto name = require_string(json, "category");
  auto category = category_from_string(name);
  if (!category) throw InputError("unknown category '" + name + "'");
  return *category;
}

Json optional_json(const std::optional<std::string>& value) {
  return value ? Json(*value) : Json(nullptr);
}

}  // namespace

Json to_json(const TransformRecord& record) {
  Json out;
  out["kind"] = to_string(record.kind);
  out["payload_original"] = record.payload_original;
  out["payload_transformed"] = record.payload_transformed;
  out["recovery_key"] = record.recovery_key;
  return out;
}

Json to_json(const InstanceRecord& record) {
  Json out;
  out["instance_id"] = record.instance_id;
  out["image_refs"] = record.image_refs;
  out["query"] = record.query;
  out["category"] = to_string(record.category);
  out["violation_type"] = optional_json(record.violation_type);
  if (record.ground_truth.empty()) {
    out["ground_truth"] = nullptr;
  } else {
    Json gt = Json::object();
    for (const auto& [level, text] : record.ground_truth) {
      gt[std::to_string(level)] = text;
    }
    out["ground_truth"] = std::move(gt);
  }
  out["source"] = record.source;
  out["transform_meta"] =
      record.transform_meta ? to_json(*record.transform_meta) : Json(nullptr);
  return out;
}

Json to_json(const SftRecord& record) {
  Json out;
  out["instance_id"] = record.instance_id;
  out["image_refs"] = record.image_refs;
  out["query"] = record.query;
  out["category"] = to_string(record.category);
  out["violation_type"] = optional_json(record.violation_type);
  out["trace_text"] = record.trace_text;
  return out;
}

TransformRecord transform_from_json(const Json& json) {
  TransformRecord record;
  const auto kind = require_string(json, "kind");
  auto parsed = transform_kind_from_string(kind);
  if (!parsed) throw InputError("unknown transform kind '" + kind + "'");
  record.kind = *parsed;
  record.payload_original = require_string(json, "payload_original");
  record.payload_transformed = require_string(json, "payload_transformed");
  record.recovery_key = require_string(json, "recovery_key");
  return record;
}

InstanceRecord instance_from_json(const Json& json) {
  InstanceRecord record;
  record.instance_id = require_string(json, "instance_id");
  record.image_refs = string_list(json, "image_refs");
  record.query = require_string(json, "query");
  record.category = parse_category(json);
  record.violation_type = optional_string(json, "violation_type");
  if (auto it = json.find("ground_truth"); it != json.end() && !it->is_null()) {
    if (!it->is_object()) throw InputError("ground_truth must be an object");
    for (const auto& [key, value] : it->items()) {
      int level = 0;
      try {
        level = std::stoi(key);
      } catch (const std::exception&) {
        throw InputError("ground_truth key '" + key + "' is not a level");
      }
      if (!value.is_string()) throw InputError("ground_truth values must be strings");
      record.ground_truth[level] = value.get<std::string>();
    }
  }
  record.source = optional_string(json, "source").value_or("");
  if (auto it = json.find("transform_meta"); it != json.end() && !it->is_null()) {
    record.transform_meta = transform_from_json(*it);
  }
  return record;
}

SftRecord sft_from_json(const Json& json) {
  SftRecord record;
  record.instance_id = require_string(json, "instance_id");
  record.image_refs = string_list(json, "image_refs");
  record.query = require_string(json, "query");
  record.category = parse_category(json);
  record.violation_type = optional_string(json, "violation_type");
  record.trace_text = require_string(json, "trace_text");
  return record;
}

std::vector<InstanceRecord> load_instances(const std::string& path) {
  std::vector<InstanceRecord> records;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    try {
      records.push_back(instance_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_instances(const std::string& path,
                    const std::vector<InstanceRecord>& records) {
  std::string out;
  for (const auto& record : records) {
    out += to_json(record).dump();
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

}  // namespace cotforge
