// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/curate.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <set>

#include "cotforge/util.hpp"

namespace cotforge::curate {

std::vector<InstanceRecord> ingest(const std::vector<std::string>& lines,
                                   const trace::Taxonomy& taxonomy,
                                   const std::string& source_name) {
  std::vector<InstanceRecord> records;
  std::vector<std::string> problems;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = source_name + " record " + std::to_string(i + 1);
    try {
      auto record = instance_from_json(Json::parse(lines[i]));
      validate_instance(record, &taxonomy);
      if (!ids.insert(record.instance_id).second) {
        throw InputError("duplicate instance_id '" + record.instance_id + "'");
      }
      records.push_back(std::move(record));
    } catch (const Json::exception& e) {
      problems.push_back(where + ": " + e.what());
    } catch (const InputError& e) {
      problems.push_back(where + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string message = std::to_string(problems.size()) + " invalid record(s):";
    for (const auto& p : problems) message += "\n  " + p;
    throw InputError(message);
  }
  return records;
}

std::vector<InstanceRecord> ingest_file(const std::string& path,
                                        const trace::Taxonomy& taxonomy) {
  return ingest(read_lines(path), taxonomy, path);
}

std::string stratum_of(const InstanceRecord& record) {
  return record.violation_type ? *record.violation_type
                               : std::string(to_string(record.category));
}

std::vector<InstanceRecord> stratified_sample(const std::vector<InstanceRecord>& records,
                                              int per_category, std::uint64_t seed,
                                              SampleReport* report,
                                              const std::vector<std::string>& required) {
  if (per_category < 1) throw ConfigError("per_category must be positive");
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    strata[stratum_of(records[i])].push_back(i);
  }
  for (const auto& name : required) {
    if (!strata.count(name)) throw InputError("no records for required category '" + name + "'");
  }

  SampleReport local;
  std::vector<InstanceRecord> out;
  for (auto& [name, indices] : strata) {
    const auto available = static_cast<std::int64_t>(indices.size());
    const auto take = std::min<std::int64_t>(per_category, available);
    if (take < per_category) {
      local.warnings.push_back("category '" + name + "': requested " +
                               std::to_string(per_category) + ", only " +
                               std::to_string(available) + " available");
    }
    Rng rng(derive_seed(seed, "sample:" + name));
    seeded_shuffle(indices, rng);
    indices.resize(static_cast<std::size_t>(take));
    std::sort(indices.begin(), indices.end());
    for (auto i : indices) out.push_back(records[i]);
    local.available[name] = available;
    local.selected[name] = take;
  }
  for (const auto& w : local.warnings) spdlog::warn("sampling: {}", w);
  if (report) *report = std::move(local);
  return out;
}

std::string replace_words(const std::string& text, const WordMap& mapping) {
  auto order = mapping;
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first.size() > b.first.size();
  });
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    bool replaced = false;
    for (const auto& [from, to] : order) {
      if (!from.empty() && text.compare(pos, from.size(), from) == 0) {
        out += to;
        pos += from.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(text[pos++]);
  }
  return out;
}

namespace {

WordMap word_map_from_json(const Json& json) {
  if (!json.is_object()) throw InputError("word_replace recovery key must be a JSON object");
  WordMap map;
  for (const auto& [key, value] : json.items()) {
    if (!value.is_string()) throw InputError("word_replace recovery key values must be strings");
    map.emplace_back(key, value.get<std::string>());
  }
  return map;
}

}  // namespace

TransformRecord transform_word_replace(const std::string& query, const WordMap& mapping) {
  std::set<std::string> keys;
  for (const auto& [from, to] : mapping) {
    if (from.empty()) throw InputError("word_replace: empty key");
    if (to.empty()) throw InputError("word_replace: empty value for '" + from + "'");
    if (!keys.insert(from).second) throw InputError("word_replace: repeated key '" + from + "'");
  }
  for (const auto& [from, to] : mapping) {
    for (const auto& key : keys) {
      if (to.find(key) != std::string::npos) {
        throw InputError("word_replace: value '" + to + "' contains key '" + key +
                         "'; the mapping is not invertible");
      }
    }
  }
  Json inverse = Json::object();
  WordMap inverse_map;
  for (const auto& [from, to] : mapping) {
    if (inverse.contains(to)) {
      throw InputError("word_replace: value '" + to + "' is used twice; the mapping is not invertible");
    }
    inverse[to] = from;
    inverse_map.emplace_back(to, from);
  }
  TransformRecord record;
  record.kind = TransformKind::kWordReplace;
  record.payload_original = query;
  record.payload_transformed = replace_words(query, mapping);
  record.recovery_key = inverse.dump();
  if (replace_words(record.payload_transformed, inverse_map) != query) {
    throw InputError("word_replace: text already contains a replacement word; the result is not invertible");
  }
  return record;
}

namespace {

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto a = static_cast<unsigned char>(bytes[i]);
    const auto b = static_cast<unsigned char>(bytes[i + 1]);
    const auto c = static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kAlphabet[a >> 2]);
    out.push_back(kAlphabet[((a & 0x03) << 4) | (b >> 4)]);
    out.push_back(kAlphabet[((b & 0x0f) << 2) | (c >> 6)]);
    out.push_back(kAlphabet[c & 0x3f]);
  }
  if (const auto rest = bytes.size() - i; rest > 0) {
    const auto a = static_cast<unsigned char>(bytes[i]);
    const auto b = rest == 2 ? static_cast<unsigned char>(bytes[i + 1]) : 0;
    out.push_back(kAlphabet[a >> 2]);
    out.push_back(kAlphabet[((a & 0x03) << 4) | (b >> 4)]);
    out.push_back(rest == 2 ? kAlphabet[(b & 0x0f) << 2] : '=');
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InputError("base64: length is not a multiple of 4");
  std::array<int, 256> value{};
  value.fill(-1);
  for (int i = 0; i < 64; ++i) value[static_cast<unsigned char>(kAlphabet[i])] = i;
  std::string out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const auto c = static_cast<unsigned char>(text[i + static_cast<std::size_t>(j)]);
      if (c == '=' && last && j >= 2) {
        v[j] = 0;
        ++pad;
        continue;
      }
      if (pad > 0 || value[c] < 0) throw InputError("base64: invalid character");
      v[j] = value[c];
    }
    out.push_back(static_cast<char>((v[0] << 2) | (v[1] >> 4)));
    if (pad < 2) out.push_back(static_cast<char>(((v[1] & 0x0f) << 4) | (v[2] >> 2)));
    if (pad < 1) out.push_back(static_cast<char>(((v[2] & 0x03) << 6) | v[3]));
  }
  return out;
}

TransformRecord transform_base64(const std::string& payload) {
  utf8_decode(payload);  // validates
  TransformRecord record;
  record.kind = TransformKind::kBase64;
  record.payload_original = payload;
  record.payload_transformed = base64_encode(payload);
  record.recovery_key = "";
  return record;
}

std::string rotate_left(const std::string& text, std::int64_t offset) {
  auto cps = utf8_decode(text);
  if (cps.empty()) return text;
  const auto n = static_cast<std::int64_t>(cps.size());
  const auto shift = ((offset % n) + n) % n;
  std::rotate(cps.begin(), cps.begin() + shift, cps.end());
  return utf8_encode(cps);
}

TransformRecord transform_rotation(const std::string& payload, std::int64_t offset) {
  if (payload.empty()) throw InputError("rotation: empty payload");
  TransformRecord record;
  record.kind = TransformKind::kRotation;
  record.payload_original = payload;
  record.payload_transformed = rotate_left(payload, offset);
  record.recovery_key = std::to_string(offset);
  return record;
}

std::string invert(const TransformRecord& record) {
  switch (record.kind) {
    case TransformKind::kWordReplace: {
      Json key;
      try {
        key = Json::parse(record.recovery_key);
      } catch (const Json::exception& e) {
        throw InputError(std::string("word_replace recovery key: ") + e.what());
      }
      return replace_words(record.payload_transformed, word_map_from_json(key));
    }
    case TransformKind::kBase64:
      return base64_decode(record.payload_transformed);
    case TransformKind::kRotation: {
      std::int64_t offset = 0;
      try {
        std::size_t used = 0;
        offset = std::stoll(record.recovery_key, &used);
        if (used != record.recovery_key.size()) throw std::invalid_argument("trailing text");
      } catch (const std::exception&) {
        throw InputError("rotation recovery key '" + record.recovery_key + "' is not an integer");
      }
      // Right rotation by the same offset; negate modulo length to avoid overflow.
      const auto n = static_cast<std::int64_t>(utf8_decode(record.payload_transformed).size());
      if (n == 0) return record.payload_transformed;
      return rotate_left(record.payload_transformed, n - ((offset % n) + n) % n);
    }
  }
  throw InternalError("unknown transform kind");
}

namespace {

std::string method_name(TransformKind kind) {
  switch (kind) {
    case TransformKind::kWordReplace:
      return "word replacement";
    case TransformKind::kBase64:
      return "base64 encoding";
    case TransformKind::kRotation:
      return "character rotation";
  }
  return "unknown";
}

std::string fill_carrier(const std::string& carrier, const TransformRecord& record) {
  std::string out;
  std::size_t pos = 0;
  while (pos < carrier.size()) {
    const auto open = carrier.find('{', pos);
    if (open == std::string::npos) {
      out += carrier.substr(pos);
      break;
    }
    out += carrier.substr(pos, open - pos);
    const auto close = carrier.find('}', open);
    if (close == std::string::npos) throw ConfigError("carrier template: unterminated placeholder");
    const auto name = carrier.substr(open + 1, close - open - 1);
    if (name == "payload") {
      out += record.payload_transformed;
    } else if (name == "method") {
      out += method_name(record.kind);
    } else if (name == "key") {
      out += record.kind == TransformKind::kBase64 ? "none" : record.recovery_key;
    } else {
      throw ConfigError("carrier template: unknown placeholder {" + name + "}");
    }
    pos = close + 1;
  }
  return out;
}

}  // namespace

SynthesisResult synthesize_combination_unsafe(const std::vector<InstanceRecord>& seeds,
                                              const std::vector<TransformKind>& kinds,
                                              std::uint64_t seed,
                                              const SynthesisConfig& config) {
  if (config.carrier_template.find("{payload}") == std::string::npos) {
    throw ConfigError("carrier template must contain {payload}");
  }
  SynthesisResult result;
  for (const auto& source : seeds) {
    if (source.category != Category::kProblemUnsafe) {
      result.skipped.push_back({source.instance_id, "", "not problem_unsafe"});
      continue;
    }
    if (trim(source.query).empty()) {
      result.skipped.push_back({source.instance_id, "", "empty query"});
      continue;
    }
    for (TransformKind kind : kinds) {
      const std::string kind_name(to_string(kind));
      TransformRecord record;
      try {
        switch (kind) {
          case TransformKind::kWordReplace:
            record = transform_word_replace(source.query, config.word_map);
            if (record.payload_transformed == source.query) {
              throw InputError("word_replace: no mapped word occurs in the query");
            }
            break;
          case TransformKind::kBase64:
            record = transform_base64(source.query);
            break;
          case TransformKind::kRotation: {
            const auto length = utf8_decode(source.query).size();
            if (length < 2) throw InputError("rotation: query too short to rotate");
            Rng rng(derive_seed(seed, "rotation:" + source.instance_id));
            record = transform_rotation(
                source.query, 1 + static_cast<std::int64_t>(rng.uniform_below(length - 1)));
            break;
          }
        }
      } catch (const InputError& e) {
        result.skipped.push_back({source.instance_id, kind_name, e.what()});
        continue;
      }
      InstanceRecord out;
      out.instance_id = source.instance_id + "-" + kind_name;
      out.image_refs = source.image_refs;
      out.query = fill_carrier(config.carrier_template, record);
      out.category = Category::kCombinationUnsafe;
      out.violation_type = source.violation_type;
      out.source = source.source.empty() ? "synthesized:" + kind_name
                                         : source.source + "+" + kind_name;
      out.transform_meta = std::move(record);
      result.instances.push_back(std::move(out));
    }
  }
  for (const auto& s : result.skipped) {
    spdlog::info("synthesis skipped '{}'{}: {}", s.instance_id,
                 s.kind.empty() ? "" : " (" + s.kind + ")", s.reason);
  }
  return result;
}

namespace {

constexpr std::array<const char*, 3> kRestatements = {
    "The user asks: {question}",
    "The question about the image is: {question}",
    "I need to answer this question about the image: {question}",
};

std::optional<std::string> text_field(const Json& json, const char* key) {
  auto it = json.find(key);
  if (it == json.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) {
    std::string value = it->get<std::string>();
    if (trim(value).empty()) return std::nullopt;
    return value;
  }
  if (it->is_array()) {
    std::string joined;
    for (const auto& item : *it) {
      if (!item.is_string()) throw InputError(std::string("field '") + key + "' must hold strings");
      if (trim(item.get<std::string>()).empty()) continue;
      if (!joined.empty()) joined.push_back('\n');
      joined += std::string(trim(item.get<std::string>()));
    }
    if (joined.empty()) return std::nullopt;
    return joined;
  }
  throw InputError(std::string("field '") + key + "' must be a string or list of strings");
}

}  // namespace

BenignResult adapt_benign(const std::vector<Json>& external, std::uint64_t seed,
                          const trace::Delimiters& delimiters) {
  BenignResult result;
  for (std::size_t i = 0; i < external.size(); ++i) {
    const auto& record = external[i];
    std::string id = "record " + std::to_string(i + 1);
    try {
      id = require_string(record, "id");
      const auto image = text_field(record, "image");
      if (!image) throw InputError("missing image");
      const auto question = text_field(record, "question");
      if (!question) throw InputError("missing question");
      const auto caption = text_field(record, "caption");
      if (!caption) throw InputError("missing caption");
      const auto rationale = text_field(record, "reasoning");
      if (!rationale) throw InputError("missing rationale");
      auto answer = text_field(record, "conclusion");
      if (!answer) answer = text_field(record, "answer");
      if (!answer) throw InputError("missing answer");

      Rng rng(derive_seed(seed, "restate:" + id));
      std::string problem = kRestatements[rng.uniform_below(kRestatements.size())];
      problem.replace(problem.find("{question}"), 10, std::string(trim(*question)));

      const std::array<std::string, 4> texts = {problem, std::string(trim(*caption)), *rationale,
                                                std::string(trim(*answer))};
      trace::ReasoningTrace trace;
      for (std::size_t level = 0; level < texts.size(); ++level) {
        trace.append({trace::kAllStages[level], texts[level], std::nullopt});
      }

      AdaptedBenign adapted;
      adapted.instance.instance_id = id;
      adapted.instance.image_refs = {*image};
      adapted.instance.query = *question;
      adapted.instance.category = Category::kBenign;
      adapted.instance.source = "benign_cot";
      for (std::size_t level = 0; level < texts.size(); ++level) {
        adapted.instance.ground_truth[static_cast<int>(level) + 1] = texts[level];
      }
      adapted.sft.instance_id = id;
      adapted.sft.image_refs = adapted.instance.image_refs;
      adapted.sft.query = *question;
      adapted.sft.category = Category::kBenign;
      adapted.sft.trace_text = trace::serialize_trace(trace, delimiters);
      result.records.push_back(std::move(adapted));
    } catch (const InputError& e) {
      result.rejected.push_back({id, "", e.what()});
    }
  }
  return result;
}

}  // namespace cotforge::curate
