// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset curation: ingestion, stratified sampling, combination-unsafe
// synthesis through reversible text transforms, and adaptation of external
// benign chain-of-thought records to the four-stage format.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cotforge/records.hpp"
#include "cotforge/trace.hpp"

namespace cotforge::curate {

// Parses interchange records. Collects every bad record (unparseable line,
// unknown category or violation type, broken invariant) and throws one
// InputError listing all of them.
std::vector<InstanceRecord> ingest(const std::vector<std::string>& lines,
                                   const trace::Taxonomy& taxonomy,
                                   const std::string& source_name = "input");
std::vector<InstanceRecord> ingest_file(const std::string& path,
                                        const trace::Taxonomy& taxonomy);

// Stratum of a record: its violation type if any, else its category.
std::string stratum_of(const InstanceRecord& record);

struct SampleReport {
  std::map<std::string, std::int64_t> available;
  std::map<std::string, std::int64_t> selected;
  std::vector<std::string> warnings;
};

// min(per_category, available) records from each stratum, drawn uniformly
// without replacement. Strata come out in name order and records keep their
// input order within a stratum. With `required`, a listed stratum with no
// records is an InputError.
std::vector<InstanceRecord> stratified_sample(
    const std::vector<InstanceRecord>& records, int per_category, std::uint64_t seed,
    SampleReport* report = nullptr, const std::vector<std::string>& required = {});

using WordMap = std::vector<std::pair<std::string, std::string>>;

// Longest-key-first, left-to-right replacement. Rejects (InputError) empty
// or repeated keys, empty values, values containing a key, and any mapping
// whose inverse does not restore `query`. The recovery key is the inverse
// map as a JSON object.
TransformRecord transform_word_replace(const std::string& query, const WordMap& mapping);

// Standard alphabet with padding over the UTF-8 bytes.
TransformRecord transform_base64(const std::string& payload);

// Left rotation of the code point sequence by offset mod length. The
// recovery key is the offset in decimal. Throws InputError on an empty
// payload.
TransformRecord transform_rotation(const std::string& payload, std::int64_t offset);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // InputError when invalid
std::string rotate_left(const std::string& text, std::int64_t offset);
std::string replace_words(const std::string& text, const WordMap& mapping);

// Recovers payload_original from payload_transformed and recovery_key.
std::string invert(const TransformRecord& record);

struct SynthesisConfig {
  // Placeholders: {payload}, {method}, {key}.
  std::string carrier_template =
      "The message below is hidden with {method} (key: {key}). Recover the "
      "original text first, then respond to it.\n\n{payload}";
  WordMap word_map = {{"explosives", "fireworks"}, {"explosive", "firework"},
                      {"weapons", "tools"},        {"weapon", "tool"},
                      {"bomb", "cake"},            {"gun", "camera"},
                      {"kill", "hug"},             {"drugs", "candy"},
                      {"steal", "borrow"},         {"hack", "visit"}};
};

struct Skipped {
  std::string instance_id;
  std::string kind;  // empty when the whole seed was skipped
  std::string reason;
};

struct SynthesisResult {
  std::vector<InstanceRecord> instances;
  std::vector<Skipped> skipped;
};

// One combination_unsafe instance per (seed record, kind), id
// "<seed id>-<kind>". Seeds that are not problem_unsafe or have an empty
// query are skipped, as is any (seed, kind) whose transform is rejected.
SynthesisResult synthesize_combination_unsafe(const std::vector<InstanceRecord>& seeds,
                                              const std::vector<TransformKind>& kinds,
                                              std::uint64_t seed,
                                              const SynthesisConfig& config = {});

struct AdaptedBenign {
  InstanceRecord instance;
  SftRecord sft;
};

struct BenignResult {
  std::vector<AdaptedBenign> records;
  std::vector<Skipped> rejected;
};

// External record: {id, image, question, caption, reasoning (string or
// list of strings), conclusion or answer}. PROBLEM restates the question
// with a template picked by the seed; CAPTION, REASONING and OUTPUT take the
// caption, rationale and answer.
BenignResult adapt_benign(const std::vector<Json>& external, std::uint64_t seed,
                          const trace::Delimiters& delimiters = trace::Delimiters::defaults());

}  // namespace cotforge::curate
