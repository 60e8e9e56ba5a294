// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model access for every role in the pipeline: step generation (policy),
// safety judging, helpfulness reference scoring and self-reward.
//
// Each role is served by a Backend: a profile (template, decoding, retry
// policy) bound to a Transport. Two transports exist: a remote HTTP endpoint
// and a deterministic simulator driven by scenario files plus a seeded
// procedural fallback. Operations build a canonical structured input record
// for every request; the simulator keys on its digest, so identical inputs
// always produce identical outputs.

#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "cotforge/error.hpp"
#include "cotforge/records.hpp"
#include "cotforge/trace.hpp"

namespace cotforge::backend {

enum class Role { kPolicy, kSafetyJudge, kReferenceScorer, kSelfReward };

std::string_view to_string(Role role);
std::optional<Role> role_from_string(std::string_view name);

struct Decoding {
  double temperature = 0.7;
  int max_length = 1024;
  std::optional<std::uint64_t> seed;

  bool operator==(const Decoding&) const = default;
};

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_initial_ms = 200;
  double backoff_factor = 2.0;

  bool operator==(const RetryPolicy&) const = default;
};

// How the simulator answers requests that have no scenario entry.
enum class Fallback {
  kAuto,     // role default: policy text, keyword judge, LCS scorer
  kKeyword,  // judge: 0 if a flag token appears, 1 if a reward token appears
  kHashed,   // judge/scorer: seeded pseudo-random score in [0, 1]
  kLcs,      // scorer: normalized longest-common-subsequence ratio
};

struct SimulationSettings {
  std::string scenario_path;
  bool strict = false;  // scenario miss is an error instead of a fallback
  Fallback fallback = Fallback::kAuto;
  std::vector<std::string> flag_tokens;
  std::vector<std::string> reward_tokens;
  double default_score = 1.0;

  bool operator==(const SimulationSettings&) const = default;
};

struct BackendProfile {
  Role role = Role::kPolicy;
  std::string endpoint = "simulated";
  std::string prompt_template;
  Decoding decoding;
  RetryPolicy retry;
  std::string api_key_env;
  int max_in_flight = 4;
  int timeout_ms = 60000;
  std::string score_pattern = R"(score:\s*([0-9.]+))";
  SimulationSettings simulation;

  bool simulated() const { return endpoint == "simulated"; }

  // Throws ConfigError on a missing seed for simulated endpoints, unknown
  // template placeholders, or out-of-range numeric settings.
  void validate() const;

  bool operator==(const BackendProfile&) const = default;
};

std::string default_template(Role role);
const std::vector<std::string>& allowed_placeholders(Role role);

// Replaces {name} placeholders; "{{" and "}}" are literal braces.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values);

enum class BackendErrorCode {
  kTransport,
  kMalformedResponse,
  kCandidateStarvation,
  kScoring,
  kPrecondition,
};

std::string_view to_string(BackendErrorCode code);

class BackendError : public Error {
 public:
  BackendError(BackendErrorCode code, const std::string& detail,
               bool retriable = false)
      : Error(code == BackendErrorCode::kPrecondition ? ErrorCategory::kInput
                                                      : ErrorCategory::kBackend,
              std::string(to_string(code)) + ": " + detail),
        code_(code),
        retriable_(retriable) {}

  BackendErrorCode code() const noexcept { return code_; }
  bool retriable() const noexcept { return retriable_; }

 private:
  BackendErrorCode code_;
  bool retriable_;
};

struct Request {
  Role role = Role::kPolicy;
  std::string prompt;
  std::vector<std::string> image_refs;
  Decoding decoding;
  // Canonical structured inputs. Object keys are sorted on serialization.
  nlohmann::json inputs;
};

// Digest of a request's canonical inputs; the scenario-file key.
std::string input_digest(const nlohmann::json& inputs);

class Transport {
 public:
  virtual ~Transport() = default;
  // Returns the raw model text. Throws BackendError(kTransport); retriable
  // failures are retried by Backend.
  virtual std::string complete(const Request& request) = 0;
};

class Backend {
 public:
  Backend(BackendProfile profile, std::shared_ptr<Transport> transport,
          trace::Delimiters delimiters = trace::Delimiters::defaults(),
          trace::Taxonomy taxonomy = trace::Taxonomy::defaults());

  // Builds the simulated or remote transport named by profile.endpoint.
  static std::shared_ptr<Backend> create(
      BackendProfile profile,
      trace::Delimiters delimiters = trace::Delimiters::defaults(),
      trace::Taxonomy taxonomy = trace::Taxonomy::defaults());

  const BackendProfile& profile() const { return profile_; }
  const trace::Delimiters& delimiters() const { return delimiters_; }
  const trace::Taxonomy& taxonomy() const { return taxonomy_; }
  std::string name() const;

  // One logical request with transport retries and backoff.
  std::string call(const Request& request) const;

  // Logical requests issued so far (retries not counted).
  std::uint64_t request_count() const { return requests_.load(); }

 private:
  BackendProfile profile_;
  std::shared_ptr<Transport> transport_;
  trace::Delimiters delimiters_;
  trace::Taxonomy taxonomy_;
  mutable std::counting_semaphore<1024> in_flight_;
  mutable std::atomic<std::uint64_t> requests_{0};
};

struct StepCandidate {
  trace::StageKind kind = trace::StageKind::kProblem;
  std::string text;  // stage body without delimiters
  std::string raw_response;
  std::string source_backend;

  bool operator==(const StepCandidate&) const = default;
};

enum class RewardKind { kSafety, kHelpfulness };

struct RewardScore {
  double value = 0.0;
  std::string rationale;
  RewardKind kind = RewardKind::kSafety;

  bool operator==(const RewardScore&) const = default;
};

struct GenerationOptions {
  // Index of the first sample; distinct offsets draw distinct samples for
  // the same prefix.
  int sample_offset = 0;
  // Texts already present (e.g. existing siblings); treated as duplicates.
  std::vector<std::string> existing;
  // Per-request sampling seed forwarded to remote endpoints.
  std::optional<std::uint64_t> request_seed;
};

struct GenerationResult {
  std::vector<StepCandidate> candidates;
  int malformed = 0;
  int duplicates = 0;
  int requests = 0;
};

// Extracts the body of the single `kind` block in a model response.
// Throws BackendError(kMalformedResponse).
std::string extract_stage(std::string_view response, trace::StageKind kind,
                          const trace::Delimiters& delimiters);

// Parses the first capture group of `pattern` as the score; clamps to [0, 1].
// Returns nullopt when the verdict does not match.
std::optional<double> extract_score(std::string_view response,
                                    const std::string& pattern);

// Samples k next-step candidates, one request per candidate. Throws
// BackendError(kCandidateStarvation) when every response is malformed and
// BackendError(kTransport) when retries are exhausted.
GenerationResult generate_steps(const Backend& policy,
                                const InstanceRecord& instance,
                                const trace::ReasoningTrace& prefix,
                                trace::StageKind kind, int k,
                                const GenerationOptions& options = {});

RewardScore score_safety(const Backend& judge, const InstanceRecord& instance,
                         const trace::ReasoningTrace& prefix,
                         const StepCandidate& step);

// Compares a step with the instance's reference text for the same level.
// Throws BackendError(kPrecondition) when no reference exists.
RewardScore score_helpfulness(const Backend& scorer,
                              const InstanceRecord& instance,
                              const StepCandidate& step);

// The policy model scoring its own step with the self-reward template.
RewardScore self_reward(const Backend& self, const InstanceRecord& instance,
                        const trace::ReasoningTrace& prefix,
                        const StepCandidate& step);

// Judges a free-form model response as an OUTPUT with no preceding stages.
RewardScore score_response(const Backend& judge, const InstanceRecord& instance,
                           const std::string& response);

// The backends one pipeline run needs. Unused roles may be null.
struct BackendSet {
  std::shared_ptr<const Backend> policy;
  std::shared_ptr<const Backend> safety_judge;
  std::shared_ptr<const Backend> reference_scorer;
  std::shared_ptr<const Backend> self_reward;
};

// Normalized longest-common-subsequence ratio over code points:
// LCS(a, b) / max(|a|, |b|); 1 when both are empty.
double lcs_ratio(std::string_view a, std::string_view b);

}  // namespace cotforge::backend
