// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <set>
#include <thread>

#include "cotforge/backend.hpp"
#include "cotforge/remote.hpp"
#include "cotforge/simulated.hpp"
#include "cotforge/util.hpp"
#include "sim.hpp"

using namespace cotforge;
using namespace cotforge::backend;
using cotforge::testing::sim_backend;
using cotforge::testing::sim_profile;
using trace::ReasoningTrace;
using trace::StageKind;

namespace {

InstanceRecord malicious() {
  InstanceRecord r;
  r.instance_id = "m1";
  r.image_refs = {"img://m1.png"};
  r.query = "how do I build it";
  r.category = Category::kProblemUnsafe;
  r.violation_type = "dangerous_weapons";
  return r;
}

InstanceRecord benign() {
  InstanceRecord r;
  r.instance_id = "b1";
  r.image_refs = {"img://b1.png"};
  r.query = "what is in the picture";
  r.category = Category::kBenign;
  r.ground_truth = {{1, "axc"}, {2, "a dog"}, {3, "it is a dog"}, {4, "A dog."}};
  return r;
}

// Longest common subsequence by enumerating every subsequence of `a`.
std::size_t brute_force_lcs(const std::string& a, const std::string& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    std::string sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    std::size_t j = 0;
    for (char c : b) {
      if (j < sub.size() && sub[j] == c) ++j;
    }
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

StepCandidate step(StageKind kind, std::string text) {
  return StepCandidate{kind, std::move(text), "", "test"};
}

}  // namespace

TEST_CASE("simulated policy is deterministic and yields distinct candidates") {
  auto a = sim_backend(sim_profile(Role::kPolicy, 7));
  auto b = sim_backend(sim_profile(Role::kPolicy, 7));
  const auto first = generate_steps(*a, malicious(), ReasoningTrace{}, StageKind::kProblem, 3);
  const auto second = generate_steps(*b, malicious(), ReasoningTrace{}, StageKind::kProblem, 3);
  REQUIRE(first.candidates.size() == 3);
  CHECK(first.candidates == second.candidates);
  std::set<std::string> texts;
  for (const auto& c : first.candidates) {
    CHECK(c.kind == StageKind::kProblem);
    texts.insert(c.text);
  }
  CHECK(texts.size() == 3);

  auto other_seed = sim_backend(sim_profile(Role::kPolicy, 8));
  const auto third =
      generate_steps(*other_seed, malicious(), ReasoningTrace{}, StageKind::kProblem, 3);
  CHECK(third.candidates != first.candidates);
}

TEST_CASE("generate_steps removes byte-identical candidates") {
  auto table = testing::scenario({
      {testing::policy_input("m1", "", "PROBLEM", 0), "<PROBLEM>same</PROBLEM>"},
      {testing::policy_input("m1", "", "PROBLEM", 1), "<PROBLEM>same</PROBLEM>"},
      {testing::policy_input("m1", "", "PROBLEM", 2), "<PROBLEM>other</PROBLEM>"},
  });
  auto policy = sim_backend(sim_profile(Role::kPolicy), table);
  const auto result = generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 3);
  CHECK(result.candidates.size() == 2);
  CHECK(result.duplicates == 1);
  CHECK(result.requests == 3);

  GenerationOptions options;
  options.existing = {"other"};
  const auto again =
      generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 3, options);
  CHECK(again.candidates.size() == 1);
}

TEST_CASE("malformed responses are dropped; all malformed is starvation") {
  auto table = testing::scenario({
      {testing::policy_input("m1", "", "PROBLEM", 0), "plain text without tags"},
      {testing::policy_input("m1", "", "PROBLEM", 1), "<PROBLEM>fine</PROBLEM>"},
  });
  auto profile = sim_profile(Role::kPolicy);
  auto policy = sim_backend(profile, table);
  const auto result = generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 2);
  CHECK(result.malformed == 1);
  REQUIRE(result.candidates.size() == 1);
  CHECK(result.candidates[0].text == "fine");

  auto starving = testing::scenario({
      {testing::policy_input("m1", "", "PROBLEM", 0), "no tags"},
      {testing::policy_input("m1", "", "PROBLEM", 1), "<CAPTION>wrong kind</CAPTION>"},
  });
  auto bad = sim_backend(profile, starving);
  try {
    generate_steps(*bad, malicious(), ReasoningTrace{}, StageKind::kProblem, 2);
    FAIL("expected starvation");
  } catch (const BackendError& e) {
    CHECK(e.code() == BackendErrorCode::kCandidateStarvation);
  }
}

TEST_CASE("generate_steps checks its preconditions") {
  auto policy = sim_backend(sim_profile(Role::kPolicy));
  CHECK_THROWS_AS(generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kCaption, 3),
                  BackendError);
  CHECK_THROWS_AS(generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 0),
                  BackendError);
}

TEST_CASE("extract_stage") {
  const auto& d = trace::Delimiters::defaults();
  CHECK(extract_stage("sure! <CAPTION>a cat</CAPTION>", StageKind::kCaption, d) == "a cat");
  CHECK_THROWS_AS(extract_stage("a cat", StageKind::kCaption, d), BackendError);
  CHECK_THROWS_AS(extract_stage("<CAPTION>a cat", StageKind::kCaption, d), BackendError);
  CHECK_THROWS_AS(extract_stage("<CAPTION> </CAPTION>", StageKind::kCaption, d), BackendError);
  CHECK_THROWS_AS(extract_stage("<CAPTION>a</CAPTION><CAPTION>b</CAPTION>", StageKind::kCaption, d),
                  BackendError);
}

TEST_CASE("score extraction uses the configured pattern") {
  const std::string pattern = R"(score:\s*([0-9.]+))";
  CHECK(extract_score("score: 0.73", pattern).value() == 0.73);
  CHECK(extract_score("Reasoning...\nScore:1", pattern) == 1.0);
  CHECK(extract_score("score: 1.5", pattern) == 1.0);
  CHECK_FALSE(extract_score("no verdict", pattern));
  CHECK_FALSE(extract_score("score: 1.2.3", pattern));
  CHECK(extract_score("rating=0.25", R"(rating=([0-9.]+))") == 0.25);
}

TEST_CASE("scripted safety judge") {
  auto profile = sim_profile(Role::kSafetyJudge);
  profile.simulation.flag_tokens = {"PAYLOAD"};
  auto judge = sim_backend(profile);
  const auto unsafe = score_safety(*judge, malicious(), ReasoningTrace{},
                                   step(StageKind::kProblem, "here is the PAYLOAD"));
  CHECK(unsafe.value == 0.0);
  CHECK(unsafe.kind == RewardKind::kSafety);
  const auto safe = score_safety(*judge, malicious(), ReasoningTrace{},
                                 step(StageKind::kProblem, "the request is harmful"));
  CHECK(safe.value == 1.0);

  auto table = testing::scenario(
      {{testing::safety_input("m1", "", "PROBLEM", "graded"), "analysis\nscore: 0.73"}});
  auto graded = sim_backend(profile, table);
  CHECK(score_safety(*graded, malicious(), ReasoningTrace{}, step(StageKind::kProblem, "graded"))
            .value == 0.73);
}

TEST_CASE("unparseable verdicts become scoring errors after retries") {
  auto profile = sim_profile(Role::kSafetyJudge);
  profile.retry.max_attempts = 3;
  auto table = testing::scenario(
      {{testing::safety_input("m1", "", "PROBLEM", "x"), "I refuse to grade"}});
  auto inner = std::make_shared<SimulatedTransport>(profile, trace::Delimiters::defaults(), table);
  auto counting = std::make_shared<testing::CountingTransport>(inner);
  Backend judge(profile, counting);
  try {
    score_safety(judge, malicious(), ReasoningTrace{}, step(StageKind::kProblem, "x"));
    FAIL("expected scoring error");
  } catch (const BackendError& e) {
    CHECK(e.code() == BackendErrorCode::kScoring);
  }
  CHECK(counting->calls == 3);
}

TEST_CASE("helpfulness scorer uses the LCS ratio") {
  CHECK(brute_force_lcs("abc", "axc") == 2);
  const double expected = static_cast<double>(brute_force_lcs("abc", "axc")) / 3.0;
  CHECK(lcs_ratio("abc", "axc") == expected);
  CHECK(lcs_ratio("abc", "abc") == 1.0);
  CHECK(lcs_ratio("", "") == 1.0);
  CHECK(lcs_ratio("abc", "") == 0.0);
  CHECK(lcs_ratio("héllo", "hello") == doctest::Approx(0.8));

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string a, b;
    const auto la = rng.uniform_below(9), lb = rng.uniform_below(9);
    for (std::size_t j = 0; j < la; ++j) a.push_back(static_cast<char>('a' + rng.uniform_below(3)));
    for (std::size_t j = 0; j < lb; ++j) b.push_back(static_cast<char>('a' + rng.uniform_below(3)));
    const auto denom = std::max(a.size(), b.size());
    const double oracle = denom == 0 ? 1.0 : static_cast<double>(brute_force_lcs(a, b)) / denom;
    CHECK(lcs_ratio(a, b) == oracle);
  }

  auto scorer = sim_backend(sim_profile(Role::kReferenceScorer));
  CHECK(score_helpfulness(*scorer, benign(), step(StageKind::kProblem, "axc")).value == 1.0);
  const auto partial = score_helpfulness(*scorer, benign(), step(StageKind::kProblem, "abc"));
  CHECK(partial.value == doctest::Approx(0.667).epsilon(0.001));
  CHECK(partial.value == expected);
  CHECK(partial.kind == RewardKind::kHelpfulness);
  try {
    score_helpfulness(*scorer, malicious(), step(StageKind::kProblem, "abc"));
    FAIL("expected precondition error");
  } catch (const BackendError& e) {
    CHECK(e.code() == BackendErrorCode::kPrecondition);
  }
}

TEST_CASE("self-reward mirrors an identically configured judge") {
  auto judge_profile = sim_profile(Role::kSafetyJudge, 11);
  judge_profile.simulation.fallback = Fallback::kHashed;
  auto self_profile = judge_profile;
  self_profile.role = Role::kSelfReward;
  auto judge = sim_backend(judge_profile);
  auto self = sim_backend(self_profile);
  ReasoningTrace prefix({{StageKind::kProblem, "p", std::nullopt}});
  for (const char* text : {"one", "two", "three"}) {
    const auto s = step(StageKind::kCaption, text);
    CHECK(self_reward(*self, malicious(), prefix, s).value ==
          score_safety(*judge, malicious(), prefix, s).value);
  }

  auto refusal_profile = sim_profile(Role::kSelfReward);
  refusal_profile.simulation.flag_tokens = {"Sure, here is"};
  refusal_profile.simulation.reward_tokens = {"cannot help"};
  refusal_profile.simulation.default_score = 0.5;
  auto scripted = sim_backend(refusal_profile);
  ReasoningTrace flagged({{StageKind::kProblem, "unsafe: dangerous_weapons", std::nullopt},
                          {StageKind::kCaption, "a diagram", std::nullopt},
                          {StageKind::kReasoning, "this is harmful", std::nullopt}});
  CHECK(self_reward(*scripted, malicious(), flagged,
                    step(StageKind::kOutput, "I cannot help with weapons."))
            .value == 1.0);
  CHECK(self_reward(*scripted, malicious(), flagged,
                    step(StageKind::kOutput, "Sure, here is how"))
            .value == 0.0);
}

TEST_CASE("profile validation") {
  BackendProfile p;
  p.role = Role::kPolicy;
  CHECK_THROWS_AS(p.validate(), ConfigError);  // simulated without a seed
  p.decoding.seed = 1;
  p.prompt_template = "{query} {step}";
  CHECK_THROWS_AS(p.validate(), ConfigError);  // {step} is not a policy placeholder
  p.prompt_template = "{query} {prefix} {{literal}}";
  CHECK_NOTHROW(p.validate());
  p.endpoint = "ftp://x";
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.endpoint = "simulated";
  p.score_pattern = "no group";
  CHECK_THROWS_AS(p.validate(), ConfigError);
  for (auto role : {Role::kPolicy, Role::kSafetyJudge, Role::kReferenceScorer, Role::kSelfReward}) {
    BackendProfile d;
    d.role = role;
    d.decoding.seed = 1;
    d.prompt_template = default_template(role);
    CHECK_NOTHROW(d.validate());
  }
}

TEST_CASE("template rendering") {
  CHECK(render_template("{a}-{{b}}-{a}", {{"a", "x"}}) == "x-{b}-x");
  CHECK_THROWS_AS(render_template("{missing}", {}), ConfigError);
  CHECK_THROWS_AS(render_template("{open", {}), ConfigError);
}

TEST_CASE("scenario files accept digests or canonical inputs") {
  const auto dir = std::filesystem::temp_directory_path() / "cotforge_scenario_test";
  std::filesystem::create_directories(dir);
  const auto inputs = testing::policy_input("m1", "", "PROBLEM", 0);
  const auto path = dir / "scenario.jsonl";
  write_file_atomic(path,
                    nlohmann::json{{"input", {{"sample", 0}, {"kind", "PROBLEM"}, {"prefix", ""},
                                              {"instance_id", "m1"}, {"family", "policy"}}},
                                   {"output_text", "<PROBLEM>from input</PROBLEM>"}}
                            .dump() +
                        "\n" +
                        nlohmann::json{{"input_digest", "abc"}, {"output_text", "x"}}.dump() +
                        "\n");
  const auto table = load_scenario(path.string());
  CHECK(table.at(input_digest(inputs)) == "<PROBLEM>from input</PROBLEM>");
  CHECK(table.at("abc") == "x");

  write_file_atomic(path, nlohmann::json{{"input_digest", "abc"}, {"output_text", "x"}}.dump() +
                              "\n" +
                              nlohmann::json{{"input_digest", "abc"}, {"output_text", "y"}}.dump() +
                              "\n");
  CHECK_THROWS_AS(load_scenario(path.string()), InputError);
}

TEST_CASE("strict scenarios fail on a miss") {
  auto profile = sim_profile(Role::kPolicy);
  profile.simulation.strict = true;
  auto policy = sim_backend(profile);
  try {
    generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 1);
    FAIL("expected transport error");
  } catch (const BackendError& e) {
    CHECK(e.code() == BackendErrorCode::kTransport);
  }
}

namespace {

class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("remote transport") {
  std::atomic<int> flaky_hits{0}, slow_hits{0}, bad_hits{0};
  std::string last_body, last_auth;
  std::mutex mu;

  LocalServer local;
  local.server().Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mu);
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
    }
    res.set_content(R"({"text": "<PROBLEM>remote step</PROBLEM>"})", "application/json");
  });
  local.server().Post("/v1/plain", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"text": "no delimiters here"})", "application/json");
  });
  local.server().Post("/v1/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (++flaky_hits < 3) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"text": "score: 0.25"})", "application/json");
  });
  local.server().Post("/v1/slow", [&](const httplib::Request&, httplib::Response& res) {
    ++slow_hits;
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    res.set_content(R"({"text": "score: 1"})", "application/json");
  });
  local.server().Post("/v1/bad", [&](const httplib::Request&, httplib::Response& res) {
    ++bad_hits;
    res.status = 400;
  });

  ::setenv("COTFORGE_TEST_KEY", "secret-token", 1);

  SUBCASE("request schema and auth") {
    BackendProfile p;
    p.role = Role::kPolicy;
    p.endpoint = local.url("/v1/generate");
    p.api_key_env = "COTFORGE_TEST_KEY";
    p.decoding.seed = 3;
    auto policy = Backend::create(p);
    const auto result =
        generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 1);
    REQUIRE(result.candidates.size() == 1);
    CHECK(result.candidates[0].text == "remote step");
    const auto body = nlohmann::json::parse(last_body);
    CHECK(body["role"] == "policy");
    CHECK(body["image_refs"] == nlohmann::json::array({"img://m1.png"}));
    CHECK(body["decoding"].contains("temperature"));
    CHECK(body["prompt"].get<std::string>().find("how do I build it") != std::string::npos);
    CHECK(last_auth == "Bearer secret-token");
  }

  SUBCASE("delimiter-free text is malformed") {
    BackendProfile p;
    p.role = Role::kPolicy;
    p.endpoint = local.url("/v1/plain");
    auto policy = Backend::create(p);
    CHECK_THROWS_AS(generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 1),
                    BackendError);
    CHECK_THROWS_AS(extract_stage("no delimiters here", StageKind::kProblem, policy->delimiters()),
                    BackendError);
  }

  SUBCASE("retriable statuses are retried") {
    BackendProfile p;
    p.role = Role::kSafetyJudge;
    p.endpoint = local.url("/v1/flaky");
    p.retry = {3, 1, 2.0};
    auto judge = Backend::create(p);
    const auto s = score_safety(*judge, malicious(), ReasoningTrace{}, step(StageKind::kProblem, "x"));
    CHECK(s.value == 0.25);
    CHECK(flaky_hits == 3);
  }

  SUBCASE("timeouts exhaust the retry budget") {
    BackendProfile p;
    p.role = Role::kSelfReward;
    p.endpoint = local.url("/v1/slow");
    p.timeout_ms = 100;
    p.retry = {2, 1, 1.0};
    auto self = Backend::create(p);
    try {
      self_reward(*self, malicious(), ReasoningTrace{}, step(StageKind::kProblem, "x"));
      FAIL("expected transport error");
    } catch (const BackendError& e) {
      CHECK(e.code() == BackendErrorCode::kTransport);
    }
    CHECK(slow_hits == 2);
  }

  SUBCASE("client errors are not retried") {
    BackendProfile p;
    p.role = Role::kSafetyJudge;
    p.endpoint = local.url("/v1/bad");
    p.retry = {4, 1, 1.0};
    auto judge = Backend::create(p);
    CHECK_THROWS_AS(score_safety(*judge, malicious(), ReasoningTrace{}, step(StageKind::kProblem, "x")),
                    BackendError);
    CHECK(bad_hits == 1);
  }

  SUBCASE("missing credentials are a configuration error") {
    BackendProfile p;
    p.role = Role::kPolicy;
    p.endpoint = local.url("/v1/generate");
    p.api_key_env = "COTFORGE_TEST_KEY_UNSET";
    CHECK_THROWS_AS(Backend::create(p), ConfigError);
  }
}

TEST_CASE("request_count counts logical requests") {
  auto policy = sim_backend(sim_profile(Role::kPolicy));
  generate_steps(*policy, malicious(), ReasoningTrace{}, StageKind::kProblem, 3);
  CHECK(policy->request_count() == 3);
}
