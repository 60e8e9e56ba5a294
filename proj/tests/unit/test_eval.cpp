// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>

#include "cotforge/eval.hpp"
#include "cotforge/util.hpp"
#include "sim.hpp"

using namespace cotforge;
using namespace cotforge::eval;

namespace {

std::shared_ptr<backend::Backend> fixture_judge() {
  auto profile = testing::sim_profile(backend::Role::kSafetyJudge);
  profile.simulation.scenario_path = testing::fixture("eval/judge.jsonl");
  profile.simulation.flag_tokens = {"HARMFUL-MARKER"};
  profile.retry.max_attempts = 2;
  return backend::Backend::create(profile);
}

ResponseRecord judged(const std::string& key, bool unsafe) {
  ResponseRecord r;
  r.instance_id = key;
  r.category = Category::kProblemUnsafe;
  r.violation_type = key;
  r.response_text = "x";
  r.judge_verdict = Verdict{unsafe, unsafe ? 0.0 : 1.0};
  return r;
}

}  // namespace

TEST_CASE("rates round half up and pair with the safe rate") {
  CHECK(make_rate(1, 8).asr() == "12.50");
  CHECK(make_rate(0, 7).asr() == "0.00");
  CHECK(make_rate(13, 100).asr() == "13.00");
  CHECK(make_rate(1, 32).asr() == "3.13");  // 3.125
  CHECK(make_rate(1, 32).safe_rate() == "96.87");
  CHECK(make_rate(2, 3).asr() == "66.67");
  CHECK(make_rate(1, 3).asr() == "33.33");
  CHECK(make_rate(5, 5).asr() == "100.00");
  CHECK(make_rate(5, 5).safe_rate() == "0.00");
  CHECK_THROWS_AS(make_rate(0, 0), InputError);

  // Oracle: exact rational comparison against the two nearest hundredths.
  for (std::int64_t judged = 1; judged <= 200; ++judged) {
    for (std::int64_t unsafe = 0; unsafe <= judged; ++unsafe) {
      const auto bp = make_rate(unsafe, judged).asr_basis_points;
      // bp - 1/2 <= 10000*u/j < bp + 1/2
      CHECK((2 * bp - 1) * judged <= 20000 * unsafe);
      CHECK(20000 * unsafe < (2 * bp + 1) * judged);
      const auto rate = make_rate(unsafe, judged);
      CHECK(rate.asr_basis_points + rate.safe_basis_points() == 10000);
    }
  }
}

TEST_CASE("compute_asr groups by violation type, else category") {
  std::vector<ResponseRecord> records = {judged("a", true), judged("a", false), judged("b", false)};
  ResponseRecord benign;
  benign.instance_id = "n";
  benign.category = Category::kBenign;
  benign.response_text = "fine";
  benign.judge_verdict = Verdict{false, 1.0};
  records.push_back(benign);
  auto lost = judged("c", false);
  lost.judge_verdict.reset();
  lost.undetermined = true;
  records.push_back(lost);

  const auto table = compute_asr(records);
  CHECK(table.overall.judged == 4);
  CHECK(table.overall.unsafe == 1);
  CHECK(table.overall.asr() == "25.00");
  CHECK(table.per_category.at("a").asr() == "50.00");
  CHECK(table.per_category.at("benign").asr() == "0.00");
  CHECK(table.undetermined == 1);
  CHECK(table.unrated == std::vector<std::string>{"c"});

  // Record order does not matter.
  auto shuffled = records;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(to_json(compute_asr(shuffled)) == to_json(table));

  CHECK_THROWS_AS(compute_asr({}), InputError);
  CHECK_THROWS_AS(compute_asr({lost}), InputError);
  auto unjudged = judged("d", false);
  unjudged.judge_verdict.reset();
  CHECK_THROWS_AS(compute_asr({unjudged}), InputError);
}

TEST_CASE("judging the ten-record fixture") {
  const auto records = load_responses(testing::fixture("eval/responses.jsonl"));
  REQUIRE(records.size() == 10);
  const auto judge = fixture_judge();
  const auto out = judge_responses(records, *judge);
  REQUIRE(out.size() == 10);
  for (const auto& r : out) {
    const bool marked = r.response_text.find("HARMFUL-MARKER") != std::string::npos;
    if (r.instance_id == "e07") {
      CHECK(r.undetermined);
      CHECK_FALSE(r.judge_verdict);
    } else {
      REQUIRE(r.judge_verdict);
      CHECK(r.judge_verdict->unsafe == marked);
    }
  }
  const auto table = compute_asr(out);
  CHECK(table.undetermined == 1);
  CHECK(table.overall.judged == 9);
  CHECK(table.overall.unsafe == 3);
  CHECK(table.overall.asr() == "33.33");
  CHECK(table.overall.safe_rate() == "66.67");
  CHECK(table.per_category.at("violent_crime").asr() == "50.00");
  CHECK(table.per_category.at("self_harm").asr() == "50.00");
  CHECK(table.per_category.at("privacy_violation").asr() == "0.00");
  CHECK(table.per_category.at("benign").asr() == "0.00");

  const auto text = render_table(table);
  CHECK(text.find("33.33") != std::string::npos);
  CHECK(text.find("undetermined: 1") != std::string::npos);

  CHECK(judge_responses({}, *judge).empty());

  // Records round-trip with their verdicts.
  for (const auto& r : out) CHECK(response_from_json(to_json(r)) == r);
}
