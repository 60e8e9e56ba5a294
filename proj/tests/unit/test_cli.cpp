// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <tuple>

#include "cotforge/app.hpp"
#include "cotforge/config.hpp"
#include "cotforge/mcts.hpp"
#include "cotforge/prefgen.hpp"
#include "cotforge/util.hpp"
#include "sim.hpp"
#include "tempdir.hpp"

using namespace cotforge;
namespace fs = std::filesystem;
using config::Override;
using testing::fixture;

namespace {

config::RunConfig fixture_config(const std::string& name, const fs::path& out,
                                 std::vector<Override> extra = {}) {
  extra.insert(extra.begin(), {"paths.output", Json(out.string()).dump()});
  return config::load(fixture(name + "/config.json"), extra);
}

std::string slurp(const fs::path& path) { return read_file(path); }

Json read_json(const fs::path& path) { return Json::parse(read_file(path)); }

const char* kGoldenFiles[] = {"golden-benign.ckpt.json", "golden-malicious.ckpt.json"};

void check_golden_checkpoints(const fs::path& out) {
  for (const char* name : kGoldenFiles) {
    CAPTURE(name);
    CHECK(slurp(out / "checkpoints" / name) == slurp(fixture(std::string("golden/expected/") + name)));
  }
}

int run_cli(const std::string& args) {
  const std::string command = std::string(COTFORGE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("curate on the 30-record fixture matches the hand count") {
  testing::TempDir dir;
  const auto config = fixture_config("curate", dir.path() / "a");
  const auto out = app::cmd_curate(config);
  CHECK_FALSE(out.failure);
  const auto manifest = read_json(dir.path() / "a" / "curate_manifest.json");
  CHECK(manifest["config_digest"] == config.digest());
  CHECK(manifest["input_records"] == 30);
  CHECK(manifest["input_per_category"] ==
        Json({{"benign", 10}, {"combination_unsafe", 2}, {"image_unsafe", 6}, {"problem_unsafe", 12}}));
  // per_category 3: violent_crime 4->3, dangerous_weapons 3, self_harm 3,
  // privacy_violation 2 (clamped) give 11 problem_unsafe; 6 image_unsafe;
  // 2 sampled plus 11 base64 + 11 rotation + 6 word_replace (only violent
  // crime and weapon queries contain mapped words) combination_unsafe;
  // 3 sampled benign plus 3 adapted external records (one lacks a caption).
  CHECK(manifest["per_category"] ==
        Json({{"benign", 6}, {"combination_unsafe", 30}, {"image_unsafe", 6}, {"problem_unsafe", 11}}));
  CHECK(manifest["instances"] == 53);
  CHECK(manifest["synthesized"] == Json({{"base64", 11}, {"rotation", 11}, {"word_replace", 6}}));
  CHECK(manifest["strata"]["violent_crime"]["selected"] == 3);
  CHECK(manifest["strata"]["privacy_violation"]["selected"] == 2);
  CHECK(manifest["benign_adapted"] == 3);
  REQUIRE(manifest["benign_rejected"].size() == 1);
  CHECK(manifest["benign_rejected"][0]["instance_id"] == "ext4");
  CHECK(manifest["warnings"].size() == 2);
  CHECK(load_instances((dir.path() / "a" / "instances.jsonl").string()).size() == 53);
  CHECK(prefgen::load_sft((dir.path() / "a" / "benign_sft.jsonl").string()).size() == 3);

  // Same seed, same bytes.
  app::cmd_curate(fixture_config("curate", dir.path() / "b"));
  for (const char* name : {"instances.jsonl", "benign_sft.jsonl", "curate_manifest.json"}) {
    CAPTURE(name);
    CHECK(slurp(dir.path() / "a" / name) == slurp(dir.path() / "b" / name));
  }
}

TEST_CASE("curate fails on configuration before doing any work") {
  testing::TempDir dir;
  auto config = fixture_config("curate", dir.path() / "out",
                               {{"paths.input", Json((dir.path() / "absent.jsonl").string()).dump()}});
  CHECK_THROWS_AS(app::cmd_curate(config), ConfigError);
  CHECK_FALSE(fs::exists(dir.path() / "out"));

  auto unset = config::load("", {{"paths.output", Json(dir.str("out")).dump()}});
  CHECK_THROWS_AS(app::cmd_curate(unset), ConfigError);
  CHECK_FALSE(fs::exists(dir.path() / "out"));
}

TEST_CASE("curate reports every invalid record") {
  testing::TempDir dir;
  const auto corpus = dir.str("bad.jsonl");
  write_file_atomic(corpus,
                    "{\"instance_id\": \"x1\", \"query\": \"q\", \"category\": \"nope\"}\n"
                    "not json\n");
  auto config = config::load("", {{"paths.input", Json(corpus).dump()},
                                  {"paths.output", Json(dir.str("out")).dump()}});
  try {
    app::cmd_curate(config);
    FAIL("expected an input error");
  } catch (const InputError& e) {
    const std::string what = e.what();
    CHECK(what.find("2 invalid record") != std::string::npos);
  }
}

TEST_CASE("search reproduces the golden checkpoints at any worker count") {
  testing::TempDir dir;
  for (int workers : {1, 4}) {
    const auto out = dir.path() / ("w" + std::to_string(workers));
    const auto config = fixture_config("golden", out, {{"workers", std::to_string(workers)}});
    const auto result = app::cmd_search(config);
    CHECK_FALSE(result.failure);
    check_golden_checkpoints(out);
    const auto report = read_json(out / "search_report.json");
    CHECK(report["config_digest"] == config.digest());
    CHECK(report["status_counts"] == Json({{"finished", 2}}));
    CHECK(report["trees"][0]["iterations"] == 5);
    const auto tree = mcts::restore(slurp(out / "checkpoints" / kGoldenFiles[0]));
    CHECK(tree.config_digest == config.search_digest());
  }
  CHECK(slurp(dir.path() / "w1" / "search_report.json") ==
        slurp(dir.path() / "w4" / "search_report.json"));
}

TEST_CASE("interrupted search resumes to the uninterrupted result") {
  testing::TempDir dir;
  const auto config = fixture_config("golden", dir.path());
  auto first = app::cmd_search(config, {2});
  CHECK(first.report["status_counts"] == Json({{"interrupted", 2}}));
  CHECK(mcts::restore(slurp(dir.path() / "checkpoints" / kGoldenFiles[1])).iterations_done == 2);
  // Extraction refuses unfinished trees.
  CHECK_THROWS_AS(app::cmd_extract(config), InputError);
  app::cmd_search(config, {1});
  const auto last = app::cmd_search(config);
  CHECK(last.report["trees"][0]["resumed"] == true);
  check_golden_checkpoints(dir.path());

  // A changed search configuration does not silently resume.
  const auto changed = fixture_config("golden", dir.path(), {{"search.C", "2.5"}});
  const auto refused = app::cmd_search(changed);
  REQUIRE(refused.failure);
  CHECK(*refused.failure == ErrorCategory::kConfig);
}

TEST_CASE("one failing tree never stops the others") {
  testing::TempDir dir;
  std::string lines = slurp(fixture("golden/instances.jsonl"));
  auto extra = instance_from_json(Json::parse(lines.substr(lines.find('\n') + 1)));
  extra.instance_id = "off-script";
  lines += to_json(extra).dump() + "\n";
  write_file_atomic(dir.str("instances.jsonl"), lines);

  const auto config = fixture_config("golden", dir.path() / "out",
                                     {{"paths.instances", Json(dir.str("instances.jsonl")).dump()},
                                      {"workers", "3"}});
  const auto result = app::cmd_search(config);
  REQUIRE(result.failure);
  CHECK(*result.failure == ErrorCategory::kBackend);
  const auto& trees = result.report["trees"];
  CHECK(trees[0]["status"] == "finished");
  CHECK(trees[1]["status"] == "finished");
  CHECK(trees[2]["status"] == "failed");
  CHECK(trees[2]["error"]["category"] == "backend");
  check_golden_checkpoints(dir.path() / "out");
  CHECK(run_cli("search -c " + fixture("golden/config.json") + " --output " + dir.str("cli") +
                " --set paths.instances=" + Json(dir.str("instances.jsonl")).dump()) ==
        app::kExitBackend);
}

TEST_CASE("extract on the golden checkpoints equals a brute-force enumeration") {
  testing::TempDir dir;
  const auto config = fixture_config("golden", dir.path());
  app::cmd_search(config);
  const auto out = app::cmd_extract(config);
  CHECK(slurp(dir.path() / "dpo_pairs.jsonl") == slurp(fixture("golden/expected/dpo_pairs.jsonl")));

  std::set<std::tuple<std::string, std::string, double, double>> oracle;
  for (const char* name : kGoldenFiles) {
    const auto tree = mcts::restore(slurp(dir.path() / "checkpoints" / name));
    for (const auto& a : tree.nodes) {
      for (const auto& b : tree.nodes) {
        if (a.id == b.id || !a.parent || a.parent != b.parent || a.n == 0 || b.n == 0) continue;
        const double va = a.q / static_cast<double>(a.n);
        const double vb = b.q / static_cast<double>(b.n);
        if (va > vb + 0.4 && va >= 0.8) {
          oracle.emplace(tree.tree_id() + ":" + std::to_string(a.id) + ":" + std::to_string(b.id),
                         a.step_text, va, vb);
        }
      }
    }
  }
  std::set<std::tuple<std::string, std::string, double, double>> produced;
  for (const auto& p : prefgen::load_pairs((dir.path() / "dpo_pairs.jsonl").string())) {
    produced.emplace(p.pair_id, p.chosen_text, p.chosen_value, p.rejected_value);
  }
  CHECK(produced == oracle);
  CHECK(oracle.size() == 4);
  const auto manifest = read_json(dir.path() / "dpo_pairs.manifest.json");
  CHECK(manifest["config_digest"] == config.digest());
  CHECK(manifest["pairs"] == 4);
  CHECK(manifest["per_category"] == Json({{"benign", 1}, {"problem_unsafe", 3}}));
}

TEST_CASE("emit-sft on the golden scenario matches the committed file") {
  testing::TempDir dir;
  const auto config = fixture_config("golden", dir.path());
  const auto out = app::cmd_emit_sft(config);
  CHECK(slurp(dir.path() / "cot_sft.jsonl") == slurp(fixture("golden/expected/cot_sft.jsonl")));
  const auto manifest = read_json(dir.path() / "cot_sft.manifest.json");
  CHECK(manifest["config_digest"] == config.digest());
  CHECK(manifest["safety"] == 1);
  CHECK(manifest["benign"] == 1);
  CHECK(manifest["rejected"].empty());

  // An explicitly configured benign file must exist.
  const auto missing = fixture_config("golden", dir.path(),
                                      {{"paths.benign_sft", Json(dir.str("none.jsonl")).dump()}});
  CHECK_THROWS_AS(app::cmd_emit_sft(missing), ConfigError);
}

TEST_CASE("infer with no scaling yields one trace per instance at multiplier 1") {
  testing::TempDir dir;
  const auto curate_out = dir.path() / "curate";
  app::cmd_curate(fixture_config("curate", curate_out));
  // Default procedural backends.
  const auto config = config::load(
      "", {{"paths.instances", Json((curate_out / "instances.jsonl").string()).dump()},
           {"paths.output", Json(dir.str("infer")).dump()},
           {"workers", "4"}});
  const auto out = app::cmd_infer(config);
  CHECK_FALSE(out.failure);
  CHECK(out.report["traces"] == 53);
  CHECK(out.report["multiplier"] == 1);
  const auto lines = read_lines(dir.path() / "infer" / "inference.jsonl");
  REQUIRE(lines.size() == 53);
  for (const auto& line : lines) {
    const auto record = Json::parse(line);
    CHECK(record["budget"]["multiplier"] == 1);
    CHECK(record["budget"]["total_policy_calls"] == 4);
    CHECK(trace::parse_trace(record["response_text"].get<std::string>()).complete());
  }
  // Inference output feeds evaluation directly.
  const auto judged = app::cmd_eval(config);
  CHECK(judged.report["responses"] == 53);
}

TEST_CASE("infer on the beam fixture: 8x refuses where 1x complies") {
  testing::TempDir dir;
  const auto beam = app::cmd_infer(fixture_config("beam", dir.path() / "beam"));
  CHECK(beam.report["multiplier"] == 8);
  const auto none = app::cmd_infer(
      fixture_config("beam", dir.path() / "none", {{"scaling.strategy", "\"none\""}}));
  CHECK(none.report["multiplier"] == 1);
  auto output_of = [&](const char* sub) {
    const auto record = Json::parse(read_lines(dir.path() / sub / "inference.jsonl").at(0));
    return trace::parse_trace(record["response_text"].get<std::string>()).stages().back().text;
  };
  CHECK(output_of("beam").rfind("I cannot", 0) == 0);
  CHECK(output_of("none").rfind("Sure", 0) == 0);
}

TEST_CASE("eval on the 10-record fixture matches the hand-computed table") {
  testing::TempDir dir;
  const auto config = fixture_config("eval", dir.path());
  const auto out = app::cmd_eval(config);
  const auto report = read_json(dir.path() / "eval_report.json");
  CHECK(report["config_digest"] == config.digest());
  CHECK(report["overall"]["judged"] == 9);
  CHECK(report["overall"]["unsafe"] == 3);
  CHECK(report["overall"]["asr"] == "33.33");
  CHECK(report["overall"]["safe_rate"] == "66.67");
  CHECK(report["per_category"]["violent_crime"]["asr"] == "50.00");
  CHECK(report["undetermined_count"] == 1);
  CHECK(out.report["table"].get<std::string>().find("33.33") != std::string::npos);
}

TEST_CASE("exit codes distinguish error classes") {
  testing::TempDir dir;
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == app::kExitConfig);
  CHECK(run_cli("curate --bogus-flag") == app::kExitConfig);
  CHECK(run_cli("curate -c /nonexistent.json") == app::kExitConfig);
  CHECK(run_cli("config --set search.kk=1") == app::kExitConfig);
  CHECK(run_cli("curate --output " + dir.str("o")) == app::kExitConfig);

  write_file_atomic(dir.str("broken.jsonl"), "{\"instance_id\": 3}\n");
  CHECK(run_cli("search --output " + dir.str("o") + " --set paths.instances=" +
                Json(dir.str("broken.jsonl")).dump()) == app::kExitInput);

  CHECK(run_cli("eval -c " + fixture("eval/config.json") + " --output " + dir.str("e")) == 0);
  CHECK(fs::exists(dir.path() / "e" / "eval_table.txt"));

  // Remote endpoint that refuses connections: backend error.
  write_file_atomic(dir.str("r.jsonl"), "{\"instance_id\": \"r\", \"response_text\": \"hi\", "
                                        "\"category\": \"benign\", \"query\": \"q\"}\n");
  CHECK(run_cli("eval --output " + dir.str("r") + " --set paths.responses=" +
                Json(dir.str("r.jsonl")).dump() +
                " --set backends.safety_judge.endpoint=http://127.0.0.1:9" +
                " --set backends.safety_judge.retry.max_attempts=1"
                " --set backends.safety_judge.timeout_ms=500") == app::kExitBackend);
}
