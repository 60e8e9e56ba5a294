// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (one JSON document):
//   {"format": "cotforge-search-tree", "version": 1,
//    "config_digest": "...", "payload_sha256": "...", "body": {...}}
// payload_sha256 covers body.dump(). Doubles are written in shortest
// round-trip form, so restore(checkpoint(t)) == t bit for bit.

#include "cotforge/mcts.hpp"

namespace cotforge::mcts {

namespace {

constexpr std::string_view kFormat = "cotforge-search-tree";

Json score_json(const backend::RewardScore& score) {
  Json out;
  out["value"] = score.value;
  out["rationale"] = score.rationale;
  out["kind"] = score.kind == backend::RewardKind::kSafety ? "safety" : "helpfulness";
  return out;
}

backend::RewardScore score_from_json(const Json& json) {
  backend::RewardScore score;
  score.value = json.at("value").get<double>();
  score.rationale = json.at("rationale").get<std::string>();
  score.kind = json.at("kind").get<std::string>() == "safety"
                   ? backend::RewardKind::kSafety
                   : backend::RewardKind::kHelpfulness;
  return score;
}

Json body_json(const SearchTree& tree) {
  Json body;
  body["instance"] = to_json(tree.instance);
  body["mode"] = to_string(tree.mode);
  body["root_id"] = tree.root_id;
  body["iterations_done"] = tree.iterations_done;
  body["exhausted"] = tree.exhausted;
  body["rng_state"] = tree.rng.save_state();
  body["stats"] = {
      {"evaluations", tree.stats.evaluations},
      {"scoring_errors", tree.stats.scoring_errors},
      {"starved_nodes", tree.stats.starved_nodes},
      {"malformed_candidates", tree.stats.malformed_candidates},
      {"duplicate_candidates", tree.stats.duplicate_candidates},
  };
  Json nodes = Json::array();
  for (const auto& n : tree.nodes) {
    Json node;
    node["id"] = n.id;
    node["parent"] = n.parent ? Json(*n.parent) : Json(nullptr);
    node["level"] = n.level;
    node["step_text"] = n.step_text;
    node["q"] = n.q;
    node["n"] = n.n;
    node["safety"] = n.safety ? score_json(*n.safety) : Json(nullptr);
    node["children"] = n.children;
    node["terminal"] = n.terminal;
    node["refusal"] = n.refusal;
    node["exhausted"] = n.exhausted;
    node["samples_drawn"] = n.samples_drawn;
    nodes.push_back(std::move(node));
  }
  body["nodes"] = std::move(nodes);
  return body;
}

SearchTree tree_from_body(const Json& body) {
  SearchTree tree;
  tree.instance = instance_from_json(body.at("instance"));
  const auto mode = body.at("mode").get<std::string>();
  if (mode == "safety_local") {
    tree.mode = RewardMode::kSafetyLocal;
  } else if (mode == "helpfulness_backprop") {
    tree.mode = RewardMode::kHelpfulnessBackprop;
  } else {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, "unknown mode " + mode);
  }
  tree.root_id = body.at("root_id").get<NodeId>();
  tree.iterations_done = body.at("iterations_done").get<int>();
  tree.exhausted = body.at("exhausted").get<bool>();
  tree.rng.restore_state(body.at("rng_state").get<std::string>());
  const auto& stats = body.at("stats");
  tree.stats.evaluations = stats.at("evaluations").get<std::int64_t>();
  tree.stats.scoring_errors = stats.at("scoring_errors").get<std::int64_t>();
  tree.stats.starved_nodes = stats.at("starved_nodes").get<std::int64_t>();
  tree.stats.malformed_candidates = stats.at("malformed_candidates").get<std::int64_t>();
  tree.stats.duplicate_candidates = stats.at("duplicate_candidates").get<std::int64_t>();
  for (const auto& node : body.at("nodes")) {
    TreeNode n;
    n.id = node.at("id").get<NodeId>();
    if (!node.at("parent").is_null()) n.parent = node.at("parent").get<NodeId>();
    n.level = node.at("level").get<int>();
    n.step_text = node.at("step_text").get<std::string>();
    n.q = node.at("q").get<double>();
    n.n = node.at("n").get<std::int64_t>();
    if (!node.at("safety").is_null()) n.safety = score_from_json(node.at("safety"));
    n.children = node.at("children").get<std::vector<NodeId>>();
    n.terminal = node.at("terminal").get<bool>();
    n.refusal = node.at("refusal").get<bool>();
    n.exhausted = node.at("exhausted").get<bool>();
    n.samples_drawn = node.at("samples_drawn").get<int>();
    if (n.id != static_cast<NodeId>(tree.nodes.size())) {
      throw CheckpointError(CheckpointErrorCode::kCorrupted, "node ids out of sequence");
    }
    tree.nodes.push_back(std::move(n));
  }
  if (tree.nodes.empty()) {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, "tree has no root");
  }
  for (const auto& n : tree.nodes) {
    for (NodeId child : n.children) {
      if (child <= n.id || child >= static_cast<NodeId>(tree.nodes.size()) ||
          tree.nodes[static_cast<std::size_t>(child)].parent != n.id) {
        throw CheckpointError(CheckpointErrorCode::kCorrupted, "broken parent links");
      }
    }
  }
  return tree;
}

}  // namespace

std::string checkpoint(const SearchTree& tree) {
  const Json body = body_json(tree);
  Json doc;
  doc["format"] = kFormat;
  doc["version"] = kCheckpointVersion;
  doc["config_digest"] = tree.config_digest;
  doc["payload_sha256"] = sha256_hex(body.dump());
  doc["body"] = body;
  return doc.dump(1) + "\n";
}

SearchTree restore(std::string_view bytes) {
  Json doc;
  try {
    doc = Json::parse(bytes);
  } catch (const Json::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kFormat) {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, "not a search-tree checkpoint");
  }
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, "missing version");
  }
  const int version = doc["version"].get<int>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorCode::kVersionMismatch,
                          "found version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  try {
    const Json& body = doc.at("body");
    if (sha256_hex(body.dump()) != doc.at("payload_sha256").get<std::string>()) {
      throw CheckpointError(CheckpointErrorCode::kCorrupted, "payload digest mismatch");
    }
    SearchTree tree = tree_from_body(body);
    tree.config_digest = doc.at("config_digest").get<std::string>();
    return tree;
  } catch (const Json::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const InputError& e) {
    throw CheckpointError(CheckpointErrorCode::kCorrupted, e.what());
  }
}

}  // namespace cotforge::mcts
