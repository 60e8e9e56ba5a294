// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Safety-aware Monte Carlo Tree Search over four-stage reasoning traces.
//
// Level 0 is the root (the instance itself); levels 1..4 hold PROBLEM,
// CAPTION, REASONING and OUTPUT steps. One iteration selects a node by UCB,
// expands all free child slots with policy samples and evaluates each new
// child once. There is no rollout phase.
//
// Rewards follow the instance category:
//   - malicious instances: the safety judge scores a step and only that
//     node's (Q, N) changes; ancestors are never credited or blamed.
//   - benign instances: the reference scorer compares a step with the
//     ground-truth step and (Q, N) is updated on the node and every ancestor.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotforge/backend.hpp"
#include "cotforge/records.hpp"
#include "cotforge/trace.hpp"
#include "cotforge/util.hpp"

namespace cotforge::mcts {

using NodeId = std::int64_t;

enum class RewardMode { kSafetyLocal, kHelpfulnessBackprop };

std::string_view to_string(RewardMode mode);
RewardMode mode_for(Category category);

struct SearchConfig {
  double exploration = 1.5;  // C in the UCB bound
  int k = 3;                 // children per node
  int max_iterations = 200;  // per tree
  std::uint64_t seed = 0;
  // Extra attempts for an evaluation whose verdict cannot be parsed.
  int eval_retry_budget = 2;
  // An OUTPUT step starting with any of these is a refusal.
  std::vector<std::string> refusal_markers = {
      "I cannot", "I can't", "I can not", "I won't", "I will not",
      "I'm sorry", "I am sorry", "Sorry"};
  // Evaluate the k new children of an iteration concurrently.
  bool parallel_evaluation = true;

  void validate() const;
};

struct TreeNode {
  NodeId id = 0;
  std::optional<NodeId> parent;
  int level = 0;
  std::string step_text;
  double q = 0.0;        // cumulative reward
  std::int64_t n = 0;    // visit count
  std::optional<backend::RewardScore> safety;  // node-local, never propagated
  std::vector<NodeId> children;
  bool terminal = false;
  bool refusal = false;
  bool exhausted = false;  // expansion produced nothing new
  int samples_drawn = 0;

  double mean_value() const { return n > 0 ? q / static_cast<double>(n) : 0.0; }

  bool operator==(const TreeNode&) const = default;
};

struct SearchStats {
  std::int64_t evaluations = 0;
  std::int64_t scoring_errors = 0;
  std::int64_t starved_nodes = 0;
  std::int64_t malformed_candidates = 0;
  std::int64_t duplicate_candidates = 0;

  bool operator==(const SearchStats&) const = default;
};

struct SearchTree {
  InstanceRecord instance;
  RewardMode mode = RewardMode::kSafetyLocal;
  std::vector<TreeNode> nodes;  // indexed by id
  NodeId root_id = 0;
  int iterations_done = 0;
  bool exhausted = false;
  Rng rng;
  std::string config_digest;
  SearchStats stats;

  // A root-only tree. Throws InputError when a benign instance lacks a
  // reference for some level.
  static SearchTree create(InstanceRecord instance, const SearchConfig& config,
                           std::string config_digest = {});

  const TreeNode& node(NodeId id) const;
  TreeNode& node(NodeId id);
  const std::string& tree_id() const { return instance.instance_id; }

  // Stages on the path from the root down to `id`, inclusive.
  trace::ReasoningTrace path_trace(NodeId id) const;

  bool operator==(const SearchTree&) const = default;
};

// Q/N + C*sqrt(ln(parent_visits)/N); +infinity for an unvisited node.
double ucb_score(const TreeNode& node, std::int64_t parent_visits, double c);

// Visit count used as the parent term of the UCB bound for children of
// `parent`: max(1, N(parent), sum of children's N). In safety mode parents
// are not credited by their children's evaluations, so the children's visits
// stand in for the parent's.
std::int64_t selection_visits(const SearchTree& tree, NodeId parent);

bool expandable(const SearchTree& tree, NodeId id, const SearchConfig& config);

// Descends from the root by maximal UCB (ties go to the lower child index)
// until reaching an expandable or terminal node. Subtrees holding neither
// are skipped. Returns nullopt when no expandable node is left.
std::optional<NodeId> select_path(const SearchTree& tree,
                                  const SearchConfig& config);

struct ExpansionResult {
  std::vector<NodeId> children;
  bool starved = false;
};

// Samples the node's free child slots. Throws BackendError(kPrecondition)
// when the node is not expandable.
ExpansionResult expand(SearchTree& tree, NodeId id, const SearchConfig& config,
                       const backend::Backend& policy);

// Reward for one node under the tree's mode. Pure with respect to the tree.
backend::RewardScore evaluate_node(const SearchTree& tree, NodeId id,
                                   const backend::BackendSet& backends);

// Applies a reward with the tree's propagation rule.
void apply_reward(SearchTree& tree, NodeId id, const backend::RewardScore& reward);

// evaluate_node + apply_reward, retrying unparseable verdicts up to
// config.eval_retry_budget extra times. Returns false (tree untouched except
// for the error counter) when scoring still fails. Transport errors propagate.
bool evaluate_and_propagate(SearchTree& tree, NodeId id,
                            const SearchConfig& config,
                            const backend::BackendSet& backends);

struct NodeStats {
  double q = 0.0;
  std::int64_t n = 0;
  bool operator==(const NodeStats&) const = default;
};

struct EvaluationEvent {
  NodeId node = 0;
  RewardMode mode = RewardMode::kSafetyLocal;
  double reward = 0.0;
  std::vector<NodeStats> before;  // every node, indexed by id
  std::vector<NodeStats> after;
};

struct RunOptions {
  // Stop after this many iterations in this call (simulates interruption).
  std::optional<int> stop_after;
  // Called after every successful evaluation with full (Q, N) snapshots.
  std::function<void(const EvaluationEvent&)> observer;
  // Called after every iteration, e.g. to write periodic checkpoints.
  std::function<void(const SearchTree&)> on_iteration;
};

// Continues a tree until max_iterations, exhaustion or options.stop_after.
void run_search(SearchTree& tree, const SearchConfig& config,
                const backend::BackendSet& backends, const RunOptions& options = {});

SearchTree run_search(const InstanceRecord& instance, const SearchConfig& config,
                      const backend::BackendSet& backends,
                      const RunOptions& options = {});

enum class CheckpointErrorCode { kVersionMismatch, kCorrupted };

class CheckpointError : public InputError {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& detail)
      : InputError(std::string(code == CheckpointErrorCode::kVersionMismatch
                                   ? "checkpoint version mismatch: "
                                   : "corrupted checkpoint: ") +
                   detail),
        code_(code) {}

  CheckpointErrorCode code() const noexcept { return code_; }

 private:
  CheckpointErrorCode code_;
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint(const SearchTree& tree);
SearchTree restore(std::string_view bytes);

}  // namespace cotforge::mcts
