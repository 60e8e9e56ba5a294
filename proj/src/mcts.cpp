// Copyright 2026 The cotforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotforge/mcts.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <exception>
#include <future>
#include <limits>
#include <variant>

namespace cotforge::mcts {

using backend::BackendError;
using backend::BackendErrorCode;
using backend::RewardScore;
using backend::StepCandidate;

std::string_view to_string(RewardMode mode) {
  return mode == RewardMode::kSafetyLocal ? "safety_local" : "helpfulness_backprop";
}

RewardMode mode_for(Category category) {
  return should_refuse(category) ? RewardMode::kSafetyLocal
                                 : RewardMode::kHelpfulnessBackprop;
}

void SearchConfig::validate() const {
  if (!(exploration > 0.0) || !std::isfinite(exploration)) {
    throw ConfigError("search.C must be positive");
  }
  if (k < 1) throw ConfigError("search.k must be positive");
  if (max_iterations < 1) throw ConfigError("search.max_iterations must be positive");
  if (eval_retry_budget < 0) throw ConfigError("search.eval_retry_budget must be >= 0");
}

SearchTree SearchTree::create(InstanceRecord instance, const SearchConfig& config,
                              std::string config_digest) {
  config.validate();
  validate_instance(instance);
  SearchTree tree;
  tree.mode = mode_for(instance.category);
  if (tree.mode == RewardMode::kHelpfulnessBackprop) {
    for (int level = 1; level <= 4; ++level) {
      if (!instance.ground_truth.count(level)) {
        throw InputError("benign instance '" + instance.instance_id +
                         "' lacks a reference for level " + std::to_string(level));
      }
    }
  }
  tree.rng = Rng(derive_seed(config.seed, instance.instance_id));
  tree.instance = std::move(instance);
  tree.config_digest = std::move(config_digest);
  TreeNode root;
  root.id = 0;
  tree.nodes.push_back(std::move(root));
  return tree;
}

const TreeNode& SearchTree::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes.size()) {
    throw InternalError("node id out of range: " + std::to_string(id));
  }
  return nodes[static_cast<std::size_t>(id)];
}

TreeNode& SearchTree::node(NodeId id) {
  return const_cast<TreeNode&>(std::as_const(*this).node(id));
}

trace::ReasoningTrace SearchTree::path_trace(NodeId id) const {
  std::vector<NodeId> path;
  for (std::optional<NodeId> cur = id; cur; cur = node(*cur).parent) {
    if (node(*cur).level > 0) path.push_back(*cur);
  }
  trace::ReasoningTrace out;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const auto& n = node(*it);
    out.append(trace::Stage{*trace::stage_from_ordinal(n.level), n.step_text, std::nullopt});
  }
  return out;
}

double ucb_score(const TreeNode& node, std::int64_t parent_visits, double c) {
  if (node.n == 0) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(node.n);
  return node.q / n +
         c * std::sqrt(std::log(static_cast<double>(parent_visits)) / n);
}

std::int64_t selection_visits(const SearchTree& tree, NodeId parent) {
  const auto& p = tree.node(parent);
  std::int64_t children_sum = 0;
  for (NodeId child : p.children) children_sum += tree.node(child).n;
  return std::max<std::int64_t>({1, p.n, children_sum});
}

bool expandable(const SearchTree& tree, NodeId id, const SearchConfig& config) {
  const auto& n = tree.node(id);
  return !n.terminal && !n.exhausted &&
         static_cast<int>(n.children.size()) < config.k;
}

namespace {

// viable[id]: the subtree rooted at id holds an expandable or terminal node.
std::vector<char> viability(const SearchTree& tree, const SearchConfig& config) {
  std::vector<char> viable(tree.nodes.size(), 0);
  // Children always have larger ids than their parent.
  for (auto i = static_cast<NodeId>(tree.nodes.size()) - 1; i >= 0; --i) {
    const auto& n = tree.node(i);
    bool v = n.terminal || expandable(tree, i, config);
    for (NodeId child : n.children) v = v || viable[static_cast<std::size_t>(child)];
    viable[static_cast<std::size_t>(i)] = v;
  }
  return viable;
}

}  // namespace

std::optional<NodeId> select_path(const SearchTree& tree,
                                  const SearchConfig& config) {
  bool any_expandable = false;
  for (const auto& n : tree.nodes) {
    if (expandable(tree, n.id, config)) {
      any_expandable = true;
      break;
    }
  }
  if (!any_expandable) return std::nullopt;

  const auto viable = viability(tree, config);
  NodeId current = tree.root_id;
  while (true) {
    const auto& n = tree.node(current);
    if (n.terminal || expandable(tree, current, config)) return current;
    const std::int64_t parent_visits = selection_visits(tree, current);
    std::optional<NodeId> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (NodeId child : n.children) {
      if (!viable[static_cast<std::size_t>(child)]) continue;
      const double score = ucb_score(tree.node(child), parent_visits, config.exploration);
      if (!best || score > best_score) {
        best = child;
        best_score = score;
      }
    }
    if (!best) return std::nullopt;
    current = *best;
  }
}

namespace {

bool is_refusal(std::string_view text, const SearchConfig& config) {
  const auto body = trim(text);
  for (const auto& marker : config.refusal_markers) {
    if (!marker.empty() && body.substr(0, marker.size()) == marker) return true;
  }
  return false;
}

}  // namespace

ExpansionResult expand(SearchTree& tree, NodeId id, const SearchConfig& config,
                       const backend::Backend& policy) {
  if (!expandable(tree, id, config)) {
    throw BackendError(BackendErrorCode::kPrecondition,
                       "node " + std::to_string(id) + " is not expandable");
  }
  const auto prefix = tree.path_trace(id);
  const auto kind = trace::next_stage(prefix);
  if (!kind) throw InternalError("non-terminal node with a complete prefix");

  const int slots = config.k - static_cast<int>(tree.node(id).children.size());
  backend::GenerationOptions options;
  options.sample_offset = tree.node(id).samples_drawn;
  for (NodeId child : tree.node(id).children) {
    options.existing.push_back(tree.node(child).step_text);
  }
  options.request_seed = tree.rng.next();

  ExpansionResult result;
  backend::GenerationResult generated;
  try {
    generated = backend::generate_steps(policy, tree.instance, prefix, *kind,
                                        slots, options);
  } catch (const BackendError& e) {
    if (e.code() != BackendErrorCode::kCandidateStarvation) throw;
    spdlog::warn("tree '{}': node {} starved: {}", tree.tree_id(), id, e.what());
    auto& n = tree.node(id);
    n.samples_drawn += slots;
    n.exhausted = true;
    tree.stats.starved_nodes += 1;
    tree.stats.malformed_candidates += slots;
    result.starved = true;
    return result;
  }

  tree.node(id).samples_drawn += generated.requests;
  tree.stats.malformed_candidates += generated.malformed;
  tree.stats.duplicate_candidates += generated.duplicates;
  if (generated.candidates.empty()) {
    tree.node(id).exhausted = true;
    return result;
  }

  const int level = tree.node(id).level + 1;
  for (auto& candidate : generated.candidates) {
    TreeNode child;
    child.id = static_cast<NodeId>(tree.nodes.size());
    child.parent = id;
    child.level = level;
    child.step_text = std::move(candidate.text);
    child.terminal = level == 4;
    child.refusal = level == 4 && is_refusal(child.step_text, config);
    tree.node(id).children.push_back(child.id);
    result.children.push_back(child.id);
    tree.nodes.push_back(std::move(child));
  }
  return result;
}

RewardScore evaluate_node(const SearchTree& tree, NodeId id,
                          const backend::BackendSet& backends) {
  const auto& n = tree.node(id);
  if (n.level < 1) {
    throw BackendError(BackendErrorCode::kPrecondition, "the root has no step");
  }
  StepCandidate step;
  step.kind = *trace::stage_from_ordinal(n.level);
  step.text = n.step_text;
  if (tree.mode == RewardMode::kSafetyLocal) {
    if (!backends.safety_judge) throw ConfigError("no safety_judge backend configured");
    return backend::score_safety(*backends.safety_judge, tree.instance,
                                 tree.path_trace(*n.parent), step);
  }
  if (!backends.reference_scorer) {
    throw ConfigError("no reference_scorer backend configured");
  }
  return backend::score_helpfulness(*backends.reference_scorer, tree.instance, step);
}

void apply_reward(SearchTree& tree, NodeId id, const RewardScore& reward) {
  tree.stats.evaluations += 1;
  if (tree.mode == RewardMode::kSafetyLocal) {
    auto& n = tree.node(id);
    n.safety = reward;
    n.q += reward.value;
    n.n += 1;
    return;
  }
  for (std::optional<NodeId> cur = id; cur; cur = tree.node(*cur).parent) {
    auto& n = tree.node(*cur);
    n.q += reward.value;
    n.n += 1;
  }
}

namespace {

// Reward for one node, or nullopt when the verdict stays unparseable.
std::optional<RewardScore> score_with_budget(const SearchTree& tree, NodeId id,
                                             const SearchConfig& config,
                                             const backend::BackendSet& backends) {
  for (int attempt = 0; attempt <= config.eval_retry_budget; ++attempt) {
    try {
      return evaluate_node(tree, id, backends);
    } catch (const BackendError& e) {
      if (e.code() != BackendErrorCode::kScoring) throw;
      spdlog::warn("tree '{}': evaluation of node {} failed: {}", tree.tree_id(),
                   id, e.what());
    }
  }
  return std::nullopt;
}

std::vector<NodeStats> snapshot(const SearchTree& tree) {
  std::vector<NodeStats> out;
  out.reserve(tree.nodes.size());
  for (const auto& n : tree.nodes) out.push_back({n.q, n.n});
  return out;
}

void apply_observed(SearchTree& tree, NodeId id, const RewardScore& reward,
                    const RunOptions& options) {
  if (!options.observer) {
    apply_reward(tree, id, reward);
    return;
  }
  EvaluationEvent event;
  event.node = id;
  event.mode = tree.mode;
  event.reward = reward.value;
  event.before = snapshot(tree);
  apply_reward(tree, id, reward);
  event.after = snapshot(tree);
  options.observer(event);
}

void evaluate_batch(SearchTree& tree, const std::vector<NodeId>& ids,
                    const SearchConfig& config, const backend::BackendSet& backends,
                    const RunOptions& options) {
  using Outcome = std::variant<std::optional<RewardScore>, std::exception_ptr>;
  std::vector<Outcome> outcomes(ids.size());
  auto run_one = [&](std::size_t i) -> Outcome {
    try {
      return score_with_budget(tree, ids[i], config, backends);
    } catch (...) {
      return std::current_exception();
    }
  };
  if (config.parallel_evaluation && ids.size() > 1) {
    std::vector<std::future<Outcome>> futures;
    futures.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      futures.push_back(std::async(std::launch::async, run_one, i));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) outcomes[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < ids.size(); ++i) outcomes[i] = run_one(i);
  }
  // Merge in child order so cumulative sums are reproducible.
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (auto* error = std::get_if<std::exception_ptr>(&outcomes[i])) {
      std::rethrow_exception(*error);
    }
    const auto& reward = std::get<std::optional<RewardScore>>(outcomes[i]);
    if (reward) {
      apply_observed(tree, ids[i], *reward, options);
    } else {
      tree.stats.scoring_errors += 1;
    }
  }
}

}  // namespace

bool evaluate_and_propagate(SearchTree& tree, NodeId id, const SearchConfig& config,
                            const backend::BackendSet& backends) {
  auto reward = score_with_budget(tree, id, config, backends);
  if (!reward) {
    tree.stats.scoring_errors += 1;
    return false;
  }
  apply_reward(tree, id, *reward);
  return true;
}

void run_search(SearchTree& tree, const SearchConfig& config,
                const backend::BackendSet& backends, const RunOptions& options) {
  config.validate();
  if (!backends.policy) throw ConfigError("no policy backend configured");
  int this_call = 0;
  while (tree.iterations_done < config.max_iterations && !tree.exhausted) {
    if (options.stop_after && this_call >= *options.stop_after) break;
    const auto selected = select_path(tree, config);
    if (!selected) {
      tree.exhausted = true;
      break;
    }
    if (tree.node(*selected).terminal) {
      evaluate_batch(tree, {*selected}, config, backends, options);
    } else {
      const auto expansion = expand(tree, *selected, config, *backends.policy);
      evaluate_batch(tree, expansion.children, config, backends, options);
    }
    tree.iterations_done += 1;
    ++this_call;
    if (options.on_iteration) options.on_iteration(tree);
  }
  if (!tree.exhausted && tree.iterations_done < config.max_iterations &&
      !select_path(tree, config)) {
    tree.exhausted = true;
  }
}

SearchTree run_search(const InstanceRecord& instance, const SearchConfig& config,
                      const backend::BackendSet& backends, const RunOptions& options) {
  auto tree = SearchTree::create(instance, config);
  run_search(tree, config, backends, options);
  return tree;
}

}  // namespace cotforge::mcts
