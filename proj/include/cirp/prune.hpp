#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <vector>

#include "cirp/corpus.hpp"
#include "cirp/error.hpp"
#include "cirp/gae.hpp"
#include "cirp/graph.hpp"

namespace cirp {

enum class RemovalRule { either_endpoint, both_endpoints };

NLOHMANN_JSON_SERIALIZE_ENUM(RemovalRule, {{RemovalRule::either_endpoint, "either_endpoint"},
                                           {RemovalRule::both_endpoints, "both_endpoints"}})

struct PruneConfig {
  double beta_percent = 30.0;
  RemovalRule removal_rule = RemovalRule::either_endpoint;

  void validate() const {
    if (!(beta_percent >= 0.0 && beta_percent <= 100.0)) throw ConfigError("prune: beta_percent must be in [0,100]");
  }
};

inline void to_json(nlohmann::json& j, const PruneConfig& c) {
  j = {{"beta_percent", c.beta_percent}, {"removal_rule", c.removal_rule}};
}

inline void from_json(const nlohmann::json& j, PruneConfig& c) {
  const PruneConfig d;
  c.beta_percent = j.value("beta_percent", d.beta_percent);
  c.removal_rule = j.value("removal_rule", d.removal_rule);
}

struct PruneReport {
  double beta_percent = 0.0;
  RemovalRule removal_rule = RemovalRule::either_endpoint;
  std::size_t edges_before = 0;
  std::size_t edges_after = 0;
};

inline void to_json(nlohmann::json& j, const PruneReport& r) {
  j = {{"beta_percent", r.beta_percent},
       {"removal_rule", r.removal_rule},
       {"edges_before", r.edges_before},
       {"edges_after", r.edges_after}};
}

/// Number of incident relations item i marks for removal: floor(β/100 · deg).
inline std::size_t marks_for_degree(double beta_percent, std::size_t degree) {
  // β·deg first keeps integral β exact.
  return static_cast<std::size_t>(std::floor(beta_percent * static_cast<double>(degree) / 100.0));
}

/// Per item, neighbors ranked by inner-product score ascending (smaller
/// neighbor index first on ties); the lowest floor(β%·deg) are marked. An
/// edge is dropped when marked by either endpoint, or by both under
/// RemovalRule::both_endpoints.
inline ItemGraph prune_graph(const ItemGraph& graph, const Matrix& embeddings, const PruneConfig& config,
                             const ItemIndex* index = nullptr, PruneReport* report = nullptr) {
  config.validate();
  if (static_cast<std::size_t>(embeddings.rows()) < graph.num_items()) {
    const auto missing = static_cast<ItemId>(embeddings.rows());
    throw DataError("prune: missing embedding row for item '" +
                    (index ? index->id(missing) : std::to_string(missing)) + "'");
  }

  // marked[i] holds the neighbor indices i marks, sorted.
  std::vector<std::vector<ItemId>> marked(graph.num_items());
  for (ItemId i = 0; i < graph.num_items(); ++i) {
    const auto& nbrs = graph.neighbors(i);
    const std::size_t count = marks_for_degree(config.beta_percent, nbrs.size());
    if (count == 0) continue;
    std::vector<std::pair<double, ItemId>> ranked;
    ranked.reserve(nbrs.size());
    for (const auto& n : nbrs) ranked.emplace_back(score(embeddings, i, n.index), n.index);
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t k = 0; k < count; ++k) marked[i].push_back(ranked[k].second);
    std::sort(marked[i].begin(), marked[i].end());
  }
  auto marks = [&](ItemId i, ItemId j) { return std::binary_search(marked[i].begin(), marked[i].end(), j); };

  std::vector<Edge> kept;
  for (const auto& e : graph.edges()) {
    const bool by_a = marks(e.a, e.b), by_b = marks(e.b, e.a);
    const bool drop = config.removal_rule == RemovalRule::either_endpoint ? (by_a || by_b) : (by_a && by_b);
    if (!drop) kept.push_back(e);
  }
  ItemGraph pruned = ItemGraph::from_edges(graph.num_items(), kept);
  if (report) *report = {config.beta_percent, config.removal_rule, graph.edge_count(), pruned.edge_count()};
  return pruned;
}

}  // namespace cirp
