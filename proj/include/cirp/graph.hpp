#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cirp/corpus.hpp"
#include "cirp/error.hpp"

namespace cirp {

struct Neighbor {
  ItemId index;
  std::uint32_t weight;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Edge {
  ItemId a;  // a < b
  ItemId b;
  std::uint32_t weight = 1;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected item-item graph with positive integer edge weights.
///
/// Adjacency lists are sorted by neighbor index and symmetric; self-loops are
/// never stored. Instances are immutable once built.
class ItemGraph {
 public:
  ItemGraph() = default;
  explicit ItemGraph(std::size_t num_items) : adjacency_(num_items) {}

  /// Builds from undirected edges; parallel edges accumulate weight.
  static ItemGraph from_edges(std::size_t num_items, const std::vector<Edge>& edges) {
    std::map<std::pair<ItemId, ItemId>, std::uint64_t> acc;
    for (const auto& e : edges) {
      if (e.a == e.b) throw DataError("self-loop on item index " + std::to_string(e.a));
      if (e.a >= num_items || e.b >= num_items) throw DataError("edge endpoint out of range");
      if (e.weight == 0) throw DataError("edge weight must be positive");
      acc[{std::min(e.a, e.b), std::max(e.a, e.b)}] += e.weight;
    }
    ItemGraph g(num_items);
    for (const auto& [key, w] : acc) {
      const auto weight = static_cast<std::uint32_t>(w);
      g.adjacency_[key.first].push_back({key.second, weight});
      g.adjacency_[key.second].push_back({key.first, weight});
    }
    for (auto& list : g.adjacency_)
      std::sort(list.begin(), list.end(), [](const Neighbor& x, const Neighbor& y) { return x.index < y.index; });
    g.edge_count_ = acc.size();
    return g;
  }

  std::size_t num_items() const { return adjacency_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  std::size_t degree(ItemId i) const { return adjacency_[i].size(); }
  const std::vector<Neighbor>& neighbors(ItemId i) const { return adjacency_[i]; }

  bool has_edge(ItemId i, ItemId j) const {
    const auto& list = adjacency_[i];
    auto it = std::lower_bound(list.begin(), list.end(), j,
                               [](const Neighbor& n, ItemId v) { return n.index < v; });
    return it != list.end() && it->index == j;
  }

  /// Each undirected edge once, ordered by (a, b) with a < b.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(edge_count_);
    for (ItemId i = 0; i < adjacency_.size(); ++i)
      for (const auto& n : adjacency_[i])
        if (i < n.index) out.push_back({i, n.index, n.weight});
    return out;
  }

  std::uint64_t total_weight() const {
    std::uint64_t w = 0;
    for (const auto& e : edges()) w += e.weight;
    return w;
  }

  friend bool operator==(const ItemGraph& x, const ItemGraph& y) {
    return x.edge_count_ == y.edge_count_ && x.adjacency_ == y.adjacency_;
  }

 private:
  std::vector<std::vector<Neighbor>> adjacency_;
  std::size_t edge_count_ = 0;
};

/// Throws DataError describing the first violated graph invariant.
inline void validate_graph(const ItemGraph& g) {
  std::size_t half_degree_sum = 0;
  for (ItemId i = 0; i < g.num_items(); ++i) {
    const auto& list = g.neighbors(i);
    half_degree_sum += list.size();
    for (std::size_t k = 0; k < list.size(); ++k) {
      const auto& n = list[k];
      if (n.index == i) throw DataError("self-loop on item index " + std::to_string(i));
      if (n.index >= g.num_items()) throw DataError("neighbor index out of range");
      if (k > 0 && list[k - 1].index >= n.index) throw DataError("adjacency not strictly sorted");
      if (n.weight == 0) throw DataError("zero edge weight");
      const auto& back = g.neighbors(n.index);
      auto it = std::lower_bound(back.begin(), back.end(), i,
                                 [](const Neighbor& x, ItemId v) { return x.index < v; });
      if (it == back.end() || it->index != i || it->weight != n.weight)
        throw DataError("asymmetric edge between " + std::to_string(i) + " and " + std::to_string(n.index));
    }
  }
  if (half_degree_sum != 2 * g.edge_count()) throw DataError("edge_count disagrees with adjacency");
}

inline bool is_valid_graph(const ItemGraph& g) {
  try {
    validate_graph(g);
    return true;
  } catch (const DataError&) {
    return false;
  }
}

enum class PairRule { consecutive, all_within_window };

struct GraphBuildOptions {
  std::int64_t window_seconds = 86'400;
  PairRule pair_rule = PairRule::consecutive;
};

NLOHMANN_JSON_SERIALIZE_ENUM(PairRule, {{PairRule::consecutive, "consecutive"},
                                        {PairRule::all_within_window, "all_within_window"}})

/// Co-purchase graph: per user, purchases sorted by time (stable for ties);
/// each qualifying pair of distinct items adds 1 to their edge weight.
inline ItemGraph build_graph(const std::vector<Interaction>& log, const ItemIndex& index,
                             const GraphBuildOptions& options = {}) {
  if (options.window_seconds <= 0) throw ConfigError("graph window must be positive");
  std::unordered_map<std::string, std::vector<std::pair<std::int64_t, ItemId>>> by_user;
  std::vector<std::string> user_order;
  for (const auto& x : log) {
    const ItemId item = index.at(x.item_id);
    auto [it, inserted] = by_user.try_emplace(x.user_id);
    if (inserted) user_order.push_back(x.user_id);
    it->second.emplace_back(x.timestamp, item);
  }
  std::vector<Edge> edges;
  for (const auto& user : user_order) {
    auto seq = by_user[user];
    std::stable_sort(seq.begin(), seq.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t k = 1; k < seq.size(); ++k) {
      if (options.pair_rule == PairRule::consecutive) {
        const auto& [ta, a] = seq[k - 1];
        const auto& [tb, b] = seq[k];
        if (tb - ta <= options.window_seconds && a != b) edges.push_back({a, b, 1});
      } else {
        for (std::size_t m = k; m-- > 0;) {
          if (seq[k].first - seq[m].first > options.window_seconds) break;
          if (seq[m].second != seq[k].second) edges.push_back({seq[m].second, seq[k].second, 1});
        }
      }
    }
  }
  return ItemGraph::from_edges(index.size(), edges);
}

struct GraphStats {
  std::size_t num_items = 0;
  std::size_t edge_count = 0;
  std::uint64_t total_weight = 0;
  std::map<std::size_t, std::size_t> degree_histogram;  // degree >= 1 -> item count
  std::size_t isolated = 0;
};

inline GraphStats graph_stats(const ItemGraph& g) {
  GraphStats s;
  s.num_items = g.num_items();
  s.edge_count = g.edge_count();
  s.total_weight = g.total_weight();
  for (ItemId i = 0; i < g.num_items(); ++i) {
    const auto d = g.degree(i);
    if (d == 0)
      ++s.isolated;
    else
      ++s.degree_histogram[d];
  }
  return s;
}

inline void to_json(nlohmann::json& j, const GraphStats& s) {
  nlohmann::json hist = nlohmann::json::object();
  for (auto [d, c] : s.degree_histogram) hist[std::to_string(d)] = c;
  j = {{"num_items", s.num_items},
       {"edge_count", s.edge_count},
       {"total_weight", s.total_weight},
       {"isolated_items", s.isolated},
       {"degree_histogram", hist}};
}

// ---------------------------------------------------------------------------
// edges.tsv: item_a<TAB>item_b<TAB>weight, each edge once with item_a < item_b.

inline void write_edges(const ItemGraph& g, const ItemIndex& index, const fs::path& path) {
  std::vector<std::tuple<std::string, std::string, std::uint32_t>> rows;
  rows.reserve(g.edge_count());
  for (const auto& e : g.edges()) {
    auto a = index.id(e.a), b = index.id(e.b);
    if (b < a) std::swap(a, b);
    rows.emplace_back(std::move(a), std::move(b), e.weight);
  }
  std::sort(rows.begin(), rows.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [a, b, w] : rows) out << a << '\t' << b << '\t' << w << '\n';
}

inline ItemGraph parse_edges(std::istream& in, const ItemIndex& index) {
  std::map<std::pair<ItemId, ItemId>, std::uint32_t> seen;  // directed as listed
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string a, b, w;
    const auto where = "edges line " + std::to_string(lineno);
    if (!std::getline(ss, a, '\t') || !std::getline(ss, b, '\t') || !std::getline(ss, w, '\t'))
      throw DataError(where + ": expected item_a<TAB>item_b<TAB>weight");
    if (a == b) throw DataError(where + ": self-loop on '" + a + "'");
    long long weight = 0;
    try {
      std::size_t used = 0;
      weight = std::stoll(w, &used);
      if (used != w.size()) throw std::invalid_argument(w);
    } catch (const std::exception&) {
      throw DataError(where + ": weight '" + w + "' is not an integer");
    }
    if (weight <= 0 || weight > 0xFFFFFFFFLL) throw DataError(where + ": weight must be a positive 32-bit integer");
    const ItemId ia = index.at(a), ib = index.at(b);
    const auto w32 = static_cast<std::uint32_t>(weight);
    if (seen.count({ia, ib})) throw DataError(where + ": duplicate edge " + a + " - " + b);
    if (auto rev = seen.find({ib, ia}); rev != seen.end()) {
      if (rev->second != w32) throw DataError(where + ": asymmetric edge " + a + " - " + b);
      seen.emplace(std::make_pair(ia, ib), w32);
      continue;  // both directions listed with equal weight
    }
    seen.emplace(std::make_pair(ia, ib), w32);
    edges.push_back({ia, ib, w32});
  }
  return ItemGraph::from_edges(index.size(), edges);
}

inline ItemGraph read_edges(const fs::path& path, const ItemIndex& index) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edges file " + path.string());
  return parse_edges(in, index);
}

}  // namespace cirp
