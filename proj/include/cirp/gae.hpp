#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <optional>
#include <cmath>
#include <functional>
#include <set>
#include <unordered_map>
#include <vector>

#include "cirp/corpus.hpp"
#include "cirp/error.hpp"
#include "cirp/graph.hpp"
#include "cirp/rng.hpp"

namespace cirp {

enum class Normalization { row, symmetric };
enum class Optimizer { sgd, adam };

NLOHMANN_JSON_SERIALIZE_ENUM(Normalization, {{Normalization::row, "row"}, {Normalization::symmetric, "symmetric"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Optimizer, {{Optimizer::sgd, "sgd"}, {Optimizer::adam, "adam"}})

/// Sparse normalized adjacency Â of a graph, applied as repeated products.
///
/// Row normalization uses 1/|N_i|; symmetric uses 1/sqrt(|N_i||N_j|).
/// Isolated items have an all-zero row, so they receive zero vectors at
/// every layer after the first.
class Propagation {
 public:
  Propagation(const ItemGraph& graph, Normalization norm) : graph_(&graph) {
    coef_.resize(graph.num_items());
    for (ItemId i = 0; i < graph.num_items(); ++i) {
      const auto& nbrs = graph.neighbors(i);
      coef_[i].reserve(nbrs.size());
      for (const auto& n : nbrs) {
        const double c = norm == Normalization::row
                             ? 1.0 / static_cast<double>(nbrs.size())
                             : 1.0 / std::sqrt(static_cast<double>(nbrs.size() * graph.degree(n.index)));
        coef_[i].push_back(c);
      }
    }
  }

  Propagation(ItemGraph&&, Normalization) = delete;

  /// Â X
  Matrix step(const Matrix& x) const {
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    for (ItemId i = 0; i < coef_.size(); ++i) {
      const auto& nbrs = graph_->neighbors(i);
      for (std::size_t k = 0; k < nbrs.size(); ++k) out.row(i) += coef_[i][k] * x.row(nbrs[k].index);
    }
    return out;
  }

  /// Âᵀ G
  Matrix step_transpose(const Matrix& g) const {
    Matrix out = Matrix::Zero(g.rows(), g.cols());
    for (ItemId i = 0; i < coef_.size(); ++i) {
      const auto& nbrs = graph_->neighbors(i);
      for (std::size_t k = 0; k < nbrs.size(); ++k) out.row(nbrs[k].index) += coef_[i][k] * g.row(i);
    }
    return out;
  }

  /// Σ_{k=0..K} Âᵏ E0
  Matrix forward(const Matrix& e0, int layers) const {
    Matrix sum = e0, layer = e0;
    for (int k = 0; k < layers; ++k) {
      layer = step(layer);
      sum += layer;
    }
    return sum;
  }

  /// Σ_{k=0..K} (Âᵀ)ᵏ G, the adjoint of forward().
  Matrix backward(const Matrix& g, int layers) const {
    Matrix sum = g, layer = g;
    for (int k = 0; k < layers; ++k) {
      layer = step_transpose(layer);
      sum += layer;
    }
    return sum;
  }

 private:
  const ItemGraph* graph_;
  std::vector<std::vector<double>> coef_;
};

/// Layer-summed neighborhood averaging over K layers.
inline Matrix propagate(const Matrix& e0, const ItemGraph& graph, int layers,
                        Normalization norm = Normalization::row) {
  if (static_cast<std::size_t>(e0.rows()) != graph.num_items())
    throw ConfigError("propagate: embedding rows do not match graph size");
  return Propagation(graph, norm).forward(e0, layers);
}

inline double score(const Matrix& e, ItemId i, ItemId j) { return e.row(i).dot(e.row(j)); }

struct Triple {
  ItemId anchor;
  ItemId positive;
  ItemId negative;
};

// -ln σ(x), stable for large |x|.
inline double neg_log_sigmoid(double x) {
  return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

namespace detail {

inline std::vector<ItemId> distinct_items(const std::vector<Triple>& triples) {
  std::set<ItemId> s;
  for (const auto& t : triples) s.insert({t.anchor, t.positive, t.negative});
  return {s.begin(), s.end()};
}

inline void check_triples(const std::vector<Triple>& triples, const ItemGraph& graph) {
  for (const auto& t : triples) {
    if (!graph.has_edge(t.anchor, t.positive))
      throw ContractError("bpr triple: (" + std::to_string(t.anchor) + "," + std::to_string(t.positive) +
                          ") is not an edge");
    if (t.anchor == t.negative || graph.has_edge(t.anchor, t.negative))
      throw ContractError("bpr triple: negative " + std::to_string(t.negative) + " is a neighbor of " +
                          std::to_string(t.anchor));
  }
}

}  // namespace detail

/// Σ -ln σ(s_ij - s_ij') + λ Σ ||e0_u||² over the distinct items u of the batch.
/// When `validate_against` is set, triples violating the edge/non-edge
/// precondition throw ContractError.
inline double bpr_loss(const Matrix& e_final, const std::vector<Triple>& triples, const Matrix& e0, double lambda,
                       const ItemGraph* validate_against = nullptr) {
  if (validate_against) detail::check_triples(triples, *validate_against);
  double loss = 0.0;
  for (const auto& t : triples)
    loss += neg_log_sigmoid(score(e_final, t.anchor, t.positive) - score(e_final, t.anchor, t.negative));
  if (lambda != 0.0)
    for (auto u : detail::distinct_items(triples)) loss += lambda * e0.row(u).squaredNorm();
  return loss;
}

struct LossAndGradient {
  double loss = 0.0;
  Matrix grad;  // w.r.t. layer-0 embeddings
};

/// bpr_loss of propagate(e0) and its exact gradient w.r.t. e0.
inline LossAndGradient bpr_loss_and_grad(const Matrix& e0, const Propagation& prop, int layers,
                                         const std::vector<Triple>& triples, double lambda) {
  const Matrix e = prop.forward(e0, layers);
  Matrix g_final = Matrix::Zero(e.rows(), e.cols());
  LossAndGradient out;
  for (const auto& t : triples) {
    const double x = score(e, t.anchor, t.positive) - score(e, t.anchor, t.negative);
    out.loss += neg_log_sigmoid(x);
    const double dx = -sigmoid(-x);
    g_final.row(t.anchor) += dx * (e.row(t.positive) - e.row(t.negative));
    g_final.row(t.positive) += dx * e.row(t.anchor);
    g_final.row(t.negative) -= dx * e.row(t.anchor);
  }
  out.grad = prop.backward(g_final, layers);
  if (lambda != 0.0) {
    for (auto u : detail::distinct_items(triples)) {
      out.loss += lambda * e0.row(u).squaredNorm();
      out.grad.row(u) += 2.0 * lambda * e0.row(u);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// link prediction evaluation

struct LinkMetrics {
  double auc = 0.0;
  double hit_rate_at_10 = 0.0;
};

/// AUC counts ties as 1/2. Hit rate ranks each positive (a,b) against the
/// negatives that share its anchor a; a hit is fewer than 10 outscoring it.
inline LinkMetrics eval_link_prediction(const Matrix& e, const std::vector<Edge>& positives,
                                        const std::vector<Edge>& negatives) {
  if (positives.empty() || negatives.empty()) throw ConfigError("link evaluation needs positive and negative pairs");
  std::vector<double> neg_scores;
  std::unordered_map<ItemId, std::vector<double>> neg_by_anchor;
  for (const auto& n : negatives) {
    const double s = score(e, n.a, n.b);
    neg_scores.push_back(s);
    neg_by_anchor[n.a].push_back(s);
  }
  std::sort(neg_scores.begin(), neg_scores.end());
  double wins = 0.0, hits = 0.0;
  for (const auto& p : positives) {
    const double s = score(e, p.a, p.b);
    const auto lo = std::lower_bound(neg_scores.begin(), neg_scores.end(), s);
    const auto hi = std::upper_bound(neg_scores.begin(), neg_scores.end(), s);
    wins += static_cast<double>(lo - neg_scores.begin()) + 0.5 * static_cast<double>(hi - lo);
    std::size_t above = 0;
    if (auto it = neg_by_anchor.find(p.a); it != neg_by_anchor.end())
      for (double ns : it->second) above += ns > s;
    hits += above < 10;
  }
  LinkMetrics m;
  m.auc = wins / (static_cast<double>(positives.size()) * static_cast<double>(neg_scores.size()));
  m.hit_rate_at_10 = hits / static_cast<double>(positives.size());
  return m;
}

// ---------------------------------------------------------------------------
// training

struct GaeConfig {
  double learning_rate = 0.5;
  double l2_lambda = 1e-4;
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  std::size_t negatives_per_positive = 1;
  std::size_t dim = 32;
  int layers = 2;
  std::uint64_t seed = 42;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
  Normalization norm = Normalization::row;
  Optimizer optimizer = Optimizer::sgd;
  double init_std = 0.1;
  bool weighted_sampling = false;
  bool validate_triples = false;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("gae: learning_rate must be > 0");
    if (l2_lambda < 0) throw ConfigError("gae: l2_lambda must be >= 0");
    if (dim < 1) throw ConfigError("gae: dim must be >= 1");
    if (layers < 0) throw ConfigError("gae: layers must be >= 0");
    if (batch_size < 1 || negatives_per_positive < 1) throw ConfigError("gae: batch_size and negatives must be >= 1");
    double sum = 0;
    for (double r : split_ratios) {
      if (r < 0) throw ConfigError("gae: negative split ratio");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("gae: split ratios must sum to 1");
    if (split_ratios[0] <= 0) throw ConfigError("gae: training split must be non-empty");
  }
};

inline void to_json(nlohmann::json& j, const GaeConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"l2_lambda", c.l2_lambda},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"negatives_per_positive", c.negatives_per_positive},
       {"dim", c.dim},
       {"layers", c.layers},
       {"seed", c.seed},
       {"split_ratios", c.split_ratios},
       {"norm", c.norm},
       {"optimizer", c.optimizer},
       {"init_std", c.init_std},
       {"weighted_sampling", c.weighted_sampling},
       {"validate_triples", c.validate_triples}};
}

inline void from_json(const nlohmann::json& j, GaeConfig& c) {
  const GaeConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.l2_lambda = j.value("l2_lambda", d.l2_lambda);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.negatives_per_positive = j.value("negatives_per_positive", d.negatives_per_positive);
  c.dim = j.value("dim", d.dim);
  c.layers = j.value("layers", d.layers);
  c.seed = j.value("seed", d.seed);
  c.split_ratios = j.value("split_ratios", d.split_ratios);
  c.norm = j.value("norm", d.norm);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.init_std = j.value("init_std", d.init_std);
  c.weighted_sampling = j.value("weighted_sampling", d.weighted_sampling);
  c.validate_triples = j.value("validate_triples", d.validate_triples);
}

struct GaeEpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean per triple, regularizer included
  double val_auc = 0.0;
  double mean_norm = 0.0;  // mean L2 norm of layer-0 rows after the epoch
  double wall_ms = 0.0;
};

inline void to_json(nlohmann::json& j, const GaeEpochLog& e) {
  j = {{"epoch", e.epoch}, {"loss", e.loss}, {"val_auc", e.val_auc}, {"mean_norm", e.mean_norm}, {"wall_ms", e.wall_ms}};
}

struct EdgeSplit {
  std::vector<Edge> train, validation, test;
};

inline EdgeSplit split_edges(const ItemGraph& graph, const std::array<double, 3>& ratios, Rng& rng) {
  auto edges = graph.edges();
  rng.shuffle(edges.begin(), edges.end());
  const auto n = edges.size();
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios[2] * static_cast<double>(n)));
  EdgeSplit s;
  const std::size_t n_train = n - n_val - n_test;
  s.train.assign(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_train),
                      edges.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), edges.end());
  return s;
}

/// Uniform item that is neither `anchor` nor one of its neighbors, or
/// nullopt when the anchor is adjacent to everything.
inline std::optional<ItemId> sample_non_neighbor(const ItemGraph& graph, ItemId anchor, Rng& rng) {
  const std::size_t n = graph.num_items();
  if (graph.degree(anchor) + 1 >= n) return std::nullopt;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto c = static_cast<ItemId>(rng.below(n));
    if (c != anchor && !graph.has_edge(anchor, c)) return c;
  }
  // Dense neighborhood: enumerate the complement.
  std::vector<ItemId> pool;
  for (ItemId c = 0; c < n; ++c)
    if (c != anchor && !graph.has_edge(anchor, c)) pool.push_back(c);
  return pool[rng.below(pool.size())];
}

/// Negatives paired with positives: (a, b) -> (a, n) with n not adjacent to a.
inline std::vector<Edge> sample_negative_pairs(const ItemGraph& graph, const std::vector<Edge>& positives, Rng& rng) {
  std::vector<Edge> out;
  out.reserve(positives.size());
  for (const auto& p : positives)
    if (auto n = sample_non_neighbor(graph, p.a, rng)) out.push_back({p.a, *n, 1});
  return out;
}

struct GaeResult {
  Matrix e0;          // best-validation layer-0 embeddings
  Matrix embeddings;  // e0 propagated over the full graph
  std::vector<GaeEpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  double test_auc = 0.0;
  EdgeSplit split;
};

namespace detail {

struct AdamState {
  Matrix m, v;
  std::size_t t = 0;
};

inline void adam_step(Matrix& param, const Matrix& grad, AdamState& st, double lr, double b1 = 0.9,
                      double b2 = 0.999, double eps = 1e-8) {
  if (st.m.size() == 0) {
    st.m = Matrix::Zero(param.rows(), param.cols());
    st.v = Matrix::Zero(param.rows(), param.cols());
  }
  ++st.t;
  st.m = b1 * st.m + (1 - b1) * grad;
  st.v = b2 * st.v + (1 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1 - std::pow(b2, static_cast<double>(st.t));
  param.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + eps);
}

inline double mean_row_norm(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  return m.rowwise().norm().mean();
}

}  // namespace detail

/// Link-prediction training of the graph auto-encoder.
///
/// Edges are split train/validation/test by a seeded shuffle. Propagation
/// during training uses only training edges; negatives are drawn among
/// non-neighbors in the full graph. The epoch with the best validation AUC
/// wins (the last epoch when there is no validation split). The returned
/// embeddings propagate that epoch's layer-0 table over the full graph.
inline GaeResult train_gae(const ItemGraph& graph, const GaeConfig& config,
                           const std::function<void(const GaeEpochLog&)>& on_epoch = {}) {
  config.validate();
  if (graph.edge_count() == 0) throw ConfigError("train_gae: graph has no edges");
  Rng rng(config.seed);
  GaeResult result;
  result.split = split_edges(graph, config.split_ratios, rng);
  const ItemGraph train_graph = ItemGraph::from_edges(graph.num_items(), result.split.train);
  const Propagation prop(train_graph, config.norm);
  const auto val_neg = sample_negative_pairs(graph, result.split.validation, rng);
  const auto test_neg = sample_negative_pairs(graph, result.split.test, rng);

  const auto n = static_cast<Eigen::Index>(graph.num_items());
  const auto d = static_cast<Eigen::Index>(config.dim);
  Matrix e0(n, d);
  for (Eigen::Index i = 0; i < e0.size(); ++i) e0.data()[i] = config.init_std * rng.normal();

  std::vector<double> cumulative;  // for weighted sampling
  if (config.weighted_sampling) {
    double acc = 0;
    for (const auto& e : result.split.train) cumulative.push_back(acc += e.weight);
  }

  detail::AdamState adam;
  result.e0 = e0;
  double best = -1.0;
  const bool has_val = !result.split.validation.empty() && !val_neg.empty();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Edge> order;
    if (config.weighted_sampling) {
      for (std::size_t k = 0; k < result.split.train.size(); ++k) {
        const double r = rng.uniform() * cumulative.back();
        const auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin();
        order.push_back(result.split.train[static_cast<std::size_t>(pos)]);
      }
    } else {
      order = result.split.train;
      rng.shuffle(order.begin(), order.end());
    }

    double epoch_loss = 0.0;
    std::size_t epoch_triples = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<Triple> triples;
      for (std::size_t k = start; k < stop; ++k) {
        auto [a, b, w] = order[k];
        if (rng.bernoulli(0.5)) std::swap(a, b);
        for (std::size_t r = 0; r < config.negatives_per_positive; ++r)
          if (auto neg = sample_non_neighbor(graph, a, rng)) triples.push_back({a, b, *neg});
      }
      if (triples.empty()) continue;
      if (config.validate_triples) detail::check_triples(triples, graph);
      auto lg = bpr_loss_and_grad(e0, prop, config.layers, triples, config.l2_lambda);
      const double scale = 1.0 / static_cast<double>(triples.size());
      lg.grad *= scale;
      if (config.optimizer == Optimizer::sgd)
        e0 -= config.learning_rate * lg.grad;
      else
        detail::adam_step(e0, lg.grad, adam, config.learning_rate);
      if (!std::isfinite(lg.loss) || !e0.allFinite())
        throw NumericalError("train_gae: non-finite loss or embeddings at epoch " + std::to_string(epoch));
      epoch_loss += lg.loss;
      epoch_triples += triples.size();
    }

    GaeEpochLog entry;
    entry.epoch = epoch;
    entry.loss = epoch_triples ? epoch_loss / static_cast<double>(epoch_triples) : 0.0;
    entry.mean_norm = detail::mean_row_norm(e0);
    if (has_val) entry.val_auc = eval_link_prediction(prop.forward(e0, config.layers), result.split.validation, val_neg).auc;
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (!has_val || entry.val_auc > best) {
      best = entry.val_auc;
      result.best_epoch = epoch;
      result.e0 = e0;
    }
  }
  result.best_val_auc = has_val ? best : 0.0;
  if (!result.split.test.empty() && !test_neg.empty())
    result.test_auc = eval_link_prediction(prop.forward(result.e0, config.layers), result.split.test, test_neg).auc;
  result.embeddings = propagate(result.e0, graph, config.layers, config.norm);
  return result;
}

}  // namespace cirp
