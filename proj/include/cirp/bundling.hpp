#pragma once

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "cirp/corpus.hpp"
#include "cirp/error.hpp"
#include "cirp/rng.hpp"

namespace cirp {

/// x = ½(v + t), deliberately not re-normalized.
inline Vector item_repr(const Vector& v, const Vector& t) {
  if (v.size() != t.size()) throw ConfigError("item_repr: dimension mismatch");
  return 0.5 * (v + t);
}

/// Row-wise item_repr over whole tables.
inline Matrix item_reprs(const Matrix& v, const Matrix& t) {
  if (v.rows() != t.rows() || v.cols() != t.cols()) throw ConfigError("item_reprs: table shapes differ");
  return 0.5 * (v + t);
}

/// Mean of the partial bundle's item representations.
inline Vector bundle_repr(const Matrix& reps, std::span<const ItemId> items) {
  if (items.empty()) throw ConfigError("bundle_repr: empty partial bundle");
  Vector p = Vector::Zero(reps.cols());
  for (auto i : items) p += reps.row(i).transpose();
  return p / static_cast<double>(items.size());
}

/// Cosine similarity; -inf when either vector has zero norm.
inline double cosine_or_neg_inf(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return -std::numeric_limits<double>::infinity();
  return a.dot(b) / (na * nb);
}

struct ScoredItem {
  double score;
  ItemId item;
};

// Descending score, ascending item index on ties.
inline bool ranks_before(const ScoredItem& x, const ScoredItem& y) {
  if (x.score != y.score) return x.score > y.score;
  return x.item < y.item;
}

inline std::vector<ScoredItem> score_candidates(const Vector& p, const Matrix& reps, std::span<const ItemId> candidates) {
  std::vector<ScoredItem> scored;
  scored.reserve(candidates.size());
  const double np = p.norm();
  for (auto c : candidates) {
    const double nc = reps.row(c).norm();
    const double s = (np == 0.0 || nc == 0.0) ? -std::numeric_limits<double>::infinity()
                                              : reps.row(c).dot(p) / (nc * np);
    scored.push_back({s, c});
  }
  return scored;
}

/// Top-k candidates by cosine to p (ties: smaller index first).
inline std::vector<ItemId> complete_bundle(const Vector& p, const Matrix& reps, std::span<const ItemId> candidates,
                                           std::size_t k) {
  if (k < 1) throw ConfigError("complete_bundle: k must be >= 1");
  auto scored = score_candidates(p, reps, candidates);
  const std::size_t top = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top), scored.end(), ranks_before);
  std::vector<ItemId> out;
  out.reserve(top);
  for (std::size_t r = 0; r < top; ++r) out.push_back(scored[r].item);
  return out;
}

inline double recall_at_k(std::span<const ItemId> ranked, const std::set<ItemId>& truth, std::size_t k) {
  if (truth.empty()) throw ConfigError("recall_at_k: empty ground truth");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += truth.count(ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Binary-relevance NDCG with 1/log2(rank+1) discounts, ranks 1-based.
inline double ndcg_at_k(std::span<const ItemId> ranked, const std::set<ItemId>& truth, std::size_t k) {
  if (truth.empty()) throw ConfigError("ndcg_at_k: empty ground truth");
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
    if (truth.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  for (std::size_t r = 0; r < std::min(k, truth.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

// ---------------------------------------------------------------------------
// evaluation protocol

enum class Holdout { leave_one_out, fraction };
enum class CandidateScope { bundle_items, all_items };

NLOHMANN_JSON_SERIALIZE_ENUM(Holdout, {{Holdout::leave_one_out, "leave_one_out"}, {Holdout::fraction, "fraction"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CandidateScope, {{CandidateScope::bundle_items, "bundle_items"},
                                              {CandidateScope::all_items, "all_items"}})

struct EvalProtocol {
  Holdout holdout = Holdout::leave_one_out;
  double fraction = 0.5;  // share of each bundle held out under Holdout::fraction
  std::vector<std::size_t> k_list = {10, 20};
  CandidateScope candidate_scope = CandidateScope::bundle_items;
  bool exclude_seeds = true;
  std::uint64_t seed = 42;

  void validate() const {
    if (holdout == Holdout::fraction && !(fraction > 0 && fraction < 1))
      throw ConfigError("eval: holdout fraction must be in (0,1)");
    if (k_list.empty()) throw ConfigError("eval: k_list is empty");
    for (auto k : k_list)
      if (k < 1) throw ConfigError("eval: k must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const EvalProtocol& p) {
  j = {{"holdout", p.holdout},         {"fraction", p.fraction},
       {"k_list", p.k_list},           {"candidate_scope", p.candidate_scope},
       {"exclude_seeds", p.exclude_seeds}, {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, EvalProtocol& p) {
  const EvalProtocol d;
  p.holdout = j.value("holdout", d.holdout);
  p.fraction = j.value("fraction", d.fraction);
  p.k_list = j.value("k_list", d.k_list);
  p.candidate_scope = j.value("candidate_scope", d.candidate_scope);
  p.exclude_seeds = j.value("exclude_seeds", d.exclude_seeds);
  p.seed = j.value("seed", d.seed);
}

struct Query {
  std::size_t bundle = 0;
  std::vector<ItemId> seeds;
  std::vector<ItemId> truth;
};

inline std::vector<Query> make_queries(const std::vector<std::vector<ItemId>>& bundles, const EvalProtocol& protocol) {
  protocol.validate();
  std::vector<Query> out;
  Rng rng(protocol.seed);
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto& items = bundles[b];
    if (items.size() < 2) throw DataError("bundle " + std::to_string(b) + " has fewer than 2 items");
    if (protocol.holdout == Holdout::leave_one_out) {
      for (std::size_t r = 0; r < items.size(); ++r) {
        Query q;
        q.bundle = b;
        q.truth = {items[r]};
        for (std::size_t s = 0; s < items.size(); ++s)
          if (s != r) q.seeds.push_back(items[s]);
        out.push_back(std::move(q));
      }
    } else {
      auto shuffled = items;
      rng.shuffle(shuffled.begin(), shuffled.end());
      const auto n = shuffled.size();
      auto n_truth = static_cast<std::size_t>(std::llround(protocol.fraction * static_cast<double>(n)));
      n_truth = std::clamp<std::size_t>(n_truth, 1, n - 1);
      Query q;
      q.bundle = b;
      q.truth.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_truth));
      q.seeds.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_truth), shuffled.end());
      out.push_back(std::move(q));
    }
  }
  return out;
}

struct QueryRecord {
  std::size_t bundle = 0;
  ItemId held_out = 0;  // best-ranked ground-truth item
  std::size_t rank = 0;  // 1-based position in the full candidate ranking
};

struct MetricsReport {
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::size_t query_count = 0;
  std::size_t candidate_count = 0;
  EvalProtocol protocol;
  double wall_seconds = 0.0;
  std::vector<QueryRecord> queries;
};

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  nlohmann::json rec = nlohmann::json::object(), nd = nlohmann::json::object();
  for (auto [k, v] : r.recall) rec["recall@" + std::to_string(k)] = v;
  for (auto [k, v] : r.ndcg) nd["ndcg@" + std::to_string(k)] = v;
  j = {{"recall", rec},
       {"ndcg", nd},
       {"query_count", r.query_count},
       {"candidate_count", r.candidate_count},
       {"protocol", r.protocol},
       {"wall_seconds", r.wall_seconds}};
}

/// Candidate pool: distinct bundle items (sorted) or every item.
inline std::vector<ItemId> candidate_pool(const std::vector<std::vector<ItemId>>& bundles, std::size_t num_items,
                                          CandidateScope scope) {
  std::vector<ItemId> out;
  if (scope == CandidateScope::all_items) {
    for (ItemId i = 0; i < num_items; ++i) out.push_back(i);
    return out;
  }
  std::set<ItemId> s;
  for (const auto& b : bundles) s.insert(b.begin(), b.end());
  return {s.begin(), s.end()};
}

/// ItemKNN bundle completion scored with Recall@k / NDCG@k averaged over queries.
inline MetricsReport evaluate(const std::vector<std::vector<ItemId>>& bundles, const Matrix& v, const Matrix& t,
                              const EvalProtocol& protocol) {
  const auto start = std::chrono::steady_clock::now();
  protocol.validate();
  for (const auto& b : bundles)
    for (auto i : b)
      if (i >= static_cast<std::size_t>(v.rows())) throw DataError("bundle item index " + std::to_string(i) + " has no representation");
  const Matrix reps = item_reprs(v, t);
  const auto pool = candidate_pool(bundles, static_cast<std::size_t>(reps.rows()), protocol.candidate_scope);
  const auto queries = make_queries(bundles, protocol);

  MetricsReport report;
  report.protocol = protocol;
  report.candidate_count = pool.size();
  for (auto k : protocol.k_list) report.recall[k] = report.ndcg[k] = 0.0;
  std::vector<ItemId> candidates;
  for (const auto& q : queries) {
    const std::set<ItemId> seeds(q.seeds.begin(), q.seeds.end());
    candidates.clear();
    for (auto c : pool)
      if (!protocol.exclude_seeds || !seeds.count(c)) candidates.push_back(c);
    const Vector p = bundle_repr(reps, q.seeds);
    auto scored = score_candidates(p, reps, candidates);
    std::sort(scored.begin(), scored.end(), ranks_before);
    std::vector<ItemId> ranked;
    ranked.reserve(scored.size());
    for (const auto& s : scored) ranked.push_back(s.item);

    const std::set<ItemId> truth(q.truth.begin(), q.truth.end());
    for (auto k : protocol.k_list) {
      report.recall[k] += recall_at_k(ranked, truth, k);
      report.ndcg[k] += ndcg_at_k(ranked, truth, k);
    }
    QueryRecord rec{q.bundle, q.truth.front(), 0};
    for (std::size_t r = 0; r < ranked.size(); ++r)
      if (truth.count(ranked[r])) {
        rec.held_out = ranked[r];
        rec.rank = r + 1;
        break;
      }
    report.queries.push_back(rec);
  }
  report.query_count = queries.size();
  if (!queries.empty())
    for (auto k : protocol.k_list) {
      report.recall[k] /= static_cast<double>(queries.size());
      report.ndcg[k] /= static_cast<double>(queries.size());
    }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// representation analysis

struct RepStats {
  double s_avg = 0.0;    // mean cosine of random distinct item pairs
  double s_intra = 0.0;  // mean cosine of unordered intra-bundle pairs
  std::size_t random_pairs = 0;
  std::size_t intra_pairs = 0;
};

inline void to_json(nlohmann::json& j, const RepStats& s) {
  j = {{"s_avg", s.s_avg}, {"s_intra", s.s_intra}, {"random_pairs", s.random_pairs}, {"intra_pairs", s.intra_pairs}};
}

namespace detail {
inline double cosine_or_zero(const Matrix& x, ItemId a, ItemId b) {
  const double na = x.row(a).norm(), nb = x.row(b).norm();
  return (na == 0.0 || nb == 0.0) ? 0.0 : x.row(a).dot(x.row(b)) / (na * nb);
}
}  // namespace detail

/// Random pairs are drawn from `population` (distinct members); pass the
/// bundle item pool to mirror the downstream dataset.
inline RepStats rep_analysis(const Matrix& v, const Matrix& t, const std::vector<std::vector<ItemId>>& bundles,
                             std::span<const ItemId> population, std::size_t num_random_pairs, std::uint64_t seed) {
  if (num_random_pairs < 1) throw ConfigError("rep_analysis: num_random_pairs must be >= 1");
  if (population.size() < 2) throw ConfigError("rep_analysis: population needs at least 2 items");
  const Matrix x = item_reprs(v, t);
  RepStats s;
  Rng rng(seed);
  for (std::size_t k = 0; k < num_random_pairs; ++k) {
    const auto a = rng.below(population.size());
    auto b = rng.below(population.size() - 1);
    if (b >= a) ++b;
    s.s_avg += detail::cosine_or_zero(x, population[a], population[b]);
  }
  s.random_pairs = num_random_pairs;
  s.s_avg /= static_cast<double>(num_random_pairs);
  for (const auto& bundle : bundles)
    for (std::size_t i = 0; i < bundle.size(); ++i)
      for (std::size_t j = i + 1; j < bundle.size(); ++j) {
        s.s_intra += detail::cosine_or_zero(x, bundle[i], bundle[j]);
        ++s.intra_pairs;
      }
  if (s.intra_pairs) s.s_intra /= static_cast<double>(s.intra_pairs);
  return s;
}

struct Projection2d {
  std::vector<ItemId> items;
  Matrix coords;  // items.size() x 2
  bool degenerate = false;
};

/// Centered rows projected onto the top-2 principal directions. Each
/// direction is signed so that its largest-magnitude component is positive.
inline Projection2d project_2d(const Matrix& x, std::span<const ItemId> sample) {
  if (sample.size() < 3) throw ConfigError("project_2d: need at least 3 items");
  Projection2d out;
  out.items.assign(sample.begin(), sample.end());
  Matrix data(static_cast<Eigen::Index>(sample.size()), x.cols());
  for (std::size_t k = 0; k < sample.size(); ++k) data.row(static_cast<Eigen::Index>(k)) = x.row(sample[k]);
  const Eigen::RowVectorXd mean = data.colwise().mean();
  Matrix centered = data.rowwise() - mean;
  out.coords = Matrix::Zero(centered.rows(), 2);
  if (centered.norm() <= 1e-12 * (1.0 + data.norm()) || x.cols() == 0) {
    out.degenerate = true;
    return out;
  }
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(centered.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto d = cov.cols();
  for (int c = 0; c < 2; ++c) {
    if (d - 1 - c < 0) break;
    Eigen::VectorXd dir = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir[arg] < 0) dir = -dir;
    out.coords.col(c) = centered * dir;
  }
  return out;
}

}  // namespace cirp
