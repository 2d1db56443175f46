#pragma once

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <utility>
#include <vector>

#include "cirp/corpus.hpp"
#include "cirp/error.hpp"
#include "cirp/rng.hpp"

namespace cirp {

/// Parameters of the complementary-cluster generator.
///
/// Items belong to latent clusters. Users co-purchase items from
/// complementary cluster pairs, and bundles are drawn from one pair. Each
/// item also carries a "style" drawn from a small set; bundles are
/// style-coherent while co-purchases are not, so style is recoverable only
/// from the item's own features.
struct SyntheticConfig {
  std::size_t num_items = 1000;
  std::size_t num_users = 2000;
  std::size_t num_clusters = 10;
  std::vector<std::pair<std::size_t, std::size_t>> complement_pairs = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
  std::size_t feature_dim = 32;
  double noise_sigma = 1.0;
  std::size_t interactions_per_user = 4;
  std::size_t bundle_count = 200;
  std::pair<std::size_t, std::size_t> bundle_size_range = {2, 4};
  std::uint64_t seed = 7;

  double complement_rate = 0.9;  // share of sessions drawn from a complementary pair
  std::size_t num_styles = 10;
  double style_share = 0.5;      // share of the item-level variance that is style
  double modality_noise = 0.5;   // per-modality noise, relative to noise_sigma

  void validate() const {
    if (num_items == 0 || num_clusters == 0 || feature_dim == 0 || num_styles == 0)
      throw ConfigError("synthetic: num_items, num_clusters, num_styles and feature_dim must be positive");
    if (num_items < num_clusters) throw ConfigError("synthetic: fewer items than clusters");
    if (noise_sigma < 0) throw ConfigError("synthetic: noise_sigma must be >= 0");
    if (complement_rate < 0 || complement_rate > 1) throw ConfigError("synthetic: complement_rate must be in [0,1]");
    if (style_share < 0 || style_share > 1) throw ConfigError("synthetic: style_share must be in [0,1]");
    if (modality_noise < 0) throw ConfigError("synthetic: modality_noise must be >= 0");
    if (bundle_size_range.first < 2 || bundle_size_range.second < bundle_size_range.first)
      throw ConfigError("synthetic: bundle_size_range must satisfy 2 <= min <= max");
    if (complement_pairs.empty()) throw ConfigError("synthetic: complement_pairs is empty");
    for (auto [a, b] : complement_pairs) {
      if (a >= num_clusters || b >= num_clusters)
        throw ConfigError("synthetic: complement pair index out of range");
      if (a == b) throw ConfigError("synthetic: complement pair must join two different clusters");
    }
    if (interactions_per_user < 2) throw ConfigError("synthetic: interactions_per_user must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"num_items", c.num_items},
       {"num_users", c.num_users},
       {"num_clusters", c.num_clusters},
       {"complement_pairs", c.complement_pairs},
       {"feature_dim", c.feature_dim},
       {"noise_sigma", c.noise_sigma},
       {"interactions_per_user", c.interactions_per_user},
       {"bundle_count", c.bundle_count},
       {"bundle_size_range", c.bundle_size_range},
       {"seed", c.seed},
       {"complement_rate", c.complement_rate},
       {"num_styles", c.num_styles},
       {"style_share", c.style_share},
       {"modality_noise", c.modality_noise}};
}

inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  const SyntheticConfig d;
  c.num_items = j.value("num_items", d.num_items);
  c.num_users = j.value("num_users", d.num_users);
  c.num_clusters = j.value("num_clusters", d.num_clusters);
  c.complement_pairs = j.value("complement_pairs", d.complement_pairs);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.interactions_per_user = j.value("interactions_per_user", d.interactions_per_user);
  c.bundle_count = j.value("bundle_count", d.bundle_count);
  c.bundle_size_range = j.value("bundle_size_range", d.bundle_size_range);
  c.seed = j.value("seed", d.seed);
  c.complement_rate = j.value("complement_rate", d.complement_rate);
  c.num_styles = j.value("num_styles", d.num_styles);
  c.style_share = j.value("style_share", d.style_share);
  c.modality_noise = j.value("modality_noise", d.modality_noise);
}

struct SyntheticData {
  std::vector<Interaction> interactions;
  FeatureMatrix image;
  FeatureMatrix text;
  BundleSet bundles;
  std::vector<std::size_t> cluster_of;  // by dense item index
  std::vector<std::size_t> style_of;
};

inline std::string synthetic_item_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item%05zu", i);
  return buf;
}

namespace detail {

inline Matrix random_rotation(std::size_t dim, Rng& rng) {
  Matrix g(dim, dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t c = 0; c < dim; ++c)
    if (r(c, c) < 0) q.col(c) *= -1.0;
  return q;
}

inline Vector gaussian_vector(std::size_t dim, double scale, Rng& rng) {
  Vector v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace detail

/// Deterministic given config.seed. Throws ConfigError on infeasible configs.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.num_items, dim = cfg.feature_dim;
  const double unit = 1.0 / std::sqrt(static_cast<double>(dim));

  SyntheticData out;
  out.cluster_of.resize(n);
  out.style_of.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.cluster_of[i] = i % cfg.num_clusters;
    out.style_of[i] = (i / cfg.num_clusters) % cfg.num_styles;
  }

  // Feasibility: every (pair, style) pool must hold a full bundle with both sides present.
  std::vector<std::vector<std::vector<std::size_t>>> members(
      cfg.num_clusters, std::vector<std::vector<std::size_t>>(cfg.num_styles));
  for (std::size_t i = 0; i < n; ++i) members[out.cluster_of[i]][out.style_of[i]].push_back(i);
  if (cfg.bundle_count > 0) {
    for (auto [a, b] : cfg.complement_pairs)
      for (std::size_t s = 0; s < cfg.num_styles; ++s)
        if (members[a][s].empty() || members[b][s].empty() ||
            members[a][s].size() + members[b][s].size() < cfg.bundle_size_range.second)
          throw ConfigError("synthetic: bundle size " + std::to_string(cfg.bundle_size_range.second) +
                            " exceeds the items available for cluster pair (" + std::to_string(a) + "," +
                            std::to_string(b) + ") and style " + std::to_string(s));
  }

  Rng feat_rng = Rng::derive(cfg.seed, 1);
  std::vector<Vector> prototypes, styles;
  for (std::size_t k = 0; k < cfg.num_clusters; ++k) prototypes.push_back(detail::gaussian_vector(dim, unit, feat_rng));
  for (std::size_t s = 0; s < cfg.num_styles; ++s) styles.push_back(detail::gaussian_vector(dim, unit, feat_rng));
  const Matrix rot_image = detail::random_rotation(dim, feat_rng);
  const Matrix rot_text = detail::random_rotation(dim, feat_rng);

  const double style_w = std::sqrt(cfg.style_share), own_w = std::sqrt(1.0 - cfg.style_share);
  const double sigma = cfg.noise_sigma, mod_sigma = cfg.noise_sigma * cfg.modality_noise;
  out.image.data.resize(n, dim);
  out.text.data.resize(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = synthetic_item_id(i);
    out.image.ids.push_back(id);
    out.text.ids.push_back(id);
    Vector z = prototypes[out.cluster_of[i]];
    if (sigma > 0) {
      const Vector own = detail::gaussian_vector(dim, unit, feat_rng);
      z += sigma * (style_w * styles[out.style_of[i]] + own_w * own);
    }
    Vector img = rot_image * z, txt = rot_text * z;
    if (mod_sigma > 0) {
      img += detail::gaussian_vector(dim, mod_sigma * unit, feat_rng);
      txt += detail::gaussian_vector(dim, mod_sigma * unit, feat_rng);
    }
    out.image.data.row(static_cast<Eigen::Index>(i)) = img.cast<float>().transpose();
    out.text.data.row(static_cast<Eigen::Index>(i)) = txt.cast<float>().transpose();
  }

  std::vector<std::vector<std::size_t>> by_cluster(cfg.num_clusters);
  for (std::size_t i = 0; i < n; ++i) by_cluster[out.cluster_of[i]].push_back(i);

  // Sessions of two purchases spaced 12h apart; sessions 3 days apart so
  // consecutive purchases across sessions never fall inside a 1-day window.
  Rng log_rng = Rng::derive(cfg.seed, 2);
  constexpr std::int64_t kBase = 1'600'000'000, kDay = 86'400, kSessionWindow = 12 * 3600;
  const std::size_t sessions = cfg.interactions_per_user / 2;
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    char uid[32];
    std::snprintf(uid, sizeof uid, "user%05zu", u);
    const std::int64_t start = kBase + static_cast<std::int64_t>(log_rng.below(kDay));
    for (std::size_t s = 0; s < sessions; ++s) {
      std::size_t first, second;
      if (log_rng.bernoulli(cfg.complement_rate)) {
        auto [a, b] = cfg.complement_pairs[log_rng.below(cfg.complement_pairs.size())];
        if (log_rng.bernoulli(0.5)) std::swap(a, b);
        first = by_cluster[a][log_rng.below(by_cluster[a].size())];
        second = by_cluster[b][log_rng.below(by_cluster[b].size())];
      } else {
        first = log_rng.below(n);
        do {
          second = log_rng.below(n);
        } while (second == first && n > 1);
      }
      const std::int64_t t0 = start + static_cast<std::int64_t>(s) * 3 * kDay;
      out.interactions.push_back({uid, synthetic_item_id(first), t0});
      out.interactions.push_back({uid, synthetic_item_id(second), t0 + kSessionWindow});
    }
  }

  Rng bundle_rng = Rng::derive(cfg.seed, 3);
  for (std::size_t bi = 0; bi < cfg.bundle_count; ++bi) {
    const auto [a, b] = cfg.complement_pairs[bundle_rng.below(cfg.complement_pairs.size())];
    const std::size_t style = bundle_rng.below(cfg.num_styles);
    const auto& pool_a = members[a][style];
    const auto& pool_b = members[b][style];
    const std::size_t lo = cfg.bundle_size_range.first, hi = cfg.bundle_size_range.second;
    const std::size_t size = lo + bundle_rng.below(hi - lo + 1);

    std::vector<std::size_t> chosen = {pool_a[bundle_rng.below(pool_a.size())],
                                       pool_b[bundle_rng.below(pool_b.size())]};
    std::vector<std::size_t> rest;
    for (auto i : pool_a)
      if (i != chosen[0]) rest.push_back(i);
    for (auto i : pool_b)
      if (i != chosen[1]) rest.push_back(i);
    bundle_rng.shuffle(rest.begin(), rest.end());
    for (std::size_t k = 0; chosen.size() < size; ++k) chosen.push_back(rest[k]);

    Bundle bundle;
    char bid[32];
    std::snprintf(bid, sizeof bid, "bundle%04zu", bi);
    bundle.bundle_id = bid;
    for (auto i : chosen) bundle.items.push_back(synthetic_item_id(i));
    out.bundles.bundles.push_back(std::move(bundle));
  }
  return out;
}

}  // namespace cirp
