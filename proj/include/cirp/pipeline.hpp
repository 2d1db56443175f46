#pragma once

#include <nlohmann/json.hpp>
#include <sys/utsname.h>

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "cirp/bundling.hpp"
#include "cirp/corpus.hpp"
#include "cirp/encoder.hpp"
#include "cirp/error.hpp"
#include "cirp/gae.hpp"
#include "cirp/graph.hpp"
#include "cirp/hash.hpp"
#include "cirp/prune.hpp"
#include "cirp/rng.hpp"
#include "cirp/synthetic.hpp"

namespace cirp {

using json = nlohmann::json;

enum class BaselineEncoder { init, identity };
NLOHMANN_JSON_SERIALIZE_ENUM(BaselineEncoder, {{BaselineEncoder::init, "init"}, {BaselineEncoder::identity, "identity"}})

struct PipelinePaths {
  std::string interactions;  // empty: <workdir>/data/interactions.tsv
  std::string image_features;
  std::string text_features;
  std::string bundles;
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string workdir = "work";
  PipelinePaths paths;
  GraphBuildOptions graph;
  GaeConfig gae;
  PruneConfig prune;
  ContrastConfig contrast;
  EvalProtocol eval;
  SyntheticConfig synthetic;
  std::vector<double> sweep_betas = {0, 30, 60, 90};
  double coldstart_fraction = 0.2;
  BaselineEncoder baseline_encoder = BaselineEncoder::init;
  std::size_t analysis_random_pairs = 10000;
  std::size_t projection_bundles = 20;

  /// Every stage seed is derived from the global seed.
  void apply_seed() {
    gae.seed = Rng::splitmix64(seed ^ 0x6761650000000000ULL);
    contrast.seed = Rng::splitmix64(seed ^ 0x7072650000000000ULL);
    eval.seed = Rng::splitmix64(seed ^ 0x6576610000000000ULL);
  }

  fs::path work() const { return fs::path(workdir); }
  fs::path interactions_path() const { return paths.interactions.empty() ? work() / "data" / "interactions.tsv" : fs::path(paths.interactions); }
  fs::path image_path() const { return paths.image_features.empty() ? work() / "data" / "image.fmat" : fs::path(paths.image_features); }
  fs::path text_path() const { return paths.text_features.empty() ? work() / "data" / "text.fmat" : fs::path(paths.text_features); }
  fs::path bundles_path() const { return paths.bundles.empty() ? work() / "data" / "bundles.jsonl" : fs::path(paths.bundles); }
};

inline void to_json(json& j, const PipelineConfig& c) {
  j = {{"seed", c.seed},
       {"workdir", c.workdir},
       {"paths",
        {{"interactions", c.paths.interactions},
         {"image_features", c.paths.image_features},
         {"text_features", c.paths.text_features},
         {"bundles", c.paths.bundles}}},
       {"graph", {{"window_seconds", c.graph.window_seconds}, {"pair_rule", c.graph.pair_rule}}},
       {"gae", c.gae},
       {"prune", c.prune},
       {"contrast", c.contrast},
       {"eval", c.eval},
       {"synthetic", c.synthetic},
       {"sweep", {{"betas", c.sweep_betas}}},
       {"coldstart", {{"fraction", c.coldstart_fraction}}},
       {"baseline", {{"encoder", c.baseline_encoder}}},
       {"analysis", {{"random_pairs", c.analysis_random_pairs}, {"projection_bundles", c.projection_bundles}}}};
}

inline void from_json(const json& j, PipelineConfig& c) {
  const PipelineConfig d;
  c.seed = j.value("seed", d.seed);
  c.workdir = j.value("workdir", d.workdir);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    c.paths.interactions = p.value("interactions", std::string());
    c.paths.image_features = p.value("image_features", std::string());
    c.paths.text_features = p.value("text_features", std::string());
    c.paths.bundles = p.value("bundles", std::string());
  }
  if (j.contains("graph")) {
    c.graph.window_seconds = j["graph"].value("window_seconds", d.graph.window_seconds);
    c.graph.pair_rule = j["graph"].value("pair_rule", d.graph.pair_rule);
  }
  if (j.contains("gae")) c.gae = j["gae"].get<GaeConfig>();
  if (j.contains("prune")) c.prune = j["prune"].get<PruneConfig>();
  if (j.contains("contrast")) c.contrast = j["contrast"].get<ContrastConfig>();
  if (j.contains("eval")) c.eval = j["eval"].get<EvalProtocol>();
  if (j.contains("synthetic")) c.synthetic = j["synthetic"].get<SyntheticConfig>();
  if (j.contains("sweep")) c.sweep_betas = j["sweep"].value("betas", d.sweep_betas);
  if (j.contains("coldstart")) c.coldstart_fraction = j["coldstart"].value("fraction", d.coldstart_fraction);
  if (j.contains("baseline")) c.baseline_encoder = j["baseline"].value("encoder", d.baseline_encoder);
  if (j.contains("analysis")) {
    c.analysis_random_pairs = j["analysis"].value("random_pairs", d.analysis_random_pairs);
    c.projection_bundles = j["analysis"].value("projection_bundles", d.projection_bundles);
  }
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in).get<PipelineConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Desk-scale benchmark used by the acceptance suite and configs/benchmark.json:
/// 1000 items, 10 clusters, 5 complement pairs, 200 bundles.
inline PipelineConfig benchmark_config(std::uint64_t seed) {
  PipelineConfig c;
  c.seed = seed;
  c.synthetic.seed = seed;
  c.contrast.learning_rate = 1e-3;
  c.contrast.batch_size = 64;
  c.prune.beta_percent = 30;
  c.apply_seed();
  return c;
}

/// Hash of the configuration, excluding where it runs.
inline std::string config_hash(const PipelineConfig& c) {
  json j = c;
  j.erase("workdir");
  return hash_string(j.dump());
}

inline std::string host_description() {
  utsname u{};
  std::string s = "unknown";
  if (uname(&u) == 0) s = std::string(u.sysname) + " " + u.release + " " + u.machine;
  return s + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
}

inline void log_line(const std::string& msg) { std::cerr << "[cirp] " << msg << '\n'; }

// ---------------------------------------------------------------------------
// artifacts

/// Writes `<file>.meta.json`: stage, config hash, seed, input fingerprints.
inline void write_sidecar(const fs::path& file, const std::string& stage, const PipelineConfig& cfg,
                          const std::vector<fs::path>& inputs, const json& extra = json::object()) {
  json in = json::array();
  for (const auto& p : inputs) in.push_back({{"name", p.filename().string()}, {"fingerprint", fingerprint_file(p)}});
  json meta = {{"stage", stage}, {"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"inputs", in},
               {"output_fingerprint", fingerprint_file(file)}};
  meta.update(extra);
  std::ofstream out(file.string() + ".meta.json", std::ios::binary);
  if (!out) throw DataError("cannot write sidecar for " + file.string());
  out << meta.dump(2) << '\n';
}

inline void write_json(const json& j, const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename T>
void write_jsonl(const std::vector<T>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) out << json(r).dump() << '\n';
}

inline FeatureMatrix to_feature_matrix(const Matrix& m, const ItemIndex& index) {
  FeatureMatrix fm;
  fm.ids = index.ids();
  fm.data = m.cast<float>();
  return fm;
}

inline Matrix round_to_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

// ---------------------------------------------------------------------------
// in-memory corpus

struct Corpus {
  ItemIndex index;
  Matrix image;
  Matrix text;
  std::vector<Interaction> interactions;
  BundleSet bundles;
  std::vector<std::vector<ItemId>> bundle_items;
};

/// The image feature file fixes the item order; text rows are aligned to it.
inline Corpus make_corpus(const FeatureMatrix& image, const FeatureMatrix& text, std::vector<Interaction> interactions,
                          BundleSet bundles) {
  image.validate();
  text.validate();
  bundles.validate();
  Corpus c;
  c.index = ItemIndex(image.ids);
  if (text.rows() != image.rows()) throw DataError("image and text feature files list different item counts");
  c.image = align_features(image, c.index);
  c.text = align_features(text, c.index);
  c.interactions = std::move(interactions);
  c.bundles = std::move(bundles);
  c.bundle_items = index_bundles(c.bundles, c.index);
  return c;
}

inline Corpus load_corpus(const PipelineConfig& cfg) {
  for (const auto& p : {cfg.interactions_path(), cfg.image_path(), cfg.text_path(), cfg.bundles_path()})
    if (!fs::exists(p)) throw DataError("input file not found: " + p.string());
  return make_corpus(load_features(cfg.image_path()), load_features(cfg.text_path()),
                     load_interactions(cfg.interactions_path()), load_bundles(cfg.bundles_path()));
}

inline Corpus corpus_from_synthetic(const SyntheticData& d) {
  return make_corpus(d.image, d.text, d.interactions, d.bundles);
}

/// Content fingerprint of a corpus (features, log and bundles).
inline std::string corpus_fingerprint(const Corpus& c) {
  Fnv1a h;
  for (const auto& id : c.index.ids()) h.update(id);
  const RowMatrixF img = c.image.cast<float>(), txt = c.text.cast<float>();
  h.update(img.data(), sizeof(float) * static_cast<std::size_t>(img.size()));
  h.update(txt.data(), sizeof(float) * static_cast<std::size_t>(txt.size()));
  for (const auto& x : c.interactions) {
    h.update(x.user_id);
    h.update(x.item_id);
    h.update(&x.timestamp, sizeof x.timestamp);
  }
  for (const auto& b : c.bundles.bundles) {
    h.update(b.bundle_id);
    for (const auto& i : b.items) h.update(i);
  }
  return hex64(h.digest());
}

// ---------------------------------------------------------------------------
// in-memory stage composition

inline EncoderParams baseline_params(const PipelineConfig& cfg, std::size_t input_dim) {
  if (cfg.baseline_encoder == BaselineEncoder::identity) return identity_encoder(input_dim, cfg.contrast.init_tau);
  // Same draw pretrain() makes for its initialization.
  Rng rng(cfg.contrast.seed);
  return init_encoder({input_dim, cfg.contrast.output_dim, cfg.contrast.hidden_dim}, rng, cfg.contrast.init_std,
                      cfg.contrast.init_tau);
}

struct VariantOutcome {
  std::string name;
  MetricsReport metrics;
  RepStats rep;
  std::size_t relation_edges = 0;  // edges used for pre-training
  double pretrain_wall_seconds = 0.0;
  std::size_t pretrain_steps = 0;
  Matrix v, t;
};

inline void to_json(json& j, const VariantOutcome& o) {
  j = {{"name", o.name},
       {"metrics", o.metrics},
       {"rep_stats", o.rep},
       {"relation_edges", o.relation_edges},
       {"pretrain_wall_seconds", o.pretrain_wall_seconds},
       {"pretrain_steps", o.pretrain_steps}};
}

struct RelationStage {
  ItemGraph graph;
  Matrix gae_embeddings;  // 32-bit rounded, as persisted
  GaeResult gae;
};

inline RelationStage build_relations(const Corpus& corpus, const PipelineConfig& cfg,
                                     const std::vector<Interaction>* log_override = nullptr) {
  RelationStage r;
  r.graph = build_graph(log_override ? *log_override : corpus.interactions, corpus.index, cfg.graph);
  r.gae = train_gae(r.graph, cfg.gae);
  r.gae_embeddings = round_to_float(r.gae.embeddings);
  return r;
}

/// One evaluated encoder: pruned (beta) relations -> pretrain(mode) -> evaluate.
/// `mode == nullopt` evaluates the untrained baseline encoder.
inline VariantOutcome run_variant(const std::string& name, const Corpus& corpus, const RelationStage& rel,
                                  const PipelineConfig& cfg, std::optional<LossMode> mode, double beta,
                                  const std::vector<std::vector<ItemId>>* eval_bundles = nullptr) {
  VariantOutcome out;
  out.name = name;
  const auto& bundles = eval_bundles ? *eval_bundles : corpus.bundle_items;
  EncoderParams params;
  if (mode) {
    PruneConfig pc = cfg.prune;
    pc.beta_percent = beta;
    const ItemGraph pruned = prune_graph(rel.graph, rel.gae_embeddings, pc, &corpus.index);
    ContrastConfig cc = cfg.contrast;
    cc.loss_mode = *mode;
    auto res = pretrain(pruned, corpus.image, corpus.text, cc);
    params = round_to_float(res.params);
    out.relation_edges = pruned.edge_count();
    out.pretrain_wall_seconds = res.wall_seconds;
    out.pretrain_steps = res.steps;
  } else {
    params = baseline_params(cfg, static_cast<std::size_t>(corpus.image.cols()));
  }
  std::tie(out.v, out.t) = embed_all(params, corpus.image, corpus.text);
  out.metrics = evaluate(bundles, out.v, out.t, cfg.eval);
  const auto pool = candidate_pool(bundles, corpus.index.size(), CandidateScope::bundle_items);
  out.rep = rep_analysis(out.v, out.t, bundles, pool, cfg.analysis_random_pairs, cfg.eval.seed);
  return out;
}

// ---------------------------------------------------------------------------
// studies

inline double metric_at(const std::map<std::size_t, double>& m, std::size_t k) {
  auto it = m.find(k);
  if (it == m.end()) throw ConfigError("eval.k_list must include " + std::to_string(k));
  return it->second;
}

struct SweepRow {
  double beta = 0.0;
  std::size_t edges = 0;
  double recall20 = 0.0;
  double ndcg20 = 0.0;
  double pretrain_wall_seconds = 0.0;
  std::string error;
};

/// prune -> pretrain -> evaluate for each beta (sorted); failures are
/// recorded per row and do not stop the sweep.
inline std::vector<SweepRow> sweep_prune(const Corpus& corpus, const RelationStage& rel, const PipelineConfig& cfg,
                                         std::vector<double> betas) {
  std::sort(betas.begin(), betas.end());
  std::vector<SweepRow> rows;
  for (double beta : betas) {
    SweepRow row;
    row.beta = beta;
    try {
      auto o = run_variant("beta", corpus, rel, cfg, cfg.contrast.loss_mode, beta);
      row.edges = o.relation_edges;
      row.recall20 = metric_at(o.metrics.recall, 20);
      row.ndcg20 = metric_at(o.metrics.ndcg, 20);
      row.pretrain_wall_seconds = o.pretrain_wall_seconds;
    } catch (const Error& e) {
      row.error = e.what();
    }
    log_line("sweep beta=" + std::to_string(beta) + " recall@20=" + std::to_string(row.recall20) +
             (row.error.empty() ? "" : " error: " + row.error));
    rows.push_back(row);
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "beta,edges,recall@20,ndcg@20,pretrain_wall_seconds,error\n";
  for (const auto& r : rows)
    out << r.beta << ',' << r.edges << ',' << r.recall20 << ',' << r.ndcg20 << ',' << r.pretrain_wall_seconds << ','
        << r.error << '\n';
  return out.str();
}

/// full / -ITC / -ITC&CIC / -RP under one seed.
inline json ablate(const Corpus& corpus, const RelationStage& rel, const PipelineConfig& cfg,
                   std::vector<VariantOutcome>* outcomes = nullptr) {
  std::vector<VariantOutcome> rows;
  rows.push_back(run_variant("full", corpus, rel, cfg, LossMode::itc_and_cic, cfg.prune.beta_percent));
  rows.push_back(run_variant("-ITC", corpus, rel, cfg, LossMode::cic_only, cfg.prune.beta_percent));
  rows.push_back(run_variant("-ITC&CIC", corpus, rel, cfg, std::nullopt, 0.0));
  rows.push_back(run_variant("-RP", corpus, rel, cfg, LossMode::itc_and_cic, 0.0));
  json meta = {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"data_fingerprint", corpus_fingerprint(corpus)}};
  json table = json::array();
  for (const auto& r : rows) {
    json row = r;
    row["metadata"] = meta;
    table.push_back(row);
  }
  if (outcomes) *outcomes = std::move(rows);
  return {{"rows", table}, {"graph_edges", rel.graph.edge_count()}};
}

struct ColdStartSplit {
  std::vector<std::size_t> bundles;       // selected bundle positions
  std::unordered_set<std::string> items;  // their items, removed from pre-training
};

/// Seeded bundle selection until their items cover `fraction` of all items.
inline ColdStartSplit select_cold_bundles(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("coldstart: fraction must be in (0,1)");
  std::vector<std::size_t> order(corpus.bundles.bundles.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const double target = fraction * static_cast<double>(corpus.index.size());
  ColdStartSplit split;
  for (auto b : order) {
    if (static_cast<double>(split.items.size()) >= target) break;
    split.bundles.push_back(b);
    for (const auto& id : corpus.bundles.bundles[b].items) split.items.insert(id);
  }
  std::sort(split.bundles.begin(), split.bundles.end());
  return split;
}

struct ColdStartOutcome {
  VariantOutcome warm, cold, baseline;
  std::size_t warm_graph_edges = 0, cold_graph_edges = 0;
  std::size_t excluded_items = 0;
  std::size_t evaluated_bundles = 0;
  bool downstream_absent_from_cold_graph = true;
};

inline ColdStartOutcome coldstart(const Corpus& corpus, const PipelineConfig& cfg) {
  ColdStartOutcome out;
  const auto split = select_cold_bundles(corpus, cfg.coldstart_fraction, cfg.eval.seed);
  std::vector<std::vector<ItemId>> eval_bundles;
  for (auto b : split.bundles) eval_bundles.push_back(corpus.bundle_items[b]);
  out.excluded_items = split.items.size();
  out.evaluated_bundles = eval_bundles.size();

  const auto warm_rel = build_relations(corpus, cfg);
  const auto cold_log = filter_cold_start(corpus.interactions, split.items);
  const auto cold_rel = build_relations(corpus, cfg, &cold_log);
  out.warm_graph_edges = warm_rel.graph.edge_count();
  out.cold_graph_edges = cold_rel.graph.edge_count();
  for (const auto& id : split.items)
    if (cold_rel.graph.degree(corpus.index.at(id)) != 0) out.downstream_absent_from_cold_graph = false;

  out.warm = run_variant("warm", corpus, warm_rel, cfg, cfg.contrast.loss_mode, cfg.prune.beta_percent, &eval_bundles);
  out.cold = run_variant("cold", corpus, cold_rel, cfg, cfg.contrast.loss_mode, cfg.prune.beta_percent, &eval_bundles);
  out.baseline = run_variant("untrained", corpus, cold_rel, cfg, std::nullopt, 0.0, &eval_bundles);
  return out;
}

inline json to_json(const ColdStartOutcome& o) {
  json warm = o.warm, cold = o.cold;
  warm["graph_edges"] = o.warm_graph_edges;
  cold["graph_edges"] = o.cold_graph_edges;
  return {{"warm", warm},
          {"cold", cold},
          {"untrained", json(o.baseline)},
          {"excluded_items", o.excluded_items},
          {"evaluated_bundles", o.evaluated_bundles},
          {"downstream_absent_from_cold_graph", o.downstream_absent_from_cold_graph}};
}

}  // namespace cirp
