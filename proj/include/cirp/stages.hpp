#pragma once

// File-backed pipeline stages. Each stage reads its inputs from the workdir
// layout, writes its artifacts plus `.meta.json` sidecars, and records wall
// times in a separate timing.json so that every other file is reproducible.
//
//   data/      interactions.tsv image.fmat text.fmat bundles.jsonl clusters.tsv
//   graph/     edges.tsv stats.json
//   gae/       embeddings.fmat train_log.jsonl report.json
//   prune/     edges.tsv report.json
//   pretrain/  checkpoint.json *.fmat train_log.jsonl
//   embed/     image.fmat text.fmat
//   eval/      metrics.json queries.csv
//   analyze/   rep_stats.json projection.csv

#include "cirp/pipeline.hpp"

namespace cirp {

struct StageOptions {
  std::string out;                    // output directory override
  std::optional<double> beta;         // prune
  std::optional<LossMode> loss_mode;  // pretrain
};

namespace detail {

inline json strip_timing(json j) {
  if (j.is_object()) {
    j.erase("wall_ms");
    j.erase("wall_seconds");
    j.erase("pretrain_wall_seconds");
    for (auto& [k, v] : j.items()) v = strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timing(v);
  }
  return j;
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  void write(const fs::path& dir, const std::string& stage, json extra = json::object()) const {
    extra["stage"] = stage;
    extra["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    extra["host"] = host_description();
    write_json(extra, dir / "timing.json");
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline fs::path stage_dir(const PipelineConfig& cfg, const StageOptions& opt, const std::string& name) {
  fs::path dir = opt.out.empty() ? cfg.work() / name : fs::path(opt.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline void require(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("input file not found: " + p.string());
}

inline ItemIndex load_item_index(const PipelineConfig& cfg) {
  require(cfg.image_path());
  const auto ids = ids_path_for(cfg.image_path());
  require(ids);
  return ItemIndex(read_lines(ids));
}

inline std::vector<fs::path> feature_inputs(const PipelineConfig& cfg) {
  return {cfg.image_path(), cfg.text_path()};
}

}  // namespace detail

inline void stage_synth(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const fs::path dir = detail::stage_dir(cfg, opt, "data");
  const auto data = generate_synthetic(cfg.synthetic);
  const fs::path inter = dir / "interactions.tsv", img = dir / "image.fmat", txt = dir / "text.fmat",
                 bun = dir / "bundles.jsonl", clu = dir / "clusters.tsv";
  save_interactions(data.interactions, inter);
  save_features(data.image, img);
  save_features(data.text, txt);
  save_bundles(data.bundles, bun);
  {
    std::ofstream out(clu, std::ios::binary);
    out << "# item_id\tcluster\tstyle\n";
    for (std::size_t i = 0; i < data.cluster_of.size(); ++i)
      out << data.image.ids[i] << '\t' << data.cluster_of[i] << '\t' << data.style_of[i] << '\n';
  }
  for (const auto& f : {inter, img, ids_path_for(img), txt, ids_path_for(txt), bun, clu}) write_sidecar(f, "synth", cfg, {});
  timer.write(dir, "synth");
  log_line("synth: " + std::to_string(data.interactions.size()) + " interactions, " +
           std::to_string(data.bundles.bundles.size()) + " bundles -> " + dir.string());
}

inline void stage_build_graph(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  detail::require(cfg.interactions_path());
  const auto index = detail::load_item_index(cfg);
  const auto log = load_interactions(cfg.interactions_path());
  const auto graph = build_graph(log, index, cfg.graph);
  const fs::path dir = detail::stage_dir(cfg, opt, "graph");
  const std::vector<fs::path> inputs = {cfg.interactions_path(), ids_path_for(cfg.image_path())};
  write_edges(graph, index, dir / "edges.tsv");
  write_sidecar(dir / "edges.tsv", "build-graph", cfg, inputs);
  write_json(graph_stats(graph), dir / "stats.json");
  write_sidecar(dir / "stats.json", "build-graph", cfg, inputs);
  timer.write(dir, "build-graph");
  log_line("build-graph: " + std::to_string(graph.edge_count()) + " edges over " + std::to_string(index.size()) +
           " items");
}

inline void stage_train_gae(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const auto index = detail::load_item_index(cfg);
  const fs::path edges = cfg.work() / "graph" / "edges.tsv";
  detail::require(edges);
  const auto graph = read_edges(edges, index);
  log_line("train-gae: seed " + std::to_string(cfg.gae.seed));
  const auto res = train_gae(graph, cfg.gae);
  const fs::path dir = detail::stage_dir(cfg, opt, "gae");
  const std::vector<fs::path> inputs = {edges, ids_path_for(cfg.image_path())};
  save_features(to_feature_matrix(res.embeddings, index), dir / "embeddings.fmat");
  std::vector<json> log;
  for (const auto& e : res.log) log.push_back(detail::strip_timing(e));
  write_jsonl(log, dir / "train_log.jsonl");
  write_json({{"best_epoch", res.best_epoch},
              {"best_val_auc", res.best_val_auc},
              {"test_auc", res.test_auc},
              {"split", {{"train", res.split.train.size()}, {"val", res.split.validation.size()}, {"test", res.split.test.size()}}},
              {"config", cfg.gae}},
             dir / "report.json");
  for (const auto& f : {dir / "embeddings.fmat", ids_path_for(dir / "embeddings.fmat"), dir / "train_log.jsonl",
                        dir / "report.json"})
    write_sidecar(f, "train-gae", cfg, inputs);
  json timing = {{"epochs", json::array()}};
  for (const auto& e : res.log) timing["epochs"].push_back({{"epoch", e.epoch}, {"wall_ms", e.wall_ms}});
  timer.write(dir, "train-gae", timing);
  log_line("train-gae: best val AUC " + std::to_string(res.best_val_auc) + ", test AUC " +
           std::to_string(res.test_auc));
}

inline void stage_prune(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const auto index = detail::load_item_index(cfg);
  const fs::path edges = cfg.work() / "graph" / "edges.tsv", emb = cfg.work() / "gae" / "embeddings.fmat";
  detail::require(edges);
  detail::require(emb);
  const auto graph = read_edges(edges, index);
  const Matrix e = align_features(load_features(emb), index);
  PruneConfig pc = cfg.prune;
  if (opt.beta) pc.beta_percent = *opt.beta;
  PruneReport report;
  const auto pruned = prune_graph(graph, e, pc, &index, &report);
  const fs::path dir = detail::stage_dir(cfg, opt, "prune");
  const std::vector<fs::path> inputs = {edges, emb};
  write_edges(pruned, index, dir / "edges.tsv");
  write_json(report, dir / "report.json");
  write_sidecar(dir / "edges.tsv", "prune", cfg, inputs);
  write_sidecar(dir / "report.json", "prune", cfg, inputs);
  timer.write(dir, "prune");
  log_line("prune: beta " + std::to_string(pc.beta_percent) + ", " + std::to_string(report.edges_before) + " -> " +
           std::to_string(report.edges_after) + " edges");
}

inline void stage_pretrain(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const auto index = detail::load_item_index(cfg);
  const fs::path edges = cfg.work() / "prune" / "edges.tsv";
  detail::require(edges);
  detail::require(cfg.text_path());
  const auto graph = read_edges(edges, index);
  const Matrix image = align_features(load_features(cfg.image_path()), index);
  const Matrix text = align_features(load_features(cfg.text_path()), index);
  ContrastConfig cc = cfg.contrast;
  if (opt.loss_mode) cc.loss_mode = *opt.loss_mode;
  log_line("pretrain: seed " + std::to_string(cc.seed) + ", " + std::to_string(graph.edge_count()) + " relations");
  const auto res = pretrain(graph, image, text, cc);
  const fs::path dir = detail::stage_dir(cfg, opt, "pretrain");
  save_checkpoint(res.params, dir, {{"contrast", cc}, {"steps", res.steps}});
  std::vector<json> log;
  for (const auto& s : res.log) log.push_back(detail::strip_timing(s));
  write_jsonl(log, dir / "train_log.jsonl");
  std::vector<fs::path> inputs = detail::feature_inputs(cfg);
  inputs.insert(inputs.begin(), edges);
  write_sidecar(dir / "checkpoint.json", "pretrain", cfg, inputs);
  res.params.visit([&](const Matrix&, TensorKind, const std::string& name) {
    write_sidecar(dir / (name + ".fmat"), "pretrain", cfg, inputs);
  });
  write_sidecar(dir / "train_log.jsonl", "pretrain", cfg, inputs);
  timer.write(dir, "pretrain", {{"pretrain_wall_seconds", res.wall_seconds}, {"steps", res.steps}});
  log_line("pretrain: " + std::to_string(res.steps) + " steps in " + std::to_string(res.wall_seconds) + " s, tau " +
           std::to_string(res.params.tau()));
}

inline void stage_embed(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const auto index = detail::load_item_index(cfg);
  detail::require(cfg.text_path());
  const fs::path ckpt = cfg.work() / "pretrain";
  detail::require(ckpt / "checkpoint.json");
  const auto params = load_checkpoint(ckpt);
  const Matrix image = align_features(load_features(cfg.image_path()), index);
  const Matrix text = align_features(load_features(cfg.text_path()), index);
  const auto [v, t] = embed_all(params, image, text);
  const fs::path dir = detail::stage_dir(cfg, opt, "embed");
  save_features(to_feature_matrix(v, index), dir / "image.fmat");
  save_features(to_feature_matrix(t, index), dir / "text.fmat");
  std::vector<fs::path> inputs = detail::feature_inputs(cfg);
  inputs.push_back(ckpt / "checkpoint.json");
  for (const auto& f : {dir / "image.fmat", ids_path_for(dir / "image.fmat"), dir / "text.fmat",
                        ids_path_for(dir / "text.fmat")})
    write_sidecar(f, "embed", cfg, inputs);
  timer.write(dir, "embed");
  log_line("embed: " + std::to_string(v.rows()) + " items x " + std::to_string(v.cols()));
}

namespace detail {
struct Embedded {
  ItemIndex index;
  Matrix v, t;
  BundleSet bundles;
  std::vector<std::vector<ItemId>> bundle_items;
  std::vector<fs::path> inputs;
};

inline Embedded load_embedded(const PipelineConfig& cfg) {
  Embedded e;
  const fs::path vi = cfg.work() / "embed" / "image.fmat", ti = cfg.work() / "embed" / "text.fmat";
  require(vi);
  require(ti);
  require(cfg.bundles_path());
  const auto vf = load_features(vi);
  e.index = ItemIndex(vf.ids);
  e.v = align_features(vf, e.index);
  e.t = align_features(load_features(ti), e.index);
  e.bundles = load_bundles(cfg.bundles_path());
  e.bundle_items = index_bundles(e.bundles, e.index);
  e.inputs = {vi, ti, cfg.bundles_path()};
  return e;
}
}  // namespace detail

inline void stage_bundle_eval(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const auto e = detail::load_embedded(cfg);
  const auto report = evaluate(e.bundle_items, e.v, e.t, cfg.eval);
  const fs::path dir = detail::stage_dir(cfg, opt, "eval");
  write_json(detail::strip_timing(report), dir / "metrics.json");
  {
    std::ofstream out(dir / "queries.csv", std::ios::binary);
    out << "bundle_id,held_out,rank\n";
    for (const auto& q : report.queries)
      out << e.bundles.bundles[q.bundle].bundle_id << ',' << e.index.id(q.held_out) << ',' << q.rank << '\n';
  }
  write_sidecar(dir / "metrics.json", "bundle-eval", cfg, e.inputs);
  write_sidecar(dir / "queries.csv", "bundle-eval", cfg, e.inputs);
  timer.write(dir, "bundle-eval", {{"evaluate_wall_seconds", report.wall_seconds}});
  std::string summary;
  for (auto [k, r] : report.recall) summary += " recall@" + std::to_string(k) + "=" + std::to_string(r);
  log_line("bundle-eval:" + summary + " over " + std::to_string(report.query_count) + " queries");
}

inline void stage_analyze(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  detail::StageTimer timer;
  const auto e = detail::load_embedded(cfg);
  const auto pool = candidate_pool(e.bundle_items, e.index.size(), CandidateScope::bundle_items);
  const auto stats = rep_analysis(e.v, e.t, e.bundle_items, pool, cfg.analysis_random_pairs, cfg.eval.seed);
  const fs::path dir = detail::stage_dir(cfg, opt, "analyze");
  write_json(stats, dir / "rep_stats.json");

  // Items of the first `projection_bundles` bundles, first occurrence wins.
  std::vector<ItemId> sample;
  std::vector<std::string> owner;
  std::unordered_set<ItemId> seen;
  for (std::size_t b = 0; b < e.bundle_items.size() && b < cfg.projection_bundles; ++b)
    for (auto i : e.bundle_items[b])
      if (seen.insert(i).second) {
        sample.push_back(i);
        owner.push_back(e.bundles.bundles[b].bundle_id);
      }
  std::ofstream out(dir / "projection.csv", std::ios::binary);
  out.precision(9);
  out << "item_id,x,y,bundle_id\n";
  if (sample.size() >= 3) {
    const auto proj = project_2d(item_reprs(e.v, e.t), sample);
    for (std::size_t k = 0; k < sample.size(); ++k)
      out << e.index.id(sample[k]) << ',' << proj.coords(static_cast<Eigen::Index>(k), 0) << ','
          << proj.coords(static_cast<Eigen::Index>(k), 1) << ',' << owner[k] << '\n';
  }
  out.close();
  write_sidecar(dir / "rep_stats.json", "analyze", cfg, e.inputs);
  write_sidecar(dir / "projection.csv", "analyze", cfg, e.inputs);
  timer.write(dir, "analyze");
  log_line("analyze: s_avg " + std::to_string(stats.s_avg) + ", s_intra " + std::to_string(stats.s_intra));
}

/// Every stage in order, each reading what the previous one wrote.
inline void stage_run(const PipelineConfig& cfg, bool with_synth) {
  if (with_synth) stage_synth(cfg);
  stage_build_graph(cfg);
  stage_train_gae(cfg);
  stage_prune(cfg);
  stage_pretrain(cfg);
  stage_embed(cfg);
  stage_bundle_eval(cfg);
  stage_analyze(cfg);
}

// ---------------------------------------------------------------------------
// experiment commands

inline fs::path output_file(const PipelineConfig& cfg, const StageOptions& opt, const std::string& dir,
                            const std::string& name) {
  fs::path p = opt.out.empty() ? cfg.work() / dir / name : fs::path(opt.out);
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  return p;
}

inline std::vector<fs::path> corpus_inputs(const PipelineConfig& cfg) {
  return {cfg.interactions_path(), cfg.image_path(), cfg.text_path(), cfg.bundles_path()};
}

inline void cmd_sweep_prune(const PipelineConfig& cfg, const std::vector<double>& betas, const StageOptions& opt = {}) {
  for (double b : betas)
    if (!(b >= 0 && b <= 100)) throw ConfigError("sweep-prune: beta values must lie in [0,100]");
  const auto corpus = load_corpus(cfg);
  const auto rel = build_relations(corpus, cfg);
  const auto rows = sweep_prune(corpus, rel, cfg, betas);
  const fs::path out = output_file(cfg, opt, "sweep", "sweep_prune.csv");
  std::ofstream(out, std::ios::binary) << sweep_csv(rows);
  write_sidecar(out, "sweep-prune", cfg, corpus_inputs(cfg), {{"host", host_description()}});
  log_line("sweep-prune -> " + out.string());
}

inline void cmd_ablate(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  const detail::StageTimer timer;
  const auto corpus = load_corpus(cfg);
  const auto rel = build_relations(corpus, cfg);
  std::vector<VariantOutcome> rows;
  const json table = ablate(corpus, rel, cfg, &rows);
  const fs::path out = output_file(cfg, opt, "ablate", "ablation.json");
  write_json(detail::strip_timing(table), out);
  write_sidecar(out, "ablate", cfg, corpus_inputs(cfg));
  json pretrain_seconds = json::object();
  for (const auto& r : rows) pretrain_seconds[r.name] = r.pretrain_wall_seconds;
  timer.write(out.parent_path(), "ablate", {{"pretrain_wall_seconds", pretrain_seconds}});
  for (const auto& r : table["rows"])
    log_line("ablate " + r["name"].get<std::string>() + ": recall@20 " +
             r["metrics"]["recall"].value("recall@20", json(0.0)).dump());
}

inline void cmd_coldstart(const PipelineConfig& cfg, const StageOptions& opt = {}) {
  const detail::StageTimer timer;
  const auto corpus = load_corpus(cfg);
  const auto res = coldstart(corpus, cfg);
  const fs::path out = output_file(cfg, opt, "coldstart", "coldstart.json");
  write_json(detail::strip_timing(to_json(res)), out);
  write_sidecar(out, "coldstart", cfg, corpus_inputs(cfg));
  timer.write(out.parent_path(), "coldstart",
              {{"pretrain_wall_seconds",
                {{"warm", res.warm.pretrain_wall_seconds}, {"cold", res.cold.pretrain_wall_seconds}}}});
  log_line("coldstart: warm recall@20 " + std::to_string(metric_at(res.warm.metrics.recall, 20)) + ", cold " +
           std::to_string(metric_at(res.cold.metrics.recall, 20)) + ", untrained " +
           std::to_string(metric_at(res.baseline.metrics.recall, 20)));
}

}  // namespace cirp
