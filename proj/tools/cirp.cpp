// Command-line front end for the pipeline stages.

#include <CLI11.hpp>

#include <iostream>

#include "cirp/stages.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string workdir;
  std::string out;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--seed", f.seed, "global seed (overrides the config)");
  cmd->add_option("--workdir", f.workdir, "working directory (overrides the config)");
  cmd->add_option("--out", f.out, "output location (stage directory or result file)");
}

cirp::PipelineConfig resolve(const Flags& f) {
  cirp::PipelineConfig cfg = f.config.empty() ? cirp::PipelineConfig{} : cirp::load_pipeline_config(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.synthetic.seed = *f.seed;
  }
  if (!f.workdir.empty()) cfg.workdir = f.workdir;
  cfg.apply_seed();
  cfg.gae.validate();
  cfg.contrast.validate();
  cfg.eval.validate();
  cirp::log_line("seed " + std::to_string(cfg.seed) + ", config " + cirp::config_hash(cfg));
  return cfg;
}

cirp::LossMode parse_loss_mode(const std::string& s) {
  if (s != "itc_only" && s != "cic_only" && s != "itc_and_cic") throw cirp::ConfigError("unknown loss mode '" + s + "'");
  return cirp::json(s).get<cirp::LossMode>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-item relational pre-training for product bundling"};
  app.require_subcommand(1);
  Flags flags;
  std::optional<double> beta;
  std::string loss_mode;
  std::vector<double> betas;
  std::optional<double> fraction;
  bool with_synth = false;

  std::vector<std::pair<CLI::App*, std::function<void(const cirp::PipelineConfig&, const cirp::StageOptions&)>>> cmds;
  auto stage = [&](const std::string& name, const std::string& help, auto fn) {
    auto* c = app.add_subcommand(name, help);
    add_common(c, flags);
    cmds.emplace_back(c, fn);
    return c;
  };

  stage("synth", "generate the synthetic benchmark corpus into <workdir>/data", cirp::stage_synth);
  stage("build-graph", "build the co-purchase graph", cirp::stage_build_graph);
  stage("train-gae", "train the LightGCN graph auto-encoder", cirp::stage_train_gae);
  stage("prune", "drop low-scoring relations", cirp::stage_prune)
      ->add_option("--beta", beta, "pruning ratio in percent");
  stage("pretrain", "contrastive pre-training over the pruned relations", cirp::stage_pretrain)
      ->add_option("--loss-mode", loss_mode, "itc_only | cic_only | itc_and_cic");
  stage("embed", "encode every item with the pre-trained encoders", cirp::stage_embed);
  stage("bundle-eval", "bundle completion Recall@k / NDCG@k", cirp::stage_bundle_eval);
  stage("analyze", "representation statistics and a 2-d projection", cirp::stage_analyze);
  stage("sweep-prune", "prune/pretrain/evaluate for several pruning ratios",
        [&](const cirp::PipelineConfig& cfg, const cirp::StageOptions& opt) {
          cirp::cmd_sweep_prune(cfg, betas.empty() ? cfg.sweep_betas : betas, opt);
        })
      ->add_option("--betas", betas, "pruning ratios in percent")
      ->delimiter(',');
  stage("ablate", "full / -ITC / -ITC&CIC / -RP comparison", cirp::cmd_ablate);
  stage("coldstart", "warm vs cold pre-training on held-out bundle items",
        [&](const cirp::PipelineConfig& cfg, const cirp::StageOptions& opt) {
          auto c = cfg;
          if (fraction) c.coldstart_fraction = *fraction;
          cirp::cmd_coldstart(c, opt);
        })
      ->add_option("--fraction", fraction, "share of items excluded from pre-training");
  stage("run", "every stage from build-graph to analyze",
        [&](const cirp::PipelineConfig& cfg, const cirp::StageOptions&) { cirp::stage_run(cfg, with_synth); })
      ->add_flag("--synth", with_synth, "generate the synthetic corpus first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto& [cmd, fn] : cmds) {
      if (!cmd->parsed()) continue;
      const auto cfg = resolve(flags);
      cirp::StageOptions opt;
      opt.out = flags.out;
      opt.beta = beta;
      if (!loss_mode.empty()) opt.loss_mode = parse_loss_mode(loss_mode);
      fn(cfg, opt);
    }
  } catch (const cirp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const cirp::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
