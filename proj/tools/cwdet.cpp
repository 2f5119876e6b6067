// cwdet: multilingual check-worthiness detection with world-language task
// adapters and adapter fusion. One binary; every stage writes a fresh run
// directory with a manifest of input/output hashes.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cw/pipeline.hpp"

using nlohmann::json;
using namespace cw;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open config file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& ex) {
    raise(ErrorCategory::parse, path + ": " + std::string(ex.what()));
  }
  return j;
}

// flag > config file > built-in default, with the winning source logged
struct ConfigResolver {
  json file = json::object();
  std::map<std::string, std::string> sources;

  template <class T>
  void resolve(const std::string& key, const CLI::Option* opt, T& value) {
    if (opt && opt->count() > 0) {
      sources[key] = "flag";
      return;
    }
    if (file.contains(key)) {
      try {
        value = file.at(key).get<T>();
      } catch (const json::exception& ex) {
        raise(ErrorCategory::parse, "config key '" + key + "': " + ex.what());
      }
      sources[key] = "config";
      return;
    }
    sources[key] = "default";
  }
};

std::map<std::string, std::string> parse_la_specs(const std::vector<std::string>& specs) {
  std::map<std::string, std::string> out;
  for (const std::string& s : specs) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      raise(ErrorCategory::usage, "--la expects lang=path, got '" + s + "'");
    }
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

struct CommonFlags {
  std::string out_root;
  std::string name;
  std::string config_path;
  uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd, const std::string& default_name) {
    cmd->add_option("--out-root", out_root, "output root (default $CWDET_OUT_ROOT or ./runs)");
    name = default_name;
    cmd->add_option("--name", name, "run directory name under the output root");
    cmd->add_option("--config", config_path, "JSON config file (flags override it)");
    seed_opt = cmd->add_option("--seed", seed, "random seed");
  }

  pipeline::CommonOpts common(ConfigResolver& cfg) {
    cfg.resolve("seed", seed_opt, seed);
    return {out_root, name, seed};
  }
};

int dispatch(CLI::App& app, int argc, char** argv);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multilingual check-worthy claim detection with world-language adapter fusion"};
  app.require_subcommand(1);
  try {
    return dispatch(app, argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error usage: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error %s: %s\n", to_string(e.category()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error internal: %s\n", e.what());
    return 1;
  }
}

namespace {

int dispatch(CLI::App& app, int argc, char** argv) {
  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic multilingual suite");
  CommonFlags gen_common;
  gen_common.attach(gen, "gen-synth");
  SynthConfig synth_cfg;
  auto* gen_cw = gen->add_option("--cw-rate", synth_cfg.cw_rate, "target check-worthy rate");
  auto* gen_train = gen->add_option("--train-per-wl", synth_cfg.train_per_wl, "train examples per WL");
  auto* gen_dev = gen->add_option("--dev-per-wl", synth_cfg.dev_per_wl, "dev examples per WL");
  auto* gen_test = gen->add_option("--test-per-lang", synth_cfg.test_per_lang, "test examples per language");
  auto* gen_mlm = gen->add_option("--mlm-per-lang", synth_cfg.mlm_texts_per_lang, "unlabeled texts per language");

  // pretrain-backbone
  auto* pb = app.add_subcommand("pretrain-backbone", "masked-language-model pretraining of the toy backbone");
  CommonFlags pb_common;
  pb_common.attach(pb, "pretrain-backbone");
  pipeline::PretrainBackboneOpts pb_opts;
  pb->add_option("--data", pb_opts.data_dir, "gen-synth run directory")->required();
  pb->add_option("--langs", pb_opts.languages, "languages to pretrain on (default: all found)");
  auto* pb_layers = pb->add_option("--layers", pb_opts.encoder.n_layers, "encoder layers");
  auto* pb_dmodel = pb->add_option("--d-model", pb_opts.encoder.d_model, "hidden width");
  auto* pb_heads = pb->add_option("--heads", pb_opts.encoder.n_heads, "attention heads");
  auto* pb_dffn = pb->add_option("--d-ffn", pb_opts.encoder.d_ffn, "feed-forward width");
  auto* pb_maxlen = pb->add_option("--max-len", pb_opts.encoder.max_len, "maximum sequence length");
  auto* pb_epochs = pb->add_option("--epochs", pb_opts.mlm.epochs, "pretraining epochs");
  auto* pb_lr = pb->add_option("--lr", pb_opts.mlm.lr, "learning rate");
  auto* pb_batch = pb->add_option("--batch-size", pb_opts.mlm.batch_size, "batch size");
  auto* pb_mask = pb->add_option("--mask-prob", pb_opts.mlm.mask_prob, "mask probability");

  // pretrain-la
  auto* pl = app.add_subcommand("pretrain-la", "train a language adapter with the MLM objective");
  CommonFlags pl_common;
  pl_common.attach(pl, "pretrain-la");
  pipeline::PretrainLaOpts pl_opts;
  pl->add_option("--backbone", pl_opts.backbone_dir, "pretrain-backbone run directory")->required();
  pl->add_option("--data", pl_opts.data_dir, "gen-synth run directory")->required();
  pl->add_option("--lang", pl_opts.lang, "language code")->required();
  auto* pl_epochs = pl->add_option("--epochs", pl_opts.mlm.epochs, "epochs");
  auto* pl_lr = pl->add_option("--lr", pl_opts.mlm.lr, "learning rate");
  auto* pl_batch = pl->add_option("--batch-size", pl_opts.mlm.batch_size, "batch size");
  auto* pl_mask = pl->add_option("--mask-prob", pl_opts.mlm.mask_prob, "mask probability");
  auto* pl_bottleneck = pl->add_option("--bottleneck", pl_opts.bottleneck, "adapter bottleneck (default d/8)");

  auto attach_train_flags = [](CLI::App* cmd, TrainConfig& cfg) {
    std::vector<std::pair<std::string, CLI::Option*>> opts;
    opts.push_back({"epochs", cmd->add_option("--epochs", cfg.epochs, "training epochs")});
    opts.push_back({"lr", cmd->add_option("--lr", cfg.lr, "learning rate")});
    opts.push_back({"batch_size", cmd->add_option("--batch-size", cfg.batch_size, "batch size")});
    opts.push_back({"metric", cmd->add_option("--metric", cfg.selection_metric, "dev selection metric: f1 | map")});
    opts.push_back({"max_len", cmd->add_option("--max-len", cfg.max_len, "maximum sequence length")});
    opts.push_back({"threshold", cmd->add_option("--threshold", cfg.threshold, "classification threshold")});
    opts.push_back({"bottleneck", cmd->add_option("--bottleneck", cfg.adapter_bottleneck, "adapter bottleneck (default d/8)")});
    return opts;
  };
  auto resolve_train = [](ConfigResolver& cfg, TrainConfig& tc,
                          const std::vector<std::pair<std::string, CLI::Option*>>& opts) {
    for (const auto& [key, opt] : opts) {
      if (key == "epochs") cfg.resolve(key, opt, tc.epochs);
      else if (key == "lr") cfg.resolve(key, opt, tc.lr);
      else if (key == "batch_size") cfg.resolve(key, opt, tc.batch_size);
      else if (key == "metric") cfg.resolve(key, opt, tc.selection_metric);
      else if (key == "max_len") cfg.resolve(key, opt, tc.max_len);
      else if (key == "threshold") cfg.resolve(key, opt, tc.threshold);
      else if (key == "bottleneck") cfg.resolve(key, opt, tc.adapter_bottleneck);
    }
  };

  // train-ta
  auto* ta = app.add_subcommand("train-ta", "fine-tune a task adapter on one world language");
  CommonFlags ta_common;
  ta_common.attach(ta, "train-ta");
  pipeline::TrainTaOpts ta_opts;
  ta->add_option("--backbone", ta_opts.backbone_dir, "pretrain-backbone run directory")->required();
  ta->add_option("--data", ta_opts.data_dir, "gen-synth run directory")->required();
  ta->add_option("--lang", ta_opts.lang, "language code")->required();
  ta->add_option("--la", ta_opts.la_path, "language adapter artifact stacked under the TA");
  auto ta_train_opts = attach_train_flags(ta, ta_opts.train);

  // train-fusion
  auto* tf = app.add_subcommand("train-fusion", "train adapter fusion over world-language task adapters");
  CommonFlags tf_common;
  tf_common.attach(tf, "train-fusion");
  pipeline::TrainFusionOpts tf_opts;
  std::vector<std::string> tf_la_specs;
  tf->add_option("--backbone", tf_opts.backbone_dir, "pretrain-backbone run directory")->required();
  tf->add_option("--data", tf_opts.data_dir, "gen-synth run directory")->required();
  tf->add_option("--langs", tf_opts.langs, "world languages (train+dev corpora required)")->required();
  tf->add_option("--member", tf_opts.member_paths, "member task-adapter artifact (repeatable)")->required();
  tf->add_option("--la-policy", tf_opts.la_policy, "none | stacked");
  tf->add_option("--la", tf_la_specs, "lang=path language adapter artifact (repeatable)");
  auto* tf_fallback = tf->add_option("--la-fallback", tf_opts.fallback_lang, "fallback LA language");
  auto tf_train_opts = attach_train_flags(tf, tf_opts.train);

  // train-baseline
  auto* tb = app.add_subcommand("train-baseline", "train any model kind end to end");
  CommonFlags tb_common;
  tb_common.attach(tb, "train-baseline");
  pipeline::TrainBaselineOpts tb_opts;
  std::vector<std::string> tb_la_specs;
  tb->add_option("--backbone", tb_opts.backbone_dir, "pretrain-backbone run directory")->required();
  tb->add_option("--data", tb_opts.data_dir, "gen-synth run directory")->required();
  tb->add_option("--kind", tb_opts.kind,
                 "fft-single | ta-la-single | wl-fft | wl-ta | wl-ta-la | wl-af | wl-af-la | mean-ensemble")
      ->required();
  tb->add_option("--langs", tb_opts.langs, "source languages")->required();
  tb->add_option("--la", tb_la_specs, "lang=path language adapter artifact (repeatable)");
  auto* tb_fallback = tb->add_option("--la-fallback", tb_opts.fallback_lang, "fallback LA language");
  auto tb_train_opts = attach_train_flags(tb, tb_opts.train);

  auto attach_model_ref = [](CLI::App* cmd, pipeline::ModelRef& ref, std::vector<std::string>& la_specs) {
    cmd->add_option("--backbone", ref.backbone_dir, "pretrain-backbone run directory")->required();
    cmd->add_option("--artifact", ref.artifact_path, "trained model artifact")->required();
    cmd->add_option("--kind", ref.kind, "model kind")->required();
    cmd->add_option("--la", la_specs, "lang=path language adapter artifact (repeatable)");
    return cmd->add_option("--la-fallback", ref.fallback_lang, "fallback LA language");
  };

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score test corpora and report per-language metrics");
  CommonFlags ev_common;
  ev_common.attach(ev, "evaluate");
  pipeline::EvaluateOpts ev_opts;
  std::vector<std::string> ev_la_specs;
  attach_model_ref(ev, ev_opts.model, ev_la_specs);
  ev->add_option("--data", ev_opts.data_dir, "gen-synth run directory")->required();
  ev->add_option("--model-id", ev_opts.model_id, "row label for the report");
  ev->add_option("--langs", ev_opts.langs, "languages to evaluate (default: every test corpus)");
  ev->add_option("--scope", ev_opts.scope, "all | global | local | zero-shot (label only)");
  auto* ev_metric = ev->add_option("--metric", ev_opts.metric, "map | f1");
  auto* ev_maxlen = ev->add_option("--max-len", ev_opts.cfg.max_len, "maximum sequence length");
  auto* ev_threshold = ev->add_option("--threshold", ev_opts.cfg.threshold, "classification threshold");

  // topical-split
  auto* ts = app.add_subcommand("topical-split", "build global/local evaluation sets and the relation graph");
  CommonFlags ts_common;
  ts_common.attach(ts, "topical-split");
  pipeline::TopicalSplitOpts ts_opts;
  ts->add_option("--backbone", ts_opts.backbone_dir, "pretrain-backbone run directory")->required();
  ts->add_option("--data", ts_opts.data_dir, "gen-synth run directory")->required();
  ts->add_option("--wl-langs", ts_opts.wl_langs, "world languages the topic model is fitted on")->required();
  ts->add_option("--langs", ts_opts.langs, "languages to assign (default: every test corpus)");
  auto* ts_k = ts->add_option("--k", ts_opts.fit.k, "number of topics");
  auto* ts_klocal = ts->add_option("--k-local", ts_opts.k_local, "topics for the local refit");
  auto* ts_taup = ts->add_option("--tau-percentile", ts_opts.fit.tau_percentile, "outlier threshold percentile");
  double ts_tau_override = 0.0;
  auto* ts_tau = ts->add_option("--tau", ts_tau_override, "absolute outlier threshold (overrides percentile)");
  auto* ts_maxlen = ts->add_option("--max-len", ts_opts.max_len, "maximum sequence length");

  // interpret
  auto* in = app.add_subcommand("interpret", "average fusion-attention weights per task adapter");
  CommonFlags in_common;
  in_common.attach(in, "interpret");
  pipeline::InterpretOpts in_opts;
  std::vector<std::string> in_la_specs;
  attach_model_ref(in, in_opts.model, in_la_specs);
  in->add_option("--data", in_opts.data_dir, "gen-synth run directory")->required();
  in->add_option("--langs", in_opts.langs, "languages (default: every test corpus)");
  auto* in_maxlen = in->add_option("--max-len", in_opts.cfg.max_len, "maximum sequence length");

  // attribute
  auto* at = app.add_subcommand("attribute", "integrated-gradients token attributions");
  CommonFlags at_common;
  at_common.attach(at, "attribute");
  pipeline::AttributeOpts at_opts;
  std::vector<std::string> at_la_specs;
  attach_model_ref(at, at_opts.model, at_la_specs);
  at->add_option("--corpus", at_opts.corpus_path, "corpus to attribute (tsv or jsonl)")->required();
  auto* at_steps = at->add_option("--steps", at_opts.steps, "integration steps");
  auto* at_limit = at->add_option("--limit", at_opts.limit, "max examples (0 = all)");
  auto* at_maxlen = at->add_option("--max-len", at_opts.cfg.max_len, "maximum sequence length");

  // report
  auto* rp = app.add_subcommand("report", "parameter/size table and corpus statistics");
  CommonFlags rp_common;
  rp_common.attach(rp, "report");
  std::vector<std::string> rp_model_specs;  // id=kind=backbone_dir=artifact
  pipeline::ReportOpts rp_opts;
  rp->add_option("--model", rp_model_specs, "id=kind=backbone_dir=artifact (repeatable)");
  rp->add_option("--corpus", rp_opts.corpus_paths, "corpus file for the stats table (repeatable)");

  app.parse(argc, argv);

  if (gen->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(gen_common.config_path);
    if (!gen_common.config_path.empty()) {
      SynthConfig from_file = synth_config_from_json_file(gen_common.config_path);
      SynthConfig flag_values = synth_cfg;
      synth_cfg = from_file;
      if (gen_cw->count() > 0) synth_cfg.cw_rate = flag_values.cw_rate;
      if (gen_train->count() > 0) synth_cfg.train_per_wl = flag_values.train_per_wl;
      if (gen_dev->count() > 0) synth_cfg.dev_per_wl = flag_values.dev_per_wl;
      if (gen_test->count() > 0) synth_cfg.test_per_lang = flag_values.test_per_lang;
      if (gen_mlm->count() > 0) synth_cfg.mlm_texts_per_lang = flag_values.mlm_texts_per_lang;
    }
    cfg.resolve("cw_rate", gen_cw, synth_cfg.cw_rate);
    cfg.resolve("train_per_wl", gen_train, synth_cfg.train_per_wl);
    cfg.resolve("dev_per_wl", gen_dev, synth_cfg.dev_per_wl);
    cfg.resolve("test_per_lang", gen_test, synth_cfg.test_per_lang);
    cfg.resolve("mlm_texts_per_lang", gen_mlm, synth_cfg.mlm_texts_per_lang);
    auto common = gen_common.common(cfg);
    auto result = pipeline::run_gen_synth(synth_cfg, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (pb->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(pb_common.config_path);
    cfg.resolve("layers", pb_layers, pb_opts.encoder.n_layers);
    cfg.resolve("d_model", pb_dmodel, pb_opts.encoder.d_model);
    cfg.resolve("heads", pb_heads, pb_opts.encoder.n_heads);
    cfg.resolve("d_ffn", pb_dffn, pb_opts.encoder.d_ffn);
    cfg.resolve("max_len", pb_maxlen, pb_opts.encoder.max_len);
    cfg.resolve("epochs", pb_epochs, pb_opts.mlm.epochs);
    cfg.resolve("lr", pb_lr, pb_opts.mlm.lr);
    cfg.resolve("batch_size", pb_batch, pb_opts.mlm.batch_size);
    cfg.resolve("mask_prob", pb_mask, pb_opts.mlm.mask_prob);
    auto common = pb_common.common(cfg);
    pb_opts.mlm.seed = common.seed;
    auto result = pipeline::run_pretrain_backbone(pb_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (pl->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(pl_common.config_path);
    cfg.resolve("epochs", pl_epochs, pl_opts.mlm.epochs);
    cfg.resolve("lr", pl_lr, pl_opts.mlm.lr);
    cfg.resolve("batch_size", pl_batch, pl_opts.mlm.batch_size);
    cfg.resolve("mask_prob", pl_mask, pl_opts.mlm.mask_prob);
    cfg.resolve("bottleneck", pl_bottleneck, pl_opts.bottleneck);
    auto common = pl_common.common(cfg);
    pl_opts.mlm.seed = common.seed;
    auto result = pipeline::run_pretrain_la(pl_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (ta->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(ta_common.config_path);
    resolve_train(cfg, ta_opts.train, ta_train_opts);
    auto common = ta_common.common(cfg);
    auto result = pipeline::run_train_ta(ta_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (tf->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(tf_common.config_path);
    resolve_train(cfg, tf_opts.train, tf_train_opts);
    cfg.resolve("la_fallback", tf_fallback, tf_opts.fallback_lang);
    tf_opts.la_paths = parse_la_specs(tf_la_specs);
    auto common = tf_common.common(cfg);
    auto result = pipeline::run_train_fusion(tf_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (tb->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(tb_common.config_path);
    resolve_train(cfg, tb_opts.train, tb_train_opts);
    cfg.resolve("la_fallback", tb_fallback, tb_opts.fallback_lang);
    tb_opts.la_paths = parse_la_specs(tb_la_specs);
    auto common = tb_common.common(cfg);
    auto result = pipeline::run_train_baseline(tb_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (ev->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(ev_common.config_path);
    cfg.resolve("metric", ev_metric, ev_opts.metric);
    cfg.resolve("max_len", ev_maxlen, ev_opts.cfg.max_len);
    cfg.resolve("threshold", ev_threshold, ev_opts.cfg.threshold);
    ev_opts.model.la_paths = parse_la_specs(ev_la_specs);
    auto common = ev_common.common(cfg);
    auto result = pipeline::run_evaluate(ev_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (ts->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(ts_common.config_path);
    cfg.resolve("k", ts_k, ts_opts.fit.k);
    cfg.resolve("k_local", ts_klocal, ts_opts.k_local);
    cfg.resolve("tau_percentile", ts_taup, ts_opts.fit.tau_percentile);
    cfg.resolve("max_len", ts_maxlen, ts_opts.max_len);
    if (ts_tau->count() > 0) ts_opts.fit.tau_override = ts_tau_override;
    auto common = ts_common.common(cfg);
    ts_opts.fit.seed = common.seed;
    auto result = pipeline::run_topical_split(ts_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (in->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(in_common.config_path);
    cfg.resolve("max_len", in_maxlen, in_opts.cfg.max_len);
    in_opts.model.la_paths = parse_la_specs(in_la_specs);
    auto common = in_common.common(cfg);
    auto result = pipeline::run_interpret(in_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (at->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(at_common.config_path);
    cfg.resolve("steps", at_steps, at_opts.steps);
    cfg.resolve("limit", at_limit, at_opts.limit);
    cfg.resolve("max_len", at_maxlen, at_opts.cfg.max_len);
    at_opts.model.la_paths = parse_la_specs(at_la_specs);
    auto common = at_common.common(cfg);
    auto result = pipeline::run_attribute(at_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  if (rp->parsed()) {
    ConfigResolver cfg;
    cfg.file = load_config_file(rp_common.config_path);
    for (const std::string& spec : rp_model_specs) {
      // id=kind=backbone_dir=artifact
      std::vector<std::string> parts;
      size_t pos = 0;
      while (pos <= spec.size()) {
        const size_t eq = spec.find('=', pos);
        parts.push_back(spec.substr(pos, eq == std::string::npos ? std::string::npos : eq - pos));
        if (eq == std::string::npos) break;
        pos = eq + 1;
      }
      if (parts.size() != 4) {
        raise(ErrorCategory::usage, "--model expects id=kind=backbone_dir=artifact, got '" + spec + "'");
      }
      pipeline::ModelRef ref;
      ref.kind = parts[1];
      ref.backbone_dir = parts[2];
      ref.artifact_path = parts[3];
      rp_opts.models.push_back({parts[0], ref});
    }
    auto common = rp_common.common(cfg);
    auto result = pipeline::run_report(rp_opts, common, cfg.sources);
    std::printf("run_dir=%s\n", result.run_dir.c_str());
    return 0;
  }
  raise(ErrorCategory::usage, "no command given");
}

}  // namespace
