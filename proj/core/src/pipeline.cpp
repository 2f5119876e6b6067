#include "cw/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cw/sha256.hpp"

namespace cw::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::string resolve_out_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("CWDET_OUT_ROOT"); env && *env) return env;
  return "runs";
}

namespace {

// One run directory: collects input/output hashes and writes manifest.json.
class RunDir {
 public:
  RunDir(const std::string& command, const CommonOpts& opts,
         const std::map<std::string, std::string>& config_sources)
      : command_(command), t0_(std::chrono::steady_clock::now()) {
    if (opts.run_name.empty()) raise(ErrorCategory::usage, "run name is required");
    dir_ = fs::path(resolve_out_root(opts.out_root)) / opts.run_name;
    if (fs::exists(dir_)) {
      raise(ErrorCategory::validation, "run directory already exists: " + dir_.string());
    }
    fs::create_directories(dir_);
    manifest_["command"] = command;
    manifest_["seed"] = opts.seed;
    manifest_["config_sources"] = config_sources;
  }

  const fs::path& dir() const { return dir_; }

  void set_config(json config) { manifest_["config"] = std::move(config); }

  void add_input(const std::string& path) {
    manifest_["inputs"][fs::path(path).string()] = sha256_file_hex(path);
  }

  std::string path_of(const std::string& name) const { return (dir_ / name).string(); }

  void add_output(const std::string& name) { outputs_.insert(name); }
  void add_timing_output(const std::string& name) { timing_outputs_.insert(name); }

  void write_text(const std::string& name, const std::string& content, bool timing = false) {
    std::ofstream os(dir_ / name, std::ios::trunc | std::ios::binary);
    if (!os) raise(ErrorCategory::io, "cannot write " + (dir_ / name).string());
    os << content;
    os.close();
    if (timing) add_timing_output(name);
    else add_output(name);
  }

  void finish() {
    json outs = json::object();
    for (const std::string& name : outputs_) outs[name] = sha256_file_hex((dir_ / name).string());
    json touts = json::object();
    for (const std::string& name : timing_outputs_) touts[name] = sha256_file_hex((dir_ / name).string());
    manifest_["outputs"] = outs;
    manifest_["timing_outputs"] = touts;
    manifest_["wall_clock_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
    std::ofstream os(dir_ / "manifest.json", std::ios::trunc);
    if (!os) raise(ErrorCategory::io, "cannot write manifest in " + dir_.string());
    os << manifest_.dump(2) << '\n';
  }

 private:
  std::string command_;
  fs::path dir_;
  json manifest_;
  std::set<std::string> outputs_;
  std::set<std::string> timing_outputs_;
  std::chrono::steady_clock::time_point t0_;
};

std::vector<std::string> mlm_langs_in(const std::string& data_dir) {
  std::vector<std::string> langs;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    const std::string name = entry.path().filename().string();
    // synth.<lang>.mlm.txt
    if (name.rfind("synth.", 0) == 0 && name.size() > 14 && name.substr(name.size() - 8) == ".mlm.txt") {
      langs.push_back(name.substr(6, name.size() - 14));
    }
  }
  std::sort(langs.begin(), langs.end());
  return langs;
}

std::vector<std::string> test_langs_in(const std::string& data_dir) {
  std::vector<std::string> langs;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("synth.", 0) == 0 && name.size() > 17 && name.substr(name.size() - 11) == ".test.jsonl") {
      langs.push_back(name.substr(6, name.size() - 17));
    }
  }
  std::sort(langs.begin(), langs.end());
  return langs;
}

std::vector<std::string> load_mlm_texts(const std::string& data_dir, const std::string& lang, RunDir* run) {
  const std::string path = (fs::path(data_dir) / ("synth." + lang + ".mlm.txt")).string();
  if (!fs::exists(path)) raise(ErrorCategory::input, "missing unlabeled corpus: " + path);
  if (run) run->add_input(path);
  std::ifstream is(path);
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) texts.push_back(line);
  }
  return texts;
}

Corpus load_split(const std::string& data_dir, const std::string& lang, const std::string& split,
                  RunDir* run) {
  const std::string path = (fs::path(data_dir) / synth_corpus_filename(lang, split)).string();
  if (!fs::exists(path)) raise(ErrorCategory::input, "missing corpus: " + path);
  if (run) run->add_input(path);
  Corpus c = load_corpus(path, guess_corpus_format(path));
  c.name = "synth." + lang + "." + split;
  c.split = split;
  return c;
}

json train_config_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"lr", cfg.lr},
              {"batch_size", cfg.batch_size},
              {"selection_metric", cfg.selection_metric},
              {"max_len", cfg.max_len},
              {"threshold", cfg.threshold},
              {"adapter_bottleneck", cfg.adapter_bottleneck}};
}

json mlm_config_json(const MlmTrainOptions& opt) {
  return json{{"mask_prob", opt.mask_prob},
              {"epochs", opt.epochs},
              {"batch_size", opt.batch_size},
              {"lr", opt.lr},
              {"seed", opt.seed}};
}

std::string metrics_tsv(const TrainedModel& tm) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch\ttrain_loss\tdev_metric\n";
  for (const EpochRecord& e : tm.epochs) os << e.epoch << '\t' << e.train_loss << '\t' << e.dev_metric << '\n';
  os << "# best_epoch\t" << tm.best_epoch << "\tbest_dev_metric\t" << tm.best_dev_metric << '\n';
  return os.str();
}

std::string timing_tsv_str(const std::string& recipe, const TrainedModel& tm) {
  std::ostringstream os;
  os << "recipe\tepoch\tseconds\n";
  for (const EpochRecord& e : tm.epochs) os << recipe << '\t' << e.epoch << '\t' << e.seconds << '\n';
  return os.str();
}

std::string hashes_json_str(const TrainedModel& tm) {
  json j;
  j["before"] = tm.frozen_hash_before;
  j["after"] = tm.frozen_hash_after;
  json match = json::object();
  for (const auto& [group, hash] : tm.frozen_hash_before) {
    match[group] = tm.frozen_hash_after.count(group) && tm.frozen_hash_after.at(group) == hash;
  }
  j["match"] = match;
  return j.dump(2);
}

void save_head_with(const Model& model, std::vector<const Parameter*>& extra) {
  extra.push_back(&model.backbone->head_w());
  extra.push_back(&model.backbone->head_b());
}

std::shared_ptr<LaRegistry> load_la_registry(const std::map<std::string, std::string>& la_paths,
                                             const std::string& fallback_lang, int d, RunDir* run) {
  if (la_paths.empty()) return nullptr;
  auto reg = std::make_shared<LaRegistry>();
  reg->fallback_lang = fallback_lang;
  for (const auto& [lang, path] : la_paths) {
    if (run) run->add_input(path);
    LoadedAdapterSet loaded = load_adapter_set(path, d);
    reg->by_lang[lang] = loaded.set;
  }
  return reg;
}

void install_head(Backbone& bb, const std::vector<ParamFile::Entry>& extra) {
  for (const ParamFile::Entry& e : extra) {
    if (e.name == "head.w") {
      if (e.shape != bb.head_w().value.shape()) {
        raise(ErrorCategory::compat, "artifact head shape " + shape_str(e.shape) + " vs backbone " +
                                         shape_str(bb.head_w().value.shape()));
      }
      bb.head_w().value.data() = e.data;
    } else if (e.name == "head.b") {
      bb.head_b().value.data() = e.data;
    }
  }
}

}  // namespace

StageResult run_gen_synth(const SynthConfig& cfg, const CommonOpts& opts,
                          const std::map<std::string, std::string>& config_sources) {
  SynthConfig effective = cfg;
  effective.seed = opts.seed;
  RunDir run("gen-synth", opts, config_sources);
  run.set_config(json::parse(synth_config_to_json(effective)));
  SynthData data = synth_generate(effective);
  save_synth(data, run.dir().string());
  for (const auto& entry : fs::directory_iterator(run.dir())) {
    const std::string name = entry.path().filename().string();
    if (name != "manifest.json") run.add_output(name);
  }
  run.finish();
  return {run.dir().string()};
}

StageResult run_pretrain_backbone(const PretrainBackboneOpts& opts, const CommonOpts& common,
                                  const std::map<std::string, std::string>& config_sources) {
  RunDir run("pretrain-backbone", common, config_sources);
  std::vector<std::string> langs = opts.languages.empty() ? mlm_langs_in(opts.data_dir) : opts.languages;
  if (langs.empty()) raise(ErrorCategory::input, "no unlabeled corpora found in " + opts.data_dir);

  std::vector<std::string> texts;
  for (const std::string& lang : langs) {
    std::vector<std::string> part = load_mlm_texts(opts.data_dir, lang, &run);
    texts.insert(texts.end(), part.begin(), part.end());
  }
  Tokenizer tok = Tokenizer::build_from_texts(texts);

  MlmTrainOptions mlm = opts.mlm;
  mlm.seed = common.seed;
  json config = mlm_config_json(mlm);
  config["languages"] = langs;
  config["encoder"] = {{"n_layers", opts.encoder.n_layers}, {"d_model", opts.encoder.d_model},
                       {"n_heads", opts.encoder.n_heads},   {"d_ffn", opts.encoder.d_ffn},
                       {"max_len", opts.encoder.max_len},   {"n_classes", opts.encoder.n_classes}};
  run.set_config(config);

  std::vector<double> losses;
  Backbone bb = pretrain_backbone_mlm(opts.encoder, tok, texts, mlm, &losses);

  save_backbone(bb, run.path_of("backbone.ckpt"));
  run.add_output("backbone.ckpt");
  tok.save(run.path_of("tokenizer.txt"));
  run.add_output("tokenizer.txt");
  std::ostringstream loss_os;
  loss_os.precision(17);
  loss_os << "epoch\tmlm_loss\n";
  for (size_t i = 0; i < losses.size(); ++i) loss_os << (i + 1) << '\t' << losses[i] << '\n';
  run.write_text("mlm_losses.tsv", loss_os.str());
  run.finish();
  return {run.dir().string()};
}

BackboneBundle load_backbone_bundle(const std::string& backbone_run_dir) {
  const std::string ckpt = (fs::path(backbone_run_dir) / "backbone.ckpt").string();
  const std::string tok_path = (fs::path(backbone_run_dir) / "tokenizer.txt").string();
  if (!fs::exists(ckpt)) raise(ErrorCategory::input, "missing backbone checkpoint: " + ckpt);
  if (!fs::exists(tok_path)) raise(ErrorCategory::input, "missing tokenizer: " + tok_path);
  return {load_backbone(ckpt), Tokenizer::load(tok_path)};
}

StageResult run_pretrain_la(const PretrainLaOpts& opts, const CommonOpts& common,
                            const std::map<std::string, std::string>& config_sources) {
  RunDir run("pretrain-la", common, config_sources);
  run.add_input((fs::path(opts.backbone_dir) / "backbone.ckpt").string());
  BackboneBundle bundle = load_backbone_bundle(opts.backbone_dir);
  std::vector<std::string> texts = load_mlm_texts(opts.data_dir, opts.lang, &run);

  MlmTrainOptions mlm = opts.mlm;
  mlm.seed = common.seed;
  json config = mlm_config_json(mlm);
  config["lang"] = opts.lang;
  config["bottleneck"] = opts.bottleneck;
  run.set_config(config);

  std::map<std::string, std::string> hashes;
  auto la = train_language_adapter(bundle.backbone, bundle.tok, texts, mlm, opts.lang, opts.bottleneck,
                                   &hashes);
  save_adapter_set(*la, run.path_of("la.artifact"));
  run.add_output("la.artifact");
  json jh = hashes;
  jh["match"] = hashes.at("backbone.before") == hashes.at("backbone.after");
  run.write_text("hashes.json", jh.dump(2) + "\n");
  run.finish();
  return {run.dir().string()};
}

StageResult run_train_ta(const TrainTaOpts& opts, const CommonOpts& common,
                         const std::map<std::string, std::string>& config_sources) {
  RunDir run("train-ta", common, config_sources);
  run.add_input((fs::path(opts.backbone_dir) / "backbone.ckpt").string());
  BackboneBundle bundle = load_backbone_bundle(opts.backbone_dir);
  Corpus train = load_split(opts.data_dir, opts.lang, "train", &run);
  Corpus dev = load_split(opts.data_dir, opts.lang, "dev", &run);

  json config = train_config_json(opts.train);
  config["lang"] = opts.lang;
  config["la_path"] = opts.la_path;
  run.set_config(config);

  std::shared_ptr<AdapterSet> la;
  if (!opts.la_path.empty()) {
    run.add_input(opts.la_path);
    la = load_adapter_set(opts.la_path, bundle.backbone->config().d_model).set;
  }
  TrainedModel tm = train_task_adapter(bundle.backbone, bundle.tok, train, dev, opts.train, common.seed,
                                       opts.lang, la);

  std::vector<const Parameter*> extra;
  save_head_with(tm.model, extra);
  save_adapter_set(*tm.model.ta, run.path_of("ta.artifact"), extra);
  run.add_output("ta.artifact");
  run.write_text("metrics.tsv", metrics_tsv(tm));
  run.write_text("timing.tsv", timing_tsv_str("train-ta." + opts.lang, tm), /*timing=*/true);
  run.write_text("hashes.json", hashes_json_str(tm) + "\n");
  run.finish();
  return {run.dir().string()};
}

StageResult run_train_fusion(const TrainFusionOpts& opts, const CommonOpts& common,
                             const std::map<std::string, std::string>& config_sources) {
  RunDir run("train-fusion", common, config_sources);
  run.add_input((fs::path(opts.backbone_dir) / "backbone.ckpt").string());
  BackboneBundle bundle = load_backbone_bundle(opts.backbone_dir);
  const int d = bundle.backbone->config().d_model;

  if (opts.member_paths.empty()) raise(ErrorCategory::config, "fusion training needs member TA artifacts");
  std::vector<std::shared_ptr<AdapterSet>> members;
  for (const std::string& path : opts.member_paths) {
    run.add_input(path);
    members.push_back(load_adapter_set(path, d).set);
  }

  std::map<std::string, Corpus> train_by_lang, dev_by_lang;
  for (const std::string& lang : opts.langs) {
    train_by_lang.emplace(lang, load_split(opts.data_dir, lang, "train", &run));
    dev_by_lang.emplace(lang, load_split(opts.data_dir, lang, "dev", &run));
  }

  const LaPolicy policy = la_policy_from_string(opts.la_policy);
  std::shared_ptr<LaRegistry> las = load_la_registry(opts.la_paths, opts.fallback_lang, d, &run);

  json config = train_config_json(opts.train);
  config["langs"] = opts.langs;
  config["la_policy"] = opts.la_policy;
  run.set_config(config);

  TrainedModel tm = train_fusion(bundle.backbone, bundle.tok, members, train_by_lang, dev_by_lang,
                                 opts.train, common.seed, policy, las);

  std::vector<const Parameter*> extra;
  save_head_with(tm.model, extra);
  save_fusion(*tm.model.fusion, run.path_of("fusion.artifact"), extra);
  run.add_output("fusion.artifact");
  run.write_text("metrics.tsv", metrics_tsv(tm));
  run.write_text("timing.tsv", timing_tsv_str("train-fusion", tm), /*timing=*/true);
  run.write_text("hashes.json", hashes_json_str(tm) + "\n");
  run.finish();
  return {run.dir().string()};
}

StageResult run_train_baseline(const TrainBaselineOpts& opts, const CommonOpts& common,
                               const std::map<std::string, std::string>& config_sources) {
  RunDir run("train-baseline", common, config_sources);
  run.add_input((fs::path(opts.backbone_dir) / "backbone.ckpt").string());
  BackboneBundle bundle = load_backbone_bundle(opts.backbone_dir);
  const int d = bundle.backbone->config().d_model;

  TrainingData data;
  data.backbone = bundle.backbone;
  data.tok = &bundle.tok;
  for (const std::string& lang : opts.langs) {
    data.train.emplace(lang, load_split(opts.data_dir, lang, "train", &run));
    data.dev.emplace(lang, load_split(opts.data_dir, lang, "dev", &run));
  }
  data.las = load_la_registry(opts.la_paths, opts.fallback_lang, d, &run);

  ModelSpec spec;
  spec.kind = model_kind_from_string(opts.kind);
  spec.source_langs = opts.langs;

  json config = train_config_json(opts.train);
  config["kind"] = opts.kind;
  config["langs"] = opts.langs;
  run.set_config(config);

  TrainedModel tm = train_baseline(spec, data, opts.train, common.seed);

  if (tm.model.kind == ModelKind::mean_ensemble) {
    for (const auto& member : tm.model.members) {
      std::vector<const Parameter*> extra{&member->backbone->head_w(), &member->backbone->head_b()};
      const std::string name = "member." + member->source_langs.front() + ".artifact";
      save_adapter_set(*member->ta, run.path_of(name), extra);
      run.add_output(name);
    }
  } else if (tm.model.fusion) {
    std::vector<const Parameter*> extra;
    save_head_with(tm.model, extra);
    save_fusion(*tm.model.fusion, run.path_of("fusion.artifact"), extra);
    run.add_output("fusion.artifact");
  } else if (tm.model.ta) {
    std::vector<const Parameter*> extra;
    save_head_with(tm.model, extra);
    save_adapter_set(*tm.model.ta, run.path_of("ta.artifact"), extra);
    run.add_output("ta.artifact");
  } else {
    save_backbone(*tm.model.backbone, run.path_of("model.ckpt"));
    run.add_output("model.ckpt");
  }
  if (!tm.epochs.empty()) {
    run.write_text("metrics.tsv", metrics_tsv(tm));
    run.write_text("timing.tsv", timing_tsv_str(opts.kind, tm), /*timing=*/true);
  }
  run.write_text("hashes.json", hashes_json_str(tm) + "\n");
  run.finish();
  return {run.dir().string()};
}

LoadedModel load_model(const ModelRef& ref) {
  BackboneBundle bundle = load_backbone_bundle(ref.backbone_dir);
  const int d = bundle.backbone->config().d_model;
  LoadedModel out{Model{}, std::move(bundle.tok)};
  Model& model = out.model;
  model.kind = model_kind_from_string(ref.kind);
  model.las = load_la_registry(ref.la_paths, ref.fallback_lang, d, nullptr);

  switch (model.kind) {
    case ModelKind::fft_single:
    case ModelKind::wl_fft:
      model.backbone = load_backbone(ref.artifact_path);
      break;
    case ModelKind::wl_ta:
    case ModelKind::ta_la_single:
    case ModelKind::wl_ta_la: {
      LoadedAdapterSet loaded = load_adapter_set(ref.artifact_path, d);
      model.backbone = bundle.backbone->fork_with_fresh_head();
      install_head(*model.backbone, loaded.extra);
      model.ta = loaded.set;
      break;
    }
    case ModelKind::wl_af:
    case ModelKind::wl_af_la: {
      LoadedFusion loaded = load_fusion(ref.artifact_path, d);
      model.backbone = bundle.backbone->fork_with_fresh_head();
      install_head(*model.backbone, loaded.extra);
      model.fusion = loaded.fusion;
      break;
    }
    case ModelKind::mean_ensemble:
      raise(ErrorCategory::config, "load mean-ensemble members individually and combine in process");
  }
  if ((model.kind == ModelKind::ta_la_single || model.kind == ModelKind::wl_ta_la ||
       model.kind == ModelKind::wl_af_la) &&
      !model.las) {
    raise(ErrorCategory::config, std::string(to_string(model.kind)) + " requires language adapter paths");
  }
  return out;
}

StageResult run_evaluate(const EvaluateOpts& opts, const CommonOpts& common,
                         const std::map<std::string, std::string>& config_sources) {
  RunDir run("evaluate", common, config_sources);
  run.add_input(opts.model.artifact_path);
  LoadedModel loaded = load_model(opts.model);

  std::vector<std::string> langs = opts.langs.empty() ? test_langs_in(opts.data_dir) : opts.langs;
  std::map<std::string, Corpus> test_by_lang;
  for (const std::string& lang : langs) {
    const std::string path = (fs::path(opts.data_dir) / synth_corpus_filename(lang, "test")).string();
    if (fs::exists(path)) {
      run.add_input(path);
      test_by_lang.emplace(lang, load_corpus(path, CorpusFormat::jsonl));
    }
  }

  json config = train_config_json(opts.cfg);
  config["scope"] = opts.scope;
  config["metric"] = opts.metric;
  config["kind"] = opts.model.kind;
  config["langs"] = langs;
  run.set_config(config);

  std::map<std::string, std::vector<PredictionRow>> predictions;
  EvalReport report = evaluate_model(loaded.model, opts.model_id, loaded.tok, test_by_lang, opts.scope,
                                     opts.metric, opts.cfg, langs, &predictions);
  run.write_text("report.tsv", eval_report_tsv(report));
  run.write_text("report.json", eval_report_json_str(report) + "\n");
  for (const auto& [lang, rows] : predictions) {
    const std::string name = "predictions." + lang + ".tsv";
    save_predictions(run.path_of(name), rows);
    run.add_output(name);
  }
  run.finish();
  return {run.dir().string()};
}

StageResult run_topical_split(const TopicalSplitOpts& opts, const CommonOpts& common,
                              const std::map<std::string, std::string>& config_sources) {
  RunDir run("topical-split", common, config_sources);
  run.add_input((fs::path(opts.backbone_dir) / "backbone.ckpt").string());
  BackboneBundle bundle = load_backbone_bundle(opts.backbone_dir);
  bundle.backbone->set_frozen(true, true);

  if (opts.wl_langs.empty()) raise(ErrorCategory::config, "topical split needs the world language list");
  std::vector<std::string> langs = opts.langs.empty() ? test_langs_in(opts.data_dir) : opts.langs;

  json config;
  config["k"] = opts.fit.k;
  config["k_local"] = opts.k_local;
  config["tau_percentile"] = opts.fit.tau_percentile;
  if (opts.fit.tau_override) config["tau"] = *opts.fit.tau_override;
  config["wl_langs"] = opts.wl_langs;
  config["langs"] = langs;
  config["max_len"] = opts.max_len;
  run.set_config(config);

  // fit on the WL training sets
  std::vector<Corpus> wl_train;
  for (const std::string& wl : opts.wl_langs) wl_train.push_back(load_split(opts.data_dir, wl, "train", &run));
  int total = 0;
  for (const Corpus& c : wl_train) total += static_cast<int>(c.size());
  const int d = bundle.backbone->config().d_model;
  Tensor train_emb = Tensor::zeros({total, d});
  int row = 0;
  for (const Corpus& c : wl_train) {
    Tensor emb = embed_examples(*bundle.backbone, bundle.tok, c, opts.max_len);
    for (int i = 0; i < emb.dim(0); ++i, ++row) {
      for (int j = 0; j < d; ++j) train_emb.at(row, j) = emb.at(i, j);
    }
  }
  TopicFitOptions fit = opts.fit;
  fit.seed = common.seed;
  TopicModel model = fit_topic_model(train_emb, fit);

  // assign topics to every language's test split
  std::map<std::string, Corpus> test_by_lang;
  std::map<std::string, Tensor> emb_by_lang;
  std::map<std::string, std::vector<TopicAssignment>> assignments;
  for (const std::string& lang : langs) {
    Corpus test = load_split(opts.data_dir, lang, "test", &run);
    Tensor emb = embed_examples(*bundle.backbone, bundle.tok, test, opts.max_len);
    std::vector<std::string> ids;
    for (const Example& e : test.examples) ids.push_back(e.id);
    assignments[lang] = assign_topics(model, emb, ids);
    emb_by_lang.emplace(lang, std::move(emb));
    test_by_lang.emplace(lang, std::move(test));
  }

  TopicFitOptions refit = fit;
  refit.k = opts.k_local;
  GlobalLocalSets sets = build_global_local_sets(assignments, emb_by_lang, opts.wl_langs, refit);
  RelationGraph graph = build_relation_graph(assignments);

  {
    std::ostringstream os;
    os.precision(17);
    os << "lang\tid\ttopic\tdistance\n";
    for (const auto& [lang, assigns] : assignments) {
      for (const TopicAssignment& a : assigns) {
        os << lang << '\t' << a.example_id << '\t' << a.topic << '\t' << a.distance << '\n';
      }
    }
    run.write_text("assignments.tsv", os.str());
  }
  save_scoped_sets(sets, test_by_lang, run.path_of("eval_sets.tsv"));
  run.add_output("eval_sets.tsv");
  run.write_text("graph.dot", relation_graph_dot(graph));
  run.write_text("graph.json", relation_graph_json_str(graph) + "\n");
  run.finish();
  return {run.dir().string()};
}

StageResult run_interpret(const InterpretOpts& opts, const CommonOpts& common,
                          const std::map<std::string, std::string>& config_sources) {
  RunDir run("interpret", common, config_sources);
  run.add_input(opts.model.artifact_path);
  LoadedModel loaded = load_model(opts.model);

  std::vector<std::string> langs = opts.langs.empty() ? test_langs_in(opts.data_dir) : opts.langs;
  std::map<std::string, Corpus> test_by_lang;
  for (const std::string& lang : langs) test_by_lang.emplace(lang, load_split(opts.data_dir, lang, "test", &run));

  json config = train_config_json(opts.cfg);
  config["kind"] = opts.model.kind;
  config["langs"] = langs;
  run.set_config(config);

  FusionReport report = fusion_attention_report(loaded.model, loaded.tok, test_by_lang, opts.cfg);
  run.write_text("fusion_weights.csv", fusion_report_csv(report, false));
  run.write_text("fusion_weights_pooled.csv", fusion_report_csv(report, true));
  {
    json j;
    j["members"] = report.member_tags;
    for (const auto& [lang, by_layer] : report.by_layer) {
      for (const auto& [layer, weights] : by_layer) {
        j["by_layer"][lang][std::to_string(layer)] = weights;
      }
    }
    run.write_text("fusion_weights_by_layer.json", j.dump(2) + "\n");
  }
  run.finish();
  return {run.dir().string()};
}

StageResult run_attribute(const AttributeOpts& opts, const CommonOpts& common,
                          const std::map<std::string, std::string>& config_sources) {
  RunDir run("attribute", common, config_sources);
  run.add_input(opts.model.artifact_path);
  run.add_input(opts.corpus_path);
  LoadedModel loaded = load_model(opts.model);
  Corpus corpus = load_corpus(opts.corpus_path, guess_corpus_format(opts.corpus_path));

  json config = train_config_json(opts.cfg);
  config["steps"] = opts.steps;
  config["limit"] = opts.limit;
  config["kind"] = opts.model.kind;
  run.set_config(config);

  std::vector<Attribution> rows;
  long limit = opts.limit > 0 ? opts.limit : static_cast<long>(corpus.examples.size());
  for (const Example& e : corpus.examples) {
    if (static_cast<long>(rows.size()) >= limit) break;
    rows.push_back(integrated_gradients(loaded.model, loaded.tok, e, opts.cfg, opts.steps));
  }
  run.write_text("attributions.jsonl", attributions_jsonl(rows));
  run.finish();
  return {run.dir().string()};
}

StageResult run_report(const ReportOpts& opts, const CommonOpts& common,
                       const std::map<std::string, std::string>& config_sources) {
  RunDir run("report", common, config_sources);
  json config;

  std::vector<LoadedModel> keep_alive;
  std::vector<std::pair<std::string, const Model*>> model_ptrs;
  for (const auto& [id, ref] : opts.models) {
    run.add_input(ref.artifact_path);
    keep_alive.push_back(load_model(ref));
    config["models"].push_back(id);
  }
  for (size_t i = 0; i < keep_alive.size(); ++i) {
    model_ptrs.push_back({opts.models[i].first, &keep_alive[i].model});
  }
  run.set_config(config);

  if (!model_ptrs.empty()) {
    std::vector<ParamSizeRow> rows = param_size_report(model_ptrs, (run.dir() / "artifacts").string());
    run.write_text("param_sizes.tsv", param_size_tsv(rows));
  }
  if (!opts.corpus_paths.empty()) {
    std::ostringstream os;
    os << "corpus\ttotal\tlabeled\tcw\tpct_cw\n";
    os.precision(4);
    os << std::fixed;
    for (const std::string& path : opts.corpus_paths) {
      run.add_input(path);
      const Corpus c = load_corpus(path, guess_corpus_format(path));
      const CorpusStats s = corpus_stats(c);
      os << path << '\t' << s.total << '\t' << s.labeled << '\t' << s.cw << '\t' << s.pct_cw << '\n';
    }
    run.write_text("corpus_stats.tsv", os.str());
  }
  run.finish();
  return {run.dir().string()};
}

std::map<std::string, std::string> manifest_output_hashes(const std::string& run_dir) {
  const std::string path = (fs::path(run_dir) / "manifest.json").string();
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  json manifest;
  is >> manifest;
  std::map<std::string, std::string> out;
  for (const auto& [name, hash] : manifest["outputs"].items()) out[name] = hash.get<std::string>();
  return out;
}

}  // namespace cw::pipeline
