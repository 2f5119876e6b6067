#pragma once

#include <map>
#include <string>
#include <vector>

#include "cw/evalkit.hpp"
#include "cw/synth.hpp"
#include "cw/topics.hpp"
#include "cw/training.hpp"

namespace cw::pipeline {

// Every stage writes into a fresh run directory under out_root containing
// exactly one manifest.json: command, resolved config with per-key source
// (flag / config file / default), seeds, input hashes, output hashes and
// wall clock. Timing files are recorded separately so artifact hashes stay
// comparable across re-runs.
struct CommonOpts {
  std::string out_root;  // empty -> $CWDET_OUT_ROOT or ./runs
  std::string run_name;  // required; directory must not already exist
  uint64_t seed = 1;
};

std::string resolve_out_root(const std::string& flag_value);

struct StageResult {
  std::string run_dir;
};

// gen-synth
StageResult run_gen_synth(const SynthConfig& cfg, const CommonOpts& opts,
                          const std::map<std::string, std::string>& config_sources = {});

// pretrain-backbone
struct PretrainBackboneOpts {
  std::string data_dir;                 // gen-synth run dir
  std::vector<std::string> languages;   // empty = every synth.<lang>.mlm.txt present
  EncoderConfig encoder;                // vocab_size is replaced by the built tokenizer's size
  MlmTrainOptions mlm;
};
StageResult run_pretrain_backbone(const PretrainBackboneOpts& opts, const CommonOpts& common,
                                  const std::map<std::string, std::string>& config_sources = {});

struct BackboneBundle {
  std::shared_ptr<Backbone> backbone;
  Tokenizer tok;
};
BackboneBundle load_backbone_bundle(const std::string& backbone_run_dir);

// pretrain-la
struct PretrainLaOpts {
  std::string backbone_dir;
  std::string data_dir;
  std::string lang;
  MlmTrainOptions mlm;
  int bottleneck = 0;
};
StageResult run_pretrain_la(const PretrainLaOpts& opts, const CommonOpts& common,
                            const std::map<std::string, std::string>& config_sources = {});

// train-ta
struct TrainTaOpts {
  std::string backbone_dir;
  std::string data_dir;
  std::string lang;
  TrainConfig train;
  std::string la_path;  // optional stacked language adapter
};
StageResult run_train_ta(const TrainTaOpts& opts, const CommonOpts& common,
                         const std::map<std::string, std::string>& config_sources = {});

// train-fusion
struct TrainFusionOpts {
  std::string backbone_dir;
  std::string data_dir;
  std::vector<std::string> langs;                // world languages (train+dev must exist)
  std::vector<std::string> member_paths;         // trained TA artifacts
  TrainConfig train;
  std::string la_policy = "none";                // none | stacked
  std::map<std::string, std::string> la_paths;   // lang -> LA artifact
  std::string fallback_lang = "en";
};
StageResult run_train_fusion(const TrainFusionOpts& opts, const CommonOpts& common,
                             const std::map<std::string, std::string>& config_sources = {});

// train-baseline
struct TrainBaselineOpts {
  std::string backbone_dir;
  std::string data_dir;
  std::string kind;  // model kind string
  std::vector<std::string> langs;
  TrainConfig train;
  std::map<std::string, std::string> la_paths;
  std::string fallback_lang = "en";
};
StageResult run_train_baseline(const TrainBaselineOpts& opts, const CommonOpts& common,
                               const std::map<std::string, std::string>& config_sources = {});

// Reference to a trained model on disk, reconstructable into a Model.
struct ModelRef {
  std::string kind;           // model kind string
  std::string backbone_dir;   // pretrain-backbone run dir (tokenizer + checkpoint)
  std::string artifact_path;  // TA/fusion artifact, or FFT checkpoint
  std::map<std::string, std::string> la_paths;
  std::string fallback_lang = "en";
};

struct LoadedModel {
  Model model;
  Tokenizer tok;
};
LoadedModel load_model(const ModelRef& ref);

// evaluate
struct EvaluateOpts {
  ModelRef model;
  std::string model_id = "model";
  std::string data_dir;
  std::vector<std::string> langs;  // empty = every language with a test corpus
  std::string scope = "all";
  std::string metric = "f1";
  TrainConfig cfg;
};
StageResult run_evaluate(const EvaluateOpts& opts, const CommonOpts& common,
                         const std::map<std::string, std::string>& config_sources = {});

// topical-split
struct TopicalSplitOpts {
  std::string backbone_dir;
  std::string data_dir;
  std::vector<std::string> wl_langs;
  std::vector<std::string> langs;  // all evaluated languages; empty = every test corpus
  TopicFitOptions fit;             // k required; tau percentile/override
  int k_local = 6;
  int max_len = 128;
};
StageResult run_topical_split(const TopicalSplitOpts& opts, const CommonOpts& common,
                              const std::map<std::string, std::string>& config_sources = {});

// interpret
struct InterpretOpts {
  ModelRef model;
  std::string data_dir;
  std::vector<std::string> langs;
  TrainConfig cfg;
};
StageResult run_interpret(const InterpretOpts& opts, const CommonOpts& common,
                          const std::map<std::string, std::string>& config_sources = {});

// attribute
struct AttributeOpts {
  ModelRef model;
  std::string corpus_path;  // tsv or jsonl
  int steps = 256;
  int limit = 0;  // 0 = all examples
  TrainConfig cfg;
};
StageResult run_attribute(const AttributeOpts& opts, const CommonOpts& common,
                          const std::map<std::string, std::string>& config_sources = {});

// report
struct ReportOpts {
  std::vector<std::pair<std::string, ModelRef>> models;  // id -> ref
  std::vector<std::string> corpus_paths;                 // stats table inputs
};
StageResult run_report(const ReportOpts& opts, const CommonOpts& common,
                       const std::map<std::string, std::string>& config_sources = {});

// Artifact hashes recorded in a run's manifest (deterministic outputs only).
std::map<std::string, std::string> manifest_output_hashes(const std::string& run_dir);

}  // namespace cw::pipeline
