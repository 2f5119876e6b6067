#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cw/encoder.hpp"
#include "cw/metrics.hpp"

namespace cw {

enum class ModelKind {
  fft_single,
  ta_la_single,
  wl_fft,
  wl_ta,
  wl_ta_la,
  wl_af,
  wl_af_la,
  mean_ensemble,
};

const char* to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-4;
  int batch_size = 16;
  std::string selection_metric = "f1";  // f1 | map
  int max_len = 128;
  double threshold = 0.5;
  int adapter_bottleneck = 0;  // 0 -> d_model / 8

  void validate() const;
};

// Language adapters available at inference, with the designated fallback
// installed for unregistered target languages.
struct LaRegistry {
  std::map<std::string, std::shared_ptr<AdapterSet>> by_lang;
  std::string fallback_lang = "en";

  // (adapter, used_fallback)
  std::pair<std::shared_ptr<AdapterSet>, bool> resolve(const std::string& lang) const;
};

struct Model {
  ModelKind kind = ModelKind::wl_ta;
  std::shared_ptr<Backbone> backbone;
  std::shared_ptr<AdapterSet> ta;
  std::shared_ptr<Fusion> fusion;
  std::shared_ptr<LaRegistry> las;  // non-null only for *_la kinds
  std::vector<std::string> source_langs;
  std::vector<std::shared_ptr<Model>> members;  // mean ensemble only

  bool uses_la() const { return las != nullptr; }
  // Adapter stack for scoring examples of `lang`; second member reports
  // whether the fallback language adapter was installed.
  std::pair<AdapterStack, bool> stack_for(const std::string& lang) const;
  double score(const std::vector<int>& ids, const std::string& lang, FusionTrace* trace = nullptr) const;
};

double mean_ensemble_predict(const std::vector<std::shared_ptr<Model>>& members,
                             const std::vector<int>& ids, const std::string& lang);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
  double seconds = 0.0;
};

struct TrainedModel {
  Model model;
  int best_epoch = -1;
  double best_dev_metric = 0.0;
  std::vector<EpochRecord> epochs;
  std::map<std::string, std::string> frozen_hash_before;  // group -> sha256
  std::map<std::string, std::string> frozen_hash_after;
};

// Fine-tunes one task adapter (plus classifier head) against a frozen
// backbone on a single corpus; returns the best-dev-epoch checkpoint.
TrainedModel train_task_adapter(std::shared_ptr<Backbone> backbone, const Tokenizer& tok,
                                const Corpus& train, const Corpus& dev, const TrainConfig& cfg,
                                uint64_t seed, const std::string& tag,
                                std::shared_ptr<AdapterSet> stacked_la = nullptr);

// Masked-language-model training of a language adapter over a frozen
// backbone.
std::shared_ptr<AdapterSet> train_language_adapter(std::shared_ptr<Backbone> backbone,
                                                   const Tokenizer& tok,
                                                   const std::vector<std::string>& texts,
                                                   const MlmTrainOptions& opt, const std::string& lang,
                                                   int adapter_bottleneck = 0,
                                                   std::map<std::string, std::string>* frozen_hashes = nullptr);

enum class LaPolicy { none, stacked, fallback_default };
LaPolicy la_policy_from_string(const std::string& s);

// Trains fusion projections (plus head) over frozen member task adapters on
// the concatenated world-language corpora; dev is the union of WL dev sets.
TrainedModel train_fusion(std::shared_ptr<Backbone> backbone, const Tokenizer& tok,
                          std::vector<std::shared_ptr<AdapterSet>> members,
                          const std::map<std::string, Corpus>& train_by_lang,
                          const std::map<std::string, Corpus>& dev_by_lang, const TrainConfig& cfg,
                          uint64_t seed, LaPolicy la_policy = LaPolicy::none,
                          std::shared_ptr<LaRegistry> las = nullptr);

struct ModelSpec {
  ModelKind kind = ModelKind::wl_ta;
  std::vector<std::string> source_langs;
  LaPolicy la_policy = LaPolicy::none;

  void validate() const;
};

struct TrainingData {
  std::shared_ptr<Backbone> backbone;
  const Tokenizer* tok = nullptr;
  std::map<std::string, Corpus> train;  // by language
  std::map<std::string, Corpus> dev;
  std::shared_ptr<LaRegistry> las;  // required for LA-stacking kinds
};

// Dispatches every model kind, including the fusion setups (whose member
// task adapters it trains first) and the mean ensemble.
TrainedModel train_baseline(const ModelSpec& spec, const TrainingData& data, const TrainConfig& cfg,
                            uint64_t seed);

struct SeedRunResult {
  std::vector<std::pair<uint64_t, double>> per_seed;
  SeedStats stats;
};

SeedRunResult run_seeds(const std::function<double(uint64_t)>& recipe_metric,
                        const std::vector<uint64_t>& seeds);

struct TimingRow {
  std::string recipe;
  int epoch = 0;
  double seconds = 0.0;
};

std::vector<TimingRow> timing_rows(const std::string& recipe, const TrainedModel& trained);
void save_timing_tsv(const std::string& path, const std::vector<TimingRow>& rows);

// Dev metric of a model over labeled examples (f1 at cfg.threshold, or map).
double dev_metric(const Model& model, const Tokenizer& tok, const std::vector<const Corpus*>& corpora,
                  const TrainConfig& cfg);

}  // namespace cw
