#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cw/metrics.hpp"
#include "cw/training.hpp"

namespace cw {

struct EvalRow {
  std::string model_id;
  std::string lang;
  std::string metric;  // map | f1 | precision | recall
  std::string scope;   // all | global | local | zero-shot
  bool defined = true;
  double value = 0.0;
  long n = 0;
  bool la_fallback = false;
  std::string note;
};

struct EvalReport {
  std::string model_id;
  std::string scope;
  std::vector<EvalRow> rows;
};

struct ScoredCorpus {
  std::vector<PredictionRow> rows;
  std::vector<int> labels;  // aligned with rows; -1 for unlabeled
  bool la_fallback = false;
};

ScoredCorpus score_corpus(const Model& model, const Tokenizer& tok, const Corpus& corpus,
                          const TrainConfig& cfg);

// One row per (language, metric); zero-shot scope is a labeling decision of
// the caller (the target languages were absent from training). Languages
// listed in wanted_langs but missing from the corpora map produce a flagged
// warning row instead of failing. Prediction rows per language are exposed
// for downstream agreement/slicing reports.
EvalReport evaluate_model(const Model& model, const std::string& model_id, const Tokenizer& tok,
                          const std::map<std::string, Corpus>& test_by_lang, const std::string& scope,
                          const std::string& metric, const TrainConfig& cfg,
                          const std::vector<std::string>& wanted_langs = {},
                          std::map<std::string, std::vector<PredictionRow>>* predictions = nullptr);

std::string eval_report_tsv(const EvalReport& report);
std::string eval_report_json_str(const EvalReport& report);

// Average fusion-attention weights per member task adapter, grouped by test
// language: over all non-pad token positions and, separately, over the
// pooled first position only.
struct FusionReport {
  std::vector<std::string> member_tags;
  std::map<std::string, std::vector<double>> avg_all_tokens;  // lang -> per-member mean
  std::map<std::string, std::vector<double>> avg_pooled;      // first position only
  std::map<std::string, std::map<int, std::vector<double>>> by_layer;
  std::map<std::string, long> examples;
};

FusionReport fusion_attention_report(const Model& model, const Tokenizer& tok,
                                     const std::map<std::string, Corpus>& test_by_lang,
                                     const TrainConfig& cfg);

// rows = test languages, cols = member tags (heatmap layout)
std::string fusion_report_csv(const FusionReport& report, bool pooled = false);

struct IgResult {
  Tensor attributions;  // same shape as the input block
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_residual = 0.0;
};

// Midpoint-rule path integral of gradients from baseline to input. `f` must
// rebuild a scalar output from the supplied block each call.
IgResult integrated_gradients_fn(const std::function<Tensor(const Tensor&, Tape*)>& f, const Tensor& input,
                                 const Tensor& baseline, int steps);

struct Attribution {
  std::string example_id;
  std::vector<std::string> tokens;
  std::vector<double> scores;  // per token position
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_residual = 0.0;
};

// Attribution of the model's check-worthiness score to each input token,
// against the all-[PAD] embedding baseline.
Attribution integrated_gradients(const Model& model, const Tokenizer& tok, const Example& ex,
                                 const TrainConfig& cfg, int steps = 256);

std::string attributions_jsonl(const std::vector<Attribution>& rows);

struct EntitySliceRow {
  std::string type;
  long n = 0;
  bool defined = false;  // false when no tagged examples exist for the type
  double f1_mean = 0.0;
  double f1_std = 0.0;
  std::vector<double> per_seed;
};

// F1 over the subset of examples carrying each entity type, one value per
// seed's predictions (id -> predicted label).
std::vector<EntitySliceRow> entity_sliced_scores(const Corpus& corpus,
                                                 const std::vector<std::map<std::string, int>>& preds_per_seed);

std::string entity_slices_tsv(const std::vector<EntitySliceRow>& rows);

// Agreement between two models' predicted labels, per language and pooled.
struct KappaReport {
  std::map<std::string, std::optional<double>> per_lang;
  std::optional<double> pooled;
};

KappaReport prediction_agreement(const std::map<std::string, std::vector<PredictionRow>>& a,
                                 const std::map<std::string, std::vector<PredictionRow>>& b);

// All parameters reachable from a model (ensemble members included).
std::vector<const Parameter*> model_parameters(const Model& model);

// Restores the trainable flags this model's own recipe would set, so counts
// are independent of whatever trained last.
void set_canonical_trainability(const Model& model);

struct ParamSizeRow {
  std::string model_id;
  std::string kind;
  long trainable = 0;
  std::map<std::string, long> by_group;
  long artifact_bytes = 0;
  std::string artifact_path;
};

// Saves each model's task-specific artifact (adapters/fusion + head, or the
// full checkpoint for FFT kinds) into dir and reports trainable counts with
// on-disk sizes.
std::vector<ParamSizeRow> param_size_report(const std::vector<std::pair<std::string, const Model*>>& models,
                                            const std::string& dir);

std::string param_size_tsv(const std::vector<ParamSizeRow>& rows);

}  // namespace cw
