#include "cw/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cw/ops.hpp"

namespace cw {

using nlohmann::json;
namespace fs = std::filesystem;

ScoredCorpus score_corpus(const Model& model, const Tokenizer& tok, const Corpus& corpus,
                          const TrainConfig& cfg) {
  ScoredCorpus out;
  for (const Example& e : corpus.examples) {
    if (model.kind != ModelKind::mean_ensemble && model.uses_la()) {
      auto [stack, fallback] = model.stack_for(e.lang);
      (void)stack;
      out.la_fallback = out.la_fallback || fallback;
    }
    const double score = model.score(tok.encode(e.text, cfg.max_len), e.lang);
    out.rows.push_back({e.id, e.lang, score, score >= cfg.threshold ? 1 : 0});
    out.labels.push_back(e.label ? *e.label : -1);
  }
  return out;
}

namespace {

void append_metric_rows(EvalReport& report, const std::string& lang, const std::string& scope,
                        const std::string& metric, const ScoredCorpus& scored) {
  std::vector<double> scores;
  std::vector<int> labels, preds;
  std::vector<std::string> ids;
  for (size_t i = 0; i < scored.rows.size(); ++i) {
    if (scored.labels[i] < 0) continue;
    scores.push_back(scored.rows[i].score);
    preds.push_back(scored.rows[i].pred_label);
    labels.push_back(scored.labels[i]);
    ids.push_back(scored.rows[i].id);
  }
  EvalRow row;
  row.model_id = report.model_id;
  row.lang = lang;
  row.scope = scope;
  row.n = static_cast<long>(labels.size());
  row.la_fallback = scored.la_fallback;
  if (labels.empty()) {
    row.metric = metric;
    row.defined = false;
    row.note = "no labeled examples";
    report.rows.push_back(std::move(row));
    return;
  }
  if (metric == "map") {
    row.metric = "map";
    const auto ap = average_precision(scores, labels, ids);
    row.defined = ap.has_value();
    row.value = ap.value_or(0.0);
    if (!ap) row.note = "no positive labels";
    report.rows.push_back(std::move(row));
    return;
  }
  const F1Result f1 = f1_binary(preds, labels);
  for (const auto& [name, value] :
       std::initializer_list<std::pair<const char*, double>>{{"f1", f1.f1}, {"precision", f1.precision},
                                                             {"recall", f1.recall}}) {
    EvalRow r = row;
    r.metric = name;
    r.value = value;
    report.rows.push_back(std::move(r));
  }
}

}  // namespace

EvalReport evaluate_model(const Model& model, const std::string& model_id, const Tokenizer& tok,
                          const std::map<std::string, Corpus>& test_by_lang, const std::string& scope,
                          const std::string& metric, const TrainConfig& cfg,
                          const std::vector<std::string>& wanted_langs,
                          std::map<std::string, std::vector<PredictionRow>>* predictions) {
  if (metric != "map" && metric != "f1") {
    raise(ErrorCategory::config, "evaluation metric must be map or f1, got '" + metric + "'");
  }
  EvalReport report;
  report.model_id = model_id;
  report.scope = scope;

  std::vector<std::string> langs = wanted_langs;
  if (langs.empty()) {
    for (const auto& [lang, corpus] : test_by_lang) langs.push_back(lang);
  }
  for (const std::string& lang : langs) {
    auto it = test_by_lang.find(lang);
    if (it == test_by_lang.end()) {
      EvalRow row;
      row.model_id = model_id;
      row.lang = lang;
      row.scope = scope;
      row.metric = metric;
      row.defined = false;
      row.note = "missing corpus, skipped";
      report.rows.push_back(std::move(row));
      continue;
    }
    ScoredCorpus scored = score_corpus(model, tok, it->second, cfg);
    if (predictions) (*predictions)[lang] = scored.rows;
    append_metric_rows(report, lang, scope, metric, scored);
  }
  return report;
}

std::string eval_report_tsv(const EvalReport& report) {
  std::ostringstream os;
  os << "model\tlang\tscope\tmetric\tvalue\tn\tdefined\tla_fallback\tnote\n";
  os.precision(6);
  os << std::fixed;
  for (const EvalRow& r : report.rows) {
    os << r.model_id << '\t' << r.lang << '\t' << r.scope << '\t' << r.metric << '\t' << r.value << '\t' << r.n
       << '\t' << (r.defined ? 1 : 0) << '\t' << (r.la_fallback ? 1 : 0) << '\t' << r.note << '\n';
  }
  return os.str();
}

std::string eval_report_json_str(const EvalReport& report) {
  json j;
  j["model"] = report.model_id;
  j["scope"] = report.scope;
  j["rows"] = json::array();
  for (const EvalRow& r : report.rows) {
    j["rows"].push_back({{"lang", r.lang},
                         {"metric", r.metric},
                         {"scope", r.scope},
                         {"value", r.value},
                         {"n", r.n},
                         {"defined", r.defined},
                         {"la_fallback", r.la_fallback},
                         {"note", r.note}});
  }
  return j.dump(2);
}

FusionReport fusion_attention_report(const Model& model, const Tokenizer& tok,
                                     const std::map<std::string, Corpus>& test_by_lang,
                                     const TrainConfig& cfg) {
  if (!model.fusion) raise(ErrorCategory::config, "fusion attention report requires a fusion model");
  FusionReport report;
  report.member_tags = model.fusion->member_tags();
  const size_t n_members = report.member_tags.size();

  for (const auto& [lang, corpus] : test_by_lang) {
    std::vector<double> sum_all(n_members, 0.0);
    std::vector<double> sum_pooled(n_members, 0.0);
    std::map<int, std::vector<double>> sum_layer;
    double count_all = 0.0, count_pooled = 0.0;
    std::map<int, double> count_layer;

    for (const Example& e : corpus.examples) {
      const std::vector<int> ids = tok.encode(e.text, cfg.max_len);
      FusionTrace trace;
      model.score(ids, lang, &trace);
      for (const FusionTrace::LayerRecord& rec : trace.records) {
        auto& layer_sum = sum_layer[rec.layer];
        if (layer_sum.empty()) layer_sum.assign(n_members, 0.0);
        for (int p = 0; p < rec.weights.dim(0); ++p) {
          const bool pad = ids[static_cast<size_t>(p)] == model.backbone->config().pad_id;
          if (pad) continue;
          for (size_t m = 0; m < n_members; ++m) {
            const double w = rec.weights.at(p, static_cast<int>(m));
            sum_all[m] += w;
            layer_sum[m] += w;
            if (p == 0) sum_pooled[m] += w;
          }
          count_all += 1.0;
          count_layer[rec.layer] += 1.0;
          if (p == 0) count_pooled += 1.0;
        }
      }
    }
    if (count_all > 0.0) {
      for (double& v : sum_all) v /= count_all;
      for (double& v : sum_pooled) v /= count_pooled;
      for (auto& [layer, sums] : sum_layer) {
        for (double& v : sums) v /= count_layer[layer];
      }
    }
    report.avg_all_tokens[lang] = std::move(sum_all);
    report.avg_pooled[lang] = std::move(sum_pooled);
    report.by_layer[lang] = std::move(sum_layer);
    report.examples[lang] = static_cast<long>(corpus.examples.size());
  }
  return report;
}

std::string fusion_report_csv(const FusionReport& report, bool pooled) {
  std::ostringstream os;
  os << "lang";
  for (const std::string& tag : report.member_tags) os << ',' << tag;
  os << '\n';
  os.precision(6);
  os << std::fixed;
  const auto& table = pooled ? report.avg_pooled : report.avg_all_tokens;
  for (const auto& [lang, weights] : table) {
    os << lang;
    for (double w : weights) os << ',' << w;
    os << '\n';
  }
  return os.str();
}

IgResult integrated_gradients_fn(const std::function<Tensor(const Tensor&, Tape*)>& f, const Tensor& input,
                                 const Tensor& baseline, int steps) {
  if (steps < 1) raise(ErrorCategory::config, "integrated gradients needs at least one step");
  if (input.shape() != baseline.shape()) {
    raise(ErrorCategory::dimension, "integrated gradients: input " + shape_str(input.shape()) +
                                        " vs baseline " + shape_str(baseline.shape()));
  }
  IgResult out;
  out.f_input = f(input, nullptr).item();
  out.f_baseline = f(baseline, nullptr).item();

  std::vector<double> avg_grad(input.numel(), 0.0);
  for (int s = 0; s < steps; ++s) {
    const double alpha = (static_cast<double>(s) + 0.5) / static_cast<double>(steps);
    Tensor point = Tensor::zeros(input.shape());
    for (size_t i = 0; i < input.numel(); ++i) {
      point.data()[i] = baseline.data()[i] + alpha * (input.data()[i] - baseline.data()[i]);
    }
    point.set_requires_grad(true);
    Tape tape;
    Tensor y = f(point, &tape);
    tape.backward(y);
    const std::vector<double>& g = point.grad();
    for (size_t i = 0; i < avg_grad.size(); ++i) avg_grad[i] += g[i];
  }
  out.attributions = Tensor::zeros(input.shape());
  double total = 0.0;
  for (size_t i = 0; i < avg_grad.size(); ++i) {
    out.attributions.data()[i] =
        (input.data()[i] - baseline.data()[i]) * avg_grad[i] / static_cast<double>(steps);
    total += out.attributions.data()[i];
  }
  out.completeness_residual = std::abs(total - (out.f_input - out.f_baseline));
  return out;
}

Attribution integrated_gradients(const Model& model, const Tokenizer& tok, const Example& ex,
                                 const TrainConfig& cfg, int steps) {
  if (model.kind == ModelKind::mean_ensemble) {
    raise(ErrorCategory::config, "integrated gradients needs a single differentiable model");
  }
  const std::vector<int> ids = tok.encode(ex.text, cfg.max_len);
  auto [stack, fallback] = model.stack_for(ex.lang);
  (void)fallback;
  const AdapterStack* stack_ptr = stack.empty() ? nullptr : &stack;
  const Backbone& bb = *model.backbone;

  Tensor input = token_embeddings(bb, ids).clone();
  const std::vector<int> pad_ids(ids.size(), bb.config().pad_id);
  Tensor baseline = token_embeddings(bb, pad_ids).clone();

  auto f = [&](const Tensor& block, Tape* tape) {
    Tensor h = encode_from_embeddings(bb, block, ids, stack_ptr, tape);
    Classification cls = classify(bb, h, tape);
    Tensor probs = softmax(cls.logits, -1, tape);
    return slice_cols(probs, 1, 1, tape);  // P(check-worthy)
  };
  IgResult ig = integrated_gradients_fn(f, input, baseline, steps);

  Attribution out;
  out.example_id = ex.id;
  out.f_input = ig.f_input;
  out.f_baseline = ig.f_baseline;
  out.completeness_residual = ig.completeness_residual;
  const int d = bb.config().d_model;
  for (size_t p = 0; p < ids.size(); ++p) {
    double score = 0.0;
    for (int j = 0; j < d; ++j) score += ig.attributions.at(static_cast<int>(p), j);
    out.scores.push_back(score);
    const int id = ids[p];
    if (id == Tokenizer::kPad) out.tokens.push_back("[PAD]");
    else if (id == Tokenizer::kCls) out.tokens.push_back("[CLS]");
    else if (id == Tokenizer::kUnk) out.tokens.push_back("[UNK]");
    else if (id == Tokenizer::kMask) out.tokens.push_back("[MASK]");
    else out.tokens.push_back(tok.detokenize({id}));
  }
  return out;
}

std::string attributions_jsonl(const std::vector<Attribution>& rows) {
  std::string out;
  for (const Attribution& a : rows) {
    json j;
    j["id"] = a.example_id;
    j["tokens"] = a.tokens;
    j["scores"] = a.scores;
    j["residual"] = a.completeness_residual;
    j["f_input"] = a.f_input;
    j["f_baseline"] = a.f_baseline;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<EntitySliceRow> entity_sliced_scores(const Corpus& corpus,
                                                 const std::vector<std::map<std::string, int>>& preds_per_seed) {
  std::vector<std::string> types{"GPE", "ORG", "NUM", "PER"};
  for (const Example& e : corpus.examples) {
    for (const EntityTag& t : e.entity_tags) {
      if (std::find(types.begin(), types.end(), t.type) == types.end()) types.push_back(t.type);
    }
  }
  std::vector<EntitySliceRow> rows;
  for (const std::string& type : types) {
    EntitySliceRow row;
    row.type = type;
    std::vector<const Example*> subset;
    for (const Example& e : corpus.examples) {
      if (!e.label) continue;
      for (const EntityTag& t : e.entity_tags) {
        if (t.type == type) {
          subset.push_back(&e);
          break;
        }
      }
    }
    row.n = static_cast<long>(subset.size());
    if (subset.empty()) {
      rows.push_back(std::move(row));  // null row
      continue;
    }
    row.defined = true;
    for (const auto& preds : preds_per_seed) {
      std::vector<int> p, l;
      for (const Example* e : subset) {
        auto it = preds.find(e->id);
        if (it == preds.end()) raise(ErrorCategory::input, "missing prediction for example '" + e->id + "'");
        p.push_back(it->second);
        l.push_back(*e->label);
      }
      row.per_seed.push_back(f1_binary(p, l).f1);
    }
    const SeedStats stats = aggregate_seed_values(row.per_seed);
    row.f1_mean = stats.mean;
    row.f1_std = stats.stddev;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string entity_slices_tsv(const std::vector<EntitySliceRow>& rows) {
  std::ostringstream os;
  os << "entity_type\tn\tdefined\tf1_mean\tf1_std\tseeds\n";
  os.precision(6);
  os << std::fixed;
  for (const EntitySliceRow& r : rows) {
    os << r.type << '\t' << r.n << '\t' << (r.defined ? 1 : 0) << '\t' << r.f1_mean << '\t' << r.f1_std << '\t'
       << r.per_seed.size() << '\n';
  }
  return os.str();
}

KappaReport prediction_agreement(const std::map<std::string, std::vector<PredictionRow>>& a,
                                 const std::map<std::string, std::vector<PredictionRow>>& b) {
  KappaReport report;
  std::vector<std::vector<int>> pooled;
  for (const auto& [lang, rows_a] : a) {
    auto it = b.find(lang);
    if (it == b.end()) continue;
    std::map<std::string, int> b_by_id;
    for (const PredictionRow& r : it->second) b_by_id[r.id] = r.pred_label;
    std::vector<std::vector<int>> ratings;
    for (const PredictionRow& r : rows_a) {
      auto bit = b_by_id.find(r.id);
      if (bit == b_by_id.end()) continue;
      ratings.push_back({r.pred_label, bit->second});
      pooled.push_back({r.pred_label, bit->second});
    }
    if (ratings.empty()) {
      report.per_lang[lang] = std::nullopt;
      continue;
    }
    report.per_lang[lang] = fleiss_kappa(ratings, 2);
  }
  report.pooled = pooled.empty() ? std::nullopt : fleiss_kappa(pooled, 2);
  return report;
}

std::vector<const Parameter*> model_parameters(const Model& model) {
  std::vector<const Parameter*> out;
  std::set<std::string> seen;
  auto add = [&](const std::vector<const Parameter*>& params) {
    for (const Parameter* p : params) {
      if (seen.insert(p->name).second) out.push_back(p);
    }
  };
  std::function<void(const Model&)> walk = [&](const Model& m) {
    if (m.backbone) add(std::as_const(*m.backbone).parameters());
    if (m.ta) add(std::as_const(*m.ta).parameters());
    if (m.fusion) {
      for (const Parameter* p : const_cast<Fusion&>(*m.fusion).parameters()) {
        if (seen.insert(p->name).second) out.push_back(p);
      }
      for (const auto& member : m.fusion->members) add(std::as_const(*member).parameters());
    }
    if (m.las) {
      for (const auto& [lang, la] : m.las->by_lang) add(std::as_const(*la).parameters());
    }
    for (const auto& member : m.members) walk(*member);
  };
  walk(model);
  return out;
}

void set_canonical_trainability(const Model& model) {
  if (model.kind == ModelKind::mean_ensemble) {
    for (const auto& member : model.members) set_canonical_trainability(*member);
    return;
  }
  const bool fft = model.kind == ModelKind::fft_single || model.kind == ModelKind::wl_fft;
  model.backbone->set_frozen(!fft, false);
  for (Parameter* p : model.backbone->head_parameters()) p->set_trainable(true);
  if (model.ta) model.ta->set_trainable(true);
  if (model.fusion) {
    model.fusion->set_trainable(true);
    for (const auto& member : model.fusion->members) member->set_trainable(false);
  }
  if (model.las) {
    for (auto& [lang, la] : model.las->by_lang) la->set_trainable(false);
  }
}

std::vector<ParamSizeRow> param_size_report(const std::vector<std::pair<std::string, const Model*>>& models,
                                            const std::string& dir) {
  fs::create_directories(dir);
  std::vector<ParamSizeRow> rows;
  for (const auto& [model_id, model] : models) {
    ParamSizeRow row;
    row.model_id = model_id;
    row.kind = to_string(model->kind);
    set_canonical_trainability(*model);
    const TrainableCount count = count_trainable_params(model_parameters(*model));
    row.trainable = count.total;
    row.by_group = count.by_group;

    // rows carry directory-relative artifact names so reports hash
    // identically across run directories
    const std::string artifact_name = model_id + ".artifact";
    const fs::path path = fs::path(dir) / artifact_name;
    if (model->kind == ModelKind::mean_ensemble) {
      long total = 0;
      for (size_t i = 0; i < model->members.size(); ++i) {
        const Model& member = *model->members[i];
        const fs::path member_path = fs::path(dir) / (model_id + ".member" + std::to_string(i) + ".artifact");
        std::vector<const Parameter*> head{&member.backbone->head_w(), &member.backbone->head_b()};
        save_adapter_set(*member.ta, member_path.string(), head);
        total += static_cast<long>(fs::file_size(member_path));
      }
      row.artifact_bytes = total;
      row.artifact_path = model_id + ".member*.artifact";
    } else if (model->fusion) {
      std::vector<const Parameter*> head{&model->backbone->head_w(), &model->backbone->head_b()};
      save_fusion(*model->fusion, path.string(), head);
      row.artifact_bytes = static_cast<long>(fs::file_size(path));
      row.artifact_path = artifact_name;
    } else if (model->ta) {
      std::vector<const Parameter*> head{&model->backbone->head_w(), &model->backbone->head_b()};
      save_adapter_set(*model->ta, path.string(), head);
      row.artifact_bytes = static_cast<long>(fs::file_size(path));
      row.artifact_path = artifact_name;
    } else {
      save_backbone(*model->backbone, path.string());
      row.artifact_bytes = static_cast<long>(fs::file_size(path));
      row.artifact_path = artifact_name;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string param_size_tsv(const std::vector<ParamSizeRow>& rows) {
  std::ostringstream os;
  os << "model\tkind\ttrainable_params\tbackbone\thead\tTA\tLA\tfusion\tartifact_bytes\tartifact\n";
  for (const ParamSizeRow& r : rows) {
    os << r.model_id << '\t' << r.kind << '\t' << r.trainable;
    for (const char* g : {"backbone", "head", "TA", "LA", "fusion"}) {
      auto it = r.by_group.find(g);
      os << '\t' << (it == r.by_group.end() ? 0L : it->second);
    }
    os << '\t' << r.artifact_bytes << '\t' << r.artifact_path << '\n';
  }
  return os.str();
}

}  // namespace cw
