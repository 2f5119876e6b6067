#include "cw/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cw/ops.hpp"

namespace cw {

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::fft_single: return "fft-single";
    case ModelKind::ta_la_single: return "ta-la-single";
    case ModelKind::wl_fft: return "wl-fft";
    case ModelKind::wl_ta: return "wl-ta";
    case ModelKind::wl_ta_la: return "wl-ta-la";
    case ModelKind::wl_af: return "wl-af";
    case ModelKind::wl_af_la: return "wl-af-la";
    case ModelKind::mean_ensemble: return "mean-ensemble";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (ModelKind k : {ModelKind::fft_single, ModelKind::ta_la_single, ModelKind::wl_fft, ModelKind::wl_ta,
                      ModelKind::wl_ta_la, ModelKind::wl_af, ModelKind::wl_af_la, ModelKind::mean_ensemble}) {
    if (s == to_string(k)) return k;
  }
  raise(ErrorCategory::config, "unknown model kind '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) raise(ErrorCategory::config, "epochs must be at least 1");
  if (lr <= 0.0) raise(ErrorCategory::config, "learning rate must be positive");
  if (batch_size < 1) raise(ErrorCategory::config, "batch_size must be at least 1");
  if (selection_metric != "f1" && selection_metric != "map") {
    raise(ErrorCategory::config, "selection_metric must be f1 or map, got '" + selection_metric + "'");
  }
  if (max_len < 1) raise(ErrorCategory::config, "max_len must be at least 1");
  if (threshold <= 0.0 || threshold >= 1.0) raise(ErrorCategory::config, "threshold must be in (0, 1)");
}

LaPolicy la_policy_from_string(const std::string& s) {
  if (s == "none") return LaPolicy::none;
  if (s == "stacked") return LaPolicy::stacked;
  if (s == "fallback_default") return LaPolicy::fallback_default;
  raise(ErrorCategory::config, "unknown LA policy '" + s + "'");
}

std::pair<std::shared_ptr<AdapterSet>, bool> LaRegistry::resolve(const std::string& lang) const {
  auto it = by_lang.find(lang);
  if (it != by_lang.end()) return {it->second, false};
  auto fb = by_lang.find(fallback_lang);
  if (fb == by_lang.end()) {
    raise(ErrorCategory::config, "no language adapter for '" + lang + "' and fallback '" + fallback_lang +
                                     "' is not registered");
  }
  return {fb->second, true};
}

std::pair<AdapterStack, bool> Model::stack_for(const std::string& lang) const {
  bool fallback = false;
  std::shared_ptr<AdapterSet> la;
  if (uses_la()) {
    auto [resolved, used_fallback] = las->resolve(lang);
    la = resolved;
    fallback = used_fallback;
  }
  AdapterStack stack;
  switch (kind) {
    case ModelKind::fft_single:
    case ModelKind::wl_fft:
      break;
    case ModelKind::ta_la_single:
    case ModelKind::wl_ta_la:
      stack = AdapterStack::task_with_la(ta, la);
      break;
    case ModelKind::wl_ta:
      stack = AdapterStack::task_only(ta);
      break;
    case ModelKind::wl_af:
      stack = AdapterStack::fusion_only(fusion);
      break;
    case ModelKind::wl_af_la:
      stack = AdapterStack::fusion_with_la(fusion, la);
      break;
    case ModelKind::mean_ensemble:
      raise(ErrorCategory::config, "mean ensemble has no single adapter stack");
  }
  return {stack, fallback};
}

double Model::score(const std::vector<int>& ids, const std::string& lang, FusionTrace* trace) const {
  if (kind == ModelKind::mean_ensemble) {
    return mean_ensemble_predict(members, ids, lang);
  }
  auto [stack, fallback] = stack_for(lang);
  (void)fallback;
  Tensor h = encode(*backbone, ids, stack.empty() ? nullptr : &stack, nullptr, trace);
  return classify(*backbone, h).score;
}

double mean_ensemble_predict(const std::vector<std::shared_ptr<Model>>& members,
                             const std::vector<int>& ids, const std::string& lang) {
  if (members.size() < 2) raise(ErrorCategory::config, "mean ensemble needs at least two members");
  double total = 0.0;
  for (const auto& m : members) total += m->score(ids, lang);
  return total / static_cast<double>(members.size());
}

void ModelSpec::validate() const {
  const bool wl_kind = kind == ModelKind::wl_fft || kind == ModelKind::wl_ta || kind == ModelKind::wl_ta_la ||
                       kind == ModelKind::wl_af || kind == ModelKind::wl_af_la ||
                       kind == ModelKind::mean_ensemble;
  if (wl_kind && source_langs.size() < 2) {
    raise(ErrorCategory::config, std::string(to_string(kind)) + " requires at least 2 source languages");
  }
  if (!wl_kind && source_langs.size() != 1) {
    raise(ErrorCategory::config, std::string(to_string(kind)) + " requires exactly 1 source language");
  }
}

namespace {

struct TrainExample {
  std::vector<int> ids;
  int label = 0;
  std::string lang;
  std::string id;
};

std::vector<TrainExample> collect_examples(const Tokenizer& tok, const std::vector<const Corpus*>& corpora,
                                           int max_len) {
  std::vector<TrainExample> out;
  for (const Corpus* c : corpora) {
    for (const Example& e : c->examples) {
      if (!e.label) continue;
      out.push_back({tok.encode(e.text, max_len), *e.label, e.lang, e.id});
    }
  }
  return out;
}

int effective_bottleneck(const TrainConfig& cfg, int d_model) {
  const int b = cfg.adapter_bottleneck > 0 ? cfg.adapter_bottleneck : d_model / 8;
  if (b < 1 || b >= d_model) raise(ErrorCategory::config, "adapter bottleneck must be in [1, d_model)");
  return b;
}

// Runs epochs of mini-batch training, tracks the best dev checkpoint of the
// trainable parameters, and restores it before returning.
void run_supervised(Backbone& bb, const Tokenizer& tok, const Model& probe_model,
                    const std::vector<const Corpus*>& train_corpora,
                    const std::vector<const Corpus*>& dev_corpora,
                    const std::function<AdapterStack(const std::string&)>& stack_for,
                    const std::vector<Parameter*>& trainable, const TrainConfig& cfg, uint64_t seed,
                    TrainedModel& out) {
  std::vector<TrainExample> train = collect_examples(tok, train_corpora, cfg.max_len);
  if (train.empty()) raise(ErrorCategory::input, "training corpus has no labeled examples");

  std::map<std::string, AdapterStack> stacks;
  auto stack_of = [&](const std::string& lang) -> const AdapterStack* {
    auto it = stacks.find(lang);
    if (it == stacks.end()) it = stacks.emplace(lang, stack_for(lang)).first;
    return it->second.empty() ? nullptr : &it->second;
  };

  Adam optimizer(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng shuffle_rng = Rng(seed).fork(21);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  double best = -1.0;
  std::map<std::string, std::vector<double>> best_values;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long batches = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(cfg.batch_size));
      Tape tape;
      std::vector<Tensor> logit_rows;
      std::vector<int> targets;
      for (size_t i = cursor; i < batch_end; ++i) {
        const TrainExample& ex = train[order[i]];
        Tensor h = encode(bb, ex.ids, stack_of(ex.lang), &tape);
        logit_rows.push_back(classify(bb, h, &tape).logits);
        targets.push_back(ex.label);
      }
      cursor = batch_end;
      Tensor logits = concat_rows(logit_rows, &tape);
      Tensor loss = cross_entropy_logits(logits, targets, &tape);
      loss_sum += loss.item();
      ++batches;
      Adam::zero_grad(trainable);
      tape.backward(loss);
      optimizer.step(trainable);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double dev = dev_metric(probe_model, tok, dev_corpora, cfg);
    out.epochs.push_back({epoch, batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0, dev, seconds});
    if (dev > best) {
      best = dev;
      out.best_epoch = epoch;
      best_values.clear();
      for (Parameter* p : trainable) best_values[p->name] = p->value.data();
    }
  }
  out.best_dev_metric = best;
  for (Parameter* p : trainable) {
    auto it = best_values.find(p->name);
    if (it != best_values.end()) p->value.data() = it->second;
  }
}

}  // namespace

double dev_metric(const Model& model, const Tokenizer& tok, const std::vector<const Corpus*>& corpora,
                  const TrainConfig& cfg) {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (const Corpus* c : corpora) {
    for (const Example& e : c->examples) {
      if (!e.label) continue;
      scores.push_back(model.score(tok.encode(e.text, cfg.max_len), e.lang));
      labels.push_back(*e.label);
      ids.push_back(e.id);
    }
  }
  if (scores.empty()) raise(ErrorCategory::input, "dev corpus has no labeled examples");
  if (cfg.selection_metric == "map") {
    const auto ap = average_precision(scores, labels, ids);
    return ap ? *ap : 0.0;
  }
  std::vector<int> preds;
  preds.reserve(scores.size());
  for (double s : scores) preds.push_back(s >= cfg.threshold ? 1 : 0);
  return f1_binary(preds, labels).f1;
}

TrainedModel train_task_adapter(std::shared_ptr<Backbone> backbone, const Tokenizer& tok,
                                const Corpus& train, const Corpus& dev, const TrainConfig& cfg,
                                uint64_t seed, const std::string& tag,
                                std::shared_ptr<AdapterSet> stacked_la) {
  cfg.validate();
  if (train.examples.empty()) raise(ErrorCategory::input, "task adapter training corpus is empty");
  auto bb = backbone->fork_with_fresh_head();
  bb->set_frozen(true, false);
  for (Parameter* p : bb->head_parameters()) p->set_trainable(true);

  const EncoderConfig& ec = bb->config();
  Rng init_rng = Rng(seed).fork(31);
  auto ta = AdapterSet::create(AdapterKind::task, "ta." + tag, ec.n_layers, ec.d_model,
                               effective_bottleneck(cfg, ec.d_model), init_rng);
  if (stacked_la) stacked_la->set_trainable(false);

  std::vector<Parameter*> trainable = ta->parameters();
  for (Parameter* p : bb->head_parameters()) trainable.push_back(p);

  TrainedModel out;
  out.model.kind = stacked_la ? ModelKind::ta_la_single : ModelKind::wl_ta;
  out.model.backbone = bb;
  out.model.ta = ta;
  out.model.source_langs = {tag};
  if (stacked_la) {
    auto las = std::make_shared<LaRegistry>();
    las->by_lang[tag] = stacked_la;
    las->fallback_lang = tag;
    out.model.las = las;  // training-time registry; callers swap in the full one
  }

  out.frozen_hash_before["backbone"] = hash_param_group(std::as_const(*bb).trunk_parameters());
  if (stacked_la) {
    out.frozen_hash_before[stacked_la->tag] = hash_param_group(std::as_const(*stacked_la).parameters());
  }

  AdapterStack stack = stacked_la ? AdapterStack::task_with_la(ta, stacked_la) : AdapterStack::task_only(ta);
  run_supervised(*bb, tok, out.model, {&train}, {&dev}, [&](const std::string&) { return stack; }, trainable,
                 cfg, seed, out);

  out.frozen_hash_after["backbone"] = hash_param_group(std::as_const(*bb).trunk_parameters());
  if (stacked_la) {
    out.frozen_hash_after[stacked_la->tag] = hash_param_group(std::as_const(*stacked_la).parameters());
  }
  return out;
}

std::shared_ptr<AdapterSet> train_language_adapter(std::shared_ptr<Backbone> backbone,
                                                   const Tokenizer& tok,
                                                   const std::vector<std::string>& texts,
                                                   const MlmTrainOptions& opt, const std::string& lang,
                                                   int adapter_bottleneck,
                                                   std::map<std::string, std::string>* frozen_hashes) {
  if (texts.empty()) raise(ErrorCategory::input, "language adapter corpus is empty");
  backbone->set_frozen(true, true);
  const EncoderConfig& ec = backbone->config();
  const int b = adapter_bottleneck > 0 ? adapter_bottleneck : ec.d_model / 8;
  Rng init_rng = Rng(opt.seed).fork(32);
  auto la = AdapterSet::create(AdapterKind::language, "la." + lang, ec.n_layers, ec.d_model, b, init_rng);

  const std::string before = hash_param_group(std::as_const(*backbone).trunk_parameters());
  AdapterStack stack = AdapterStack::la_only(la);
  std::vector<Parameter*> trainable = la->parameters();
  train_mlm(*backbone, tok, texts, &stack, trainable, opt);
  if (frozen_hashes) {
    (*frozen_hashes)["backbone.before"] = before;
    (*frozen_hashes)["backbone.after"] = hash_param_group(std::as_const(*backbone).trunk_parameters());
  }
  return la;
}

TrainedModel train_fusion(std::shared_ptr<Backbone> backbone, const Tokenizer& tok,
                          std::vector<std::shared_ptr<AdapterSet>> members,
                          const std::map<std::string, Corpus>& train_by_lang,
                          const std::map<std::string, Corpus>& dev_by_lang, const TrainConfig& cfg,
                          uint64_t seed, LaPolicy la_policy, std::shared_ptr<LaRegistry> las) {
  cfg.validate();
  if (members.size() < 2) raise(ErrorCategory::config, "fusion training needs at least 2 member task adapters");
  if (la_policy != LaPolicy::none && !las) {
    raise(ErrorCategory::config, "LA policy requires a language adapter registry");
  }
  auto bb = backbone->fork_with_fresh_head();
  bb->set_frozen(true, false);
  for (Parameter* p : bb->head_parameters()) p->set_trainable(true);
  for (auto& m : members) m->set_trainable(false);
  if (las) {
    for (auto& [lang, la] : las->by_lang) la->set_trainable(false);
  }

  const EncoderConfig& ec = bb->config();
  Rng init_rng = Rng(seed).fork(33);
  auto fusion = Fusion::create(members, ec.n_layers, ec.d_model, init_rng);

  std::vector<Parameter*> trainable = fusion->parameters();
  for (Parameter* p : bb->head_parameters()) trainable.push_back(p);

  TrainedModel out;
  out.model.kind = la_policy == LaPolicy::none ? ModelKind::wl_af : ModelKind::wl_af_la;
  out.model.backbone = bb;
  out.model.fusion = fusion;
  if (la_policy != LaPolicy::none) out.model.las = las;
  for (const auto& [lang, corpus] : train_by_lang) out.model.source_langs.push_back(lang);

  out.frozen_hash_before["backbone"] = hash_param_group(std::as_const(*bb).trunk_parameters());
  for (const auto& m : members) {
    out.frozen_hash_before[m->tag] = hash_param_group(std::as_const(*m).parameters());
  }

  std::vector<const Corpus*> train_ptrs, dev_ptrs;
  for (const auto& [lang, corpus] : train_by_lang) train_ptrs.push_back(&corpus);
  for (const auto& [lang, corpus] : dev_by_lang) dev_ptrs.push_back(&corpus);

  auto stack_for = [&](const std::string& lang) {
    if (la_policy == LaPolicy::none) return AdapterStack::fusion_only(fusion);
    auto [la, fallback] = las->resolve(lang);
    (void)fallback;
    return AdapterStack::fusion_with_la(fusion, la);
  };

  run_supervised(*bb, tok, out.model, train_ptrs, dev_ptrs, stack_for, trainable, cfg, seed, out);

  out.frozen_hash_after["backbone"] = hash_param_group(std::as_const(*bb).trunk_parameters());
  for (const auto& m : members) {
    out.frozen_hash_after[m->tag] = hash_param_group(std::as_const(*m).parameters());
  }
  return out;
}

namespace {

TrainedModel train_fft(const TrainingData& data, const std::vector<std::string>& langs,
                       const TrainConfig& cfg, uint64_t seed, ModelKind kind) {
  auto bb = data.backbone->clone();
  bb->set_frozen(false, true);
  std::vector<Parameter*> trainable = bb->parameters();

  TrainedModel out;
  out.model.kind = kind;
  out.model.backbone = bb;
  out.model.source_langs = langs;

  std::vector<const Corpus*> train_ptrs, dev_ptrs;
  for (const std::string& lang : langs) {
    auto it = data.train.find(lang);
    if (it == data.train.end()) raise(ErrorCategory::input, "no training corpus for language '" + lang + "'");
    train_ptrs.push_back(&it->second);
    auto dit = data.dev.find(lang);
    if (dit != data.dev.end()) dev_ptrs.push_back(&dit->second);
  }
  if (dev_ptrs.empty()) raise(ErrorCategory::input, "no dev corpus for FFT training");

  run_supervised(*bb, *data.tok, out.model, train_ptrs, dev_ptrs,
                 [](const std::string&) { return AdapterStack{}; }, trainable, cfg, seed, out);
  return out;
}

TrainedModel train_wl_ta(const TrainingData& data, const ModelSpec& spec, const TrainConfig& cfg,
                         uint64_t seed) {
  // one task adapter over the concatenated world-language corpora
  auto bb = data.backbone->fork_with_fresh_head();
  bb->set_frozen(true, false);
  for (Parameter* p : bb->head_parameters()) p->set_trainable(true);

  const EncoderConfig& ec = bb->config();
  Rng init_rng = Rng(seed).fork(31);
  auto ta = AdapterSet::create(AdapterKind::task, "ta.wl", ec.n_layers, ec.d_model,
                               effective_bottleneck(cfg, ec.d_model), init_rng);
  const bool stacked = spec.kind == ModelKind::wl_ta_la;
  if (stacked) {
    for (auto& [lang, la] : data.las->by_lang) la->set_trainable(false);
  }

  std::vector<Parameter*> trainable = ta->parameters();
  for (Parameter* p : bb->head_parameters()) trainable.push_back(p);

  TrainedModel out;
  out.model.kind = spec.kind;
  out.model.backbone = bb;
  out.model.ta = ta;
  out.model.source_langs = spec.source_langs;
  if (stacked) out.model.las = data.las;

  out.frozen_hash_before["backbone"] = hash_param_group(std::as_const(*bb).trunk_parameters());

  std::vector<const Corpus*> train_ptrs, dev_ptrs;
  for (const std::string& lang : spec.source_langs) {
    auto it = data.train.find(lang);
    if (it == data.train.end()) raise(ErrorCategory::input, "no training corpus for language '" + lang + "'");
    train_ptrs.push_back(&it->second);
    auto dit = data.dev.find(lang);
    if (dit != data.dev.end()) dev_ptrs.push_back(&dit->second);
  }
  if (dev_ptrs.empty()) raise(ErrorCategory::input, "no dev corpus for WL task-adapter training");

  auto stack_for = [&](const std::string& lang) {
    if (!stacked) return AdapterStack::task_only(ta);
    auto [la, fallback] = data.las->resolve(lang);
    (void)fallback;
    return AdapterStack::task_with_la(ta, la);
  };
  run_supervised(*bb, *data.tok, out.model, train_ptrs, dev_ptrs, stack_for, trainable, cfg, seed, out);

  out.frozen_hash_after["backbone"] = hash_param_group(std::as_const(*bb).trunk_parameters());
  return out;
}

}  // namespace

TrainedModel train_baseline(const ModelSpec& spec, const TrainingData& data, const TrainConfig& cfg,
                            uint64_t seed) {
  spec.validate();
  cfg.validate();
  if (!data.backbone || !data.tok) raise(ErrorCategory::config, "training data needs a backbone and tokenizer");

  switch (spec.kind) {
    case ModelKind::fft_single:
      return train_fft(data, spec.source_langs, cfg, seed, ModelKind::fft_single);
    case ModelKind::wl_fft:
      return train_fft(data, spec.source_langs, cfg, seed, ModelKind::wl_fft);
    case ModelKind::ta_la_single: {
      const std::string& lang = spec.source_langs.front();
      if (!data.las) raise(ErrorCategory::config, "ta-la-single requires language adapters");
      auto it = data.train.find(lang);
      auto dit = data.dev.find(lang);
      if (it == data.train.end() || dit == data.dev.end()) {
        raise(ErrorCategory::input, "missing train/dev corpus for language '" + lang + "'");
      }
      auto [la, fallback] = data.las->resolve(lang);
      (void)fallback;
      TrainedModel out =
          train_task_adapter(data.backbone, *data.tok, it->second, dit->second, cfg, seed, lang, la);
      out.model.las = data.las;  // target-language swap at inference
      return out;
    }
    case ModelKind::wl_ta:
    case ModelKind::wl_ta_la:
      if (spec.kind == ModelKind::wl_ta_la && !data.las) {
        raise(ErrorCategory::config, "wl-ta-la requires language adapters");
      }
      return train_wl_ta(data, spec, cfg, seed);
    case ModelKind::wl_af:
    case ModelKind::wl_af_la: {
      if (spec.kind == ModelKind::wl_af_la && !data.las) {
        raise(ErrorCategory::config, "wl-af-la requires language adapters");
      }
      std::vector<std::shared_ptr<AdapterSet>> members;
      std::map<std::string, Corpus> train_by_lang, dev_by_lang;
      for (const std::string& lang : spec.source_langs) {
        auto it = data.train.find(lang);
        auto dit = data.dev.find(lang);
        if (it == data.train.end() || dit == data.dev.end()) {
          raise(ErrorCategory::input, "missing train/dev corpus for language '" + lang + "'");
        }
        TrainedModel member =
            train_task_adapter(data.backbone, *data.tok, it->second, dit->second, cfg, seed, lang);
        members.push_back(member.model.ta);
        train_by_lang.emplace(lang, it->second);
        dev_by_lang.emplace(lang, dit->second);
      }
      const LaPolicy policy = spec.kind == ModelKind::wl_af_la ? LaPolicy::stacked : LaPolicy::none;
      return train_fusion(data.backbone, *data.tok, members, train_by_lang, dev_by_lang, cfg, seed, policy,
                          data.las);
    }
    case ModelKind::mean_ensemble: {
      if (!data.las) raise(ErrorCategory::config, "mean ensemble of TA+LA members requires language adapters");
      TrainedModel out;
      out.model.kind = ModelKind::mean_ensemble;
      out.model.source_langs = spec.source_langs;
      for (const std::string& lang : spec.source_langs) {
        ModelSpec member_spec{ModelKind::ta_la_single, {lang}, LaPolicy::stacked};
        TrainedModel member = train_baseline(member_spec, data, cfg, seed);
        out.model.members.push_back(std::make_shared<Model>(member.model));
        for (const auto& [k, v] : member.frozen_hash_before) out.frozen_hash_before[lang + "." + k] = v;
        for (const auto& [k, v] : member.frozen_hash_after) out.frozen_hash_after[lang + "." + k] = v;
      }
      return out;
    }
  }
  raise(ErrorCategory::config, "unhandled model kind");
}

SeedRunResult run_seeds(const std::function<double(uint64_t)>& recipe_metric,
                        const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) raise(ErrorCategory::config, "run_seeds: empty seed list");
  SeedRunResult out;
  std::vector<double> values;
  for (uint64_t seed : seeds) {
    const double v = recipe_metric(seed);
    out.per_seed.push_back({seed, v});
    values.push_back(v);
  }
  out.stats = aggregate_seed_values(values);
  return out;
}

std::vector<TimingRow> timing_rows(const std::string& recipe, const TrainedModel& trained) {
  std::vector<TimingRow> rows;
  for (const EpochRecord& e : trained.epochs) rows.push_back({recipe, e.epoch, e.seconds});
  return rows;
}

void save_timing_tsv(const std::string& path, const std::vector<TimingRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCategory::io, "cannot write " + path);
  os << "recipe\tepoch\tseconds\n";
  for (const TimingRow& r : rows) os << r.recipe << '\t' << r.epoch << '\t' << r.seconds << '\n';
}

}  // namespace cw
