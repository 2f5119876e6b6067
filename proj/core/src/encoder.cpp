#include "cw/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cw/ops.hpp"
#include "cw/sha256.hpp"

namespace cw {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskScore = -1e30;
constexpr double kWeightInitStd = 0.02;
}  // namespace

void EncoderConfig::validate() const {
  if (n_layers < 1) raise(ErrorCategory::config, "encoder needs at least one layer");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    raise(ErrorCategory::config, "d_model " + std::to_string(d_model) + " must be a positive multiple of n_heads " +
                                     std::to_string(n_heads));
  }
  if (d_ffn < 1) raise(ErrorCategory::config, "d_ffn must be positive");
  if (vocab_size <= pad_id) raise(ErrorCategory::config, "vocab_size must exceed pad_id");
  if (max_len < 1) raise(ErrorCategory::config, "max_len must be at least 1");
  if (n_classes < 2) raise(ErrorCategory::config, "n_classes must be at least 2");
}

Backbone::Backbone(EncoderConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int d = cfg_.d_model;
  tok_emb_ = Parameter("backbone.tok_emb", Tensor::randn({cfg_.vocab_size, d}, rng, kWeightInitStd));
  pos_emb_ = Parameter("backbone.pos_emb", Tensor::randn({cfg_.max_len, d}, rng, kWeightInitStd));
  layers_.reserve(static_cast<size_t>(cfg_.n_layers));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "backbone.layer" + std::to_string(i) + ".";
    EncoderLayer l;
    l.wq = Parameter(p + "attn.wq", Tensor::randn({d, d}, rng, kWeightInitStd));
    l.bq = Parameter(p + "attn.bq", Tensor::zeros({d}));
    l.wk = Parameter(p + "attn.wk", Tensor::randn({d, d}, rng, kWeightInitStd));
    l.bk = Parameter(p + "attn.bk", Tensor::zeros({d}));
    l.wv = Parameter(p + "attn.wv", Tensor::randn({d, d}, rng, kWeightInitStd));
    l.bv = Parameter(p + "attn.bv", Tensor::zeros({d}));
    l.wo = Parameter(p + "attn.wo", Tensor::randn({d, d}, rng, kWeightInitStd));
    l.bo = Parameter(p + "attn.bo", Tensor::zeros({d}));
    l.ln1_gamma = Parameter(p + "ln1.gamma", Tensor::full({d}, 1.0));
    l.ln1_beta = Parameter(p + "ln1.beta", Tensor::zeros({d}));
    l.ffn_w1 = Parameter(p + "ffn.w1", Tensor::randn({d, cfg_.d_ffn}, rng, kWeightInitStd));
    l.ffn_b1 = Parameter(p + "ffn.b1", Tensor::zeros({cfg_.d_ffn}));
    l.ffn_w2 = Parameter(p + "ffn.w2", Tensor::randn({cfg_.d_ffn, d}, rng, kWeightInitStd));
    l.ffn_b2 = Parameter(p + "ffn.b2", Tensor::zeros({d}));
    l.ln2_gamma = Parameter(p + "ln2.gamma", Tensor::full({d}, 1.0));
    l.ln2_beta = Parameter(p + "ln2.beta", Tensor::zeros({d}));
    layers_.push_back(std::move(l));
  }
  mlm_w_ = Parameter("backbone.mlm.w", Tensor::randn({d, cfg_.vocab_size}, rng, kWeightInitStd));
  mlm_b_ = Parameter("backbone.mlm.b", Tensor::zeros({cfg_.vocab_size}));
  head_w_ = Parameter("head.w", Tensor::zeros({d, cfg_.n_classes}));
  head_b_ = Parameter("head.b", Tensor::zeros({cfg_.n_classes}));
}

std::vector<Parameter*> Backbone::parameters() {
  std::vector<Parameter*> out = trunk_parameters();
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<const Parameter*> Backbone::parameters() const {
  std::vector<const Parameter*> out = trunk_parameters();
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

std::vector<Parameter*> Backbone::trunk_parameters() {
  std::vector<Parameter*> out{&tok_emb_, &pos_emb_};
  for (EncoderLayer& l : layers_) {
    for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gamma, &l.ln1_beta,
                         &l.ffn_w1, &l.ffn_b1, &l.ffn_w2, &l.ffn_b2, &l.ln2_gamma, &l.ln2_beta}) {
      out.push_back(p);
    }
  }
  out.push_back(&mlm_w_);
  out.push_back(&mlm_b_);
  return out;
}

std::vector<const Parameter*> Backbone::trunk_parameters() const {
  auto mutable_this = const_cast<Backbone*>(this);
  std::vector<Parameter*> params = mutable_this->trunk_parameters();
  return {params.begin(), params.end()};
}

std::vector<Parameter*> Backbone::head_parameters() { return {&head_w_, &head_b_}; }

void Backbone::set_frozen(bool frozen, bool include_head) {
  for (Parameter* p : trunk_parameters()) p->set_trainable(!frozen);
  if (include_head) {
    for (Parameter* p : head_parameters()) p->set_trainable(!frozen);
  }
}

std::shared_ptr<Backbone> Backbone::clone() const {
  auto copy = std::shared_ptr<Backbone>(new Backbone());
  copy->cfg_ = cfg_;
  copy->tok_emb_ = Parameter(tok_emb_.name, tok_emb_.value.clone(), tok_emb_.trainable);
  copy->pos_emb_ = Parameter(pos_emb_.name, pos_emb_.value.clone(), pos_emb_.trainable);
  copy->layers_.reserve(layers_.size());
  for (const EncoderLayer& l : layers_) {
    EncoderLayer c;
    auto cp = [](const Parameter& p) { return Parameter(p.name, p.value.clone(), p.trainable); };
    c.wq = cp(l.wq);
    c.bq = cp(l.bq);
    c.wk = cp(l.wk);
    c.bk = cp(l.bk);
    c.wv = cp(l.wv);
    c.bv = cp(l.bv);
    c.wo = cp(l.wo);
    c.bo = cp(l.bo);
    c.ln1_gamma = cp(l.ln1_gamma);
    c.ln1_beta = cp(l.ln1_beta);
    c.ffn_w1 = cp(l.ffn_w1);
    c.ffn_b1 = cp(l.ffn_b1);
    c.ffn_w2 = cp(l.ffn_w2);
    c.ffn_b2 = cp(l.ffn_b2);
    c.ln2_gamma = cp(l.ln2_gamma);
    c.ln2_beta = cp(l.ln2_beta);
    copy->layers_.push_back(std::move(c));
  }
  copy->mlm_w_ = Parameter(mlm_w_.name, mlm_w_.value.clone(), mlm_w_.trainable);
  copy->mlm_b_ = Parameter(mlm_b_.name, mlm_b_.value.clone(), mlm_b_.trainable);
  copy->head_w_ = Parameter(head_w_.name, head_w_.value.clone(), head_w_.trainable);
  copy->head_b_ = Parameter(head_b_.name, head_b_.value.clone(), head_b_.trainable);
  return copy;
}

std::shared_ptr<Backbone> Backbone::fork_with_fresh_head() const {
  auto fork = std::make_shared<Backbone>(*this);  // shares trunk storage
  fork->head_w_ = Parameter("head.w", Tensor::zeros({cfg_.d_model, cfg_.n_classes}));
  fork->head_b_ = Parameter("head.b", Tensor::zeros({cfg_.n_classes}));
  return fork;
}

namespace {

Tensor attention_mask(const std::vector<int>& ids, int pad_id) {
  const int len = static_cast<int>(ids.size());
  Tensor mask = Tensor::zeros({len, len});
  for (int k = 0; k < len; ++k) {
    if (ids[static_cast<size_t>(k)] == pad_id) {
      for (int q = 0; q < len; ++q) mask.at(q, k) = kMaskScore;
    }
  }
  return mask;
}

}  // namespace

Tensor token_embeddings(const Backbone& bb, const std::vector<int>& ids, Tape* tape) {
  return gather_rows(bb.tok_emb().value, ids, tape);
}

Tensor encode_from_embeddings(const Backbone& bb, const Tensor& tok_states, const std::vector<int>& ids,
                              const AdapterStack* stack, Tape* tape, FusionTrace* trace,
                              const std::vector<int>* positions) {
  const EncoderConfig& cfg = bb.config();
  const int len = static_cast<int>(ids.size());
  if (len < 1) raise(ErrorCategory::input, "encode: empty input");
  if (len > cfg.max_len) {
    raise(ErrorCategory::validation, "encode: sequence length " + std::to_string(len) + " exceeds max_len " +
                                         std::to_string(cfg.max_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      raise(ErrorCategory::index, "encode: token id " + std::to_string(id) + " outside vocabulary of " +
                                      std::to_string(cfg.vocab_size));
    }
  }
  if (tok_states.ndim() != 2 || tok_states.dim(0) != len || tok_states.dim(1) != cfg.d_model) {
    raise(ErrorCategory::dimension, "encode: embedding block " + shape_str(tok_states.shape()) +
                                        " does not match sequence length " + std::to_string(len));
  }
  std::vector<int> default_positions;
  if (!positions) {
    default_positions.resize(static_cast<size_t>(len));
    std::iota(default_positions.begin(), default_positions.end(), 0);
    positions = &default_positions;
  }
  if (static_cast<int>(positions->size()) != len) {
    raise(ErrorCategory::dimension, "encode: position count does not match sequence length");
  }
  if (stack) {
    if (stack->la && stack->la->d != cfg.d_model) {
      raise(ErrorCategory::compat, "language adapter width " + std::to_string(stack->la->d) +
                                       " vs d_model " + std::to_string(cfg.d_model));
    }
    if (stack->ta && stack->ta->d != cfg.d_model) {
      raise(ErrorCategory::compat, "task adapter width " + std::to_string(stack->ta->d) + " vs d_model " +
                                       std::to_string(cfg.d_model));
    }
    if (stack->fusion && stack->fusion->d != cfg.d_model) {
      raise(ErrorCategory::compat, "fusion width " + std::to_string(stack->fusion->d) + " vs d_model " +
                                       std::to_string(cfg.d_model));
    }
  }

  Tensor pos = gather_rows(bb.pos_emb().value, *positions, tape);
  Tensor h = add(tok_states, pos, tape);
  Tensor mask = attention_mask(ids, cfg.pad_id);
  const int dh = cfg.d_model / cfg.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int li = 0; li < cfg.n_layers; ++li) {
    const EncoderLayer& l = bb.layers()[static_cast<size_t>(li)];
    Tensor q = add_rowvec(matmul(h, l.wq.value, tape), l.bq.value, tape);
    Tensor k = add_rowvec(matmul(h, l.wk.value, tape), l.bk.value, tape);
    Tensor v = add_rowvec(matmul(h, l.wv.value, tape), l.bv.value, tape);
    std::vector<Tensor> head_ctx;
    head_ctx.reserve(static_cast<size_t>(cfg.n_heads));
    for (int hh = 0; hh < cfg.n_heads; ++hh) {
      Tensor qh = slice_cols(q, hh * dh, dh, tape);
      Tensor kh = slice_cols(k, hh * dh, dh, tape);
      Tensor vh = slice_cols(v, hh * dh, dh, tape);
      Tensor scores = scale(matmul(qh, transpose(kh, tape), tape), inv_sqrt_dh, tape);
      scores = add(scores, mask, tape);
      Tensor attn = softmax(scores, -1, tape);
      head_ctx.push_back(matmul(attn, vh, tape));
    }
    Tensor ctx = concat_cols(head_ctx, tape);
    Tensor attn_out = add_rowvec(matmul(ctx, l.wo.value, tape), l.bo.value, tape);
    Tensor h1 = layernorm(add(h, attn_out, tape), l.ln1_gamma.value, l.ln1_beta.value, kLayerNormEps, tape);
    Tensor ffn_mid = relu(add_rowvec(matmul(h1, l.ffn_w1.value, tape), l.ffn_b1.value, tape), tape);
    Tensor ffn_out = add_rowvec(matmul(ffn_mid, l.ffn_w2.value, tape), l.ffn_b2.value, tape);
    Tensor branch = stack ? stack->apply(li, ffn_out, tape, trace) : ffn_out;
    h = layernorm(add(h1, branch, tape), l.ln2_gamma.value, l.ln2_beta.value, kLayerNormEps, tape);
  }
  return h;
}

Tensor encode(const Backbone& bb, const std::vector<int>& ids, const AdapterStack* stack, Tape* tape,
              FusionTrace* trace, const std::vector<int>* positions) {
  Tensor emb = token_embeddings(bb, ids, tape);
  return encode_from_embeddings(bb, emb, ids, stack, tape, trace, positions);
}

Classification classify(const Backbone& bb, const Tensor& hidden, Tape* tape) {
  Tensor pooled = take_row(hidden, 0, tape);
  Tensor logits = add_rowvec(matmul(pooled, bb.head_w().value, tape), bb.head_b().value, tape);
  Tensor probs = softmax(logits, -1, nullptr);
  return {logits, probs.at(0, 1)};
}

namespace {

struct MaskedSequence {
  std::vector<int> input_ids;
  std::vector<int> positions;  // masked positions
  std::vector<int> targets;    // original ids at those positions
};

MaskedSequence apply_mlm_mask(const std::vector<int>& ids, double mask_prob, Rng& rng) {
  MaskedSequence m;
  m.input_ids = ids;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < Tokenizer::kNumSpecial) continue;
    if (rng.uniform() < mask_prob) {
      m.positions.push_back(static_cast<int>(i));
      m.targets.push_back(ids[i]);
      m.input_ids[i] = Tokenizer::kMask;
    }
  }
  return m;
}

}  // namespace

void train_mlm(Backbone& bb, const Tokenizer& tok, const std::vector<std::string>& texts,
               const AdapterStack* stack, const std::vector<Parameter*>& trainable,
               const MlmTrainOptions& opt, std::vector<double>* epoch_losses) {
  if (texts.empty()) raise(ErrorCategory::input, "mlm training: empty corpus");
  const EncoderConfig& cfg = bb.config();
  Adam optimizer(AdamConfig{opt.lr, 0.9, 0.999, 1e-8});
  Rng shuffle_rng = Rng(opt.seed).fork(11);
  Rng mask_rng = Rng(opt.seed).fork(12);

  std::vector<size_t> order(texts.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    long counted = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(opt.batch_size));
      Tape tape;
      std::vector<Tensor> losses;
      for (size_t bi = cursor; bi < batch_end; ++bi) {
        const std::vector<int> ids = tok.encode(texts[order[bi]], cfg.max_len);
        MaskedSequence m = apply_mlm_mask(ids, opt.mask_prob, mask_rng);
        if (m.positions.empty()) continue;
        Tensor h = encode(bb, m.input_ids, stack, &tape);
        Tensor states = gather_rows(h, m.positions, &tape);
        Tensor logits = add_rowvec(matmul(states, bb.mlm_w().value, &tape), bb.mlm_b().value, &tape);
        losses.push_back(cross_entropy_logits(logits, m.targets, &tape));
      }
      cursor = batch_end;
      if (losses.empty()) continue;
      Tensor loss = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i], &tape);
      loss = scale(loss, 1.0 / static_cast<double>(losses.size()), &tape);
      epoch_loss += loss.item();
      ++counted;
      Adam::zero_grad(trainable);
      tape.backward(loss);
      optimizer.step(trainable);
    }
    if (epoch_losses) epoch_losses->push_back(counted > 0 ? epoch_loss / static_cast<double>(counted) : 0.0);
  }
}

Backbone pretrain_backbone_mlm(EncoderConfig cfg, const Tokenizer& tok, const std::vector<std::string>& texts,
                               const MlmTrainOptions& opt, std::vector<double>* epoch_losses) {
  if (texts.empty()) raise(ErrorCategory::input, "pretraining corpus is empty");
  cfg.vocab_size = tok.size();
  Backbone bb(cfg, opt.seed);
  bb.set_frozen(false, true);
  std::vector<Parameter*> trainable = bb.trunk_parameters();
  train_mlm(bb, tok, texts, nullptr, trainable, opt, epoch_losses);
  return bb;
}

double mlm_masked_accuracy(const Backbone& bb, const Tokenizer& tok, const std::vector<std::string>& texts,
                           double mask_prob, uint64_t seed, const AdapterStack* stack) {
  if (texts.empty()) raise(ErrorCategory::input, "mlm evaluation: empty corpus");
  Rng mask_rng = Rng(seed).fork(13);
  long hits = 0, total = 0;
  const EncoderConfig& cfg = bb.config();
  for (const std::string& text : texts) {
    const std::vector<int> ids = tok.encode(text, cfg.max_len);
    MaskedSequence m = apply_mlm_mask(ids, mask_prob, mask_rng);
    if (m.positions.empty()) continue;
    Tensor h = encode(bb, m.input_ids, stack);
    Tensor states = gather_rows(h, m.positions);
    Tensor logits = add_rowvec(matmul(states, bb.mlm_w().value), bb.mlm_b().value);
    for (size_t r = 0; r < m.positions.size(); ++r) {
      int best = 0;
      double best_v = logits.at(static_cast<int>(r), 0);
      for (int j = 1; j < logits.dim(1); ++j) {
        if (logits.at(static_cast<int>(r), j) > best_v) {
          best_v = logits.at(static_cast<int>(r), j);
          best = j;
        }
      }
      hits += best == m.targets[r] ? 1 : 0;
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

void save_backbone(const Backbone& bb, const std::string& path) {
  ParamFile file;
  const EncoderConfig& cfg = bb.config();
  file.meta["format"] = "backbone";
  file.meta["n_layers"] = std::to_string(cfg.n_layers);
  file.meta["d_model"] = std::to_string(cfg.d_model);
  file.meta["n_heads"] = std::to_string(cfg.n_heads);
  file.meta["d_ffn"] = std::to_string(cfg.d_ffn);
  file.meta["vocab_size"] = std::to_string(cfg.vocab_size);
  file.meta["max_len"] = std::to_string(cfg.max_len);
  file.meta["n_classes"] = std::to_string(cfg.n_classes);
  file.meta["pad_id"] = std::to_string(cfg.pad_id);
  for (const Parameter* p : bb.parameters()) {
    file.entries.push_back({p->name, p->value.shape(), p->value.data()});
  }
  write_param_file(path, file);
}

std::shared_ptr<Backbone> load_backbone(const std::string& path) {
  ParamFile file = read_param_file(path);
  if (file.meta_at("format") != "backbone") raise(ErrorCategory::compat, "not a backbone checkpoint: " + path);
  EncoderConfig cfg;
  cfg.n_layers = std::stoi(file.meta_at("n_layers"));
  cfg.d_model = std::stoi(file.meta_at("d_model"));
  cfg.n_heads = std::stoi(file.meta_at("n_heads"));
  cfg.d_ffn = std::stoi(file.meta_at("d_ffn"));
  cfg.vocab_size = std::stoi(file.meta_at("vocab_size"));
  cfg.max_len = std::stoi(file.meta_at("max_len"));
  cfg.n_classes = std::stoi(file.meta_at("n_classes"));
  cfg.pad_id = std::stoi(file.meta_at("pad_id"));
  auto bb = std::make_shared<Backbone>(cfg, 0);
  for (Parameter* p : bb->parameters()) {
    const ParamFile::Entry* e = file.find(p->name);
    if (!e) raise(ErrorCategory::compat, "checkpoint missing parameter '" + p->name + "'");
    if (e->shape != p->value.shape()) {
      raise(ErrorCategory::compat, "checkpoint parameter '" + p->name + "' shape " + shape_str(e->shape) +
                                       " vs expected " + shape_str(p->value.shape()));
    }
    p->value.data() = e->data;
  }
  return bb;
}

std::string hash_param_group(const std::vector<const Parameter*>& params) {
  std::vector<const Parameter*> sorted = params;
  std::sort(sorted.begin(), sorted.end(),
            [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
  Sha256 h;
  for (const Parameter* p : sorted) {
    h.update(p->name);
    h.update(p->value.data().data(), p->value.data().size() * sizeof(double));
  }
  return h.hex_digest();
}

}  // namespace cw
