#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cw/adapters.hpp"
#include "cw/datakit.hpp"
#include "cw/optim.hpp"
#include "cw/tensor.hpp"

namespace cw {

struct EncoderConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 128;
  int vocab_size = 2000;
  int max_len = 128;
  int n_classes = 2;
  int pad_id = 0;

  void validate() const;
};

struct EncoderLayer {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ln1_gamma, ln1_beta;
  Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Parameter ln2_gamma, ln2_beta;
};

// The stand-in for a pretrained multilingual encoder: token/position
// embeddings, post-layer-norm self-attention blocks, an MLM output head used
// during pretraining, and a first-position classifier head. Copying the
// struct shares tensor storage; clone() is a deep copy.
class Backbone {
 public:
  Backbone(EncoderConfig cfg, uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  Parameter& tok_emb() { return tok_emb_; }
  const Parameter& tok_emb() const { return tok_emb_; }
  Parameter& pos_emb() { return pos_emb_; }
  const Parameter& pos_emb() const { return pos_emb_; }
  std::vector<EncoderLayer>& layers() { return layers_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }
  Parameter& head_w() { return head_w_; }
  const Parameter& head_w() const { return head_w_; }
  Parameter& head_b() { return head_b_; }
  const Parameter& head_b() const { return head_b_; }
  Parameter& mlm_w() { return mlm_w_; }
  const Parameter& mlm_w() const { return mlm_w_; }
  Parameter& mlm_b() { return mlm_b_; }
  const Parameter& mlm_b() const { return mlm_b_; }

  std::vector<Parameter*> parameters();             // trunk + mlm + head
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> trunk_parameters();       // "backbone." group only
  std::vector<const Parameter*> trunk_parameters() const;
  std::vector<Parameter*> head_parameters();

  // Toggles trainability of the trunk; the classifier head follows only when
  // include_head is set.
  void set_frozen(bool frozen, bool include_head);

  std::shared_ptr<Backbone> clone() const;
  // Shares the trunk storage but installs a fresh zero classifier head, so
  // several task models can train against one pretrained trunk.
  std::shared_ptr<Backbone> fork_with_fresh_head() const;

 private:
  Backbone() = default;
  EncoderConfig cfg_;
  Parameter tok_emb_, pos_emb_;
  std::vector<EncoderLayer> layers_;
  Parameter mlm_w_, mlm_b_;
  Parameter head_w_, head_b_;
};

// Full encoder pass over one sequence. Padding positions (pad_id) are
// attention-masked. The adapter stack, when given, transforms each layer's
// FFN output before the final residual add. `positions` overrides the
// default 0..len-1 position indices.
Tensor encode(const Backbone& bb, const std::vector<int>& ids,
              const AdapterStack* stack = nullptr, Tape* tape = nullptr,
              FusionTrace* trace = nullptr, const std::vector<int>* positions = nullptr);

// Same pass but starting from caller-supplied token embeddings [len x d];
// `ids` still defines the padding mask. Gradient wrt the input states flows
// when they require grad (integrated gradients uses this entry point).
Tensor encode_from_embeddings(const Backbone& bb, const Tensor& tok_states,
                              const std::vector<int>& ids, const AdapterStack* stack = nullptr,
                              Tape* tape = nullptr, FusionTrace* trace = nullptr,
                              const std::vector<int>* positions = nullptr);

Tensor token_embeddings(const Backbone& bb, const std::vector<int>& ids, Tape* tape = nullptr);

struct Classification {
  Tensor logits;  // [1 x n_classes]
  double score;   // P(check-worthy), class index 1
};

Classification classify(const Backbone& bb, const Tensor& hidden, Tape* tape = nullptr);

struct MlmTrainOptions {
  double mask_prob = 0.15;
  int epochs = 2;
  int batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 1;
};

// Masked-language-model training over whatever parameters are currently
// trainable. Used both to create the toy "pretrained" backbone and to train
// language adapters (frozen backbone, LA stack attached).
void train_mlm(Backbone& bb, const Tokenizer& tok, const std::vector<std::string>& texts,
               const AdapterStack* stack, const std::vector<Parameter*>& trainable,
               const MlmTrainOptions& opt, std::vector<double>* epoch_losses = nullptr);

Backbone pretrain_backbone_mlm(EncoderConfig cfg, const Tokenizer& tok,
                               const std::vector<std::string>& texts, const MlmTrainOptions& opt,
                               std::vector<double>* epoch_losses = nullptr);

// Top-1 accuracy at predicting masked-out tokens; deterministic in seed.
double mlm_masked_accuracy(const Backbone& bb, const Tokenizer& tok,
                           const std::vector<std::string>& texts, double mask_prob,
                           uint64_t seed, const AdapterStack* stack = nullptr);

void save_backbone(const Backbone& bb, const std::string& path);
std::shared_ptr<Backbone> load_backbone(const std::string& path);

// SHA-256 over the raw value bytes of the group, sorted by parameter name.
std::string hash_param_group(const std::vector<const Parameter*>& params);

}  // namespace cw
