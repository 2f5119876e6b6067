#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cw/optim.hpp"
#include "cw/paramfile.hpp"
#include "cw/tensor.hpp"

namespace cw {

enum class AdapterKind { task, language };

const char* to_string(AdapterKind k);
AdapterKind adapter_kind_from_string(const std::string& s);

// One bottleneck block: down projection, ReLU, up projection, applied as a
// residual transform of the hidden state. Up projection starts at zero so a
// fresh adapter is the identity.
struct BottleneckAdapter {
  Parameter w_down;  // [d x b]
  Parameter b_down;  // [b]
  Parameter w_up;    // [b x d]
  Parameter b_up;    // [d]
  AdapterKind kind = AdapterKind::task;
  std::string tag;

  int width() const { return w_down.value.dim(0); }
  int bottleneck() const { return w_down.value.dim(1); }
};

// Per-layer adapters of one kind sharing a tag, e.g. the Arabic task adapter.
struct AdapterSet {
  AdapterKind kind = AdapterKind::task;
  std::string tag;  // "ta.ar", "la.en", ...
  int d = 0;
  int b = 0;
  std::vector<BottleneckAdapter> layers;

  static std::shared_ptr<AdapterSet> create(AdapterKind kind, const std::string& tag,
                                            int n_layers, int d, int b, Rng& rng);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void set_trainable(bool trainable);
  int n_layers() const { return static_cast<int>(layers.size()); }
};

// Attention that combines N frozen task adapters per layer. Only the
// projections are trainable; value projection starts at zero so the block is
// initially transparent.
struct Fusion {
  struct LayerProj {
    Parameter w_q, w_k, w_v;  // each [d x d]
  };
  int d = 0;
  std::vector<LayerProj> layers;
  std::vector<std::shared_ptr<AdapterSet>> members;

  static std::shared_ptr<Fusion> create(std::vector<std::shared_ptr<AdapterSet>> members,
                                        int n_layers, int d, Rng& rng);

  std::vector<Parameter*> parameters();  // projections only
  void set_trainable(bool trainable);
  std::vector<std::string> member_tags() const;
  int n_layers() const { return static_cast<int>(layers.size()); }
};

// Per-token fusion attention weights captured during a forward pass.
struct FusionTrace {
  struct LayerRecord {
    int layer = 0;
    std::vector<std::string> tags;
    Tensor weights;  // [len x N], rows on the simplex
  };
  std::vector<LayerRecord> records;
};

// What the encoder applies after each FFN sub-layer: an optional language
// adapter first, then either one task adapter or a fusion block.
struct AdapterStack {
  std::shared_ptr<AdapterSet> la;
  std::shared_ptr<AdapterSet> ta;
  std::shared_ptr<Fusion> fusion;
  bool la_slot = false;  // built to carry a language adapter

  static AdapterStack task_only(std::shared_ptr<AdapterSet> ta);
  static AdapterStack la_only(std::shared_ptr<AdapterSet> la);
  static AdapterStack task_with_la(std::shared_ptr<AdapterSet> ta, std::shared_ptr<AdapterSet> la);
  static AdapterStack fusion_only(std::shared_ptr<Fusion> f);
  static AdapterStack fusion_with_la(std::shared_ptr<Fusion> f, std::shared_ptr<AdapterSet> la);

  Tensor apply(int layer, const Tensor& h, Tape* tape = nullptr, FusionTrace* trace = nullptr) const;
  bool empty() const { return !la && !ta && !fusion; }
};

Tensor adapter_forward(const BottleneckAdapter& adapter, const Tensor& h, Tape* tape = nullptr);

// Returns transformed states and the per-token weight matrix [len x N].
std::pair<Tensor, Tensor> fusion_forward(const Fusion& fusion, int layer, const Tensor& h,
                                         Tape* tape = nullptr);

struct SwapResult {
  AdapterStack stack;
  bool used_fallback = false;
};

// Installs target_la in the stack's language slot; falls back to fallback_la
// when target_la is null.
SwapResult swap_language_adapter(const AdapterStack& stack, std::shared_ptr<AdapterSet> target_la,
                                 std::shared_ptr<AdapterSet> fallback_la);

struct TrainableCount {
  long total = 0;
  std::map<std::string, long> by_group;  // backbone, TA, LA, fusion, head
};

TrainableCount count_trainable_params(const std::vector<const Parameter*>& params);
TrainableCount count_trainable_params(const std::vector<Parameter*>& params);

// n_layers * (2*d*b + b + d)
long adapter_param_count_closed_form(int n_layers, int d, int b);

// Artifact I/O. Files carry only adapter/fusion parameters plus any extra
// entries the caller passes (typically the classifier head); never the
// backbone.
void save_adapter_set(const AdapterSet& set, const std::string& path,
                      const std::vector<const Parameter*>& extra = {});
void save_fusion(const Fusion& fusion, const std::string& path,
                 const std::vector<const Parameter*>& extra = {});

struct LoadedAdapterSet {
  std::shared_ptr<AdapterSet> set;
  std::vector<ParamFile::Entry> extra;
};
struct LoadedFusion {
  std::shared_ptr<Fusion> fusion;
  std::vector<ParamFile::Entry> extra;
};

LoadedAdapterSet load_adapter_set(const std::string& path, int expect_d);
LoadedFusion load_fusion(const std::string& path, int expect_d);

}  // namespace cw
