#include "cw/adapters.hpp"

#include <algorithm>
#include <set>

#include "cw/ops.hpp"

namespace cw {

namespace {
constexpr double kDownInitStd = 0.02;
constexpr double kFusionQkInitStd = 0.05;
// small identity-scaled value path: near-transparent at step 0 but with
// enough magnitude that the query/key projections receive gradient
constexpr double kFusionValueInitScale = 0.05;
}  // namespace

const char* to_string(AdapterKind k) { return k == AdapterKind::task ? "task" : "language"; }

AdapterKind adapter_kind_from_string(const std::string& s) {
  if (s == "task") return AdapterKind::task;
  if (s == "language") return AdapterKind::language;
  raise(ErrorCategory::parse, "unknown adapter kind '" + s + "'");
}

std::shared_ptr<AdapterSet> AdapterSet::create(AdapterKind kind, const std::string& tag,
                                               int n_layers, int d, int b, Rng& rng) {
  if (b >= d) raise(ErrorCategory::config, "bottleneck " + std::to_string(b) + " must be below width " + std::to_string(d));
  if (n_layers < 1) raise(ErrorCategory::config, "adapter set needs at least one layer");
  auto set = std::make_shared<AdapterSet>();
  set->kind = kind;
  set->tag = tag;
  set->d = d;
  set->b = b;
  set->layers.reserve(static_cast<size_t>(n_layers));
  for (int i = 0; i < n_layers; ++i) {
    const std::string prefix = tag + ".layer" + std::to_string(i) + ".";
    BottleneckAdapter a;
    a.kind = kind;
    a.tag = tag;
    a.w_down = Parameter(prefix + "w_down", Tensor::randn({d, b}, rng, kDownInitStd));
    a.b_down = Parameter(prefix + "b_down", Tensor::zeros({b}));
    a.w_up = Parameter(prefix + "w_up", Tensor::zeros({b, d}));
    a.b_up = Parameter(prefix + "b_up", Tensor::zeros({d}));
    set->layers.push_back(std::move(a));
  }
  return set;
}

std::vector<Parameter*> AdapterSet::parameters() {
  std::vector<Parameter*> out;
  for (BottleneckAdapter& a : layers) {
    out.push_back(&a.w_down);
    out.push_back(&a.b_down);
    out.push_back(&a.w_up);
    out.push_back(&a.b_up);
  }
  return out;
}

std::vector<const Parameter*> AdapterSet::parameters() const {
  std::vector<const Parameter*> out;
  for (const BottleneckAdapter& a : layers) {
    out.push_back(&a.w_down);
    out.push_back(&a.b_down);
    out.push_back(&a.w_up);
    out.push_back(&a.b_up);
  }
  return out;
}

void AdapterSet::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->set_trainable(trainable);
}

std::shared_ptr<Fusion> Fusion::create(std::vector<std::shared_ptr<AdapterSet>> members,
                                       int n_layers, int d, Rng& rng) {
  if (members.empty()) raise(ErrorCategory::config, "fusion needs at least one member task adapter");
  std::set<std::string> tags;
  for (const auto& m : members) {
    if (!m) raise(ErrorCategory::config, "fusion member is null");
    if (m->d != d) {
      raise(ErrorCategory::compat, "fusion width " + std::to_string(d) + " vs member '" + m->tag +
                                       "' width " + std::to_string(m->d));
    }
    if (m->n_layers() != n_layers) {
      raise(ErrorCategory::compat, "fusion layer count " + std::to_string(n_layers) + " vs member '" +
                                       m->tag + "' layers " + std::to_string(m->n_layers()));
    }
    if (!tags.insert(m->tag).second) raise(ErrorCategory::config, "duplicate fusion member tag '" + m->tag + "'");
  }
  auto f = std::make_shared<Fusion>();
  f->d = d;
  f->members = std::move(members);
  f->layers.reserve(static_cast<size_t>(n_layers));
  for (int i = 0; i < n_layers; ++i) {
    const std::string prefix = "fusion.layer" + std::to_string(i) + ".";
    LayerProj proj;
    proj.w_q = Parameter(prefix + "w_q", Tensor::randn({d, d}, rng, kFusionQkInitStd));
    proj.w_k = Parameter(prefix + "w_k", Tensor::randn({d, d}, rng, kFusionQkInitStd));
    Tensor wv = Tensor::zeros({d, d});
    for (int j = 0; j < d; ++j) wv.at(j, j) = kFusionValueInitScale;
    proj.w_v = Parameter(prefix + "w_v", std::move(wv));
    f->layers.push_back(std::move(proj));
  }
  return f;
}

std::vector<Parameter*> Fusion::parameters() {
  std::vector<Parameter*> out;
  for (LayerProj& l : layers) {
    out.push_back(&l.w_q);
    out.push_back(&l.w_k);
    out.push_back(&l.w_v);
  }
  return out;
}

void Fusion::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->set_trainable(trainable);
}

std::vector<std::string> Fusion::member_tags() const {
  std::vector<std::string> tags;
  for (const auto& m : members) tags.push_back(m->tag);
  return tags;
}

Tensor adapter_forward(const BottleneckAdapter& adapter, const Tensor& h, Tape* tape) {
  if (h.ndim() != 2 || h.dim(1) != adapter.width()) {
    raise(ErrorCategory::dimension, "adapter '" + adapter.tag + "' width " + std::to_string(adapter.width()) +
                                        " vs input " + shape_str(h.shape()));
  }
  Tensor z = relu(add_rowvec(matmul(h, adapter.w_down.value, tape), adapter.b_down.value, tape), tape);
  Tensor u = add_rowvec(matmul(z, adapter.w_up.value, tape), adapter.b_up.value, tape);
  return add(h, u, tape);
}

std::pair<Tensor, Tensor> fusion_forward(const Fusion& fusion, int layer, const Tensor& h, Tape* tape) {
  if (fusion.members.empty()) raise(ErrorCategory::config, "fusion has no members");
  if (layer < 0 || layer >= fusion.n_layers()) {
    raise(ErrorCategory::index, "fusion layer " + std::to_string(layer) + " outside [0, " +
                                    std::to_string(fusion.n_layers()) + ")");
  }
  const Fusion::LayerProj& proj = fusion.layers[static_cast<size_t>(layer)];
  const size_t n_members = fusion.members.size();

  Tensor q = matmul(h, proj.w_q.value, tape);
  std::vector<Tensor> values;
  std::vector<Tensor> score_cols;
  values.reserve(n_members);
  score_cols.reserve(n_members);
  for (const auto& member : fusion.members) {
    Tensor o = adapter_forward(member->layers[static_cast<size_t>(layer)], h, tape);
    Tensor k = matmul(o, proj.w_k.value, tape);
    values.push_back(matmul(o, proj.w_v.value, tape));
    score_cols.push_back(rowwise_dot(q, k, tape));
  }
  Tensor scores = concat_cols(score_cols, tape);
  Tensor weights = softmax(scores, -1, tape);
  Tensor out = h;
  for (size_t n = 0; n < n_members; ++n) {
    Tensor w_col = slice_cols(weights, static_cast<int>(n), 1, tape);
    out = add(out, mul_colvec(values[n], w_col, tape), tape);
  }
  return {out, weights};
}

AdapterStack AdapterStack::task_only(std::shared_ptr<AdapterSet> ta) {
  AdapterStack s;
  s.ta = std::move(ta);
  return s;
}

AdapterStack AdapterStack::la_only(std::shared_ptr<AdapterSet> la) {
  AdapterStack s;
  s.la = std::move(la);
  s.la_slot = true;
  return s;
}

AdapterStack AdapterStack::task_with_la(std::shared_ptr<AdapterSet> ta, std::shared_ptr<AdapterSet> la) {
  AdapterStack s;
  s.ta = std::move(ta);
  s.la = std::move(la);
  s.la_slot = true;
  return s;
}

AdapterStack AdapterStack::fusion_only(std::shared_ptr<Fusion> f) {
  AdapterStack s;
  s.fusion = std::move(f);
  return s;
}

AdapterStack AdapterStack::fusion_with_la(std::shared_ptr<Fusion> f, std::shared_ptr<AdapterSet> la) {
  AdapterStack s;
  s.fusion = std::move(f);
  s.la = std::move(la);
  s.la_slot = true;
  return s;
}

Tensor AdapterStack::apply(int layer, const Tensor& h, Tape* tape, FusionTrace* trace) const {
  if (ta && fusion) raise(ErrorCategory::config, "stack carries both a task adapter and a fusion block");
  Tensor x = h;
  // language-specific transform first, then the task transform
  if (la) x = adapter_forward(la->layers[static_cast<size_t>(layer)], x, tape);
  if (ta) {
    x = adapter_forward(ta->layers[static_cast<size_t>(layer)], x, tape);
  } else if (fusion) {
    auto [out, weights] = fusion_forward(*fusion, layer, x, tape);
    if (trace) {
      FusionTrace::LayerRecord rec;
      rec.layer = layer;
      rec.tags = fusion->member_tags();
      rec.weights = weights.clone();
      trace->records.push_back(std::move(rec));
    }
    x = out;
  }
  return x;
}

SwapResult swap_language_adapter(const AdapterStack& stack, std::shared_ptr<AdapterSet> target_la,
                                 std::shared_ptr<AdapterSet> fallback_la) {
  if (!stack.la_slot) raise(ErrorCategory::config, "stack was built without a language-adapter slot");
  SwapResult result;
  result.stack = stack;
  if (target_la) {
    result.stack.la = std::move(target_la);
  } else {
    if (!fallback_la) raise(ErrorCategory::config, "no language adapter and no fallback supplied");
    result.stack.la = std::move(fallback_la);
    result.used_fallback = true;
  }
  return result;
}

namespace {

std::string group_of(const std::string& name) {
  if (name.rfind("backbone.", 0) == 0) return "backbone";
  if (name.rfind("head.", 0) == 0) return "head";
  if (name.rfind("ta.", 0) == 0) return "TA";
  if (name.rfind("la.", 0) == 0) return "LA";
  if (name.rfind("fusion.", 0) == 0) return "fusion";
  return "other";
}

}  // namespace

TrainableCount count_trainable_params(const std::vector<const Parameter*>& params) {
  TrainableCount c;
  c.by_group = {{"backbone", 0}, {"head", 0}, {"TA", 0}, {"LA", 0}, {"fusion", 0}};
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    const long n = static_cast<long>(p->value.numel());
    c.total += n;
    c.by_group[group_of(p->name)] += n;
  }
  return c;
}

TrainableCount count_trainable_params(const std::vector<Parameter*>& params) {
  std::vector<const Parameter*> view(params.begin(), params.end());
  return count_trainable_params(view);
}

long adapter_param_count_closed_form(int n_layers, int d, int b) {
  return static_cast<long>(n_layers) * (2L * d * b + b + d);
}

namespace {

void append_params(ParamFile& file, const std::vector<const Parameter*>& params) {
  for (const Parameter* p : params) {
    file.entries.push_back({p->name, p->value.shape(), p->value.data()});
  }
}

void restore_param(Parameter& p, const ParamFile& file) {
  const ParamFile::Entry* e = file.find(p.name);
  if (!e) raise(ErrorCategory::compat, "artifact missing parameter '" + p.name + "'");
  if (e->shape != p.value.shape()) {
    raise(ErrorCategory::compat, "parameter '" + p.name + "' shape " + shape_str(e->shape) +
                                     " vs expected " + shape_str(p.value.shape()));
  }
  p.value.data() = e->data;
}

void check_width(const ParamFile& file, int expect_d, const std::string& path) {
  const int found_d = std::stoi(file.meta_at("d"));
  if (found_d != expect_d) {
    raise(ErrorCategory::compat, "adapter width mismatch loading " + path + ": expected d=" +
                                     std::to_string(expect_d) + ", found d=" + std::to_string(found_d));
  }
}

}  // namespace

void save_adapter_set(const AdapterSet& set, const std::string& path,
                      const std::vector<const Parameter*>& extra) {
  ParamFile file;
  file.meta["format"] = "adapter";
  file.meta["d"] = std::to_string(set.d);
  file.meta["b"] = std::to_string(set.b);
  file.meta["kind"] = to_string(set.kind);
  file.meta["tag"] = set.tag;
  file.meta["n_layers"] = std::to_string(set.n_layers());
  append_params(file, set.parameters());
  append_params(file, extra);
  write_param_file(path, file);
}

LoadedAdapterSet load_adapter_set(const std::string& path, int expect_d) {
  ParamFile file = read_param_file(path);
  if (file.meta_at("format") != "adapter") raise(ErrorCategory::compat, "not an adapter artifact: " + path);
  check_width(file, expect_d, path);
  const int b = std::stoi(file.meta_at("b"));
  const int n_layers = std::stoi(file.meta_at("n_layers"));
  const AdapterKind kind = adapter_kind_from_string(file.meta_at("kind"));
  Rng rng(0);  // values are overwritten below
  LoadedAdapterSet out;
  out.set = AdapterSet::create(kind, file.meta_at("tag"), n_layers, expect_d, b, rng);
  for (Parameter* p : out.set->parameters()) restore_param(*p, file);
  for (const auto& e : file.entries) {
    if (e.name.rfind(out.set->tag + ".", 0) != 0) out.extra.push_back(e);
  }
  return out;
}

void save_fusion(const Fusion& fusion, const std::string& path,
                 const std::vector<const Parameter*>& extra) {
  ParamFile file;
  file.meta["format"] = "fusion";
  file.meta["d"] = std::to_string(fusion.d);
  file.meta["n_layers"] = std::to_string(fusion.n_layers());
  std::string tags;
  std::string bottlenecks;
  for (const auto& m : fusion.members) {
    if (!tags.empty()) {
      tags += ",";
      bottlenecks += ",";
    }
    tags += m->tag;
    bottlenecks += std::to_string(m->b);
  }
  file.meta["members"] = tags;
  file.meta["member_b"] = bottlenecks;
  for (const Fusion::LayerProj& l : fusion.layers) {
    for (const Parameter* p : {&l.w_q, &l.w_k, &l.w_v}) {
      file.entries.push_back({p->name, p->value.shape(), p->value.data()});
    }
  }
  for (const auto& m : fusion.members) append_params(file, static_cast<const AdapterSet&>(*m).parameters());
  append_params(file, extra);
  write_param_file(path, file);
}

LoadedFusion load_fusion(const std::string& path, int expect_d) {
  ParamFile file = read_param_file(path);
  if (file.meta_at("format") != "fusion") raise(ErrorCategory::compat, "not a fusion artifact: " + path);
  check_width(file, expect_d, path);
  const int n_layers = std::stoi(file.meta_at("n_layers"));

  std::vector<std::string> tags;
  std::vector<int> member_b;
  {
    std::string s = file.meta_at("members");
    std::string bs = file.meta_at("member_b");
    size_t pos = 0;
    while (pos <= s.size()) {
      const size_t c = s.find(',', pos);
      tags.push_back(s.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
      if (c == std::string::npos) break;
      pos = c + 1;
    }
    pos = 0;
    while (pos <= bs.size()) {
      const size_t c = bs.find(',', pos);
      member_b.push_back(std::stoi(bs.substr(pos, c == std::string::npos ? std::string::npos : c - pos)));
      if (c == std::string::npos) break;
      pos = c + 1;
    }
  }

  Rng rng(0);
  std::vector<std::shared_ptr<AdapterSet>> members;
  for (size_t i = 0; i < tags.size(); ++i) {
    auto set = AdapterSet::create(AdapterKind::task, tags[i], n_layers, expect_d, member_b[i], rng);
    for (Parameter* p : set->parameters()) restore_param(*p, file);
    members.push_back(std::move(set));
  }
  LoadedFusion out;
  out.fusion = Fusion::create(std::move(members), n_layers, expect_d, rng);
  for (Parameter* p : out.fusion->parameters()) restore_param(*p, file);

  std::set<std::string> known;
  for (Parameter* p : out.fusion->parameters()) known.insert(p->name);
  for (const auto& m : out.fusion->members)
    for (const Parameter* p : m->parameters()) known.insert(p->name);
  for (const auto& e : file.entries) {
    if (!known.count(e.name)) out.extra.push_back(e);
  }
  return out;
}

}  // namespace cw
