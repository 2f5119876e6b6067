#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "cw/adapters.hpp"
#include "cw/encoder.hpp"
#include "cw/ops.hpp"

using namespace cw;
namespace fs = std::filesystem;

namespace {

Tensor sum_all(const Tensor& t, Tape* tape) {
  Tensor l = Tensor::full({1, t.dim(0)}, 1.0);
  Tensor r = Tensor::full({t.dim(1), 1}, 1.0);
  return matmul(matmul(l, t, tape), r, tape);
}

// straight-line re-computation of the fusion formula with plain loops
struct OracleFusion {
  std::vector<std::vector<double>> out;      // len x d
  std::vector<std::vector<double>> weights;  // len x N
};

std::vector<double> vec_mat(const std::vector<double>& x, const Tensor& w) {
  const int rows = w.dim(0), cols = w.dim(1);
  std::vector<double> y(static_cast<size_t>(cols), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) y[static_cast<size_t>(j)] += x[static_cast<size_t>(i)] * w.at(i, j);
  return y;
}

OracleFusion oracle_fusion(const Fusion& fusion, int layer, const Tensor& h) {
  const int len = h.dim(0), d = h.dim(1);
  const size_t n = fusion.members.size();
  const Fusion::LayerProj& proj = fusion.layers[static_cast<size_t>(layer)];
  OracleFusion res;
  for (int t = 0; t < len; ++t) {
    std::vector<double> x(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] = h.at(t, j);
    std::vector<double> q = vec_mat(x, proj.w_q.value);
    std::vector<std::vector<double>> values;
    std::vector<double> scores;
    for (size_t m = 0; m < n; ++m) {
      const BottleneckAdapter& a = fusion.members[m]->layers[static_cast<size_t>(layer)];
      std::vector<double> z = vec_mat(x, a.w_down.value);
      for (int j = 0; j < a.bottleneck(); ++j) {
        z[static_cast<size_t>(j)] += a.b_down.value.at(j);
        if (z[static_cast<size_t>(j)] < 0.0) z[static_cast<size_t>(j)] = 0.0;
      }
      std::vector<double> u = vec_mat(z, a.w_up.value);
      std::vector<double> o(static_cast<size_t>(d));
      for (int j = 0; j < d; ++j) {
        o[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] + u[static_cast<size_t>(j)] + a.b_up.value.at(j);
      }
      std::vector<double> k = vec_mat(o, proj.w_k.value);
      values.push_back(vec_mat(o, proj.w_v.value));
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += q[static_cast<size_t>(j)] * k[static_cast<size_t>(j)];
      scores.push_back(dot);
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double denom = 0.0;
    std::vector<double> w(n);
    for (size_t m = 0; m < n; ++m) {
      w[m] = std::exp(scores[m] - mx);
      denom += w[m];
    }
    for (size_t m = 0; m < n; ++m) w[m] /= denom;
    std::vector<double> out = x;
    for (size_t m = 0; m < n; ++m) {
      for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += w[m] * values[m][static_cast<size_t>(j)];
    }
    res.out.push_back(std::move(out));
    res.weights.push_back(std::move(w));
  }
  return res;
}

std::shared_ptr<AdapterSet> random_trained_like(AdapterKind kind, const std::string& tag, int n_layers,
                                                int d, int b, Rng& rng) {
  auto set = AdapterSet::create(kind, tag, n_layers, d, b, rng);
  for (Parameter* p : set->parameters()) {
    for (double& v : p->value.data()) v = rng.normal(0.0, 0.3);
  }
  return set;
}

}  // namespace

TEST_CASE("adapter_forward is the identity at zero init") {
  Rng rng(1);
  auto set = AdapterSet::create(AdapterKind::task, "ta.x", 1, 8, 2, rng);
  Tensor h = Tensor::randn({5, 8}, rng);
  Tensor out = adapter_forward(set->layers[0], h);
  CHECK(out.data() == h.data());
}

TEST_CASE("adapter_forward hand-computed case") {
  Rng rng(2);
  auto set = AdapterSet::create(AdapterKind::task, "ta.x", 1, 2, 1, rng);
  BottleneckAdapter& a = set->layers[0];
  a.w_down.value = Tensor::from({2, 1}, {1.0, 0.0});
  a.b_down.value = Tensor::zeros({1});
  a.w_up.value = Tensor::from({1, 2}, {1.0, 1.0});
  a.b_up.value = Tensor::zeros({2});
  Tensor h = Tensor::from({1, 2}, {2.0, -3.0});
  Tensor out = adapter_forward(a, h);
  CHECK(out.at(0, 0) == doctest::Approx(4.0));
  CHECK(out.at(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("adapter_forward width mismatch raises dimension error") {
  Rng rng(3);
  auto set = AdapterSet::create(AdapterKind::task, "ta.x", 1, 8, 2, rng);
  Tensor h = Tensor::zeros({3, 6});
  CHECK_THROWS_AS(adapter_forward(set->layers[0], h), Error);
}

TEST_CASE("adapter_forward passes the gradient check") {
  Rng rng(4);
  auto set = random_trained_like(AdapterKind::task, "ta.x", 1, 6, 2, rng);
  Parameter input("input", Tensor::randn({3, 6}, rng));
  std::vector<Parameter*> params = set->parameters();
  params.push_back(&input);
  const double err = finite_diff_check(
      [&](Tape* tape) { return sum_all(adapter_forward(set->layers[0], input.value, tape), tape); }, params);
  CHECK(err < 1e-4);
}

TEST_CASE("single-member fusion weight is exactly one") {
  Rng rng(5);
  auto member = random_trained_like(AdapterKind::task, "ta.a", 1, 8, 2, rng);
  auto fusion = Fusion::create({member}, 1, 8, rng);
  Tensor h = Tensor::randn({4, 8}, rng);
  auto [out, weights] = fusion_forward(*fusion, 0, h);
  for (int t = 0; t < 4; ++t) CHECK(weights.at(t, 0) == 1.0);
}

TEST_CASE("identical fusion members split weights evenly") {
  Rng rng(6);
  auto proto = random_trained_like(AdapterKind::task, "ta.a", 1, 8, 2, rng);
  auto copy_of = [&](const std::string& tag) {
    Rng r2(0);
    auto c = AdapterSet::create(AdapterKind::task, tag, 1, 8, 2, r2);
    auto src = proto->parameters();
    auto dst = c->parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i]->value.data() = src[i]->value.data();
    return c;
  };
  auto fusion = Fusion::create({copy_of("ta.a"), copy_of("ta.b"), copy_of("ta.c")}, 1, 8, rng);
  Tensor h = Tensor::randn({5, 8}, rng);
  auto [out, weights] = fusion_forward(*fusion, 0, h);
  for (int t = 0; t < 5; ++t) {
    for (int m = 0; m < 3; ++m) CHECK(std::abs(weights.at(t, m) - 1.0 / 3.0) < 1e-9);
  }
}

TEST_CASE("fusion_forward matches the straight-line oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 4 + rng.uniform_int(6);
    const int b = 1 + rng.uniform_int(d - 1);
    const int n_members = 1 + rng.uniform_int(4);
    const int len = 1 + rng.uniform_int(5);
    std::vector<std::shared_ptr<AdapterSet>> members;
    for (int m = 0; m < n_members; ++m) {
      members.push_back(random_trained_like(AdapterKind::task, "ta.m" + std::to_string(m), 1, d, b, rng));
    }
    auto fusion = Fusion::create(members, 1, d, rng);
    for (Parameter* p : fusion->parameters()) {
      for (double& v : p->value.data()) v = rng.normal(0.0, 0.4);
    }
    Tensor h = Tensor::randn({len, d}, rng);
    auto [out, weights] = fusion_forward(*fusion, 0, h);
    OracleFusion oracle = oracle_fusion(*fusion, 0, h);
    for (int t = 0; t < len; ++t) {
      for (int j = 0; j < d; ++j) {
        CHECK(std::abs(out.at(t, j) - oracle.out[static_cast<size_t>(t)][static_cast<size_t>(j)]) < 1e-10);
      }
      for (int m = 0; m < n_members; ++m) {
        CHECK(std::abs(weights.at(t, m) - oracle.weights[static_cast<size_t>(t)][static_cast<size_t>(m)]) <
              1e-10);
      }
    }
  }
}

TEST_CASE("fusion weights stay on the simplex") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 8;
    std::vector<std::shared_ptr<AdapterSet>> members;
    for (int m = 0; m < 3; ++m) {
      members.push_back(random_trained_like(AdapterKind::task, "ta.m" + std::to_string(m), 2, d, 2, rng));
    }
    auto fusion = Fusion::create(members, 2, d, rng);
    Tensor h = Tensor::randn({6, d}, rng, 2.0);
    for (int layer = 0; layer < 2; ++layer) {
      auto [out, weights] = fusion_forward(*fusion, layer, h);
      for (int t = 0; t < 6; ++t) {
        double sum = 0.0;
        for (int m = 0; m < 3; ++m) {
          CHECK(weights.at(t, m) > 0.0);
          sum += weights.at(t, m);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("fusion with no members is a configuration error") {
  Rng rng(9);
  CHECK_THROWS_AS(Fusion::create({}, 1, 8, rng), Error);
}

TEST_CASE("zeroed value projections keep the fusion transparent") {
  Rng rng(10);
  std::vector<std::shared_ptr<AdapterSet>> members;
  for (int m = 0; m < 3; ++m) {
    members.push_back(random_trained_like(AdapterKind::task, "ta.m" + std::to_string(m), 1, 8, 2, rng));
  }
  auto fusion = Fusion::create(members, 1, 8, rng);
  for (Fusion::LayerProj& l : fusion->layers) {
    for (double& v : l.w_v.value.data()) v = 0.0;
  }
  Tensor h = Tensor::randn({4, 8}, rng);
  auto [out, weights] = fusion_forward(*fusion, 0, h);
  for (size_t i = 0; i < h.numel(); ++i) CHECK(std::abs(out.data()[i] - h.data()[i]) < 1e-12);
}

TEST_CASE("fusion_forward passes the gradient check") {
  Rng rng(11);
  std::vector<std::shared_ptr<AdapterSet>> members;
  for (int m = 0; m < 2; ++m) {
    members.push_back(random_trained_like(AdapterKind::task, "ta.m" + std::to_string(m), 1, 5, 2, rng));
  }
  auto fusion = Fusion::create(members, 1, 5, rng);
  for (Parameter* p : fusion->parameters()) {
    for (double& v : p->value.data()) v = rng.normal(0.0, 0.3);
  }
  Parameter input("input", Tensor::randn({3, 5}, rng));
  std::vector<Parameter*> params = fusion->parameters();
  for (auto& m : members) {
    for (Parameter* p : m->parameters()) params.push_back(p);
  }
  params.push_back(&input);
  const double err = finite_diff_check(
      [&](Tape* tape) { return sum_all(fusion_forward(*fusion, 0, input.value, tape).first, tape); }, params);
  CHECK(err < 1e-4);
}

TEST_CASE("swap_language_adapter semantics") {
  Rng rng(12);
  auto la1 = random_trained_like(AdapterKind::language, "la.a", 2, 8, 2, rng);
  auto ta = random_trained_like(AdapterKind::task, "ta.x", 2, 8, 2, rng);
  AdapterStack stack = AdapterStack::task_with_la(ta, la1);

  // identical parameters -> bitwise identical outputs
  auto la_copy = random_trained_like(AdapterKind::language, "la.b", 2, 8, 2, rng);
  {
    auto src = la1->parameters();
    auto dst = la_copy->parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i]->value.data() = src[i]->value.data();
  }
  Tensor h = Tensor::randn({4, 8}, rng);
  SwapResult same = swap_language_adapter(stack, la_copy, nullptr);
  CHECK_FALSE(same.used_fallback);
  Tensor out1 = stack.apply(0, h);
  Tensor out2 = same.stack.apply(0, h);
  CHECK(out1.data() == out2.data());

  // a single differing weight changes the output
  la_copy->layers[0].w_up.value.at(0, 0) += 0.5;
  Tensor out3 = same.stack.apply(0, h);
  CHECK(out1.data() != out3.data());

  // unregistered language installs the fallback and reports it
  SwapResult fb = swap_language_adapter(stack, nullptr, la1);
  CHECK(fb.used_fallback);
  CHECK(fb.stack.la.get() == la1.get());

  // a stack without an LA slot cannot swap
  AdapterStack no_slot = AdapterStack::task_only(ta);
  CHECK_THROWS_AS(swap_language_adapter(no_slot, la1, la1), Error);
}

TEST_CASE("trainable parameter counting matches the closed form") {
  Rng rng(13);
  auto set = AdapterSet::create(AdapterKind::task, "ta.x", 2, 64, 8, rng);
  TrainableCount count = count_trainable_params(set->parameters());
  CHECK(adapter_param_count_closed_form(1, 64, 8) == 1096);
  CHECK(count.total == 2192);
  CHECK(count.total == adapter_param_count_closed_form(2, 64, 8));
  CHECK(count.by_group["TA"] == 2192);

  set->set_trainable(false);
  TrainableCount frozen = count_trainable_params(set->parameters());
  CHECK(frozen.total == 0);
}

TEST_CASE("full-scale adapter count has the expected order of magnitude") {
  const long full = adapter_param_count_closed_form(12, 768, 48);
  CHECK(full == 894528);
  const long reported = 1500000;  // published task-adapter parameter count
  CHECK(std::lround(std::log10(static_cast<double>(full))) ==
        std::lround(std::log10(static_cast<double>(reported))));
}

TEST_CASE("frozen backbone contributes zero to the trainable count") {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.vocab_size = 50;
  cfg.max_len = 8;
  Backbone bb(cfg, 7);
  bb.set_frozen(true, true);
  TrainableCount count = count_trainable_params(std::as_const(bb).parameters());
  CHECK(count.by_group["backbone"] == 0);
  CHECK(count.by_group["head"] == 0);
  CHECK(count.total == 0);
}

TEST_CASE("adapter artifacts round-trip bitwise and stay small") {
  Rng rng(15);
  EncoderConfig cfg;
  Backbone bb(cfg, 3);
  auto ta = random_trained_like(AdapterKind::task, "ta.en", cfg.n_layers, cfg.d_model, 8, rng);

  const fs::path dir = fs::temp_directory_path() / "cwdet_adapter_io";
  fs::create_directories(dir);
  const std::string adapter_path = (dir / "ta.artifact").string();
  const std::string backbone_path = (dir / "backbone.ckpt").string();

  std::vector<int> ids{1, 5, 9, 12, 0, 0};
  AdapterStack stack = AdapterStack::task_only(ta);
  Tensor before = encode(bb, ids, &stack);

  save_adapter_set(*ta, adapter_path);
  save_backbone(bb, backbone_path);
  LoadedAdapterSet loaded = load_adapter_set(adapter_path, cfg.d_model);
  AdapterStack loaded_stack = AdapterStack::task_only(loaded.set);
  Tensor after = encode(bb, ids, &loaded_stack);
  CHECK(before.data() == after.data());

  const double ratio = static_cast<double>(fs::file_size(adapter_path)) /
                       static_cast<double>(fs::file_size(backbone_path));
  CHECK(ratio < 0.10);

  // incompatible width names both sides
  try {
    load_adapter_set(adapter_path, 32);
    FAIL("expected compat error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::compat);
    CHECK(std::string(e.what()).find("32") != std::string::npos);
    CHECK(std::string(e.what()).find("64") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("fusion artifacts reproduce outputs bitwise and exceed a single TA artifact") {
  Rng rng(16);
  EncoderConfig cfg;
  Backbone bb(cfg, 3);
  std::vector<std::shared_ptr<AdapterSet>> members;
  for (const char* tag : {"ta.en", "ta.ar", "ta.es"}) {
    members.push_back(random_trained_like(AdapterKind::task, tag, cfg.n_layers, cfg.d_model, 8, rng));
  }
  auto fusion = Fusion::create(members, cfg.n_layers, cfg.d_model, rng);
  for (Parameter* p : fusion->parameters()) {
    for (double& v : p->value.data()) v = rng.normal(0.0, 0.1);
  }

  const fs::path dir = fs::temp_directory_path() / "cwdet_fusion_io";
  fs::create_directories(dir);
  const std::string fusion_path = (dir / "fusion.artifact").string();
  const std::string ta_path = (dir / "ta.artifact").string();

  std::vector<int> ids{1, 4, 7, 0};
  AdapterStack stack = AdapterStack::fusion_only(fusion);
  Tensor before = encode(bb, ids, &stack);

  save_fusion(*fusion, fusion_path);
  save_adapter_set(*members[0], ta_path);
  LoadedFusion loaded = load_fusion(fusion_path, cfg.d_model);
  AdapterStack loaded_stack = AdapterStack::fusion_only(loaded.fusion);
  Tensor after = encode(bb, ids, &loaded_stack);
  CHECK(before.data() == after.data());
  CHECK(fs::file_size(fusion_path) > fs::file_size(ta_path));
  fs::remove_all(dir);
}
