// Microbenchmarks for the training-critical paths: dense primitives, the
// encoder pass at the synthetic-suite and default sequence lengths, and the
// fusion block.

#include <benchmark/benchmark.h>

#include "cw/adapters.hpp"
#include "cw/encoder.hpp"
#include "cw/ops.hpp"

using namespace cw;

namespace {

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, rng);
  Tensor b = Tensor::randn({n, n}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2L * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_softmax(benchmark::State& state) {
  Rng rng(2);
  Tensor x = Tensor::randn({128, 128}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(x));
  }
}
BENCHMARK(BM_softmax);

void BM_layernorm(benchmark::State& state) {
  Rng rng(3);
  Tensor x = Tensor::randn({128, 64}, rng);
  Tensor g = Tensor::full({64}, 1.0);
  Tensor b = Tensor::zeros({64});
  for (auto _ : state) {
    benchmark::DoNotOptimize(layernorm(x, g, b, 1e-5));
  }
}
BENCHMARK(BM_layernorm);

struct EncodeFixture {
  EncoderConfig cfg;
  std::unique_ptr<Backbone> bb;
  std::shared_ptr<AdapterSet> ta;
  std::shared_ptr<Fusion> fusion;
  std::vector<int> ids;

  explicit EncodeFixture(int len) {
    cfg.max_len = len;
    bb = std::make_unique<Backbone>(cfg, 7);
    Rng rng(9);
    ta = AdapterSet::create(AdapterKind::task, "ta.a", cfg.n_layers, cfg.d_model, 8, rng);
    std::vector<std::shared_ptr<AdapterSet>> members;
    for (const char* tag : {"ta.x", "ta.y", "ta.z"}) {
      members.push_back(AdapterSet::create(AdapterKind::task, tag, cfg.n_layers, cfg.d_model, 8, rng));
    }
    fusion = Fusion::create(members, cfg.n_layers, cfg.d_model, rng);
    for (int i = 0; i < len; ++i) ids.push_back(i < len * 3 / 4 ? 4 + i % 100 : 0);
  }
};

void BM_encode_plain(benchmark::State& state) {
  EncodeFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(*fx.bb, fx.ids));
  }
}
BENCHMARK(BM_encode_plain)->Arg(16)->Arg(128);

void BM_encode_with_task_adapter(benchmark::State& state) {
  EncodeFixture fx(static_cast<int>(state.range(0)));
  AdapterStack stack = AdapterStack::task_only(fx.ta);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(*fx.bb, fx.ids, &stack));
  }
}
BENCHMARK(BM_encode_with_task_adapter)->Arg(16)->Arg(128);

void BM_encode_with_fusion(benchmark::State& state) {
  EncodeFixture fx(static_cast<int>(state.range(0)));
  AdapterStack stack = AdapterStack::fusion_only(fx.fusion);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(*fx.bb, fx.ids, &stack));
  }
}
BENCHMARK(BM_encode_with_fusion)->Arg(16)->Arg(128);

void BM_train_step_task_adapter(benchmark::State& state) {
  EncodeFixture fx(16);
  fx.bb->set_frozen(true, false);
  for (Parameter* p : fx.bb->head_parameters()) p->set_trainable(true);
  fx.ta->set_trainable(true);
  std::vector<Parameter*> trainable = fx.ta->parameters();
  for (Parameter* p : fx.bb->head_parameters()) trainable.push_back(p);
  AdapterStack stack = AdapterStack::task_only(fx.ta);
  Adam opt(AdamConfig{1e-2, 0.9, 0.999, 1e-8});
  for (auto _ : state) {
    Tape tape;
    Tensor h = encode(*fx.bb, fx.ids, &stack, &tape);
    Tensor loss = cross_entropy_logits(classify(*fx.bb, h, &tape).logits, {1}, &tape);
    Adam::zero_grad(trainable);
    tape.backward(loss);
    opt.step(trainable);
  }
}
BENCHMARK(BM_train_step_task_adapter);

void BM_fusion_forward(benchmark::State& state) {
  EncodeFixture fx(16);
  Rng rng(4);
  Tensor h = Tensor::randn({16, fx.cfg.d_model}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fusion_forward(*fx.fusion, 0, h));
  }
}
BENCHMARK(BM_fusion_forward);

}  // namespace

BENCHMARK_MAIN();
