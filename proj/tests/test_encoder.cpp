#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "cw/encoder.hpp"
#include "cw/ops.hpp"
#include "cw/synth.hpp"

using namespace cw;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.vocab_size = 40;
  cfg.max_len = 8;
  return cfg;
}

std::vector<std::string> toy_texts(int n, int vocab, uint64_t seed) {
  // two tokens alternating per sentence: a masked position is recoverable
  // from its unmasked copies, so the MLM objective has real headroom
  Rng rng(seed);
  std::vector<std::string> texts;
  for (int i = 0; i < n; ++i) {
    const std::string a = "w" + std::to_string(rng.uniform_int(vocab));
    const std::string b = "w" + std::to_string(rng.uniform_int(vocab));
    std::string t;
    for (int k = 0; k < 6; ++k) {
      if (k) t += ' ';
      t += (k % 2 == 0 ? a : b);
    }
    texts.push_back(std::move(t));
  }
  return texts;
}

}  // namespace

TEST_CASE("encode returns one row per input position") {
  Backbone bb(tiny_config(), 1);
  for (int len : {1, 3, 8}) {
    std::vector<int> ids;
    for (int i = 0; i < len; ++i) ids.push_back(1 + i);
    Tensor h = encode(bb, ids);
    CHECK(h.dim(0) == len);
    CHECK(h.dim(1) == 16);
  }
}

TEST_CASE("encode rejects over-long and out-of-vocabulary input") {
  Backbone bb(tiny_config(), 1);
  std::vector<int> too_long(9, 1);
  CHECK_THROWS_AS(encode(bb, too_long), Error);
  try {
    encode(bb, {1, 99});
    FAIL("expected index error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::index);
  }
}

TEST_CASE("an empty adapter stack reproduces the plain pass bit for bit") {
  Backbone bb(tiny_config(), 2);
  std::vector<int> ids{1, 5, 7, 0, 0};
  Tensor plain = encode(bb, ids);
  AdapterStack empty;
  Tensor stacked = encode(bb, ids, &empty);
  CHECK(plain.data() == stacked.data());
}

TEST_CASE("freshly initialized adapter stacks preserve the plain pass") {
  Backbone bb(tiny_config(), 3);
  Rng rng(9);
  auto ta = AdapterSet::create(AdapterKind::task, "ta.x", 2, 16, 4, rng);
  auto la = AdapterSet::create(AdapterKind::language, "la.x", 2, 16, 4, rng);
  std::vector<int> ids{1, 5, 7, 2, 0};
  Tensor plain = encode(bb, ids);
  for (AdapterStack stack : {AdapterStack::task_only(ta), AdapterStack::la_only(la),
                             AdapterStack::task_with_la(ta, la)}) {
    Tensor out = encode(bb, ids, &stack);
    for (size_t i = 0; i < plain.numel(); ++i) CHECK(std::abs(out.data()[i] - plain.data()[i]) < 1e-9);
  }
}

TEST_CASE("padding positions are masked out of attention") {
  Backbone bb(tiny_config(), 4);
  // same real tokens, different amounts of padding: the real positions'
  // states must be identical
  std::vector<int> short_ids{1, 5, 7, 0, 0};
  std::vector<int> long_ids{1, 5, 7, 0, 0, 0, 0, 0};
  Tensor a = encode(bb, short_ids);
  Tensor b = encode(bb, long_ids);
  for (int t = 0; t < 3; ++t) {
    for (int j = 0; j < 16; ++j) CHECK(a.at(t, j) == b.at(t, j));
  }
}

TEST_CASE("joint token and position permutation moves the pooled state with it") {
  Backbone bb(tiny_config(), 5);
  std::vector<int> ids{4, 9, 13};
  std::vector<int> pos{0, 1, 2};
  Tensor h = encode(bb, ids, nullptr, nullptr, nullptr, &pos);

  std::vector<int> perm_ids{13, 4, 9};
  std::vector<int> perm_pos{2, 0, 1};
  Tensor hp = encode(bb, perm_ids, nullptr, nullptr, nullptr, &perm_pos);
  // row 0 moved to row 1 under the permutation
  for (int j = 0; j < 16; ++j) {
    CHECK(std::abs(h.at(0, j) - hp.at(1, j)) < 1e-9);
    CHECK(std::abs(h.at(1, j) - hp.at(2, j)) < 1e-9);
    CHECK(std::abs(h.at(2, j) - hp.at(0, j)) < 1e-9);
  }
}

TEST_CASE("classify produces a proper probability") {
  Backbone bb(tiny_config(), 6);
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> ids{1 + rng.uniform_int(30), 1 + rng.uniform_int(30), 0};
    Tensor h = encode(bb, ids);
    Classification cls = classify(bb, h);
    CHECK(cls.score > 0.0);
    CHECK(cls.score < 1.0);
    // score equals the softmax of the logits
    Tensor probs = softmax(cls.logits, -1);
    CHECK(cls.score == doctest::Approx(probs.at(0, 1)).epsilon(1e-12));
  }
}

TEST_CASE("a zero head scores exactly one half") {
  Backbone bb(tiny_config(), 7);
  Tensor h = encode(bb, {1, 2, 3});
  Classification cls = classify(bb, h);
  CHECK(cls.score == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("attention rows over unmasked positions sum to one") {
  // mechanism-level check of additive masking + softmax
  Rng rng(13);
  Tensor scores = Tensor::randn({4, 4}, rng, 2.0);
  Tensor mask = Tensor::zeros({4, 4});
  for (int q = 0; q < 4; ++q) mask.at(q, 3) = -1e30;  // mask last key column
  Tensor attn = softmax(add(scores, mask), -1);
  for (int q = 0; q < 4; ++q) {
    CHECK(attn.at(q, 3) == 0.0);
    double row = 0.0;
    for (int k = 0; k < 3; ++k) row += attn.at(q, k);
    CHECK(std::abs(row - 1.0) < 1e-9);
  }
}

TEST_CASE("full two-layer fusion model passes the gradient check") {
  EncoderConfig cfg = tiny_config();
  Backbone bb(cfg, 8);
  bb.set_frozen(false, true);
  Rng rng(17);
  auto ta1 = AdapterSet::create(AdapterKind::task, "ta.a", 2, 16, 4, rng);
  auto ta2 = AdapterSet::create(AdapterKind::task, "ta.b", 2, 16, 4, rng);
  auto la = AdapterSet::create(AdapterKind::language, "la.x", 2, 16, 4, rng);
  for (auto set : {ta1, ta2, la}) {
    for (Parameter* p : set->parameters()) {
      for (double& v : p->value.data()) v = rng.normal(0.0, 0.2);
      p->set_trainable(true);
    }
  }
  auto fusion = Fusion::create({ta1, ta2}, 2, 16, rng);
  for (Parameter* p : fusion->parameters()) {
    for (double& v : p->value.data()) v = rng.normal(0.0, 0.2);
    p->set_trainable(true);
  }
  AdapterStack stack = AdapterStack::fusion_with_la(fusion, la);

  std::vector<Parameter*> params = bb.parameters();
  for (auto set : {ta1, ta2, la}) {
    for (Parameter* p : set->parameters()) params.push_back(p);
  }
  for (Parameter* p : fusion->parameters()) params.push_back(p);

  std::vector<int> ids{1, 9, 3, 0};
  auto f = [&](Tape* tape) {
    Tensor h = encode(bb, ids, &stack, tape);
    Classification cls = classify(bb, h, tape);
    return cross_entropy_logits(cls.logits, {1}, tape);
  };
  const double err = finite_diff_check(f, params);
  CHECK(err < 1e-4);
}

TEST_CASE("masked-language pretraining beats chance and is reproducible") {
  EncoderConfig cfg = tiny_config();
  cfg.max_len = 8;
  std::vector<std::string> train_texts = toy_texts(300, 32, 21);
  std::vector<std::string> heldout = toy_texts(60, 32, 22);
  Tokenizer tok = Tokenizer::build_from_texts(train_texts);

  MlmTrainOptions opt;
  opt.epochs = 8;
  opt.lr = 1e-2;
  opt.seed = 5;
  std::vector<double> losses;
  Backbone bb = pretrain_backbone_mlm(cfg, tok, train_texts, opt, &losses);

  REQUIRE(losses.size() == 8);
  CHECK(losses.back() <= losses.front());

  const double acc = mlm_masked_accuracy(bb, tok, heldout, 0.15, 99);
  const double chance = 1.0 / tok.size();
  CHECK(acc > 5.0 * chance);

  // same seed, bitwise-identical backbone
  Backbone bb2 = pretrain_backbone_mlm(cfg, tok, train_texts, opt);
  CHECK(hash_param_group(std::as_const(bb).parameters()) ==
        hash_param_group(std::as_const(bb2).parameters()));

  CHECK_THROWS_AS(pretrain_backbone_mlm(cfg, tok, {}, opt), Error);
}

TEST_CASE("set_frozen controls exactly the requested groups") {
  EncoderConfig cfg = tiny_config();
  std::vector<std::string> texts = toy_texts(60, 32, 31);
  Tokenizer tok = Tokenizer::build_from_texts(texts);
  MlmTrainOptions opt;
  opt.epochs = 1;
  opt.seed = 3;
  Backbone bb = pretrain_backbone_mlm(cfg, tok, texts, opt);

  bb.set_frozen(true, false);
  const std::string trunk_before = hash_param_group(std::as_const(bb).trunk_parameters());
  for (Parameter* p : bb.head_parameters()) CHECK(p->trainable);

  // 100 optimizer steps with synthetic gradients leave the frozen trunk unchanged
  Adam opt_adam(AdamConfig{1e-2, 0.9, 0.999, 1e-8});
  Rng rng(4);
  std::vector<Parameter*> params = bb.parameters();
  for (int step = 0; step < 100; ++step) {
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      p->value.zero_grad();
      for (double& g : p->value.grad()) g = rng.normal();
    }
    opt_adam.step(params);
  }
  CHECK(hash_param_group(std::as_const(bb).trunk_parameters()) == trunk_before);

  // unfreezing lets a real training step move the trunk
  bb.set_frozen(false, true);
  Tape tape;
  Tensor h = encode(bb, {1, 5, 2, 0}, nullptr, &tape);
  Tensor loss = cross_entropy_logits(classify(bb, h, &tape).logits, {1}, &tape);
  Adam::zero_grad(params);
  tape.backward(loss);
  Adam opt2(AdamConfig{1e-2, 0.9, 0.999, 1e-8});
  opt2.step(params);
  CHECK(hash_param_group(std::as_const(bb).trunk_parameters()) != trunk_before);
}

TEST_CASE("backbone checkpoints round-trip bitwise") {
  EncoderConfig cfg = tiny_config();
  Backbone bb(cfg, 12);
  const std::string path = (fs::temp_directory_path() / "cwdet_backbone_roundtrip.ckpt").string();
  save_backbone(bb, path);
  auto loaded = load_backbone(path);
  CHECK(hash_param_group(std::as_const(bb).parameters()) ==
        hash_param_group(std::as_const(*loaded).parameters()));
  Tensor a = encode(bb, {1, 2, 3});
  Tensor b = encode(*loaded, {1, 2, 3});
  CHECK(a.data() == b.data());
  fs::remove(path);
}
