#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"

#include "cw/synth.hpp"
#include "cw/topics.hpp"

using namespace cw;

namespace {

// planted unit-vector blobs around k orthogonal-ish anchors
Tensor planted_blobs(int n_per, const std::vector<std::vector<double>>& anchors, double noise, Rng& rng,
                     std::vector<int>* gold = nullptr) {
  const int d = static_cast<int>(anchors.front().size());
  Tensor out = Tensor::zeros({n_per * static_cast<int>(anchors.size()), d});
  int row = 0;
  for (size_t a = 0; a < anchors.size(); ++a) {
    for (int i = 0; i < n_per; ++i, ++row) {
      double norm = 0.0;
      for (int j = 0; j < d; ++j) {
        out.at(row, j) = anchors[a][static_cast<size_t>(j)] + rng.normal(0.0, noise);
        norm += out.at(row, j) * out.at(row, j);
      }
      norm = std::sqrt(norm);
      for (int j = 0; j < d; ++j) out.at(row, j) /= norm;
      if (gold) gold->push_back(static_cast<int>(a));
    }
  }
  return out;
}

std::vector<std::vector<double>> orthogonal_anchors(int k, int d) {
  std::vector<std::vector<double>> anchors;
  for (int a = 0; a < k; ++a) {
    std::vector<double> v(static_cast<size_t>(d), 0.0);
    v[static_cast<size_t>(a % d)] = 1.0;
    if (a >= d) v[static_cast<size_t>((a + 1) % d)] = 1.0;
    anchors.push_back(std::move(v));
  }
  return anchors;
}

std::vector<std::string> make_ids(int n, const std::string& prefix) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

}  // namespace

TEST_CASE("embeddings are unit rows and deterministic") {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.vocab_size = 64;
  cfg.max_len = 8;
  Backbone bb(cfg, 5);
  Corpus corpus;
  corpus.examples.push_back({"a", "en", "t4 t5 t6", std::nullopt, std::nullopt, {}});
  corpus.examples.push_back({"b", "en", "t4 t5 t6", std::nullopt, std::nullopt, {}});
  corpus.examples.push_back({"c", "en", "t9 t10", std::nullopt, std::nullopt, {}});
  // map tokens into the raw vocabulary via a trivial tokenizer
  Tokenizer tok = Tokenizer::build_from_texts({"t4 t5 t6 t9 t10"});
  Tensor emb = embed_examples(bb, tok, corpus, 8);
  REQUIRE(emb.dim(0) == 3);
  for (int i = 0; i < 3; ++i) {
    double norm = 0.0;
    for (int j = 0; j < emb.dim(1); ++j) norm += emb.at(i, j) * emb.at(i, j);
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
  }
  for (int j = 0; j < emb.dim(1); ++j) {
    CHECK(emb.at(0, j) == emb.at(1, j));  // identical texts, identical embeddings
  }
}

TEST_CASE("same-topic examples embed closer than cross-topic ones") {
  SynthConfig scfg;
  scfg.train_per_wl = 90;
  scfg.dev_per_wl = 30;
  scfg.test_per_lang = 45;
  scfg.mlm_texts_per_lang = 120;
  scfg.seed = 99;
  SynthData data = synth_generate(scfg);
  std::vector<std::string> texts;
  for (const auto& [lang, t] : data.mlm_texts) texts.insert(texts.end(), t.begin(), t.end());
  Tokenizer tok = Tokenizer::build_from_texts(texts);
  EncoderConfig ecfg;
  ecfg.max_len = 16;
  MlmTrainOptions mlm;
  mlm.epochs = 3;
  mlm.lr = 2e-3;
  mlm.seed = 1;
  Backbone bb = pretrain_backbone_mlm(ecfg, tok, texts, mlm);

  const Corpus& corpus = data.train.at("en");
  Tensor emb = embed_examples(bb, tok, corpus, 16);
  auto cosine = [&](int i, int j) {
    double dot = 0.0;
    for (int c = 0; c < emb.dim(1); ++c) dot += emb.at(i, c) * emb.at(j, c);
    return dot;
  };
  Rng rng(7);
  long wins = 0, trials = 0;
  while (trials < 200) {
    const int a = rng.uniform_int(static_cast<int>(corpus.size()));
    const int b = rng.uniform_int(static_cast<int>(corpus.size()));
    const int c = rng.uniform_int(static_cast<int>(corpus.size()));
    const std::string& ta = *corpus.examples[static_cast<size_t>(a)].topic_gold;
    const std::string& tb = *corpus.examples[static_cast<size_t>(b)].topic_gold;
    const std::string& tc = *corpus.examples[static_cast<size_t>(c)].topic_gold;
    if (a == b || ta != tb || ta == tc) continue;
    ++trials;
    if (cosine(a, b) > cosine(a, c)) ++wins;
  }
  CHECK(static_cast<double>(wins) / static_cast<double>(trials) >= 0.9);
}

TEST_CASE("k-means with one cluster and infinite tau keeps everything") {
  Rng rng(3);
  std::vector<int> gold;
  Tensor emb = planted_blobs(20, orthogonal_anchors(2, 8), 0.05, rng, &gold);
  TopicFitOptions opt;
  opt.k = 1;
  opt.tau_override = 1e9;
  opt.seed = 1;
  TopicModel model = fit_topic_model(emb, opt);
  std::vector<TopicAssignment> assigns = assign_topics(model, emb, make_ids(emb.dim(0), "x"));
  for (const TopicAssignment& a : assigns) CHECK(a.topic == 0);
}

TEST_CASE("two well-separated blobs are recovered exactly") {
  Rng rng(4);
  std::vector<int> gold;
  Tensor emb = planted_blobs(30, orthogonal_anchors(2, 8), 0.03, rng, &gold);
  TopicFitOptions opt;
  opt.k = 2;
  opt.tau_percentile = 100.0;
  opt.seed = 2;
  TopicModel model = fit_topic_model(emb, opt);
  std::vector<TopicAssignment> assigns = assign_topics(model, emb, make_ids(emb.dim(0), "x"));
  // same planted blob -> same cluster, different blob -> different cluster
  std::map<int, std::set<int>> seen;
  for (size_t i = 0; i < assigns.size(); ++i) seen[gold[i]].insert(assigns[i].topic);
  REQUIRE(seen[0].size() == 1);
  REQUIRE(seen[1].size() == 1);
  CHECK(*seen[0].begin() != *seen[1].begin());
}

TEST_CASE("points beyond tau are labeled -1") {
  Rng rng(5);
  Tensor emb = planted_blobs(25, orthogonal_anchors(2, 8), 0.03, rng);
  TopicFitOptions opt;
  opt.k = 2;
  opt.tau_percentile = 99.0;
  opt.seed = 3;
  TopicModel model = fit_topic_model(emb, opt);

  // the input-space point that centers onto a centroid maps to its topic at
  // distance ~0
  Tensor centroid = Tensor::zeros({1, 8});
  for (int j = 0; j < 8; ++j) {
    centroid.at(0, j) = model.center[static_cast<size_t>(j)] + model.centroids[0][static_cast<size_t>(j)];
  }
  std::vector<TopicAssignment> own = assign_topics(model, centroid, {"c0"});
  CHECK(own[0].topic == 0);
  CHECK(own[0].distance < 1e-9);

  // a far vector (orthogonal to both blobs) is an outlier
  Tensor far = Tensor::zeros({1, 8});
  far.at(0, 7) = -1.0;
  std::vector<TopicAssignment> out = assign_topics(model, far, {"far"});
  CHECK(out[0].topic == -1);

  // width mismatch is a dimension error
  Tensor bad = Tensor::zeros({1, 4});
  CHECK_THROWS_AS(assign_topics(model, bad, {"bad"}), Error);
}

TEST_CASE("planted topics are recovered with high accuracy") {
  Rng rng(6);
  std::vector<int> gold;
  Tensor emb = planted_blobs(40, orthogonal_anchors(4, 16), 0.08, rng, &gold);
  TopicFitOptions opt;
  opt.k = 4;
  opt.tau_percentile = 100.0;
  opt.seed = 4;
  TopicModel model = fit_topic_model(emb, opt);
  std::vector<TopicAssignment> assigns = assign_topics(model, emb, make_ids(emb.dim(0), "x"));
  // map each planted blob to its majority cluster and count agreement
  std::map<int, std::map<int, int>> votes;
  for (size_t i = 0; i < assigns.size(); ++i) votes[gold[i]][assigns[i].topic] += 1;
  long correct = 0;
  for (auto& [g, counts] : votes) {
    int best = -1, best_n = -1;
    for (auto& [t, n] : counts) {
      if (n > best_n) {
        best_n = n;
        best = t;
      }
    }
    (void)best;
    correct += best_n;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(assigns.size()) >= 0.9);
}

TEST_CASE("fit is deterministic and validates k") {
  Rng rng(7);
  Tensor emb = planted_blobs(10, orthogonal_anchors(2, 8), 0.05, rng);
  TopicFitOptions opt;
  opt.k = 2;
  opt.seed = 11;
  TopicModel a = fit_topic_model(emb, opt);
  TopicModel b = fit_topic_model(emb, opt);
  CHECK(a.centroids == b.centroids);
  CHECK(a.tau == b.tau);

  opt.k = 100;
  CHECK_THROWS_AS(fit_topic_model(emb, opt), Error);
  opt.k = 0;
  CHECK_THROWS_AS(fit_topic_model(emb, opt), Error);
}

namespace {

// planted world for the global/local pipeline: topics 0..2 are global blobs,
// topic 3 is local to lang "aa", topic 4 local to "bb"
struct ScopedWorld {
  std::map<std::string, std::vector<TopicAssignment>> assignments;
  std::map<std::string, Tensor> embeddings;
  std::set<std::string> gold_global_ids;
  std::set<std::string> gold_local_ids;
};

ScopedWorld build_scoped_world() {
  Rng rng(8);
  const auto anchors = orthogonal_anchors(5, 16);
  ScopedWorld w;
  TopicFitOptions fit;
  fit.k = 3;
  fit.tau_percentile = 100.0;
  fit.seed = 5;

  // training pool: global topics only, both languages
  Tensor train = planted_blobs(30, {anchors[0], anchors[1], anchors[2]}, 0.05, rng);
  TopicModel model = fit_topic_model(train, fit);

  for (const std::string& lang : {"aa", "bb"}) {
    std::vector<std::vector<double>> lang_anchors{anchors[0], anchors[1], anchors[2]};
    lang_anchors.push_back(lang == "aa" ? anchors[3] : anchors[4]);
    std::vector<int> gold;
    Tensor emb = planted_blobs(12, lang_anchors, 0.05, rng, &gold);
    std::vector<std::string> ids = make_ids(emb.dim(0), lang + ".");
    w.assignments[lang] = assign_topics(model, emb, ids);
    w.embeddings.emplace(lang, emb);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (gold[i] < 3) w.gold_global_ids.insert(ids[i]);
      else w.gold_local_ids.insert(ids[i]);
    }
  }
  return w;
}

}  // namespace

TEST_CASE("global and local evaluation sets follow their definitions") {
  ScopedWorld w = build_scoped_world();
  TopicFitOptions refit;
  refit.k = 2;
  refit.tau_percentile = 100.0;
  refit.seed = 6;
  GlobalLocalSets sets = build_global_local_sets(w.assignments, w.embeddings, {"aa", "bb"}, refit);

  std::set<std::string> got_global, got_local;
  for (const ScopedExample& e : sets.global_set) {
    got_global.insert(e.id);
    CHECK(e.stage == "primary");
    CHECK(e.topic >= 0);
  }
  for (const ScopedExample& e : sets.local_set) {
    got_local.insert(e.id);
    CHECK(e.stage == "refit");
  }
  // disjoint by construction
  for (const std::string& id : got_local) CHECK(got_global.count(id) == 0);
  // matches the planted scoping
  CHECK(got_global == w.gold_global_ids);
  CHECK(got_local == w.gold_local_ids);
}

TEST_CASE("only -1 assignments feed the local refit") {
  ScopedWorld w = build_scoped_world();
  std::set<std::string> outliers;
  for (const auto& [lang, assigns] : w.assignments) {
    for (const TopicAssignment& a : assigns) {
      if (a.topic == -1) outliers.insert(a.example_id);
    }
  }
  TopicFitOptions refit;
  refit.k = 2;
  refit.tau_percentile = 100.0;
  refit.seed = 6;
  GlobalLocalSets sets = build_global_local_sets(w.assignments, w.embeddings, {"aa", "bb"}, refit);
  for (const ScopedExample& e : sets.local_set) CHECK(outliers.count(e.id) == 1);
}

TEST_CASE("relation graph weights follow the overlap definition") {
  std::map<std::string, std::vector<TopicAssignment>> assigns;
  // identical topic multisets -> weight 100
  assigns["p"] = {{"p0", 0, 0.0}, {"p1", 1, 0.0}};
  assigns["q"] = {{"q0", 0, 0.0}, {"q1", 1, 0.0}};
  // disjoint topics -> no edge
  assigns["r"] = {{"r0", 5, 0.0}, {"r1", 6, 0.0}};
  RelationGraph g = build_relation_graph(assigns);
  REQUIRE(g.nodes.size() == 3);
  bool saw_pq = false;
  for (const RelationGraph::Edge& e : g.edges) {
    CHECK(e.a != "r");
    CHECK(e.b != "r");
    if ((e.a == "p" && e.b == "q") || (e.a == "q" && e.b == "p")) {
      saw_pq = true;
      CHECK(e.weight == doctest::Approx(100.0));
    }
  }
  CHECK(saw_pq);

  // half overlap: p {0,1}, s {1,2} -> only topic 1 shared; 2 of 4 samples
  assigns.clear();
  assigns["p"] = {{"p0", 0, 0.0}, {"p1", 1, 0.0}};
  assigns["s"] = {{"s0", 1, 0.0}, {"s1", 2, 0.0}};
  RelationGraph g2 = build_relation_graph(assigns);
  REQUIRE(g2.edges.size() == 1);
  CHECK(g2.edges[0].weight == doctest::Approx(50.0));

  // outliers never count as shared topics
  assigns.clear();
  assigns["p"] = {{"p0", -1, 0.9}};
  assigns["q"] = {{"q0", -1, 0.9}};
  RelationGraph g3 = build_relation_graph(assigns);
  CHECK(g3.edges.empty());
}

TEST_CASE("graph exports are well formed") {
  std::map<std::string, std::vector<TopicAssignment>> assigns;
  assigns["aa"] = {{"a0", 0, 0.0}};
  assigns["bb"] = {{"b0", 0, 0.0}};
  RelationGraph g = build_relation_graph(assigns);
  const std::string dot = relation_graph_dot(g);
  CHECK(dot.find("graph topical_relations") != std::string::npos);
  CHECK(dot.find("\"aa\" -- \"bb\"") != std::string::npos);
  const std::string json = relation_graph_json_str(g);
  CHECK(json.find("\"nodes\"") != std::string::npos);
  CHECK(json.find("\"weight\"") != std::string::npos);
}
