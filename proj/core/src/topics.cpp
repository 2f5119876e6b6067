#include "cw/topics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace cw {

Tensor embed_examples(const Backbone& bb, const Tokenizer& tok, const Corpus& corpus, int max_len) {
  const int d = bb.config().d_model;
  const int n = static_cast<int>(corpus.examples.size());
  if (n == 0) raise(ErrorCategory::input, "embed_examples: empty corpus");
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    const std::vector<int> ids = tok.encode(corpus.examples[static_cast<size_t>(i)].text, max_len);
    Tensor h = encode(bb, ids);
    long counted = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      if (ids[p] == bb.config().pad_id) continue;
      for (int j = 0; j < d; ++j) out.at(i, j) += h.at(static_cast<int>(p), j);
      ++counted;
    }
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
      out.at(i, j) /= static_cast<double>(std::max<long>(counted, 1));
      norm += out.at(i, j) * out.at(i, j);
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (int j = 0; j < d; ++j) out.at(i, j) /= norm;
    }
  }
  return out;
}

namespace {

double cosine_distance(const double* a, const double* b, int d) {
  double dot = 0.0;
  for (int j = 0; j < d; ++j) dot += a[j] * b[j];
  return 1.0 - dot;
}

double nearest(const TopicModel& model, const double* x, int* which) {
  double best = std::numeric_limits<double>::infinity();
  int best_k = -1;
  for (int c = 0; c < model.k(); ++c) {
    const double dist = cosine_distance(x, model.centroids[static_cast<size_t>(c)].data(), model.dim());
    if (dist < best) {
      best = dist;
      best_k = c;
    }
  }
  if (which) *which = best_k;
  return best;
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  size_t rank = static_cast<size_t>(std::ceil(pct / 100.0 * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return values[rank - 1];
}

}  // namespace

namespace {

// subtract the center and renormalize each row
Tensor centered_embeddings(const Tensor& embeddings, const std::vector<double>& center) {
  const int n = embeddings.dim(0), d = embeddings.dim(1);
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = embeddings.at(i, j) - center[static_cast<size_t>(j)];
      out.at(i, j) = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (int j = 0; j < d; ++j) out.at(i, j) /= norm;
    }
  }
  return out;
}

}  // namespace

TopicModel fit_topic_model(const Tensor& embeddings, const TopicFitOptions& opt) {
  if (embeddings.ndim() != 2) raise(ErrorCategory::dimension, "fit_topic_model: embeddings must be 2-d");
  const int n = embeddings.dim(0), d = embeddings.dim(1);
  if (opt.k < 1) raise(ErrorCategory::config, "fit_topic_model: k must be at least 1");
  if (opt.k > n) {
    raise(ErrorCategory::config, "fit_topic_model: k=" + std::to_string(opt.k) + " exceeds n=" + std::to_string(n));
  }

  TopicModel model;
  model.center.assign(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) model.center[static_cast<size_t>(j)] += embeddings.at(i, j);
  }
  for (double& v : model.center) v /= static_cast<double>(n);
  const Tensor centered = centered_embeddings(embeddings, model.center);
  auto row = [&](int i) { return centered.data().data() + static_cast<size_t>(i) * d; };
  // farthest-point initialization from a seeded start
  Rng rng(opt.seed);
  std::vector<int> chosen{rng.uniform_int(n)};
  while (static_cast<int>(chosen.size()) < opt.k) {
    int best_i = -1;
    double best_dist = -1.0;
    for (int i = 0; i < n; ++i) {
      double min_dist = std::numeric_limits<double>::infinity();
      for (int c : chosen) min_dist = std::min(min_dist, cosine_distance(row(i), row(c), d));
      if (min_dist > best_dist) {
        best_dist = min_dist;
        best_i = i;
      }
    }
    chosen.push_back(best_i);
  }
  for (int c : chosen) {
    model.centroids.emplace_back(row(c), row(c) + d);
  }

  std::vector<int> assign(static_cast<size_t>(n), -1);
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int which = -1;
      nearest(model, row(i), &which);
      if (which != assign[static_cast<size_t>(i)]) {
        assign[static_cast<size_t>(i)] = which;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    for (int c = 0; c < opt.k; ++c) {
      std::vector<double> mean(static_cast<size_t>(d), 0.0);
      long count = 0;
      for (int i = 0; i < n; ++i) {
        if (assign[static_cast<size_t>(i)] != c) continue;
        for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += row(i)[j];
        ++count;
      }
      if (count == 0) {
        // re-seed an empty cluster at the point farthest from its centroid
        int worst_i = 0;
        double worst = -1.0;
        for (int i = 0; i < n; ++i) {
          const double dist =
              cosine_distance(row(i), model.centroids[static_cast<size_t>(assign[static_cast<size_t>(i)])].data(), d);
          if (dist > worst) {
            worst = dist;
            worst_i = i;
          }
        }
        model.centroids[static_cast<size_t>(c)] = std::vector<double>(row(worst_i), row(worst_i) + d);
        continue;
      }
      double norm = 0.0;
      for (double v : mean) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& v : mean) v /= norm;
      }
      model.centroids[static_cast<size_t>(c)] = std::move(mean);
    }
  }

  if (opt.tau_override) {
    model.tau = *opt.tau_override;
  } else {
    std::vector<double> own;
    own.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) own.push_back(nearest(model, row(i), nullptr));
    model.tau = percentile_nearest_rank(std::move(own), opt.tau_percentile);
  }
  if (model.tau <= 0.0) raise(ErrorCategory::config, "topic model tau must be positive");
  return model;
}

std::vector<TopicAssignment> assign_topics(const TopicModel& model, const Tensor& embeddings,
                                           const std::vector<std::string>& ids) {
  if (embeddings.ndim() != 2 || embeddings.dim(1) != model.dim()) {
    raise(ErrorCategory::dimension, "assign_topics: embedding width " + shape_str(embeddings.shape()) +
                                        " vs model dim " + std::to_string(model.dim()));
  }
  if (static_cast<size_t>(embeddings.dim(0)) != ids.size()) {
    raise(ErrorCategory::dimension, "assign_topics: id count does not match embeddings");
  }
  const Tensor centered = centered_embeddings(embeddings, model.center);
  std::vector<TopicAssignment> out;
  out.reserve(ids.size());
  for (int i = 0; i < embeddings.dim(0); ++i) {
    int which = -1;
    const double dist = nearest(model, centered.data().data() + static_cast<size_t>(i) * model.dim(), &which);
    TopicAssignment a;
    a.example_id = ids[static_cast<size_t>(i)];
    a.distance = dist;
    a.topic = dist > model.tau ? -1 : which;
    out.push_back(std::move(a));
  }
  return out;
}

GlobalLocalSets build_global_local_sets(
    const std::map<std::string, std::vector<TopicAssignment>>& assignments_by_lang,
    const std::map<std::string, Tensor>& embeddings_by_lang,
    const std::vector<std::string>& wl_languages, const TopicFitOptions& refit_options) {
  for (const std::string& wl : wl_languages) {
    if (!assignments_by_lang.count(wl)) {
      raise(ErrorCategory::input, "missing topic assignments for world language '" + wl + "'");
    }
  }

  // topics present in the test assignments of every world language
  std::map<int, std::set<std::string>> topic_langs;
  for (const auto& [lang, assigns] : assignments_by_lang) {
    for (const TopicAssignment& a : assigns) {
      if (a.topic >= 0) topic_langs[a.topic].insert(lang);
    }
  }
  std::set<int> global_topics;
  for (const auto& [topic, langs] : topic_langs) {
    bool everywhere = true;
    for (const std::string& wl : wl_languages) everywhere = everywhere && langs.count(wl) > 0;
    if (everywhere) global_topics.insert(topic);
  }

  GlobalLocalSets sets;
  struct PoolEntry {
    std::string id;
    std::string lang;
    size_t row;
  };
  std::vector<PoolEntry> pool;
  for (const auto& [lang, assigns] : assignments_by_lang) {
    for (size_t i = 0; i < assigns.size(); ++i) {
      const TopicAssignment& a = assigns[i];
      if (a.topic >= 0 && global_topics.count(a.topic)) {
        sets.global_set.push_back({a.example_id, lang, a.topic, "primary"});
      } else if (a.topic == -1) {
        pool.push_back({a.example_id, lang, i});
      }
    }
  }
  if (pool.empty()) return sets;

  const int d = embeddings_by_lang.begin()->second.dim(1);
  Tensor pool_emb = Tensor::zeros({static_cast<int>(pool.size()), d});
  std::vector<std::string> pool_ids;
  for (size_t p = 0; p < pool.size(); ++p) {
    const Tensor& emb = embeddings_by_lang.at(pool[p].lang);
    for (int j = 0; j < d; ++j) pool_emb.at(static_cast<int>(p), j) = emb.at(static_cast<int>(pool[p].row), j);
    pool_ids.push_back(pool[p].id);
  }

  TopicFitOptions refit = refit_options;
  refit.k = std::min(refit.k, static_cast<int>(pool.size()));
  TopicModel local_model = fit_topic_model(pool_emb, refit);
  std::vector<TopicAssignment> refit_assigns = assign_topics(local_model, pool_emb, pool_ids);

  std::map<int, std::set<std::string>> refit_topic_langs;
  for (size_t p = 0; p < pool.size(); ++p) {
    if (refit_assigns[p].topic >= 0) refit_topic_langs[refit_assigns[p].topic].insert(pool[p].lang);
  }
  for (size_t p = 0; p < pool.size(); ++p) {
    const int t = refit_assigns[p].topic;
    if (t >= 0 && refit_topic_langs[t].size() == 1) {
      sets.local_set.push_back({pool[p].id, pool[p].lang, t, "refit"});
    }
  }
  return sets;
}

RelationGraph build_relation_graph(
    const std::map<std::string, std::vector<TopicAssignment>>& assignments_by_lang) {
  RelationGraph graph;
  std::map<std::string, std::set<int>> topics_of;
  for (const auto& [lang, assigns] : assignments_by_lang) {
    graph.nodes.push_back({lang, static_cast<long>(assigns.size())});
    for (const TopicAssignment& a : assigns) {
      if (a.topic >= 0) topics_of[lang].insert(a.topic);
    }
  }
  std::vector<std::string> langs;
  for (const auto& [lang, assigns] : assignments_by_lang) langs.push_back(lang);
  for (size_t i = 0; i < langs.size(); ++i) {
    for (size_t j = i + 1; j < langs.size(); ++j) {
      const std::set<int>& ta = topics_of[langs[i]];
      const std::set<int>& tb = topics_of[langs[j]];
      std::set<int> shared;
      for (int t : ta) {
        if (tb.count(t)) shared.insert(t);
      }
      long on_shared = 0;
      long total = 0;
      for (const std::string& lang : {langs[i], langs[j]}) {
        for (const TopicAssignment& a : assignments_by_lang.at(lang)) {
          ++total;
          if (a.topic >= 0 && shared.count(a.topic)) ++on_shared;
        }
      }
      const double weight = total > 0 ? 100.0 * static_cast<double>(on_shared) / static_cast<double>(total) : 0.0;
      if (weight > 0.0) graph.edges.push_back({langs[i], langs[j], weight});
    }
  }
  return graph;
}

std::string relation_graph_dot(const RelationGraph& graph) {
  std::string out = "graph topical_relations {\n";
  for (const RelationGraph::Node& n : graph.nodes) {
    out += "  \"" + n.lang + "\" [label=\"" + n.lang + " (" + std::to_string(n.samples) + ")\"];\n";
  }
  char buf[64];
  for (const RelationGraph::Edge& e : graph.edges) {
    std::snprintf(buf, sizeof(buf), "%.1f", e.weight);
    out += "  \"" + e.a + "\" -- \"" + e.b + "\" [label=\"" + buf + "\"];\n";
  }
  out += "}\n";
  return out;
}

std::string relation_graph_json_str(const RelationGraph& graph) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const RelationGraph::Node& n : graph.nodes) {
    j["nodes"].push_back({{"lang", n.lang}, {"samples", n.samples}});
  }
  j["edges"] = nlohmann::json::array();
  for (const RelationGraph::Edge& e : graph.edges) {
    j["edges"].push_back({{"a", e.a}, {"b", e.b}, {"weight", e.weight}});
  }
  return j.dump(2);
}

void save_scoped_sets(const GlobalLocalSets& sets, const std::map<std::string, Corpus>& test_by_lang,
                      const std::string& path) {
  std::map<std::string, const Example*> by_id;
  for (const auto& [lang, corpus] : test_by_lang) {
    for (const Example& e : corpus.examples) by_id[e.id] = &e;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCategory::io, "cannot write " + path);
  os << "id\tlang\ttext\tlabel\ttopic_id\tscope\tstage\n";
  auto write = [&](const ScopedExample& s, const char* scope) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) raise(ErrorCategory::index, "scoped example '" + s.id + "' not in test corpora");
    const Example& e = *it->second;
    os << e.id << '\t' << e.lang << '\t' << e.text << '\t'
       << (e.label ? std::to_string(*e.label) : std::string("-")) << '\t' << s.topic << '\t' << scope << '\t'
       << s.stage << '\n';
  };
  for (const ScopedExample& s : sets.global_set) write(s, "global");
  for (const ScopedExample& s : sets.local_set) write(s, "local");
}

}  // namespace cw
