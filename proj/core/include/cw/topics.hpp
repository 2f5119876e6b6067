#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cw/encoder.hpp"

namespace cw {

// Deterministic spherical k-means with an outlier threshold. Embeddings are
// centered on the fitting corpus mean and renormalized before clustering
// (mean-pooled sentence embeddings share a dominant common direction that
// would otherwise crush the cosine geometry). Assignments farther than tau
// (cosine distance in the centered space) from every centroid get topic -1,
// the same contract the full-scale topic-modeling system exposes.
struct TopicModel {
  std::vector<double> center;                  // fitting-corpus mean, applied before matching
  std::vector<std::vector<double>> centroids;  // unit rows in the centered space
  double tau = 0.0;

  int k() const { return static_cast<int>(centroids.size()); }
  int dim() const { return centroids.empty() ? 0 : static_cast<int>(centroids.front().size()); }
};

struct TopicFitOptions {
  int k = 8;
  double tau_percentile = 90.0;  // of training-point distances to their own centroid
  std::optional<double> tau_override;
  int max_iters = 100;
  uint64_t seed = 1;
};

// Mean over non-pad final hidden states of the plain frozen backbone,
// rows unit-normalized. [n x d_model]
Tensor embed_examples(const Backbone& bb, const Tokenizer& tok, const Corpus& corpus, int max_len);

TopicModel fit_topic_model(const Tensor& embeddings, const TopicFitOptions& opt);

struct TopicAssignment {
  std::string example_id;
  int topic = -1;  // -1 iff distance > tau
  double distance = 0.0;
};

std::vector<TopicAssignment> assign_topics(const TopicModel& model, const Tensor& embeddings,
                                           const std::vector<std::string>& ids);

struct ScopedExample {
  std::string id;
  std::string lang;
  int topic = -1;      // primary-model topic for global members, refit topic for local
  std::string stage;   // "primary" | "refit"
};

struct GlobalLocalSets {
  std::vector<ScopedExample> global_set;
  std::vector<ScopedExample> local_set;
};

// Global: test samples whose primary topic occurs in the test assignments of
// every world language. Local: refit a fresh topic model on the -1 samples
// and keep those whose refit topic occurs in exactly one language.
GlobalLocalSets build_global_local_sets(
    const std::map<std::string, std::vector<TopicAssignment>>& assignments_by_lang,
    const std::map<std::string, Tensor>& embeddings_by_lang,
    const std::vector<std::string>& wl_languages, const TopicFitOptions& refit_options);

struct RelationGraph {
  struct Node {
    std::string lang;
    long samples = 0;
  };
  struct Edge {
    std::string a, b;
    double weight = 0.0;  // percent of union samples on shared topics
  };
  std::vector<Node> nodes;
  std::vector<Edge> edges;  // zero-weight edges omitted
};

RelationGraph build_relation_graph(const std::map<std::string, std::vector<TopicAssignment>>& assignments_by_lang);

std::string relation_graph_dot(const RelationGraph& graph);
std::string relation_graph_json_str(const RelationGraph& graph);

// Evaluation-set export: corpus tsv plus topic_id, scope, stage columns.
void save_scoped_sets(const GlobalLocalSets& sets, const std::map<std::string, Corpus>& test_by_lang,
                      const std::string& path);

}  // namespace cw
