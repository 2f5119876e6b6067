#pragma once

#include <optional>
#include <string>
#include <vector>

namespace cw {

// Average precision over one ranked query: descending score, ties broken by
// ascending id. Returns nullopt when the query has no positive labels (the
// caller excludes such queries from the MAP mean).
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels,
                                        const std::vector<std::string>& ids);

struct RankedQuery {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

std::optional<double> map_over_queries(const std::vector<RankedQuery>& queries);

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

// Positive-class F1; zero when TP is zero.
F1Result f1_binary(const std::vector<int>& preds, const std::vector<int>& labels);

// ratings[item][rater] = category in [0, n_categories). Returns nullopt in
// the degenerate all-one-category case where chance agreement is 1.
std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& ratings, int n_categories);

struct SeedStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation, so one seed gives 0
  std::vector<double> values;
};

SeedStats aggregate_seed_values(const std::vector<double>& values);

}  // namespace cw
