#include "cw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cw/error.hpp"

namespace cw {

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels,
                                        const std::vector<std::string>& ids) {
  if (scores.size() != labels.size() || (!ids.empty() && ids.size() != scores.size())) {
    raise(ErrorCategory::input, "average_precision: scores/labels/ids lengths disagree");
  }
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (!ids.empty() && ids[a] != ids[b]) return ids[a] < ids[b];
    return a < b;
  });
  long positives_seen = 0;
  double ap = 0.0;
  for (size_t rank = 0; rank < n; ++rank) {
    if (labels[order[rank]] == 1) {
      ++positives_seen;
      ap += static_cast<double>(positives_seen) / static_cast<double>(rank + 1);
    }
  }
  if (positives_seen == 0) return std::nullopt;
  return ap / static_cast<double>(positives_seen);
}

std::optional<double> map_over_queries(const std::vector<RankedQuery>& queries) {
  double total = 0.0;
  long counted = 0;
  for (const RankedQuery& q : queries) {
    const auto ap = average_precision(q.scores, q.labels, q.ids);
    if (ap) {
      total += *ap;
      ++counted;
    }
  }
  if (counted == 0) return std::nullopt;
  return total / static_cast<double>(counted);
}

F1Result f1_binary(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) raise(ErrorCategory::input, "f1_binary: length mismatch");
  F1Result r;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) raise(ErrorCategory::input, "f1_binary: labels must be 0/1");
    if (preds[i] == 1 && labels[i] == 1) ++r.tp;
    else if (preds[i] == 1 && labels[i] == 0) ++r.fp;
    else if (preds[i] == 0 && labels[i] == 1) ++r.fn;
    else ++r.tn;
  }
  r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& ratings, int n_categories) {
  if (ratings.empty()) raise(ErrorCategory::input, "fleiss_kappa: no items");
  if (n_categories < 2) raise(ErrorCategory::input, "fleiss_kappa: need at least two categories");
  const size_t m = ratings.front().size();
  if (m < 2) raise(ErrorCategory::input, "fleiss_kappa: need at least two raters");
  const size_t n = ratings.size();

  std::vector<double> category_mass(static_cast<size_t>(n_categories), 0.0);
  double p_bar = 0.0;
  for (const std::vector<int>& item : ratings) {
    if (item.size() != m) raise(ErrorCategory::input, "fleiss_kappa: every item needs all raters");
    std::vector<long> counts(static_cast<size_t>(n_categories), 0);
    for (int r : item) {
      if (r < 0 || r >= n_categories) raise(ErrorCategory::input, "fleiss_kappa: rating outside categories");
      ++counts[static_cast<size_t>(r)];
    }
    double agree = 0.0;
    for (size_t c = 0; c < counts.size(); ++c) {
      agree += static_cast<double>(counts[c]) * static_cast<double>(counts[c]);
      category_mass[c] += static_cast<double>(counts[c]);
    }
    p_bar += (agree - static_cast<double>(m)) / static_cast<double>(m * (m - 1));
  }
  p_bar /= static_cast<double>(n);

  double pe = 0.0;
  for (double mass : category_mass) {
    const double p = mass / static_cast<double>(n * m);
    pe += p * p;
  }
  if (1.0 - pe <= 0.0) return std::nullopt;  // all raters always pick one category
  return (p_bar - pe) / (1.0 - pe);
}

SeedStats aggregate_seed_values(const std::vector<double>& values) {
  SeedStats s;
  s.values = values;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

}  // namespace cw
