#include "cw/optim.hpp"

#include <cmath>

namespace cw {

void Adam::step(const std::vector<Parameter*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    Moments& mom = state_[p->name];
    const size_t n = p->value.numel();
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    const std::vector<double>& g = p->value.grad();
    std::vector<double>& x = p->value.data();
    for (size_t i = 0; i < n; ++i) {
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      x[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->value.zero_grad();
}

double finite_diff_check(const std::function<Tensor(Tape*)>& f,
                         const std::vector<Parameter*>& params, double h) {
  Adam::zero_grad(params);
  Tape tape;
  Tensor loss = f(&tape);
  if (!std::isfinite(loss.item())) raise(ErrorCategory::numeric, "finite_diff_check: non-finite loss");
  if (loss.requires_grad()) tape.backward(loss);

  std::unordered_map<std::string, std::vector<double>> analytic;
  for (Parameter* p : params) {
    if (p->trainable) analytic[p->name] = p->value.grad();
  }

  double max_rel = 0.0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    std::vector<double>& x = p->value.data();
    const std::vector<double>& g = analytic[p->name];
    for (size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double lp = f(nullptr).item();
      x[i] = orig - h;
      const double lm = f(nullptr).item();
      x[i] = orig;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        raise(ErrorCategory::numeric, "finite_diff_check: non-finite loss at perturbed " + p->name);
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double rel = std::abs(g[i] - fd) / (std::abs(g[i]) + std::abs(fd) + 1e-3);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace cw
