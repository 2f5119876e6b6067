#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cw/tensor.hpp"

namespace cw {

// Named trainable value. The trainable flag mirrors the tensor's grad
// requirement so frozen parameters never have gradients computed for them.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true) : name(std::move(n)), value(std::move(v)) {
    set_trainable(train);
  }

  void set_trainable(bool t) {
    trainable = t;
    value.set_requires_grad(t);
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment state is keyed by parameter name (names
// are unique paths). Non-trainable parameters are skipped entirely, so their
// values stay bitwise identical no matter how many steps run.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Parameter*>& params);
  static void zero_grad(const std::vector<Parameter*>& params);
  const AdamConfig& config() const { return cfg_; }
  long steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

// Central-difference gradient verification. `f` rebuilds the scalar loss from
// the current parameter values; it receives a tape when analytic gradients are
// wanted and nullptr for the plain re-evaluations. Returns the maximum
// relative error over all trainable scalars. The 1e-3 floor in the
// denominator keeps difference noise on near-zero gradients from registering
// as error.
double finite_diff_check(const std::function<Tensor(Tape*)>& f,
                         const std::vector<Parameter*>& params, double h = 1e-5);

}  // namespace cw
