#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cw/error.hpp"
#include "cw/rng.hpp"

namespace cw {

// Dense row-major f64 tensor. Copies share storage (cheap handles); clone()
// makes a deep copy. The grad buffer exists only while requires_grad is set.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return impl_->data.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on);
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // 1-d / 2-d element access
  double& at(int i) { return impl_->data[static_cast<size_t>(i)]; }
  double at(int i) const { return impl_->data[static_cast<size_t>(i)]; }
  double& at(int i, int j) {
    return impl_->data[static_cast<size_t>(i) * static_cast<size_t>(shape()[1]) +
                       static_cast<size_t>(j)];
  }
  double at(int i, int j) const {
    return impl_->data[static_cast<size_t>(i) * static_cast<size_t>(shape()[1]) +
                       static_cast<size_t>(j)];
  }
  double item() const;

  Tensor clone() const;

  // identity of the underlying buffer, for aliasing checks in tests
  const void* storage_id() const { return impl_.get(); }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Records backward steps in forward execution order. Because every primitive
// is recorded after its inputs were produced, running the steps in reverse
// visits the graph in reverse topological order exactly once.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape once, consuming it.
  void backward(Tensor& loss);

  size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

}  // namespace cw
