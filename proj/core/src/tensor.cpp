#include "cw/tensor.hpp"

#include <sstream>

namespace cw {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) raise(ErrorCategory::dimension, "non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape) {
  auto impl = std::make_shared<Impl>();
  impl->data.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.data()) x = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  if (values.size() != shape_numel(shape)) {
    raise(ErrorCategory::dimension,
          "value count " + std::to_string(values.size()) + " does not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.data()) x = rng.normal(0.0, stddev);
  return t;
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

std::vector<double>& Tensor::grad() {
  if (!requires_grad()) raise(ErrorCategory::dimension, "grad requested on tensor without requires_grad");
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) raise(ErrorCategory::dimension, "grad requested on tensor without requires_grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) impl_->grad.assign(impl_->data.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) raise(ErrorCategory::dimension, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  if (impl->requires_grad) impl->grad = impl_->grad;
  return Tensor(std::move(impl));
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) raise(ErrorCategory::dimension, "backward needs a scalar loss");
  if (!loss.requires_grad()) raise(ErrorCategory::dimension, "backward on loss that requires no grad");
  loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::input: return "input";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::config: return "config";
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::compat: return "compat";
    case ErrorCategory::index: return "index";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

}  // namespace cw
