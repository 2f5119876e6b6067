#pragma once

#include <vector>

#include "cw/tensor.hpp"

namespace cw {

// Differentiable primitives. Each op computes its forward result and, when a
// tape is supplied and any input requires grad, records one backward step.
// With tape == nullptr the op is a pure function (no grad buffers touched).

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose(const Tensor& a, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add_rowvec(const Tensor& x, const Tensor& v, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double s, Tape* tape = nullptr);
Tensor relu(const Tensor& x, Tape* tape = nullptr);
Tensor softmax(const Tensor& x, int axis = -1, Tape* tape = nullptr);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps, Tape* tape = nullptr);
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            Tape* tape = nullptr);

// gather rows of `table` at `ids` (embedding lookup / row selection)
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids, Tape* tape = nullptr);
Tensor take_row(const Tensor& x, int row, Tape* tape = nullptr);
Tensor concat_rows(const std::vector<Tensor>& xs, Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& xs, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, int start, int count, Tape* tape = nullptr);

// out[i] = <a[i,:], b[i,:]>, shape [m x 1]
Tensor rowwise_dot(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// out[i,j] = x[i,j] * c[i], c of shape [m x 1]
Tensor mul_colvec(const Tensor& x, const Tensor& c, Tape* tape = nullptr);

}  // namespace cw
