#include "cw/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cw {

namespace {

bool wants_tape(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    raise(ErrorCategory::dimension,
          std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    raise(ErrorCategory::dimension, std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    raise(ErrorCategory::dimension,
          "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.data().data();
    for (int i = 0; i < m; ++i) {
      const double* arow = pa + static_cast<size_t>(i) * k;
      double* crow = pc + static_cast<size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        if (av == 0.0) continue;
        const double* brow = pb + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  if (wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out = out]() mutable {
      const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
      const double* gc = out.grad().data();
      if (a.requires_grad()) {
        // dA += dC * B^T
        double* ga = a.grad().data();
        const double* pb = b.data().data();
        for (int i = 0; i < m; ++i) {
          const double* gcrow = gc + static_cast<size_t>(i) * n;
          double* garow = ga + static_cast<size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double* brow = pb + static_cast<size_t>(kk) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += gcrow[j] * brow[j];
            garow[kk] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB += A^T * dC
        double* gb = b.grad().data();
        const double* pa = a.data().data();
        for (int kk = 0; kk < k; ++kk) {
          double* gbrow = gb + static_cast<size_t>(kk) * n;
          for (int i = 0; i < m; ++i) {
            const double av = pa[static_cast<size_t>(i) * k + kk];
            if (av == 0.0) continue;
            const double* gcrow = gc + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * gcrow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a, Tape* tape) {
  require_2d(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    tape->record([a = a, out = out]() mutable {
      const int m = a.dim(0), n = a.dim(1);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a.grad()[static_cast<size_t>(i) * n + j] += out.grad()[static_cast<size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out = out]() mutable {
      const size_t n = out.numel();
      if (a.requires_grad())
        for (size_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i];
      if (b.requires_grad())
        for (size_t i = 0; i < n; ++i) b.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v, Tape* tape) {
  require_2d(x, "add_rowvec");
  if (v.ndim() != 1 || v.dim(0) != x.dim(1)) {
    raise(ErrorCategory::dimension,
          "add_rowvec: vector " + shape_str(v.shape()) + " does not match columns of " + shape_str(x.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
  if (wants_tape(tape, {&x, &v})) {
    out.set_requires_grad(true);
    tape->record([x = x, v = v, out = out]() mutable {
      const int m = x.dim(0), n = x.dim(1);
      if (x.requires_grad()) {
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) x.grad()[i] += out.grad()[i];
      }
      if (v.requires_grad()) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) v.grad()[static_cast<size_t>(j)] += out.grad()[static_cast<size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out = out]() mutable {
      const size_t n = out.numel();
      if (a.requires_grad())
        for (size_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i] * b.data()[i];
      if (b.requires_grad())
        for (size_t i = 0; i < n; ++i) b.grad()[i] += out.grad()[i] * a.data()[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  if (wants_tape(tape, {&a})) {
    out.set_requires_grad(true);
    tape->record([a = a, out = out, s]() mutable {
      const size_t n = out.numel();
      for (size_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i] * s;
    });
  }
  return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x = x, out = out]() mutable {
      const size_t n = out.numel();
      // gate is 1 strictly above zero
      for (size_t i = 0; i < n; ++i)
        if (x.data()[i] > 0.0) x.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

namespace {

struct AxisSplit {
  size_t outer, n, inner;
};

AxisSplit split_axis(const Tensor& x, int axis, const char* op) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    raise(ErrorCategory::dimension, std::string(op) + ": axis out of range for " + shape_str(x.shape()));
  }
  AxisSplit s{1, static_cast<size_t>(x.dim(axis)), 1};
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<size_t>(x.dim(i));
  for (int i = axis + 1; i < nd; ++i) s.inner *= static_cast<size_t>(x.dim(i));
  if (s.n == 0) raise(ErrorCategory::dimension, std::string(op) + ": empty axis");
  return s;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis, Tape* tape) {
  const AxisSplit s = split_axis(x, axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  for (size_t o = 0; o < s.outer; ++o) {
    for (size_t in = 0; in < s.inner; ++in) {
      const size_t base = o * s.n * s.inner + in;
      double mx = x.data()[base];
      for (size_t i = 1; i < s.n; ++i) mx = std::max(mx, x.data()[base + i * s.inner]);
      double denom = 0.0;
      for (size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(x.data()[base + i * s.inner] - mx);
        out.data()[base + i * s.inner] = e;
        denom += e;
      }
      for (size_t i = 0; i < s.n; ++i) out.data()[base + i * s.inner] /= denom;
    }
  }
  if (wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x = x, out = out, s]() mutable {
      for (size_t o = 0; o < s.outer; ++o) {
        for (size_t in = 0; in < s.inner; ++in) {
          const size_t base = o * s.n * s.inner + in;
          double dot = 0.0;
          for (size_t i = 0; i < s.n; ++i)
            dot += out.grad()[base + i * s.inner] * out.data()[base + i * s.inner];
          for (size_t i = 0; i < s.n; ++i) {
            const size_t ix = base + i * s.inner;
            x.grad()[ix] += out.data()[ix] * (out.grad()[ix] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Tape* tape) {
  if (x.ndim() < 1) raise(ErrorCategory::dimension, "layernorm: scalar input");
  const int d = x.dim(x.ndim() - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d) {
    raise(ErrorCategory::dimension, "layernorm: affine shape mismatch with " + shape_str(x.shape()));
  }
  if (eps < 0.0) raise(ErrorCategory::dimension, "layernorm: negative eps");
  const size_t rows = x.numel() / static_cast<size_t>(d);
  Tensor out = Tensor::zeros(x.shape());
  // normalized values and 1/sigma are recomputed in backward from x; cache them
  // in the closure instead to keep backward O(d) per row
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_sigma(rows);
  for (size_t r = 0; r < rows; ++r) {
    const size_t base = r * static_cast<size_t>(d);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x.data()[base + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = x.data()[base + j] - mean;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (int j = 0; j < d; ++j) {
      const double xh = (x.data()[base + j] - mean) * is;
      xhat[base + j] = xh;
      out.data()[base + j] = gamma.at(j) * xh + beta.at(j);
    }
  }
  if (wants_tape(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    tape->record([x = x, gamma = gamma, beta = beta, out = out, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), d, rows]() mutable {
      for (size_t r = 0; r < rows; ++r) {
        const size_t base = r * static_cast<size_t>(d);
        if (beta.requires_grad())
          for (int j = 0; j < d; ++j) beta.grad()[static_cast<size_t>(j)] += out.grad()[base + j];
        if (gamma.requires_grad())
          for (int j = 0; j < d; ++j) gamma.grad()[static_cast<size_t>(j)] += out.grad()[base + j] * xhat[base + j];
        if (x.requires_grad()) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dxh = out.grad()[base + j] * gamma.at(j);
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[base + j];
          }
          mean_dxhat /= d;
          mean_dxhat_xhat /= d;
          for (int j = 0; j < d; ++j) {
            const double dxh = out.grad()[base + j] * gamma.at(j);
            x.grad()[base + j] += inv_sigma[r] * (dxh - mean_dxhat - xhat[base + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets, Tape* tape) {
  require_2d(logits, "cross_entropy_logits");
  const int batch = logits.dim(0), classes = logits.dim(1);
  if (classes < 2) raise(ErrorCategory::dimension, "cross_entropy_logits: need at least 2 classes");
  if (static_cast<int>(targets.size()) != batch) {
    raise(ErrorCategory::dimension, "cross_entropy_logits: target count " + std::to_string(targets.size()) +
                                        " vs batch " + std::to_string(batch));
  }
  for (int t : targets) {
    if (t < 0 || t >= classes) {
      raise(ErrorCategory::index, "cross_entropy_logits: target " + std::to_string(t) + " outside [0, " +
                                      std::to_string(classes) + ")");
    }
  }
  double total = 0.0;
  for (int i = 0; i < batch; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < classes; ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < classes; ++j) denom += std::exp(logits.at(i, j) - mx);
    total += mx + std::log(denom) - logits.at(i, targets[static_cast<size_t>(i)]);
  }
  Tensor out = Tensor::scalar(total / batch);
  if (wants_tape(tape, {&logits})) {
    out.set_requires_grad(true);
    tape->record([logits = logits, out = out, targets]() mutable {
      const int batch = logits.dim(0), classes = logits.dim(1);
      const double go = out.grad()[0] / batch;
      for (int i = 0; i < batch; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < classes; ++j) mx = std::max(mx, logits.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < classes; ++j) denom += std::exp(logits.at(i, j) - mx);
        for (int j = 0; j < classes; ++j) {
          const double p = std::exp(logits.at(i, j) - mx) / denom;
          const double ind = j == targets[static_cast<size_t>(i)] ? 1.0 : 0.0;
          logits.grad()[static_cast<size_t>(i) * classes + j] += go * (p - ind);
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids, Tape* tape) {
  require_2d(table, "gather_rows");
  const int rows = table.dim(0), cols = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= rows) {
      raise(ErrorCategory::index,
            "gather_rows: id " + std::to_string(id) + " outside [0, " + std::to_string(rows) + ")");
    }
  }
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), cols});
  for (size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < cols; ++j) out.data()[i * cols + j] = table.at(ids[i], j);
  if (wants_tape(tape, {&table})) {
    out.set_requires_grad(true);
    tape->record([table = table, out = out, ids]() mutable {
      const int cols = table.dim(1);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < cols; ++j)
          table.grad()[static_cast<size_t>(ids[i]) * cols + j] += out.grad()[i * cols + j];
    });
  }
  return out;
}

Tensor take_row(const Tensor& x, int row, Tape* tape) {
  require_2d(x, "take_row");
  if (row < 0 || row >= x.dim(0)) {
    raise(ErrorCategory::index, "take_row: row " + std::to_string(row) + " outside " + shape_str(x.shape()));
  }
  const int n = x.dim(1);
  Tensor out = Tensor::zeros({1, n});
  for (int j = 0; j < n; ++j) out.at(0, j) = x.at(row, j);
  if (wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x = x, out = out, row]() mutable {
      const int n = x.dim(1);
      for (int j = 0; j < n; ++j) x.grad()[static_cast<size_t>(row) * n + j] += out.grad()[static_cast<size_t>(j)];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs, Tape* tape) {
  if (xs.empty()) raise(ErrorCategory::dimension, "concat_rows: no inputs");
  const int n = xs.front().dim(1);
  int m = 0;
  for (const Tensor& x : xs) {
    require_2d(x, "concat_rows");
    if (x.dim(1) != n) raise(ErrorCategory::dimension, "concat_rows: column mismatch");
    m += x.dim(0);
  }
  Tensor out = Tensor::zeros({m, n});
  int r = 0;
  for (const Tensor& x : xs) {
    for (int i = 0; i < x.dim(0); ++i, ++r)
      for (int j = 0; j < n; ++j) out.at(r, j) = x.at(i, j);
  }
  bool any = false;
  for (const Tensor& x : xs) any = any || x.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    tape->record([xs = xs, out = out]() mutable {
      const int n = out.dim(1);
      int r = 0;
      for (Tensor& x : xs) {
        if (x.requires_grad()) {
          for (int i = 0; i < x.dim(0); ++i)
            for (int j = 0; j < n; ++j)
              x.grad()[static_cast<size_t>(i) * n + j] += out.grad()[static_cast<size_t>(r + i) * n + j];
        }
        r += x.dim(0);
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs, Tape* tape) {
  if (xs.empty()) raise(ErrorCategory::dimension, "concat_cols: no inputs");
  const int m = xs.front().dim(0);
  int n = 0;
  for (const Tensor& x : xs) {
    require_2d(x, "concat_cols");
    if (x.dim(0) != m) raise(ErrorCategory::dimension, "concat_cols: row mismatch");
    n += x.dim(1);
  }
  Tensor out = Tensor::zeros({m, n});
  int c = 0;
  for (const Tensor& x : xs) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < x.dim(1); ++j) out.at(i, c + j) = x.at(i, j);
    c += x.dim(1);
  }
  bool any = false;
  for (const Tensor& x : xs) any = any || x.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    tape->record([xs = xs, out = out]() mutable {
      const int m = out.dim(0);
      const int n = out.dim(1);
      int c = 0;
      for (Tensor& x : xs) {
        if (x.requires_grad()) {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < x.dim(1); ++j)
              x.grad()[static_cast<size_t>(i) * x.dim(1) + j] += out.grad()[static_cast<size_t>(i) * n + c + j];
        }
        c += x.dim(1);
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int count, Tape* tape) {
  require_2d(x, "slice_cols");
  if (start < 0 || count <= 0 || start + count > x.dim(1)) {
    raise(ErrorCategory::dimension, "slice_cols: range [" + std::to_string(start) + ", " +
                                        std::to_string(start + count) + ") outside " + shape_str(x.shape()));
  }
  const int m = x.dim(0);
  Tensor out = Tensor::zeros({m, count});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j) out.at(i, j) = x.at(i, start + j);
  if (wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x = x, out = out, start, count]() mutable {
      const int m = x.dim(0), n = x.dim(1);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          x.grad()[static_cast<size_t>(i) * n + start + j] += out.grad()[static_cast<size_t>(i) * count + j];
    });
  }
  return out;
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b, Tape* tape) {
  require_same_shape(a, b, "rowwise_dot");
  require_2d(a, "rowwise_dot");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({m, 1});
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += a.at(i, j) * b.at(i, j);
    out.at(i, 0) = acc;
  }
  if (wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out = out]() mutable {
      const int m = a.dim(0), n = a.dim(1);
      for (int i = 0; i < m; ++i) {
        const double g = out.grad()[static_cast<size_t>(i)];
        if (a.requires_grad())
          for (int j = 0; j < n; ++j) a.grad()[static_cast<size_t>(i) * n + j] += g * b.at(i, j);
        if (b.requires_grad())
          for (int j = 0; j < n; ++j) b.grad()[static_cast<size_t>(i) * n + j] += g * a.at(i, j);
      }
    });
  }
  return out;
}

Tensor mul_colvec(const Tensor& x, const Tensor& c, Tape* tape) {
  require_2d(x, "mul_colvec");
  if (c.ndim() != 2 || c.dim(1) != 1 || c.dim(0) != x.dim(0)) {
    raise(ErrorCategory::dimension,
          "mul_colvec: column vector " + shape_str(c.shape()) + " does not match rows of " + shape_str(x.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * c.at(i, 0);
  if (wants_tape(tape, {&x, &c})) {
    out.set_requires_grad(true);
    tape->record([x = x, c = c, out = out]() mutable {
      const int m = x.dim(0), n = x.dim(1);
      for (int i = 0; i < m; ++i) {
        if (x.requires_grad())
          for (int j = 0; j < n; ++j)
            x.grad()[static_cast<size_t>(i) * n + j] += out.grad()[static_cast<size_t>(i) * n + j] * c.at(i, 0);
        if (c.requires_grad()) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += out.grad()[static_cast<size_t>(i) * n + j] * x.at(i, j);
          c.grad()[static_cast<size_t>(i)] += acc;
        }
      }
    });
  }
  return out;
}

}  // namespace cw
