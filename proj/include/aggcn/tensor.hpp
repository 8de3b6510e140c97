// Dense rank-2 tensors with reverse-mode automatic differentiation.
//
// Storage is row-major double. Scalars are 1x1, row vectors 1xd. Ops build a
// backward graph; Tensor::backward() on a scalar accumulates d(loss)/d(x)
// into the grad buffer of every reachable tensor with requires_grad set.
// Gradients accumulate across backward calls until zero_grad() is called.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "aggcn/common.hpp"
#include "aggcn/rng.hpp"

namespace aggcn {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t numel() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

namespace detail {

// C(p x r) += A(p x q) * B(q x r)
inline void mm_nn_acc(const double* a, const double* b, double* c,
                      std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      if (aik == 0.0) continue;
      const double* brow = b + k * r;
      double* crow = c + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C(p x r) += A(p x q) * B(r x q)^T
inline void mm_nt_acc(const double* a, const double* b, double* c,
                      std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * q;
    for (std::size_t j = 0; j < r; ++j) {
      const double* brow = b + j * q;
      double dot = 0.0;
      for (std::size_t k = 0; k < q; ++k) dot += arow[k] * brow[k];
      c[i * r + j] += dot;
    }
  }
}

// C(q x r) += A(p x q)^T * B(p x r)
inline void mm_tn_acc(const double* a, const double* b, double* c,
                      std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* brow = b + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      if (aik == 0.0) continue;
      double* crow = c + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

struct TensorData;

// Per-backward-pass adjoint buffers, keyed by node. Separate from the grad
// field so repeated backward calls accumulate instead of compounding.
struct BackwardCtx {
  std::unordered_map<const TensorData*, std::vector<double>> adjoints;
  std::vector<double>& adj(const TensorData* t);
};

using BackFn =
    std::function<void(const std::vector<double>& self_adj, BackwardCtx& ctx)>;

struct TensorData {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorData>> parents;
  BackFn backprop;  // set only when requires_grad and produced by an op
};

inline std::vector<double>& BackwardCtx::adj(const TensorData* t) {
  auto it = adjoints.find(t);
  if (it == adjoints.end()) {
    it = adjoints.emplace(t, std::vector<double>(t->shape.numel(), 0.0)).first;
  }
  return it->second;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols,
                      bool requires_grad = false) {
    return Tensor(Shape{rows, cols},
                  std::vector<double>(rows * cols, 0.0), requires_grad);
  }

  static Tensor filled(std::size_t rows, std::size_t cols, double value,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols},
                  std::vector<double>(rows * cols, value), requires_grad);
  }

  static Tensor from(std::size_t rows, std::size_t cols,
                     std::vector<double> values, bool requires_grad = false) {
    if (values.size() != rows * cols) {
      throw shape_error("tensor init: " + std::to_string(values.size()) +
                        " values for shape " + Shape{rows, cols}.str());
    }
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{1, 1}, std::vector<double>{value}, requires_grad);
  }

  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values), requires_grad);
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  static Tensor random_uniform(std::size_t rows, std::size_t cols, double lo,
                               double hi, Rng& rng, bool requires_grad = true) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(Shape{rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rows() const { return d_->shape.rows; }
  std::size_t cols() const { return d_->shape.cols; }
  std::size_t numel() const { return d_->shape.numel(); }
  bool requires_grad() const { return d_->requires_grad; }

  std::vector<double>& data() { return d_->data; }
  const std::vector<double>& data() const { return d_->data; }
  std::vector<double>& grad() { return d_->grad; }
  const std::vector<double>& grad() const { return d_->grad; }

  double& at(std::size_t i, std::size_t j) {
    return d_->data[i * cols() + j];
  }
  double at(std::size_t i, std::size_t j) const {
    return d_->data[i * cols() + j];
  }

  // The value of a 1x1 tensor.
  double value() const {
    if (numel() != 1) {
      throw contract_error("value(): tensor " + shape().str() +
                           " is not scalar");
    }
    return d_->data[0];
  }

  void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), 0.0); }

  // Identity of the underlying buffer; ops returning their input unchanged
  // (e.g. singleton concat) share it.
  const void* id() const { return d_.get(); }

  // Reverse-mode sweep from a scalar. Adjoints are computed per call and
  // added into grad, so calling twice doubles every gradient.
  void backward() const {
    if (numel() != 1) {
      throw contract_error("backward(): loss " + shape().str() +
                           " is not scalar");
    }
    if (!d_->requires_grad) return;

    // Post-order over parent edges; reverse order processes every consumer
    // before the node it feeds.
    std::vector<const detail::TensorData*> order;
    std::unordered_map<const detail::TensorData*, bool> visited;
    struct Frame {
      const detail::TensorData* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack{{d_.get(), 0}};
    visited[d_.get()] = true;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        const detail::TensorData* p =
            f.node->parents[f.next_parent++].get();
        if (!visited[p]) {
          visited[p] = true;
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    detail::BackwardCtx ctx;
    ctx.adj(d_.get())[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const detail::TensorData* node = *it;
      if (node->backprop) {
        node->backprop(ctx.adj(node), ctx);
      }
    }
    for (const detail::TensorData* node : order) {
      if (!node->requires_grad) continue;
      auto found = ctx.adjoints.find(node);
      if (found == ctx.adjoints.end()) continue;
      auto* mut = const_cast<detail::TensorData*>(node);
      for (std::size_t i = 0; i < mut->grad.size(); ++i) {
        mut->grad[i] += found->second[i];
      }
    }
  }

 private:
  Tensor(Shape shape, std::vector<double> values, bool requires_grad)
      : d_(std::make_shared<detail::TensorData>()) {
    d_->shape = shape;
    d_->data = std::move(values);
    d_->grad.assign(d_->shape.numel(), 0.0);
    d_->requires_grad = requires_grad;
  }

  std::shared_ptr<detail::TensorData> d_;

  friend Tensor detail_make_op_result(Shape, std::vector<double>,
                                      const std::vector<Tensor>&,
                                      detail::BackFn);
  friend std::shared_ptr<detail::TensorData> detail_impl(const Tensor&);
};

inline std::shared_ptr<detail::TensorData> detail_impl(const Tensor& t) {
  return t.d_;
}

// Creates an op result; attaches the backward rule only when some input
// requires a gradient.
inline Tensor detail_make_op_result(Shape shape, std::vector<double> values,
                                    const std::vector<Tensor>& inputs,
                                    detail::BackFn fn) {
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || t.requires_grad();
  Tensor out(shape, std::move(values), rg);
  if (rg) {
    out.d_->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) out.d_->parents.push_back(t.d_);
    out.d_->backprop = std::move(fn);
  }
  return out;
}

inline void zero_grads(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw shape_error("matmul: inner dimensions differ: " + a.shape().str() +
                      " vs " + b.shape().str());
  }
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  std::vector<double> out(p * r, 0.0);
  detail::mm_nn_acc(a.data().data(), b.data().data(), out.data(), p, q, r);

  auto pa = detail_impl(a);
  auto pb = detail_impl(b);
  return detail_make_op_result(
      Shape{p, r}, std::move(out), {a, b},
      [pa, pb, p, q, r](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (pa->requires_grad) {
          detail::mm_nt_acc(d.data(), pb->data.data(),
                            c.adj(pa.get()).data(), p, r, q);
        }
        if (pb->requires_grad) {
          detail::mm_tn_acc(pa->data.data(), d.data(),
                            c.adj(pb.get()).data(), p, q, r);
        }
      });
}

// a * b^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw shape_error("matmul_nt: inner dimensions differ: " +
                      a.shape().str() + " vs " + b.shape().str() + "^T");
  }
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  std::vector<double> out(p * r, 0.0);
  detail::mm_nt_acc(a.data().data(), b.data().data(), out.data(), p, q, r);

  auto pa = detail_impl(a);
  auto pb = detail_impl(b);
  return detail_make_op_result(
      Shape{p, r}, std::move(out), {a, b},
      [pa, pb, p, q, r](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (pa->requires_grad) {
          detail::mm_nn_acc(d.data(), pb->data.data(),
                            c.adj(pa.get()).data(), p, r, q);
        }
        if (pb->requires_grad) {
          detail::mm_tn_acc(d.data(), pa->data.data(),
                            c.adj(pb.get()).data(), p, r, q);
        }
      });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t p = a.rows(), q = a.cols();
  std::vector<double> out(q * p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[j * p + i] = a.at(i, j);

  auto pa = detail_impl(a);
  return detail_make_op_result(
      Shape{q, p}, std::move(out), {a},
      [pa, p, q](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (!pa->requires_grad) return;
        auto& g = c.adj(pa.get());
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < q; ++j) g[i * q + j] += d[j * p + i];
      });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw shape_error("add: shapes differ: " + a.shape().str() + " vs " +
                      b.shape().str());
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];

  auto pa = detail_impl(a);
  auto pb = detail_impl(b);
  return detail_make_op_result(
      a.shape(), std::move(out), {a, b},
      [pa, pb](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (pa->requires_grad) {
          auto& g = c.adj(pa.get());
          for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
        }
        if (pb->requires_grad) {
          auto& g = c.adj(pb.get());
          for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
        }
      });
}

// m + v broadcast over rows; v is 1 x cols.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != m.cols()) {
    throw shape_error("add_rowvec: " + m.shape().str() + " vs " +
                      v.shape().str());
  }
  const std::size_t n = m.rows(), d = m.cols();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = m.at(i, j) + v.data()[j];

  auto pm = detail_impl(m);
  auto pv = detail_impl(v);
  return detail_make_op_result(
      m.shape(), std::move(out), {m, v},
      [pm, pv, n, d](const std::vector<double>& g, detail::BackwardCtx& c) {
        if (pm->requires_grad) {
          auto& gm = c.adj(pm.get());
          for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
        }
        if (pv->requires_grad) {
          auto& gv = c.adj(pv.get());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j];
        }
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw shape_error("mul: shapes differ: " + a.shape().str() + " vs " +
                      b.shape().str());
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];

  auto pa = detail_impl(a);
  auto pb = detail_impl(b);
  return detail_make_op_result(
      a.shape(), std::move(out), {a, b},
      [pa, pb](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (pa->requires_grad) {
          auto& g = c.adj(pa.get());
          for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * pb->data[i];
        }
        if (pb->requires_grad) {
          auto& g = c.adj(pb.get());
          for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * pa->data[i];
        }
      });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;

  auto pa = detail_impl(a);
  return detail_make_op_result(
      a.shape(), std::move(out), {a},
      [pa, factor](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (!pa->requires_grad) return;
        auto& g = c.adj(pa.get());
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * factor;
      });
}

// Elementwise max(0, x). Subgradient at 0 is 0.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;

  auto pa = detail_impl(a);
  return detail_make_op_result(
      a.shape(), std::move(out), {a},
      [pa](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (!pa->requires_grad) return;
        auto& g = c.adj(pa.get());
        for (std::size_t i = 0; i < d.size(); ++i)
          if (pa->data[i] > 0.0) g[i] += d[i];
      });
}

// Row-wise softmax, stabilized by row-max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
  if (a.cols() < 1) {
    throw contract_error("softmax_rows: empty rows in " + a.shape().str());
  }
  for (double x : a.data()) {
    if (!std::isfinite(x)) {
      throw numeric_error("softmax_rows: non-finite input entry");
    }
  }
  const std::size_t n = a.rows(), q = a.cols();
  std::vector<double> out(n * q);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = a.data().data() + i * q;
    double mx = row[0];
    for (std::size_t j = 1; j < q; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      out[i * q + j] = std::exp(row[j] - mx);
      sum += out[i * q + j];
    }
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] /= sum;
  }

  auto pa = detail_impl(a);
  std::vector<double> y = out;  // backward needs the output values
  return detail_make_op_result(
      Shape{n, q}, std::move(out), {a},
      [pa, y = std::move(y), n, q](const std::vector<double>& d,
                                   detail::BackwardCtx& c) {
        if (!pa->requires_grad) return;
        auto& g = c.adj(pa.get());
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < q; ++j) dot += d[i * q + j] * y[i * q + j];
          for (std::size_t j = 0; j < q; ++j)
            g[i * q + j] += y[i * q + j] * (d[i * q + j] - dot);
        }
      });
}

// Column-wise concatenation; gradient splits back by column block.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw contract_error("concat_cols: empty part list");
  }
  if (parts.size() == 1) return parts[0];
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != n) {
      throw shape_error("concat_cols: row counts differ: " +
                        parts[0].shape().str() + " vs " + t.shape().str());
    }
    total += t.cols();
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const std::size_t w = t.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * total + off + j] = t.at(i, j);
    off += w;
  }

  std::vector<std::shared_ptr<detail::TensorData>> ps;
  ps.reserve(parts.size());
  for (const Tensor& t : parts) ps.push_back(detail_impl(t));
  return detail_make_op_result(
      Shape{n, total}, std::move(out), parts,
      [ps, n, total](const std::vector<double>& d, detail::BackwardCtx& c) {
        std::size_t off = 0;
        for (const auto& p : ps) {
          const std::size_t w = p->shape.cols;
          if (p->requires_grad) {
            auto& g = c.adj(p.get());
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < w; ++j)
                g[i * w + j] += d[i * total + off + j];
          }
          off += w;
        }
      });
}

// Gathers rows of a table; duplicate ids accumulate their gradients.
inline Tensor select_rows(const Tensor& table, const std::vector<int>& ids) {
  const std::size_t d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const int id = ids[k];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw contract_error("select_rows: id " + std::to_string(id) +
                           " outside table " + table.shape().str());
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(id) * d, d,
                out.data() + k * d);
  }

  auto pt = detail_impl(table);
  return detail_make_op_result(
      Shape{ids.size(), d}, std::move(out), {table},
      [pt, ids, d](const std::vector<double>& g, detail::BackwardCtx& c) {
        if (!pt->requires_grad) return;
        auto& gt = c.adj(pt.get());
        for (std::size_t k = 0; k < ids.size(); ++k)
          for (std::size_t j = 0; j < d; ++j)
            gt[static_cast<std::size_t>(ids[k]) * d + j] += g[k * d + j];
      });
}

// Coordinate-wise max over a set of rows; result is 1 x cols. Ties route the
// gradient to the first maximal row.
inline Tensor max_over_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
  if (rows.empty()) {
    throw contract_error("max_over_rows: empty row set");
  }
  const std::size_t d = m.cols();
  for (std::size_t r : rows) {
    if (r >= m.rows()) {
      throw contract_error("max_over_rows: row " + std::to_string(r) +
                           " outside " + m.shape().str());
    }
  }
  std::vector<double> out(d);
  std::vector<std::size_t> argmax(d);
  for (std::size_t j = 0; j < d; ++j) {
    double best = m.at(rows[0], j);
    std::size_t who = rows[0];
    for (std::size_t k = 1; k < rows.size(); ++k) {
      const double v = m.at(rows[k], j);
      if (v > best) {
        best = v;
        who = rows[k];
      }
    }
    out[j] = best;
    argmax[j] = who;
  }

  auto pm = detail_impl(m);
  return detail_make_op_result(
      Shape{1, d}, std::move(out), {m},
      [pm, argmax = std::move(argmax), d](const std::vector<double>& g,
                                          detail::BackwardCtx& c) {
        if (!pm->requires_grad) return;
        auto& gm = c.adj(pm.get());
        for (std::size_t j = 0; j < d; ++j) gm[argmax[j] * d + j] += g[j];
      });
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;

  auto pa = detail_impl(a);
  return detail_make_op_result(
      Shape{1, 1}, {s}, {a},
      [pa](const std::vector<double>& d, detail::BackwardCtx& c) {
        if (!pa->requires_grad) return;
        auto& g = c.adj(pa.get());
        for (double& x : g) x += d[0];
      });
}

// Inverted dropout: kept entries are scaled by 1/(1-p) so the expectation is
// unchanged. p = 0 returns the input as-is.
inline Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw contract_error("dropout: p must be in [0, 1), got " +
                         std::to_string(p));
  }
  if (p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * mask[i];

  auto pa = detail_impl(a);
  return detail_make_op_result(
      a.shape(), std::move(out), {a},
      [pa, mask = std::move(mask)](const std::vector<double>& d,
                                   detail::BackwardCtx& c) {
        if (!pa->requires_grad) return;
        auto& g = c.adj(pa.get());
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * mask[i];
      });
}

// Negative log-likelihood of softmax(logits) at the gold class, fused with
// log-sum-exp for stability. logits is 1 x C.
inline Tensor cross_entropy_logits(const Tensor& logits, int gold) {
  if (logits.rows() != 1 || logits.cols() < 2) {
    throw contract_error("cross_entropy: logits must be 1xC with C >= 2, got " +
                         logits.shape().str());
  }
  const std::size_t c = logits.cols();
  if (gold < 0 || static_cast<std::size_t>(gold) >= c) {
    throw contract_error("cross_entropy: gold label " + std::to_string(gold) +
                         " outside [0, " + std::to_string(c) + ")");
  }
  const double* z = logits.data().data();
  double mx = z[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
  double sum = 0.0;
  std::vector<double> probs(c);
  for (std::size_t j = 0; j < c; ++j) {
    probs[j] = std::exp(z[j] - mx);
    sum += probs[j];
  }
  for (std::size_t j = 0; j < c; ++j) probs[j] /= sum;
  const double loss = std::log(sum) + mx - z[gold];

  auto pl = detail_impl(logits);
  return detail_make_op_result(
      Shape{1, 1}, {loss}, {logits},
      [pl, probs = std::move(probs), gold](const std::vector<double>& d,
                                           detail::BackwardCtx& c) {
        if (!pl->requires_grad) return;
        auto& g = c.adj(pl.get());
        for (std::size_t j = 0; j < probs.size(); ++j) {
          g[j] += d[0] * (probs[j] - (static_cast<int>(j) == gold ? 1.0 : 0.0));
        }
      });
}

inline void backward(const Tensor& loss) { loss.backward(); }

}  // namespace aggcn
