#include "facecond/numerics/graph.hpp"

#include <algorithm>
#include <cmath>

#include "facecond/numerics/kernels.hpp"

namespace facecond {

namespace {

template <class T>
void require_matrix(const BasicTensor<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <class T>
void require_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

template <class T>
void require_row(const BasicTensor<T>& x, const BasicTensor<T>& row, const char* op) {
  require_matrix(x, op);
  if (row.rank() != 2 || row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": row " + shape_str(row.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

template <class T>
Var Graph<T>::push(TensorT value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), TensorT{}, requires_grad});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
typename Graph<T>::TensorT& Graph<T>::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <class T>
typename Graph<T>::TensorT Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return TensorT(n.value.shape());
  return n.grad;
}

template <class T>
bool Graph<T>::any_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

template <class T>
void Graph<T>::backward(Var out) {
  const TensorT& v = value(out);
  if (v.size() != 1) throw DimensionError("backward: output must be a scalar, got " + shape_str(v.shape()));
  for (Node& n : nodes_) n.grad = TensorT{};
  grad_ref(out)[0] = T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

template <class T>
Var Graph<T>::matmul(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  TensorT out = facecond::matmul(av, bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o, m, k, n] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) {
        gemm_nt(go.data(), nodes_[b.id].value.data(), grad_ref(a).data(), m, n, k, true);
      }
      if (nodes_[b.id].requires_grad) {
        gemm_tn(nodes_[a.id].value.data(), go.data(), grad_ref(b).data(), k, m, n, true);
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::matmul_nt(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  TensorT out(Shape{m, n});
  gemm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o, m, k, n] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      // out = a b^T: da = go b, db = go^T a
      if (nodes_[a.id].requires_grad) gemm_nn(go.data(), nodes_[b.id].value.data(), grad_ref(a).data(), m, n, k, true);
      if (nodes_[b.id].requires_grad) gemm_tn(go.data(), nodes_[a.id].value.data(), grad_ref(b).data(), n, m, k, true);
    });
  }
  return o;
}

template <class T>
Var Graph<T>::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  TensorT out = value(a);
  const TensorT& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o] {
      if (nodes_[o.id].grad.empty()) return;
      for (Var in : {a, b}) {
        if (!nodes_[in.id].requires_grad) continue;
        TensorT& g = grad_ref(in);
        const TensorT& go = nodes_[o.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::sub(Var a, Var b) {
  return axpy(a, b, T(-1));
}

template <class T>
Var Graph<T>::axpy(Var a, Var b, T alpha) {
  require_same(value(a), value(b), "axpy");
  TensorT out = value(a);
  const TensorT& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * bv[i];
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o, alpha] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) {
        TensorT& g = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
      if (nodes_[b.id].requires_grad) {
        TensorT& g = grad_ref(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * go[i];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::mul(Var a, Var b) {
  require_same(value(a), value(b), "mul");
  TensorT out = value(a);
  const TensorT& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) {
        TensorT& g = grad_ref(a);
        const TensorT& bv = nodes_[b.id].value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bv[i];
      }
      if (nodes_[b.id].requires_grad) {
        TensorT& g = grad_ref(b);
        const TensorT& av = nodes_[a.id].value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * av[i];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::add_row(Var x, Var row) {
  require_row(value(x), value(row), "add_row");
  TensorT out = value(x);
  const TensorT& rv = value(row);
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += rv[j];
  const bool rg = any_grad({x, row});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, row, o, n] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      if (nodes_[x.id].requires_grad) {
        TensorT& g = grad_ref(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
      if (nodes_[row.id].requires_grad) {
        TensorT& g = grad_ref(row);
        const std::size_t rows = go.size() / n;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::mul_row(Var x, Var row) {
  require_row(value(x), value(row), "mul_row");
  TensorT out = value(x);
  const TensorT& rv = value(row);
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] *= rv[j];
  const bool rg = any_grad({x, row});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, row, o, n] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const TensorT& xv = nodes_[x.id].value;
      const TensorT& rv = nodes_[row.id].value;
      const std::size_t rows = go.size() / n;
      if (nodes_[x.id].requires_grad) {
        TensorT& g = grad_ref(x);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[r * n + j] += go[r * n + j] * rv[j];
      }
      if (nodes_[row.id].requires_grad) {
        TensorT& g = grad_ref(row);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j] * xv[r * n + j];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::scale(Var x, T s) {
  TensorT out = value(x);
  for (T& v : out.flat()) v *= s;
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o, s] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * go[i];
    });
  }
  return o;
}

template <class T>
Var Graph<T>::add_scalar(Var x, T s) {
  TensorT out = value(x);
  for (T& v : out.flat()) v += s;
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    });
  }
  return o;
}

template <class T>
Var Graph<T>::layer_norm(Var x, T eps) {
  const TensorT& xv = value(x);
  require_matrix(xv, "layer_norm");
  const std::size_t rows = xv.rows(), d = xv.cols();
  TensorT out = facecond::layer_norm(xv, eps);
  // Per-row inverse std, kept for the backward pass.
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[r * d + j];
    mean /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (xv[r * d + j] - mean) * (xv[r * d + j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
  }
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o, rows, d, inv = std::move(inv_std)] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const TensorT& y = nodes_[o.id].value;
      TensorT& g = grad_ref(x);
      for (std::size_t r = 0; r < rows; ++r) {
        double mg = 0.0, mgy = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          mg += go[r * d + j];
          mgy += static_cast<double>(go[r * d + j]) * y[r * d + j];
        }
        mg /= static_cast<double>(d);
        mgy /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          g[r * d + j] += static_cast<T>(inv[r] * (go[r * d + j] - mg - y[r * d + j] * mgy));
        }
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::modulate(Var x, Var mu, Var sigma) {
  const TensorT& xv = value(x);
  require_row(xv, value(mu), "modulate");
  require_row(xv, value(sigma), "modulate");
  const TensorT& mv = value(mu);
  const TensorT& sv = value(sigma);
  const std::size_t n = xv.cols();
  TensorT out(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] * (T(1) + sv[j]) + mv[j];
  const bool rg = any_grad({x, mu, sigma});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, mu, sigma, o, n] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const TensorT& xv = nodes_[x.id].value;
      const TensorT& sv = nodes_[sigma.id].value;
      const std::size_t rows = go.size() / n;
      if (nodes_[x.id].requires_grad) {
        TensorT& g = grad_ref(x);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[r * n + j] += go[r * n + j] * (T(1) + sv[j]);
      }
      if (nodes_[mu.id].requires_grad) {
        TensorT& g = grad_ref(mu);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j];
      }
      if (nodes_[sigma.id].requires_grad) {
        TensorT& g = grad_ref(sigma);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j] * xv[r * n + j];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::gated_residual(Var x, Var branch, Var gamma) {
  require_same(value(x), value(branch), "gated_residual");
  require_row(value(x), value(gamma), "gated_residual");
  const TensorT& bv = value(branch);
  const TensorT& gv = value(gamma);
  TensorT out = value(x);
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += gv[j] * bv[r * n + j];
  const bool rg = any_grad({x, branch, gamma});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, branch, gamma, o, n] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const std::size_t rows = go.size() / n;
      if (nodes_[x.id].requires_grad) {
        TensorT& g = grad_ref(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
      if (nodes_[branch.id].requires_grad) {
        TensorT& g = grad_ref(branch);
        const TensorT& gv = nodes_[gamma.id].value;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[r * n + j] += go[r * n + j] * gv[j];
      }
      if (nodes_[gamma.id].requires_grad) {
        TensorT& g = grad_ref(gamma);
        const TensorT& bv = nodes_[branch.id].value;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j] * bv[r * n + j];
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::softmax_rows(Var x) {
  TensorT out = facecond::softmax_rows(value(x));
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const TensorT& y = nodes_[o.id].value;
      TensorT& g = grad_ref(x);
      const std::size_t n = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(go[r * n + j]) * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          g[r * n + j] += static_cast<T>(y[r * n + j] * (go[r * n + j] - dot));
        }
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::gelu(Var x) {
  TensorT out = value(x);
  for (T& v : out.flat()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
  }
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const TensorT& xv = nodes_[x.id].value;
      TensorT& g = grad_ref(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        g[i] += static_cast<T>(go[i] * d);
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::silu(Var x) {
  TensorT out = value(x);
  for (T& v : out.flat()) v = static_cast<T>(v / (1.0 + std::exp(-static_cast<double>(v))));
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o] {
      if (nodes_[o.id].grad.empty()) return;
      const TensorT& go = nodes_[o.id].grad;
      const TensorT& xv = nodes_[x.id].value;
      TensorT& g = grad_ref(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xv[i])));
        g[i] += static_cast<T>(go[i] * s * (1.0 + xv[i] * (1.0 - s)));
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = value(parts[0]).cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const TensorT& v = value(p);
    require_matrix(v, "concat_rows");
    if (v.cols() != n) throw DimensionError("concat_rows: width mismatch " + shape_str(v.shape()));
    rows += v.rows();
    rg = rg || requires_grad(p);
  }
  TensorT out(Shape{rows, n});
  std::size_t off = 0;
  for (Var p : parts) {
    const TensorT& v = value(p);
    std::copy(v.data(), v.data() + v.size(), out.data() + off);
    off += v.size();
  }
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, o, ps = std::vector<Var>(parts.begin(), parts.end())] {
      if (nodes_[o.id].grad.empty()) return;
      std::size_t off = 0;
      for (Var p : ps) {
        const std::size_t len = nodes_[p.id].value.size();
        if (nodes_[p.id].requires_grad) {
          TensorT& g = grad_ref(p);
          const TensorT& go = nodes_[o.id].grad;
          for (std::size_t i = 0; i < len; ++i) g[i] += go[off + i];
        }
        off += len;
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::slice_rows(Var x, std::size_t begin, std::size_t count) {
  const TensorT& xv = value(x);
  require_matrix(xv, "slice_rows");
  if (count == 0 || begin + count > xv.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.cols();
  TensorT out(Shape{count, n});
  std::copy(xv.data() + begin * n, xv.data() + (begin + count) * n, out.data());
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o, begin, count, n] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      for (std::size_t i = 0; i < count * n; ++i) g[begin * n + i] += go[i];
    });
  }
  return o;
}

template <class T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    const TensorT& v = value(p);
    require_matrix(v, "concat_cols");
    if (v.rows() != rows) throw DimensionError("concat_cols: row mismatch " + shape_str(v.shape()));
    cols += v.cols();
    rg = rg || requires_grad(p);
  }
  TensorT out(Shape{rows, cols});
  std::size_t c0 = 0;
  for (Var p : parts) {
    const TensorT& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < v.cols(); ++j) out[r * cols + c0 + j] = v[r * v.cols() + j];
    c0 += v.cols();
  }
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, o, rows, cols, ps = std::vector<Var>(parts.begin(), parts.end())] {
      if (nodes_[o.id].grad.empty()) return;
      std::size_t c0 = 0;
      for (Var p : ps) {
        const std::size_t w = nodes_[p.id].value.cols();
        if (nodes_[p.id].requires_grad) {
          TensorT& g = grad_ref(p);
          const TensorT& go = nodes_[o.id].grad;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += go[r * cols + c0 + j];
        }
        c0 += w;
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const TensorT& xv = value(x);
  require_matrix(xv, "slice_cols");
  if (count == 0 || begin + count > xv.cols()) {
    throw DimensionError("slice_cols: range out of " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.rows(), n = xv.cols();
  TensorT out(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = xv[r * n + begin + j];
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o, begin, count, rows, n] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) g[r * n + begin + j] += go[r * count + j];
    });
  }
  return o;
}

template <class T>
Var Graph<T>::mean_rows(Var x) {
  const TensorT& xv = value(x);
  require_matrix(xv, "mean_rows");
  const std::size_t rows = xv.rows(), n = xv.cols();
  TensorT out(Shape{1, n});
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += xv[r * n + j];
    out[j] = static_cast<T>(s / static_cast<double>(rows));
  }
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o, rows, n] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      const T inv = T(1) / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += go[j] * inv;
    });
  }
  return o;
}

template <class T>
Var Graph<T>::reshape(Var x, std::size_t rows, std::size_t cols) {
  TensorT out = value(x).reshaped(Shape{rows, cols});
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    });
  }
  return o;
}

template <class T>
Var Graph<T>::gather(Var x, std::vector<std::uint32_t> index, std::size_t rows, std::size_t cols) {
  const TensorT& xv = value(x);
  if (index.size() != rows * cols) throw DimensionError("gather: index length does not match output shape");
  TensorT out(Shape{rows, cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw DimensionError("gather: index out of range");
    out[i] = xv[index[i]];
  }
  const bool rg = requires_grad(x);
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, x, o, idx = std::move(index)] {
      if (nodes_[o.id].grad.empty()) return;
      TensorT& g = grad_ref(x);
      const TensorT& go = nodes_[o.id].grad;
      for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += go[i];
    });
  }
  return o;
}

template <class T>
Var Graph<T>::mean_squared_error(Var a, Var b) {
  const TensorT& av = value(a);
  return masked_mse(a, b, std::vector<T>(av.size(), T(1)));
}

template <class T>
Var Graph<T>::masked_mse(Var a, Var b, std::vector<T> mask) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  require_same(av, bv, "masked_mse");
  if (mask.size() != av.size()) throw DimensionError("masked_mse: mask length mismatch");
  double count = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (mask[i] == T(0)) continue;
    const double d = static_cast<double>(av[i]) - bv[i];
    sum += d * d;
    count += 1.0;
  }
  if (count == 0.0) throw DegenerateInputError("masked_mse: empty mask");
  TensorT out(Shape{1, 1}, static_cast<T>(sum / count));
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o, count, m = std::move(mask)] {
      if (nodes_[o.id].grad.empty()) return;
      const double go = nodes_[o.id].grad[0];
      const TensorT& av = nodes_[a.id].value;
      const TensorT& bv = nodes_[b.id].value;
      const double c = 2.0 * go / count;
      if (nodes_[a.id].requires_grad) {
        TensorT& g = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (m[i] != T(0)) g[i] += static_cast<T>(c * (av[i] - bv[i]));
      }
      if (nodes_[b.id].requires_grad) {
        TensorT& g = grad_ref(b);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (m[i] != T(0)) g[i] -= static_cast<T>(c * (av[i] - bv[i]));
      }
    });
  }
  return o;
}

template <class T>
Var Graph<T>::cosine(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  if (av.size() != bv.size()) throw DimensionError("cosine: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += static_cast<double>(av[i]) * bv[i];
    na += static_cast<double>(av[i]) * av[i];
    nb += static_cast<double>(bv[i]) * bv[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine: zero-norm input");
  const double nra = std::sqrt(na), nrb = std::sqrt(nb);
  const double c = dot / (nra * nrb);
  TensorT out(Shape{1, 1}, static_cast<T>(c));
  const bool rg = any_grad({a, b});
  Var o = push(std::move(out), rg);
  if (rg) {
    record([this, a, b, o, c, na, nb, nra, nrb] {
      if (nodes_[o.id].grad.empty()) return;
      const double go = nodes_[o.id].grad[0];
      const TensorT& av = nodes_[a.id].value;
      const TensorT& bv = nodes_[b.id].value;
      if (nodes_[a.id].requires_grad) {
        TensorT& g = grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += static_cast<T>(go * (bv[i] / (nra * nrb) - c * av[i] / na));
      }
      if (nodes_[b.id].requires_grad) {
        TensorT& g = grad_ref(b);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += static_cast<T>(go * (av[i] / (nra * nrb) - c * bv[i] / nb));
      }
    });
  }
  return o;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace facecond
