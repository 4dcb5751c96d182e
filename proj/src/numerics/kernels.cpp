#include "facecond/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace facecond {

template <class T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* __restrict brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  // Transpose b once so the inner loop stays contiguous.
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  BasicTensor<T> out(Shape{a.rows(), b.cols()});
  gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols(), false);
  return out;
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
  BasicTensor<T> out(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("softmax_rows: expected a matrix, got " + shape_str(x.shape()));
  BasicTensor<T> out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return out;
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d < 2) throw DimensionError("layer_norm: width must be at least 2, got " + shape_str(x.shape()));
  BasicTensor<T> out(x.shape());
  const std::size_t tokens = x.size() / d;
  for (std::size_t r = 0; r < tokens; ++r) {
    const T* in = x.data() + r * d;
    T* o = out.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (std::size_t j = 0; j < d; ++j) o[j] = static_cast<T>((in[j] - mean) * inv);
  }
  return out;
}

template <class T>
double cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm input");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

template <class T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                                double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  BasicTensor<T> grad(x.shape());
  BasicTensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(orig + h);
    const double up = f(probe);
    probe[i] = static_cast<T>(orig - h);
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    grad[i] = static_cast<T>((up - down) / (2.0 * h));
  }
  return grad;
}

template <class T>
double relative_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    diff += d * d;
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

template <class T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

#define FACECOND_INSTANTIATE(T)                                                                             \
  template void gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);           \
  template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);           \
  template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);           \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                                             \
  template BasicTensor<T> softmax_rows<T>(const BasicTensor<T>&);                                          \
  template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, T);                                         \
  template double cosine_similarity<T>(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> finite_diff_grad<T>(const std::function<double(const BasicTensor<T>&)>&,         \
                                              const BasicTensor<T>&, double);                              \
  template double relative_error<T>(const BasicTensor<T>&, const BasicTensor<T>&, double);                 \
  template double max_abs_diff<T>(const BasicTensor<T>&, const BasicTensor<T>&);

FACECOND_INSTANTIATE(float)
FACECOND_INSTANTIATE(double)

#undef FACECOND_INSTANTIATE

}  // namespace facecond
