#pragma once

#include <functional>

#include "facecond/numerics/tensor.hpp"

namespace facecond {

// Low-level GEMM variants on raw row-major buffers. Loop order is fixed
// (i, p, j) so results are reproducible run to run. When accumulate is
// false the output is overwritten.
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[m x n] (+)= a[k x m]^T * b[k x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// Row-wise softmax with max subtraction.
template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

// Normalizes the last axis to zero mean / unit variance. No affine part;
// scale and shift come from modulation factors.
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, T eps = T(1e-6));

// dot(a,b) / (|a| |b|) over the flattened tensors. Throws
// DegenerateInputError on a zero-norm input.
template <class T>
double cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Central differences, one coordinate at a time. f is evaluated 2 * numel(x)
// times; a non-finite evaluation raises NumericError.
template <class T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f,
                                const BasicTensor<T>& x, double h);

// |a - b| / max(|a|, |b|, floor) over flattened tensors.
template <class T>
double relative_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double floor = 1e-12);

template <class T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace facecond
