// evmscan: sequence-model vulnerability scanning for EVM bytecode
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "evmscan/errors.hpp"

namespace evmscan {

// Dense row-major tensor of 64-bit floats. Everything in the training stack
// is fp64 so gradient checking stays meaningful.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape)
      : shape_(std::move(shape)), values_(count(shape_), 0.0) {}

  Tensor(std::vector<size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != count(shape_))
      throw ShapeError("tensor value count " + std::to_string(values_.size()) +
                       " does not match shape product " +
                       std::to_string(count(shape_)));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](size_t i) { return values_[i]; }
  double operator[](size_t i) const { return values_[i]; }

  // Rank-2 accessors.
  size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  size_t cols() const {
    return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0);
  }
  double& at(size_t r, size_t c) { return values_[r * cols() + c]; }
  double at(size_t r, size_t c) const { return values_[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<size_t> shape_;
  std::vector<double> values_;
};

namespace detail {

// Kernels shared by forward and backward passes. C = A[m x k] * B[k x n].
inline void matmul_nn(const double* a, const double* b, double* c, size_t m,
                      size_t k, size_t n, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      double aip = ai[p];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C = A[m x k] * B^T where B is [n x k].
inline void matmul_nt(const double* a, const double* b, double* c, size_t m,
                      size_t k, size_t n, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      if (accumulate)
        ci[j] += acc;
      else
        ci[j] = acc;
    }
  }
}

// C = A^T * G where A is [m x k] and G is [m x n]; C is [k x n].
inline void matmul_tn(const double* a, const double* g, double* c, size_t m,
                      size_t k, size_t n, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < k * n; ++i) c[i] = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (size_t p = 0; p < k; ++p) {
      double aip = ai[p];
      double* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

}  // namespace detail

}  // namespace evmscan
