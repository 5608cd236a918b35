#include "dynxl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "dynxl/errors.hpp"

namespace dynxl {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw StateError("tensor dimension must be positive: " + shape_string(shape_));
  }
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw StateError("tensor dimension must be positive: " + shape_string(shape_));
  }
  if (values.size() != element_count(shape_)) {
    throw StateError("tensor of shape " + shape_string(shape_) + " given " +
                     std::to_string(values.size()) + " elements");
  }
  data_ = std::move(values);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
  return shape_[0];
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.back();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw StateError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

namespace kernels {

void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& out,
          bool accumulate) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb || out.rows() != m || out.cols() != n) {
    throw StateError("gemm: incompatible shapes " + shape_string(a.shape()) +
                     (trans_a ? "^T" : "") + " * " + shape_string(b.shape()) +
                     (trans_b ? "^T" : "") + " -> " + shape_string(out.shape()));
  }
  if (!accumulate) out.fill(0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();

  if (!trans_b) {
    // i-p-j order keeps the inner loop contiguous in both b and out.
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = po + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? pa[p * lda + i] : pa[i * lda + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * ldb;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    return;
  }
  // b transposed: each output element is a dot product of two rows.
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * ldb;
      double acc = 0.0;
      if (!trans_a) {
        const double* arow = pa + i * lda;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) acc += pa[p * lda + i] * brow[p];
      }
      orow[j] += acc;
    }
  }
}

}  // namespace kernels

}  // namespace dynxl
