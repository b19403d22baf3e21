#pragma once

// Dense row-major double-precision matrices with hand-written forward/backward
// pairs. There is no tape: callers keep whatever forward values a backward
// needs and call the matching *_backward function themselves.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "multiassign/errors.hpp"

namespace multiassign {

class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2D identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Tensor2D& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  void fill(double v);

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A trainable parameter: value plus an additively accumulated gradient.
struct GradSlot {
  Tensor2D value;
  Tensor2D grad;

  GradSlot() = default;
  explicit GradSlot(Tensor2D v);

  void zero_grad() { grad.fill(0.0); }
  void accumulate(const Tensor2D& g);
};

struct MatmulGrads {
  Tensor2D d_a;
  Tensor2D d_b;
};

struct BiasGrads {
  Tensor2D d_x;
  Tensor2D d_bias;
};

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
// aᵀ·b and a·bᵀ without materializing the transpose.
Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b);
Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b);
MatmulGrads matmul_backward(const Tensor2D& a, const Tensor2D& b, const Tensor2D& d_out);

Tensor2D transpose(const Tensor2D& a);
Tensor2D add(const Tensor2D& a, const Tensor2D& b);
Tensor2D scale(const Tensor2D& a, double s);
void add_inplace(Tensor2D& acc, const Tensor2D& b);
void axpy_inplace(Tensor2D& acc, double alpha, const Tensor2D& b);

Tensor2D add_bias(const Tensor2D& x, const Tensor2D& bias);
BiasGrads add_bias_backward(const Tensor2D& d_out);

Tensor2D relu(const Tensor2D& x);
Tensor2D relu_backward(const Tensor2D& x, const Tensor2D& d_out);

Tensor2D sigmoid(const Tensor2D& x);
// Takes the forward *output* y = sigmoid(x).
Tensor2D sigmoid_backward(const Tensor2D& y, const Tensor2D& d_out);

Tensor2D softmax_rows(const Tensor2D& x);
// Takes the forward *output* y = softmax_rows(x).
Tensor2D softmax_rows_backward(const Tensor2D& y, const Tensor2D& d_out);

double sum(const Tensor2D& x);
double dot(const Tensor2D& a, const Tensor2D& b);
double max_abs(const Tensor2D& x);
double max_abs_diff(const Tensor2D& a, const Tensor2D& b);
bool all_finite(const Tensor2D& x);

using ScalarFn = std::function<double(const Tensor2D&)>;

// Central differences over every entry of x; returns the tensor-wise relative
// error max|fd - analytic| / max(1e-12, max|fd|, max|analytic|). Entries whose
// true gradient is ~0 would otherwise report pure round-off as O(1) error.
double finite_diff_check(const ScalarFn& f, const Tensor2D& x, const Tensor2D& analytic,
                         double h = 1e-5);

}  // namespace multiassign
