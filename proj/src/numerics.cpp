#include "multiassign/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace multiassign {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor2D& a, const Tensor2D& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.shape_string() << " and " << b.shape_string();
  throw DimensionError(os.str());
}

void require_same_shape(const char* op, const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) shape_error(op, a, b);
}

}  // namespace

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream os;
    os << "Tensor2D: data length " << data_.size() << " does not match shape " << shape_string();
    throw DimensionError(os.str());
  }
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Tensor2D::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2D(r, c, std::move(data));
}

Tensor2D Tensor2D::identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor2D::shape_string() const {
  std::ostringstream os;
  os << "[" << rows_ << "x" << cols_ << "]";
  return os.str();
}

void Tensor2D::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

GradSlot::GradSlot(Tensor2D v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

void GradSlot::accumulate(const Tensor2D& g) {
  require_same_shape("GradSlot::accumulate", grad, g);
  add_inplace(grad, g);
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor2D out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  Tensor2D out(n, m);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a.row(p).data();
    const double* br = b.row(p).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  // Same summation order as a dot product per entry, but the inner loop runs
  // over contiguous output columns and vectorizes.
  return matmul(a, transpose(b));
}

MatmulGrads matmul_backward(const Tensor2D& a, const Tensor2D& b, const Tensor2D& d_out) {
  if (d_out.rows() != a.rows() || d_out.cols() != b.cols()) shape_error("matmul_backward", a, d_out);
  return {matmul_nt(d_out, b), matmul_tn(a, d_out)};
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D out = a;
  add_inplace(out, b);
  return out;
}

Tensor2D scale(const Tensor2D& a, double s) {
  Tensor2D out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

void add_inplace(Tensor2D& acc, const Tensor2D& b) {
  require_same_shape("add", acc, b);
  auto dst = acc.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void axpy_inplace(Tensor2D& acc, double alpha, const Tensor2D& b) {
  require_same_shape("axpy", acc, b);
  auto dst = acc.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

Tensor2D add_bias(const Tensor2D& x, const Tensor2D& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_error("add_bias", x, bias);
  Tensor2D out = x;
  const double* b = bias.row(0).data();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t j = 0; j < out.cols(); ++j) o[j] += b[j];
  }
  return out;
}

BiasGrads add_bias_backward(const Tensor2D& d_out) {
  Tensor2D d_bias(1, d_out.cols());
  for (std::size_t i = 0; i < d_out.rows(); ++i)
    for (std::size_t j = 0; j < d_out.cols(); ++j) d_bias(0, j) += d_out(i, j);
  return {d_out, std::move(d_bias)};
}

Tensor2D relu(const Tensor2D& x) {
  Tensor2D out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor2D relu_backward(const Tensor2D& x, const Tensor2D& d_out) {
  require_same_shape("relu_backward", x, d_out);
  Tensor2D dx = d_out;
  auto xs = x.data();
  auto g = dx.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(xs[i] > 0.0)) g[i] = 0.0;
  return dx;
}

Tensor2D sigmoid(const Tensor2D& x) {
  Tensor2D out = x;
  for (double& v : out.data()) {
    // Split by sign so exp never overflows.
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return out;
}

Tensor2D sigmoid_backward(const Tensor2D& y, const Tensor2D& d_out) {
  require_same_shape("sigmoid_backward", y, d_out);
  Tensor2D dx = d_out;
  auto ys = y.data();
  auto g = dx.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= ys[i] * (1.0 - ys[i]);
  return dx;
}

Tensor2D softmax_rows(const Tensor2D& x) {
  if (x.cols() == 0) throw DimensionError("softmax_rows: rows must be nonempty, got " + x.shape_string());
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

Tensor2D softmax_rows_backward(const Tensor2D& y, const Tensor2D& d_out) {
  require_same_shape("softmax_rows_backward", y, d_out);
  Tensor2D dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto gr = d_out.row(i);
    double inner = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) inner += yr[j] * gr[j];
    auto o = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) o[j] = yr[j] * (gr[j] - inner);
  }
  return dx;
}

double sum(const Tensor2D& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

double dot(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape("dot", a, b);
  double s = 0.0;
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < as.size(); ++i) s += as[i] * bs[i];
  return s;
}

double max_abs(const Tensor2D& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape("max_abs_diff", a, b);
  double m = 0.0;
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < as.size(); ++i) m = std::max(m, std::abs(as[i] - bs[i]));
  return m;
}

bool all_finite(const Tensor2D& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](double v) { return std::isfinite(v); });
}

double finite_diff_check(const ScalarFn& f, const Tensor2D& x, const Tensor2D& analytic, double h) {
  if (!(h > 0.0)) throw VerificationError("finite_diff_check: step must be positive");
  require_same_shape("finite_diff_check", x, analytic);
  Tensor2D probe = x;
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = f(probe);
    probe.data()[i] = orig - h;
    const double fm = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw VerificationError("finite_diff_check: non-finite function value at entry " +
                              std::to_string(i));
    }
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic.data()[i];
    diff = std::max(diff, std::abs(fd - an));
    scale = std::max({scale, std::abs(fd), std::abs(an)});
  }
  return diff / std::max(1e-12, scale);
}

}  // namespace multiassign
