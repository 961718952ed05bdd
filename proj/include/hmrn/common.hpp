#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hmrn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

// Epsilon used by every guarded normalization during training and scoring.
// Passing eps = 0 selects the strict variants, which reject zero vectors.
inline constexpr double kNormEps = 1e-8;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// FNV-1a, 64 bit. Used for checkpoint and vocabulary fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double guarded_norm(const Eigen::Ref<const Vector>& x, double eps) {
  return std::sqrt(x.squaredNorm() + eps);
}

// In-place max-subtracted softmax.
inline void softmax_inplace(Eigen::Ref<Vector> v) {
  const double m = v.maxCoeff();
  v = (v.array() - m).exp().matrix();
  v /= v.sum();
}

inline Vector softmax(const Eigen::Ref<const Vector>& logits) {
  Vector out = logits;
  softmax_inplace(out);
  return out;
}

// Backward of softmax: given p = softmax(z) and dL/dp, returns dL/dz.
inline Vector softmax_backward(const Eigen::Ref<const Vector>& p,
                               const Eigen::Ref<const Vector>& dp) {
  const double inner = p.dot(dp);
  return (p.array() * (dp.array() - inner)).matrix();
}

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Row-wise guarded l2 normalization: y = x / (|x| + eps). Stores the
// per-row denominators |x| + eps in `norms`.
inline Matrix normalize_rows(const Matrix& x, double eps, Vector& norms) {
  norms.resize(x.rows());
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm() + eps;
    norms(i) = n;
    if (n > 0.0) {
      out.row(i) = x.row(i) / n;
    } else {
      out.row(i).setZero();
    }
  }
  return out;
}

// Backward of normalize_rows. `y` is the forward output and `eps` the guard
// used there: dx = (dy - (dy . y) x_hat) / n with x_hat = x / |x|.
inline Matrix normalize_rows_backward(const Matrix& y, const Vector& norms, const Matrix& dy, double eps) {
  Matrix dx(y.rows(), y.cols());
  for (Index i = 0; i < y.rows(); ++i) {
    const double n = norms(i);
    if (n <= 0.0) {
      dx.row(i).setZero();
      continue;
    }
    const double raw = n - eps;
    dx.row(i) = dy.row(i) / n;
    if (raw > 0.0) dx.row(i) -= y.row(i) * (y.row(i).dot(dy.row(i)) / raw);
  }
  return dx;
}

}  // namespace hmrn
