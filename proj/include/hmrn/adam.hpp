#pragma once

#include "hmrn/params.hpp"

#include <vector>

namespace hmrn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const ModelParams& like, AdamOptions opts = {}) : opts_(opts) {
    for_each_named(like, [&](const std::string&, const Matrix& m) {
      m_.push_back(Matrix::Zero(m.rows(), m.cols()));
      v_.push_back(Matrix::Zero(m.rows(), m.cols()));
    });
  }

  void step(ModelParams& params, const ModelParams& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    std::vector<const Matrix*> g;
    for_each_named(grads, [&](const std::string&, const Matrix& m) { g.push_back(&m); });
    std::size_t i = 0;
    for_each_named(params, [&](const std::string&, Matrix& p) {
      const Matrix& gi = *g[i];
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * gi;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * gi.cwiseAbs2();
      p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
      ++i;
    });
  }

  std::size_t steps_taken() const { return t_; }

 private:
  AdamOptions opts_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

// Scales grads in place so their global l2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(ModelParams& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for_each_named(grads, [&](const std::string&, Matrix& m) { m *= s; });
  }
  return norm;
}

}  // namespace hmrn
