#pragma once

#include "hmrn/params.hpp"

#include <map>
#include <random>

namespace hmrn::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = d(rng);
  return m;
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

inline Vector random_unit(Index n, std::mt19937_64& rng) {
  Vector v = random_vector(n, rng);
  return v / v.norm();
}

// Relative error between two gradients, floored so that arrays whose true
// gradient vanishes compare by absolute difference.
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-7) {
  const double diff = (a - b).norm();
  const double scale = std::max({a.norm(), b.norm(), floor});
  return diff / scale;
}

// Central finite differences of `loss` w.r.t. every entry of every named
// array in `params`. Returns the per-array relative error against `analytic`.
template <typename Loss>
std::map<std::string, double> finite_difference_errors(ModelParams& params, const ModelParams& analytic, Loss&& loss,
                                                       double step = 1e-5) {
  std::map<std::string, Matrix> numeric;
  for_each_named(params, [&](const std::string& name, Matrix& m) {
    Matrix g(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        const double orig = m(i, j);
        m(i, j) = orig + step;
        const double up = loss();
        m(i, j) = orig - step;
        const double down = loss();
        m(i, j) = orig;
        g(i, j) = (up - down) / (2 * step);
      }
    numeric.emplace(name, std::move(g));
  });
  std::map<std::string, double> errors;
  for_each_named(analytic, [&](const std::string& name, const Matrix& m) {
    errors[name] = relative_error(m, numeric.at(name));
  });
  return errors;
}

}  // namespace hmrn::testing
