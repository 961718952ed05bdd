#include "hmrn/scalar_matching.hpp"
#include "reference_pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace hmrn;
namespace ref = hmrn::reference;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

double cos1(std::initializer_list<double> v, std::initializer_list<double> t, double eps = 0.0) {
  return cosine_matrix(mat({v}), mat({t}), eps).S(0, 0);
}

Matrix random_similarity(Index K, Index N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix S(K, N);
  for (Index i = 0; i < K; ++i)
    for (Index j = 0; j < N; ++j) S(i, j) = u(rng);
  return S;
}

Eigen::PermutationMatrix<Eigen::Dynamic> random_permutation(Index n, std::mt19937_64& rng) {
  Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
  p.setIdentity();
  std::shuffle(p.indices().data(), p.indices().data() + n, rng);
  return p;
}

}  // namespace

TEST(CosineMatrix, WorkedExamples) {
  EXPECT_NEAR(cos1({3, 4}, {3, 4}), 1.0, 1e-15);
  EXPECT_NEAR(cos1({1, 0}, {0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(cos1({1, 1}, {1, 0}), 1.0 / std::sqrt(2.0), 1e-12);
  // The training guard moves results by far less than any test tolerance.
  EXPECT_NEAR(cos1({1, 1}, {1, 0}, kNormEps), 1.0 / std::sqrt(2.0), 1e-7);
}

TEST(CosineMatrix, ZeroRowIsAnErrorOnlyWithoutTheGuard) {
  EXPECT_THROW(cos1({0, 0}, {1, 0}), Error);
  EXPECT_EQ(cos1({0, 0}, {1, 0}, kNormEps), 0.0);
  EXPECT_THROW(cosine_matrix(Matrix::Zero(2, 3), Matrix::Zero(2, 4)), Error);
}

TEST(CosineMatrix, BoundedAndInvariantToPositiveRowRescaling) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix V = hmrn::testing::random_matrix(4, 6, rng), T = hmrn::testing::random_matrix(3, 6, rng);
    const Matrix S = cosine_matrix(V, T, 0.0).S;
    EXPECT_LE(S.cwiseAbs().maxCoeff(), 1.0 + 1e-6);
    Vector sv(4), st(3);
    for (auto& x : sv) x = scale(rng);
    for (auto& x : st) x = scale(rng);
    const Matrix S2 = cosine_matrix(sv.asDiagonal() * V, st.asDiagonal() * T, 0.0).S;
    EXPECT_LT((S - S2).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LocalSimilarityIt, WorkedExamples) {
  const auto one = local_similarity_it(mat({{0.5}}), 5.0);
  EXPECT_DOUBLE_EQ(one.alpha(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(one.score, 0.5);

  const double e5 = std::exp(5.0);
  const auto two = local_similarity_it(mat({{1, 0}}), 5.0);
  EXPECT_NEAR(two.alpha(0, 0), e5 / (e5 + 1), 1e-14);
  EXPECT_NEAR(two.alpha(0, 1), 1 / (e5 + 1), 1e-14);
  EXPECT_NEAR(two.score, e5 / (e5 + 1), 1e-14);
  EXPECT_NEAR(two.score, 0.99331, 1e-5);

  EXPECT_EQ(local_similarity_it(mat({{-0.2, -0.9}, {-0.1, -1.0}}), 5.0).score, 0.0);
}

TEST(LocalSimilarityTi, WorkedExamples) {
  EXPECT_DOUBLE_EQ(local_similarity_ti(mat({{0.5}}), 15.0).score, 0.5);
  const double e15 = std::exp(15.0);
  const double s = local_similarity_ti(mat({{1}, {0}}), 15.0).score;
  EXPECT_NEAR(s, e15 / (e15 + 1), 1e-14);
  EXPECT_NEAR(s, 0.9999997, 1e-7);
}

TEST(LocalSimilarity, SymmetricInputGivesEqualDirections) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix A = random_similarity(4, 4, rng);
    const Matrix S = 0.5 * (A + A.transpose());
    EXPECT_NEAR(local_similarity_it(S, 7.0).score, local_similarity_ti(S, 7.0).score, 1e-14);
  }
}

TEST(LocalSimilarity, NonPositiveTemperatureIsAnError) {
  EXPECT_THROW(local_similarity_it(mat({{0.5}}), 0.0), Error);
  EXPECT_THROW(local_similarity_ti(mat({{0.5}}), -1.0), Error);
}

TEST(GlobalSimilarity, WorkedExamplesAndErrors) {
  Vector a(3), b(3);
  a << 0.6, 0.8, 0;
  b << 0, 0, 1;
  EXPECT_DOUBLE_EQ(global_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(global_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(global_similarity(a, -a), -1.0);
  EXPECT_THROW(global_similarity(2 * a, b), Error);
  EXPECT_THROW(global_similarity(a, Vector::Ones(2) / std::sqrt(2.0)), Error);
}

TEST(LocalSimilarity, BoundsPermutationInvarianceAndOracleOnRandomInputs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lam(0.5, 30.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Index K = 1 + static_cast<Index>(rng() % 5), N = 1 + static_cast<Index>(rng() % 4);
    const Index D = 1 + static_cast<Index>(rng() % 8);
    const Matrix V = hmrn::testing::random_matrix(K, D, rng), T = hmrn::testing::random_matrix(N, D, rng);
    const double l1 = lam(rng), l2 = lam(rng);
    const Matrix S = cosine_matrix(V, T).S;
    const double it = local_similarity_it(S, l1).score, ti = local_similarity_ti(S, l2).score;
    EXPECT_GE(it, 0.0);
    EXPECT_LE(it, 1.0);
    EXPECT_GE(ti, 0.0);
    EXPECT_LE(ti, 1.0);

    const auto Sr = ref::cosine(ref::to_mat(V), ref::to_mat(T), kNormEps);
    EXPECT_LE(ref::max_abs_diff(S, Sr), 1e-10);
    EXPECT_NEAR(it, ref::s_it(Sr, l1), 1e-10);
    EXPECT_NEAR(ti, ref::s_ti(Sr, l2), 1e-10);

    const auto pr = random_permutation(K, rng);
    const auto pc = random_permutation(N, rng);
    const Matrix Sp = pr * S * pc;
    EXPECT_NEAR(local_similarity_it(Sp, l1).score, it, 1e-12);
    EXPECT_NEAR(local_similarity_ti(Sp, l2).score, ti, 1e-12);
  }
}

// dS_IT/dS_ij = alpha_ij (1 + lambda (S_ij - r_i)) / K. It is never negative
// when lambda <= 1 (clipped entries lie in [0, 1]) or when S_ij is at least the
// row score r_i, e.g. the row maximum.
TEST(LocalSimilarityIt, RaisingAPositiveEntryNeverLowersTheScoreForLambdaAtMostOne) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Index K = 1 + static_cast<Index>(rng() % 5), N = 1 + static_cast<Index>(rng() % 4);
    const double lambda = 0.05 + 0.95 * u(rng);
    Matrix S = random_similarity(K, N, rng);
    const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(K));
    const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(N));
    S(i, j) = 0.01 + 0.9 * u(rng);
    const double before = local_similarity_it(S, lambda).score;
    S(i, j) += (1.0 - S(i, j)) * u(rng);
    EXPECT_GE(local_similarity_it(S, lambda).score, before - 1e-15);
  }
}

TEST(LocalSimilarityIt, RaisingTheRowMaximumNeverLowersTheScore) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Index K = 1 + static_cast<Index>(rng() % 5), N = 1 + static_cast<Index>(rng() % 4);
    Matrix S = random_similarity(K, N, rng);
    const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(K));
    Index j = 0;
    S.row(i).maxCoeff(&j);
    S(i, j) = std::max(S(i, j), 0.01);
    const double before = local_similarity_it(S, 5.0).score;
    S(i, j) += (1.0 - S(i, j)) * u(rng);
    EXPECT_GE(local_similarity_it(S, 5.0).score, before - 1e-15);
  }
}

// With a sharp temperature, raising a small entry moves attention mass off a
// larger one; the score can drop, so the unrestricted monotonicity claim is false.
TEST(LocalSimilarityIt, RaisingASmallEntryCanLowerTheScoreAtSharpTemperature) {
  Matrix S(1, 2);
  S << 0.9, 0.05;
  const double before = local_similarity_it(S, 5.0).score;
  S(0, 1) = 0.2;
  EXPECT_LT(local_similarity_it(S, 5.0).score, before);
}

TEST(LocalSimilarity, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix S = random_similarity(3, 4, rng);
    const auto it = local_similarity_it(S, 5.0);
    const auto ti = local_similarity_ti(S, 15.0);
    const Matrix g_it = local_similarity_it_backward(S, 5.0, it, 1.0);
    const Matrix g_ti = local_similarity_ti_backward(S, 15.0, ti, 1.0);
    Matrix n_it(3, 4), n_ti(3, 4);
    const double h = 1e-6;
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 4; ++j) {
        Matrix up = S, dn = S;
        up(i, j) += h;
        dn(i, j) -= h;
        n_it(i, j) = (local_similarity_it(up, 5.0).score - local_similarity_it(dn, 5.0).score) / (2 * h);
        n_ti(i, j) = (local_similarity_ti(up, 15.0).score - local_similarity_ti(dn, 15.0).score) / (2 * h);
      }
    EXPECT_LE(hmrn::testing::relative_error(g_it, n_it), 1e-5);
    EXPECT_LE(hmrn::testing::relative_error(g_ti, n_ti), 1e-5);
  }
}

TEST(CosineMatrix, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Matrix V = hmrn::testing::random_matrix(3, 5, rng), T = hmrn::testing::random_matrix(2, 5, rng);
  const Matrix W = hmrn::testing::random_matrix(3, 2, rng);
  const auto r = cosine_matrix(V, T);
  Matrix dV = Matrix::Zero(3, 5), dT = Matrix::Zero(2, 5);
  cosine_matrix_backward(r, W, dV, dT);
  auto f = [&](const Matrix& a, const Matrix& b) { return (cosine_matrix(a, b).S.array() * W.array()).sum(); };
  Matrix nV(3, 5), nT(2, 5);
  const double h = 1e-6;
  for (Index i = 0; i < V.size(); ++i) {
    Matrix up = V, dn = V;
    up.data()[i] += h;
    dn.data()[i] -= h;
    nV.data()[i] = (f(up, T) - f(dn, T)) / (2 * h);
  }
  for (Index i = 0; i < T.size(); ++i) {
    Matrix up = T, dn = T;
    up.data()[i] += h;
    dn.data()[i] -= h;
    nT.data()[i] = (f(V, up) - f(V, dn)) / (2 * h);
  }
  EXPECT_LE(hmrn::testing::relative_error(dV, nV), 1e-6);
  EXPECT_LE(hmrn::testing::relative_error(dT, nT), 1e-6);
}
