#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "amrpg/numerics.hpp"
#include "support/gradcheck.hpp"

using namespace amrpg;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.begin()->size());
  Matrix m(r, c);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("matrix_zero_norm examples") {
  CHECK(matrix_zero_norm(mat({{1, 0}, {0, 0}})) == 1);
  CHECK(matrix_zero_norm(Matrix::Zero(3, 3)) == 0);
  CHECK(matrix_zero_norm(mat({{1, 2}, {3, 0}, {0, 5}})) == 3);
}

TEST_CASE("matrix_zero_norm_tol uses the requested row norm") {
  const Matrix a = mat({{3, 4}, {0.1, 0.1}, {0, 0}});
  CHECK(matrix_zero_norm_tol(a, 4.9) == 1);
  CHECK(matrix_zero_norm_tol(a, 5.0) == 0);  // strict inequality
  CHECK(matrix_zero_norm_tol(a, 0.15) == 1);                // l2 of row 2 is 0.141
  CHECK(matrix_zero_norm_tol(a, 0.15, RowNorm::L1) == 2);   // l1 of row 2 is 0.2
  CHECK(matrix_zero_norm_tol(a, 0.0) == 2);
}

TEST_CASE("l21_norm examples") {
  CHECK(l21_norm(mat({{3, 4}, {0, 0}})) == doctest::Approx(5.0));
  CHECK(l21_norm(Matrix::Identity(2, 2)) == doctest::Approx(2.0));
  CHECK(l21_norm(mat({{-1}, {2}, {-3}})) == doctest::Approx(6.0));
}

TEST_CASE("l21_subgradient examples") {
  CHECK(l21_subgradient(mat({{3, 4}})).isApprox(mat({{0.6, 0.8}}), 1e-15));
  CHECK(l21_subgradient(mat({{0, 0}})) == mat({{0, 0}}));
  CHECK(l21_subgradient(mat({{5, 0}, {0, 0}})) == mat({{1, 0}, {0, 0}}));
  // Rows at the guard are treated as zero.
  CHECK(l21_subgradient(mat({{kZeroRowGuard, 0}})) == mat({{0, 0}}));
}

TEST_CASE("norm properties on random matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = static_cast<Eigen::Index>(1 + rng.uniform_index(6));
    const auto c = static_cast<Eigen::Index>(1 + rng.uniform_index(6));
    Matrix a = random_matrix(rng, r, c);
    // Zero some rows so the zero norm is informative.
    for (Eigen::Index i = 0; i < r; ++i)
      if (rng.uniform() < 0.3) a.row(i).setZero();
    const Matrix b = random_matrix(rng, r, c);
    const double s = rng.uniform(-3, 3);

    CHECK(matrix_zero_norm(a) <= static_cast<std::size_t>(r));
    if (matrix_zero_norm(a) > 0) {
      double min_pos = INFINITY;
      for (Eigen::Index i = 0; i < r; ++i)
        if (a.row(i).norm() > 0) min_pos = std::min(min_pos, a.row(i).norm());
      CHECK(static_cast<double>(matrix_zero_norm(a)) <= l21_norm(a) / min_pos + 1e-12);
    }
    CHECK(l21_norm(s * a) == doctest::Approx(std::abs(s) * l21_norm(a)).epsilon(1e-12));
    CHECK(l21_norm(a + b) <= l21_norm(a) + l21_norm(b) + 1e-12);
    CHECK((l21_subgradient(a).array().abs() <= 1.0 + 1e-15).all());
  }
}

TEST_CASE("l21_subgradient matches finite differences away from zero rows") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Matrix> p{random_matrix(rng, 1 + rng.uniform_index(5), 1 + rng.uniform_index(5))};
    for (Eigen::Index i = 0; i < p[0].rows(); ++i)
      if (p[0].row(i).norm() < 1e-3) p[0](i, 0) += 0.1;
    const auto fd = testing::numeric_gradient(p, [&] { return l21_norm(p[0]); }, 1e-5);
    const auto cmp = testing::compare_gradients({l21_subgradient(p[0])}, fd);
    CHECK_MESSAGE(cmp.max_rel_error < 1e-6, cmp.worst);
  }
}

TEST_CASE("Rng is reproducible and in range") {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    differs |= x != c.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const auto k = a.uniform_index(7);
    CHECK(k == b.uniform_index(7));
    c.uniform_index(7);
    CHECK(k < 7);
    CHECK(a.normal() == b.normal());
    c.normal();
  }
  CHECK(differs);
  CHECK_THROWS_AS(a.uniform_index(0), std::invalid_argument);
}

TEST_CASE("Rng stream is pinned") {
  // mt19937_64 with default seed 5489 has a standard-mandated 10000th output.
  Rng r(5489);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = r.next_u64();
  CHECK(x == 9981545732273789042ULL);
}

TEST_CASE("gaussian log-density") {
  CHECK(log_prob_gaussian(0, 0, 1) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  CHECK(log_prob_gaussian(0, 0, 1) == doctest::Approx(-0.9189).epsilon(1e-4));
  CHECK(log_prob_gaussian(1.5, 0.3, 2.0) ==
        doctest::Approx(-std::log(2.0) - 0.5 * std::log(2 * std::numbers::pi) - 0.5 * 0.36));
  for (double x : {-1.0, 0.2, 0.49, 0.51, 3.0}) CHECK(log_prob_gaussian(x, 0.5, 0.7) < log_prob_gaussian(0.5, 0.5, 0.7));
  CHECK_THROWS_AS(log_prob_gaussian(0, 0, 0), std::invalid_argument);
  Rng rng(1);
  CHECK_THROWS_AS(sample_gaussian(rng, 0, -1), std::invalid_argument);
}

TEST_CASE("gaussian sampler Monte Carlo") {
  Rng rng(2024);
  const int n = 100000;
  const double mean = 1.7, sd = 0.6;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_gaussian(rng, mean, sd);
    sum += x;
    sq += x * x;
  }
  const double m = sum / n;
  CHECK(std::abs(m - mean) < 4 * sd / std::sqrt(n));
  const double var = sq / n - m * m;
  CHECK(std::sqrt(var) == doctest::Approx(sd).epsilon(0.01));
}

TEST_CASE("categorical sampler") {
  Rng rng(5);
  const std::vector<double> one_hot{1, 0, 0, 0, 0};
  for (int i = 0; i < 1000; ++i) CHECK(sample_categorical(rng, one_hot) == 0);
  const std::vector<double> half{0.5, 0.5};
  CHECK(log_prob_categorical(half, 1) == doctest::Approx(std::log(0.5)));

  const std::vector<double> p{0.1, 0.25, 0.05, 0.4, 0.2};
  std::vector<int> counts(p.size(), 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[sample_categorical(rng, p)]++;
  for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(counts[k] / double(n) - p[k]) < 0.01);

  const std::vector<double> bad{0.5, 0.6};
  CHECK_THROWS_AS(sample_categorical(rng, bad), std::invalid_argument);
  CHECK_THROWS_AS(log_prob_categorical(bad, 0), std::invalid_argument);
  const std::vector<double> negative{1.5, -0.5};
  CHECK_THROWS_AS(sample_categorical(rng, negative), std::invalid_argument);
  CHECK_THROWS_AS(log_prob_categorical(half, 2), std::invalid_argument);
}

TEST_CASE("Adam first step") {
  Adam adam({0.1, 0.9, 0.999, 1e-8});
  std::vector<Matrix> p{Matrix::Zero(1, 1)};
  std::vector<Matrix> g{Matrix::Constant(1, 1, 1.0)};
  adam.step(p, g);
  // m_hat = 1, v_hat = 1, so the step is lr * 1 / (1 + eps).
  CHECK(p[0](0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(adam.step_count() == 1);
  adam.step(p, g);
  CHECK(adam.step_count() == 2);
}

TEST_CASE("Adam bounded first step, zero gradients and determinism") {
  Rng rng(3);
  std::vector<Matrix> p{random_matrix(rng, 3, 4), random_matrix(rng, 3, 1)};
  std::vector<Matrix> g{random_matrix(rng, 3, 4, 100.0), random_matrix(rng, 3, 1, 1e-3)};
  std::vector<Matrix> before = p;
  Adam a({0.05});
  a.step(p, g);
  for (std::size_t k = 0; k < p.size(); ++k) CHECK(((p[k] - before[k]).array().abs() <= 0.05 * (1 + 1e-9)).all());

  std::vector<Matrix> q = before;
  std::vector<Matrix> zeros{Matrix::Zero(3, 4), Matrix::Zero(3, 1)};
  Adam z({0.05});
  for (int i = 0; i < 10; ++i) z.step(q, zeros);
  for (std::size_t k = 0; k < q.size(); ++k) CHECK(q[k] == before[k]);

  std::vector<Matrix> r1 = before, r2 = before;
  Adam b1({0.05}), b2({0.05});
  for (int i = 0; i < 5; ++i) {
    b1.step(r1, g);
    b2.step(r2, g);
  }
  for (std::size_t k = 0; k < r1.size(); ++k) CHECK(r1[k] == r2[k]);
}

TEST_CASE("Adam rejects shape mismatches") {
  Adam adam;
  std::vector<Matrix> p{Matrix::Zero(2, 2)};
  std::vector<Matrix> g{Matrix::Zero(2, 3)};
  CHECK_THROWS_AS(adam.step(p, g), std::invalid_argument);
  std::vector<Matrix> none;
  CHECK_THROWS_AS(adam.step(p, none), std::invalid_argument);
}
