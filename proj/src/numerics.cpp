#include "amrpg/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace amrpg {

std::size_t matrix_zero_norm(const Matrix& a) {
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if ((a.row(i).array() != 0.0).any()) ++count;
  }
  return count;
}

std::size_t matrix_zero_norm_tol(const Matrix& a, double tau, RowNorm norm) {
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double n = norm == RowNorm::L1 ? a.row(i).lpNorm<1>() : a.row(i).norm();
    if (n > tau) ++count;
  }
  return count;
}

double l21_norm(const Matrix& a) { return a.rowwise().norm().sum(); }

Matrix l21_subgradient(const Matrix& a) {
  Matrix g = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double n = a.row(i).norm();
    if (n > kZeroRowGuard) g.row(i) = a.row(i) / n;
  }
  return g;
}

bool all_finite(const Matrix& a) { return a.allFinite(); }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Rejection sampling keeps the draw unbiased for any n.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = uniform(-1.0, 1.0);
    v = uniform(-1.0, 1.0);
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * scale;
  has_spare_ = true;
  return u * scale;
}

double sample_gaussian(Rng& rng, double mean, double std) {
  if (!(std > 0.0)) throw std::invalid_argument("sample_gaussian: std must be positive");
  return mean + std * rng.normal();
}

double log_prob_gaussian(double x, double mean, double std) {
  if (!(std > 0.0)) throw std::invalid_argument("log_prob_gaussian: std must be positive");
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * std::numbers::pi);
}

namespace {

void check_simplex(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("categorical: empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("categorical: negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("categorical: probabilities sum to " + std::to_string(sum));
  }
}

}  // namespace

std::size_t sample_categorical(Rng& rng, std::span<const double> probs) {
  check_simplex(probs);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_positive = i;
    acc += probs[i];
    if (u < acc && probs[i] > 0.0) return i;
  }
  // Only reachable through rounding when the sum is slightly below 1.
  return last_positive;
}

double log_prob_categorical(std::span<const double> probs, std::size_t index) {
  check_simplex(probs);
  if (index >= probs.size()) throw std::invalid_argument("log_prob_categorical: index out of range");
  return std::log(probs[index]);
}

void Adam::step(std::span<Matrix> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("Adam::step: parameter/gradient count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].rows() != grads[k].rows() || params[k].cols() != grads[k].cols()) {
      throw std::invalid_argument("Adam::step: shape mismatch in tensor " + std::to_string(k));
    }
  }
  if (first_moment_.empty()) {
    for (const auto& p : params) {
      first_moment_.push_back(Matrix::Zero(p.rows(), p.cols()));
      second_moment_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  } else if (first_moment_.size() != params.size()) {
    throw std::invalid_argument("Adam::step: parameter list changed shape between steps");
  }

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto m = first_moment_[k].array();
    auto v = second_moment_[k].array();
    const auto g = grads[k].array();
    if (first_moment_[k].rows() != g.rows() || first_moment_[k].cols() != g.cols()) {
      throw std::invalid_argument("Adam::step: moment shape mismatch in tensor " + std::to_string(k));
    }
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.square();
    params[k].array() -= config_.learning_rate * (m / c1) / ((v / c2).sqrt() + config_.epsilon);
  }
}

}  // namespace amrpg
