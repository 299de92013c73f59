#ifndef AMRPG_NUMERICS_HPP
#define AMRPG_NUMERICS_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace amrpg {

/// Dense row-major matrix. Every network parameter (including biases, stored
/// as n x 1) is one of these.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Row norm used by the tolerance-based zero norm.
enum class RowNorm { L1, L2 };

/// Zero-row guard for the l2,1 subgradient.
inline constexpr double kZeroRowGuard = 1e-12;

/// Number of rows with at least one exactly nonzero entry.
std::size_t matrix_zero_norm(const Matrix& a);

/// Number of rows whose norm strictly exceeds `tau`.
std::size_t matrix_zero_norm_tol(const Matrix& a, double tau, RowNorm norm = RowNorm::L2);

/// Sum of the Euclidean norms of the rows.
double l21_norm(const Matrix& a);

/// Row-normalized subgradient of l21_norm; rows with norm <= kZeroRowGuard map to 0.
Matrix l21_subgradient(const Matrix& a);

bool all_finite(const Matrix& a);

/// Seeded generator. The engine is std::mt19937_64, whose output sequence is
/// fixed by the standard; the distributions below are written out by hand
/// because the std:: distribution objects are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal via the Marsaglia polar method.
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

double sample_gaussian(Rng& rng, double mean, double std);
double log_prob_gaussian(double x, double mean, double std);

std::size_t sample_categorical(Rng& rng, std::span<const double> probs);
double log_prob_categorical(std::span<const double> probs, std::size_t index);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are allocated lazily on the first step
/// to match the shapes of the parameters they track.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Matrix> params, std::span<const Matrix> grads);

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_count_; }
  const std::vector<Matrix>& first_moment() const { return first_moment_; }
  const std::vector<Matrix>& second_moment() const { return second_moment_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> first_moment_;
  std::vector<Matrix> second_moment_;
  std::uint64_t step_count_ = 0;
};

}  // namespace amrpg

#endif  // AMRPG_NUMERICS_HPP
