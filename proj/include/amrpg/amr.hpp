#ifndef AMRPG_AMR_HPP
#define AMRPG_AMR_HPP

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "amrpg/net.hpp"
#include "amrpg/numerics.hpp"

namespace amrpg {

/// Memory dimensions are cut when their saliency is this fraction of the
/// largest one or less ("two orders of magnitude").
inline constexpr double kDefaultCutoffRatio = 1e-2;

struct SaliencyReport {
  /// saliency[i] = sum_j |W_m(i, j)|, summed over every time copy of W_m.
  std::vector<double> saliency;
  /// Ascending indices i with saliency[i] >= cutoff_ratio * max saliency.
  std::vector<std::size_t> retained;
  double cutoff_ratio = kDefaultCutoffRatio;

  double threshold() const;
};

/// W_m for time-invariant nets; [W_m0, W_m1, ...] stacked column-wise otherwise.
Matrix stacked_memory_weights(const PolicyNet& net);

/// lambda * ||W_m||_{2,1} (or of the stacked matrix).
double amr_penalty(const PolicyNet& net, double lambda);

/// Gradient of amr_penalty in the net's parameter layout; zero outside W_m.
std::vector<Matrix> amr_penalty_grad(const PolicyNet& net, double lambda);
/// Adds lambda * subgradient into the W_m slots of `grad`.
void add_amr_penalty_grad(const PolicyNet& net, double lambda, std::vector<Matrix>& grad);

SaliencyReport memory_saliency(const PolicyNet& net, double cutoff_ratio = kDefaultCutoffRatio);

/// Deletes the memory dimensions missing from report.retained: rows of W_m and
/// the memory bias, the matching m_{t-1} input columns of the first recurrent
/// layer, and the matching input columns of the first head layer. For
/// elementwise memory activations a cut dimension whose weights are exactly
/// zero outputs the constant act(b_i); that constant is folded into the
/// downstream biases so the reduced net computes the same outputs.
PolicyNet hard_reduce(const PolicyNet& net, const SaliencyReport& report);

/// CSV with columns dimension,saliency,retained.
std::string saliency_csv(const SaliencyReport& report);
void write_saliency_csv(const SaliencyReport& report, const std::filesystem::path& path);
SaliencyReport read_saliency_csv(const std::filesystem::path& path, double cutoff_ratio = kDefaultCutoffRatio);

}  // namespace amrpg

#endif  // AMRPG_AMR_HPP
