#ifndef AMRPG_TRAIN_HPP
#define AMRPG_TRAIN_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amrpg/envs.hpp"
#include "amrpg/net.hpp"
#include "amrpg/numerics.hpp"

namespace amrpg {

/// How each step's log-probability gradient is weighted.
///   Off          - total episode cost on every step (plain REINFORCE, the default)
///   RewardToGo   - costs incurred after the action only
///   MeanBaseline - total cost minus the batch mean of total costs
enum class VarianceReduction { Off, RewardToGo, MeanBaseline };

std::string_view to_string(VarianceReduction v);
VarianceReduction variance_reduction_from_string(std::string_view s);

struct TrainConfig {
  double learning_rate = 1e-3;
  double lambda = 0.0;  // 0 gives the plain PG baseline
  std::size_t max_epochs = 100;
  std::size_t rollouts_per_epoch = 16;
  std::uint64_t seed = 0;
  VarianceReduction variance_reduction = VarianceReduction::Off;
  std::size_t convergence_window = 50;
  double convergence_tol = 1e-4;  // <= 0 disables the plateau test
  std::size_t workers = 1;
  double cutoff_ratio = 1e-2;     // for the retained_dims metric
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  bool operator==(const TrainConfig&) const = default;
};

/// One rollout. costs holds c_0 .. c_L for an episode with L actions, so it
/// is one entry longer than the per-step vectors.
struct Trajectory {
  std::size_t env_index = 0;
  std::vector<Vector> observations;  // raw y_t fed to the net at step t
  std::vector<Vector> memories;      // m_t
  std::vector<Vector> dist_params;
  std::vector<Action> actions;
  std::vector<double> log_probs;
  std::vector<double> costs;
  Vector final_observation;          // observation returned by the last step
  double total_cost = 0.0;
  double final_normalized_distance = 0.0;
  ForwardTape tape;

  std::size_t length() const { return actions.size(); }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RolloutOptions {
  bool greedy = false;       // take the distribution mode instead of sampling
  bool record_tape = true;   // keep activations for backpropagation
};

/// One episode on `env`; rng drives the env reset and action sampling.
/// Throws TrainingError if the policy produces non-finite outputs.
Trajectory rollout(const PolicyNet& net, Environment& env, Rng& rng, const RolloutOptions& options = {});

/// n episodes, each on a suite environment drawn uniformly at random. One
/// seed per episode is drawn from `rng` up front, so the result does not
/// depend on `workers`.
std::vector<Trajectory> collect_rollouts(const PolicyNet& net, const EnvSuite& suite, std::size_t n, Rng& rng,
                                         std::size_t workers = 1, const RolloutOptions& options = {});

/// Per-step weights applied to grad log pi(u_t | m_t) for one trajectory.
std::vector<double> step_weights(const Trajectory& traj, VarianceReduction vr, double baseline = 0.0);

/// Score-function term of a single trajectory, sum_t w_t grad log pi(u_t | m_t).
std::vector<Matrix> trajectory_gradient(const PolicyNet& net, const Trajectory& traj, VarianceReduction vr,
                                        double baseline = 0.0);

/// Mean over trajectories of the score-function term plus
/// lambda * grad ||W_m||_{2,1}. Summation uses fixed blocks of trajectories,
/// so the result is bit-identical for any worker count.
std::vector<Matrix> estimate_gradient(const PolicyNet& net, const std::vector<Trajectory>& trajectories,
                                      double lambda, VarianceReduction vr = VarianceReduction::Off,
                                      std::size_t workers = 1);

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_cost = 0.0;
  double penalty = 0.0;
  double objective = 0.0;  // mean_cost + penalty
  std::size_t retained_dims = 0;
  double wall_time = 0.0;  // seconds since training started
};

struct TrainResult {
  PolicyNet final_net;
  PolicyNet best_net;  // lowest objective among evaluated epochs
  std::vector<EpochMetrics> metrics;
  bool converged = false;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  /// When set, a diagnostic checkpoint is written here before aborting on NaN.
  std::filesystem::path diagnostic_checkpoint;
};

/// Seed of the rollout stream for one epoch.
std::uint64_t epoch_seed(std::uint64_t base_seed, std::size_t epoch);

/// Rollout -> gradient estimate -> Adam step, until max_epochs or until the
/// windowed mean objective stops changing (relative change below
/// convergence_tol between two consecutive windows).
TrainResult train(const TrainConfig& config, PolicyNet initial, const EnvSuite& suite, const TrainHooks& hooks = {});

/// Retrains a hard-reduced net with the regularizer removed.
TrainResult finetune_reduced(const PolicyNet& net, const TrainConfig& config, const EnvSuite& suite,
                             std::size_t epochs, const TrainHooks& hooks = {});

/// CSV / ndjson metric records. The CSV omits wall_time so identical runs
/// produce identical files.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m, std::uint64_t seed);
std::string metrics_json_line(const EpochMetrics& m, std::uint64_t seed);

}  // namespace amrpg

#endif  // AMRPG_TRAIN_HPP
