#include "amrpg/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "amrpg/amr.hpp"
#include "amrpg/parallel.hpp"

namespace amrpg {

namespace {

constexpr std::size_t kGradientBlock = 8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

bool all_finite(const std::vector<Matrix>& ms) {
  for (const auto& m : ms)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace

std::string_view to_string(VarianceReduction v) {
  switch (v) {
    case VarianceReduction::Off: return "off";
    case VarianceReduction::RewardToGo: return "reward_to_go";
    case VarianceReduction::MeanBaseline: return "mean_baseline";
  }
  return "?";
}

VarianceReduction variance_reduction_from_string(std::string_view s) {
  if (s == "off") return VarianceReduction::Off;
  if (s == "reward_to_go") return VarianceReduction::RewardToGo;
  if (s == "mean_baseline") return VarianceReduction::MeanBaseline;
  throw std::invalid_argument("unknown variance reduction '" + std::string(s) + "'");
}

std::uint64_t epoch_seed(std::uint64_t base_seed, std::size_t epoch) {
  return splitmix64(splitmix64(base_seed) ^ static_cast<std::uint64_t>(epoch));
}

Trajectory rollout(const PolicyNet& net, Environment& env, Rng& rng, const RolloutOptions& options) {
  Trajectory traj;
  StepResult r = env.reset(rng);
  traj.costs.push_back(r.cost);
  Vector m = Vector::Zero(static_cast<Eigen::Index>(net.memory_dim()));
  const Action* prev = nullptr;
  while (!r.done) {
    const Vector y = net.augment(r.observation, prev);
    StepOutput out = options.record_tape ? net.forward_step(y, m, traj.tape)
                                         : net.evaluate_step(y, m, traj.actions.size());
    if (!out.dist_params.allFinite()) {
      throw TrainingError("policy output is not finite at step " + std::to_string(traj.actions.size()));
    }
    const Action a = options.greedy ? net.mode(out.dist_params) : net.sample(out.dist_params, rng);
    const double lp = net.log_prob(out.dist_params, a);
    traj.observations.push_back(std::move(r.observation));
    traj.actions.push_back(a);
    traj.log_probs.push_back(lp);
    traj.dist_params.push_back(std::move(out.dist_params));
    r = env.step(a);
    traj.costs.push_back(r.cost);
    m = out.memory;
    traj.memories.push_back(std::move(out.memory));
    prev = &traj.actions.back();
  }
  traj.final_observation = std::move(r.observation);
  for (double c : traj.costs) traj.total_cost += c;
  traj.final_normalized_distance = env.normalized_distance();
  return traj;
}

std::vector<Trajectory> collect_rollouts(const PolicyNet& net, const EnvSuite& suite, std::size_t n, Rng& rng,
                                         std::size_t workers, const RolloutOptions& options) {
  if (n == 0) throw std::invalid_argument("collect_rollouts: n must be >= 1");
  std::vector<std::uint64_t> seeds(n);
  for (auto& s : seeds) s = rng.next_u64();
  std::vector<Trajectory> out(n);
  parallel_for(n, workers, [&](std::size_t i) {
    Rng local(seeds[i]);
    const std::size_t index = suite.size() == 1 ? 0 : local.uniform_index(suite.size());
    auto env = suite.make(index);
    out[i] = rollout(net, *env, local, options);
    out[i].env_index = index;
  });
  return out;
}

std::vector<double> step_weights(const Trajectory& traj, VarianceReduction vr, double baseline) {
  const std::size_t len = traj.length();
  std::vector<double> w(len, traj.total_cost);
  switch (vr) {
    case VarianceReduction::Off:
      break;
    case VarianceReduction::MeanBaseline:
      for (auto& x : w) x -= baseline;
      break;
    case VarianceReduction::RewardToGo: {
      // Action u_t influences c_{t+1} .. c_L.
      double acc = 0.0;
      for (std::size_t t = len; t-- > 0;) {
        acc += traj.costs[t + 1];
        w[t] = acc;
      }
      break;
    }
  }
  return w;
}

std::vector<Matrix> trajectory_gradient(const PolicyNet& net, const Trajectory& traj, VarianceReduction vr,
                                        double baseline) {
  const auto w = step_weights(traj, vr, baseline);
  return net.bptt_logprob_grad(traj.tape, traj.actions, w);
}

std::vector<Matrix> estimate_gradient(const PolicyNet& net, const std::vector<Trajectory>& trajectories, double lambda,
                                      VarianceReduction vr, std::size_t workers) {
  if (trajectories.empty()) throw std::invalid_argument("estimate_gradient: no trajectories");
  double baseline = 0.0;
  if (vr == VarianceReduction::MeanBaseline) {
    for (const auto& t : trajectories) baseline += t.total_cost;
    baseline /= static_cast<double>(trajectories.size());
  }
  const std::size_t blocks = (trajectories.size() + kGradientBlock - 1) / kGradientBlock;
  std::vector<std::vector<Matrix>> partial(blocks);
  parallel_for(blocks, workers, [&](std::size_t b) {
    partial[b] = net.zero_like();
    const std::size_t end = std::min(trajectories.size(), (b + 1) * kGradientBlock);
    for (std::size_t i = b * kGradientBlock; i < end; ++i) {
      const auto& traj = trajectories[i];
      const auto w = step_weights(traj, vr, baseline);
      net.accumulate_logprob_grad(traj.tape, traj.actions, w, partial[b]);
    }
  });
  std::vector<Matrix> grad = std::move(partial[0]);
  for (std::size_t b = 1; b < blocks; ++b)
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += partial[b][k];
  const double scale = 1.0 / static_cast<double>(trajectories.size());
  for (auto& g : grad) g *= scale;
  add_amr_penalty_grad(net, lambda, grad);
  return grad;
}

TrainResult train(const TrainConfig& config, PolicyNet initial, const EnvSuite& suite, const TrainHooks& hooks) {
  if (config.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
  if (config.rollouts_per_epoch == 0) throw std::invalid_argument("train: rollouts_per_epoch must be >= 1");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");

  const auto t0 = std::chrono::steady_clock::now();
  Adam adam({config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon});
  TrainResult result{initial, initial, {}, false};
  PolicyNet& net = result.final_net;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> objective;

  auto abort = [&](const std::string& why, std::size_t epoch) {
    if (!hooks.diagnostic_checkpoint.empty()) save_checkpoint(net, hooks.diagnostic_checkpoint);
    throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + why);
  };

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng rng(epoch_seed(config.seed, epoch));
    std::vector<Trajectory> trajs;
    try {
      trajs = collect_rollouts(net, suite, config.rollouts_per_epoch, rng, config.workers);
    } catch (const TrainingError& e) {
      abort(e.what(), epoch);
    }

    EpochMetrics m;
    m.epoch = epoch;
    for (const auto& t : trajs) m.mean_cost += t.total_cost;
    m.mean_cost /= static_cast<double>(trajs.size());
    m.penalty = amr_penalty(net, config.lambda);
    m.objective = m.mean_cost + m.penalty;
    m.retained_dims = memory_saliency(net, config.cutoff_ratio).retained.size();
    if (!std::isfinite(m.objective)) abort("objective is not finite", epoch);

    const auto grad = estimate_gradient(net, trajs, config.lambda, config.variance_reduction, config.workers);
    if (!all_finite(grad)) abort("gradient contains NaN/Inf", epoch);

    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);
    objective.push_back(m.objective);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (m.objective < best) {
      best = m.objective;
      result.best_net = net;
    }

    adam.step(net.params(), grad);
    if (!all_finite(net.params())) abort("parameters contain NaN/Inf after update", epoch);

    const std::size_t w = config.convergence_window;
    if (config.convergence_tol > 0.0 && w > 0 && objective.size() >= 2 * w) {
      double recent = 0.0, previous = 0.0;
      for (std::size_t i = 0; i < w; ++i) {
        recent += objective[objective.size() - 1 - i];
        previous += objective[objective.size() - 1 - w - i];
      }
      recent /= static_cast<double>(w);
      previous /= static_cast<double>(w);
      if (std::abs(recent - previous) <= config.convergence_tol * std::max(std::abs(previous), 1e-12)) {
        result.converged = true;
        break;
      }
    }
  }
  return result;
}

TrainResult finetune_reduced(const PolicyNet& net, const TrainConfig& config, const EnvSuite& suite,
                             std::size_t epochs, const TrainHooks& hooks) {
  if (epochs == 0) return TrainResult{net, net, {}, false};
  TrainConfig c = config;
  c.lambda = 0.0;
  c.max_epochs = epochs;
  return train(c, net, suite, hooks);
}

std::string metrics_csv_header() { return "seed,epoch,mean_cost,penalty,objective,retained_dims"; }

std::string metrics_csv_row(const EpochMetrics& m, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(17);
  os << seed << "," << m.epoch << "," << m.mean_cost << "," << m.penalty << "," << m.objective << ","
     << m.retained_dims;
  return os.str();
}

std::string metrics_json_line(const EpochMetrics& m, std::uint64_t seed) {
  nlohmann::json j{{"seed", seed},       {"epoch", m.epoch},
                   {"mean_cost", m.mean_cost}, {"penalty", m.penalty},
                   {"objective", m.objective}, {"retained_dims", m.retained_dims},
                   {"wall_time", m.wall_time}};
  return j.dump();
}

}  // namespace amrpg
