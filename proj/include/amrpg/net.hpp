#ifndef AMRPG_NET_HPP
#define AMRPG_NET_HPP

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amrpg/numerics.hpp"

namespace amrpg {

enum class Activation { Linear, Tanh, Elu, Softmax, BetaSoftmax };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct LayerSpec {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Activation activation = Activation::Linear;
  double beta = 1.0;  // only read for BetaSoftmax

  bool operator==(const LayerSpec&) const = default;
};

enum class HeadKind { Gaussian, Categorical };

std::string_view to_string(HeadKind k);
HeadKind head_kind_from_string(std::string_view name);

/// One control action. Categorical policies use `index`, Gaussian ones `value`.
struct Action {
  std::size_t index = 0;
  double value = 0.0;

  bool operator==(const Action&) const = default;
};

/// softmax(beta * z) with max subtraction.
Vector beta_softmax(const Vector& z, double beta);

/// Std floor added after the softplus in the Gaussian head.
inline constexpr double kMinStd = 1e-3;

struct NetArchitecture {
  std::size_t observation_dim = 0;
  /// Width of the previous-action features appended to y_t; 0 disables augmentation.
  std::size_t action_feature_dim = 0;
  /// Ordered layers from [y_t, u_{t-1}, m_{t-1}] to m_t; the last one is the memory layer.
  std::vector<LayerSpec> recurrent;
  /// Ordered layers from m_t to the distribution parameters.
  std::vector<LayerSpec> head;
  HeadKind head_kind = HeadKind::Categorical;
  /// 1 for time-invariant memory weights; K > 1 allocates W_m for t = 0..K-1
  /// and reuses the last one for t >= K.
  std::size_t memory_steps = 1;

  bool operator==(const NetArchitecture&) const = default;
};

/// Per-timestep activations recorded during a rollout.
struct StepCache {
  std::size_t time = 0;
  Vector input;                     // [y_t, u_{t-1} features, m_{t-1}]
  std::vector<Vector> pre;          // pre-activations, recurrent layers then head layers
  std::vector<Vector> post;         // activations, same order
};

struct ForwardTape {
  std::vector<StepCache> steps;

  std::size_t size() const { return steps.size(); }
};

struct StepOutput {
  Vector memory;
  Vector dist_params;
};

/// Recurrent memory map followed by a feed-forward policy head.
/// Parameters are a flat list of matrices (biases are n x 1), which is also
/// the layout of every gradient returned by this class.
class PolicyNet {
 public:
  /// All weights and biases zero.
  explicit PolicyNet(NetArchitecture arch);
  PolicyNet(NetArchitecture arch, std::vector<Matrix> params);

  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  static PolicyNet initialized(NetArchitecture arch, Rng& rng);

  const NetArchitecture& architecture() const { return arch_; }
  std::size_t memory_dim() const { return arch_.recurrent.back().output_dim; }
  std::size_t memory_layer_index() const { return arch_.recurrent.size() - 1; }
  std::size_t input_dim() const { return arch_.recurrent.front().input_dim; }
  std::size_t augmented_observation_dim() const {
    return arch_.observation_dim + arch_.action_feature_dim;
  }
  std::size_t action_count() const;

  std::vector<Matrix>& params() { return params_; }
  const std::vector<Matrix>& params() const { return params_; }
  std::size_t parameter_count() const;
  std::vector<Matrix> zero_like() const;

  /// Slot of the weight matrix / bias of `layer` (recurrent layers first,
  /// then head layers) used at time t.
  std::size_t weight_slot(std::size_t layer, std::size_t t = 0) const;
  std::size_t bias_slot(std::size_t layer, std::size_t t = 0) const;
  /// Slots of every copy of W_m (one unless memory_steps > 1).
  std::vector<std::size_t> memory_weight_slots() const;
  std::vector<std::size_t> memory_bias_slots() const;
  Matrix& layer_weight(std::size_t layer, std::size_t t = 0) { return params_[weight_slot(layer, t)]; }
  const Matrix& layer_weight(std::size_t layer, std::size_t t = 0) const {
    return params_[weight_slot(layer, t)];
  }
  /// The time-t copy of the memory layer's incoming weights.
  const Matrix& memory_weights(std::size_t t = 0) const { return layer_weight(memory_layer_index(), t); }

  /// [y_t, features(u_{t-1})]; returns y_t unchanged when augmentation is off.
  Vector augment(const Vector& observation, const Action* previous_action) const;
  Vector action_features(const Action& a) const;

  /// m_t = q(y_t, m_{t-1}) and the parameters of pi(. | m_t). The time index
  /// is the tape length; activations are appended to the tape.
  StepOutput forward_step(const Vector& augmented_obs, const Vector& m_prev, ForwardTape& tape) const;
  StepOutput evaluate_step(const Vector& augmented_obs, const Vector& m_prev, std::size_t t) const;

  double log_prob(const Vector& dist_params, const Action& a) const;
  Action sample(const Vector& dist_params, Rng& rng) const;
  /// Distribution mode: argmax class or the Gaussian mean.
  Action mode(const Vector& dist_params) const;
  /// Probabilities (categorical) or (mean, std) (Gaussian).
  Vector distribution(const Vector& dist_params) const;

  /// Gradient of sum_t weight_t * log pi(u_t | m_t) by backpropagation through
  /// time. Empty `step_weights` means all ones.
  std::vector<Matrix> bptt_logprob_grad(const ForwardTape& tape, std::span<const Action> actions,
                                        std::span<const double> step_weights = {}) const;
  /// Same as above but adds into `grad`.
  void accumulate_logprob_grad(const ForwardTape& tape, std::span<const Action> actions,
                               std::span<const double> step_weights, std::vector<Matrix>& grad) const;

  /// sum_t log pi(u_t | m_t) replayed from m_{-1} = 0 on raw observations
  /// (augmentation is rebuilt from `actions`).
  double sequence_log_prob(std::span<const Vector> observations, std::span<const Action> actions) const;

  bool operator==(const PolicyNet& other) const;

 private:
  void validate() const;
  void allocate();

  NetArchitecture arch_;
  std::vector<Matrix> params_;
  // Per layer, the first slot of its weights; biases follow the weights.
  std::vector<std::size_t> first_slot_;
};

/// Text checkpoint, see README for the layout.
void save_checkpoint(const PolicyNet& net, const std::filesystem::path& path);
PolicyNet load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const PolicyNet& net);
PolicyNet checkpoint_from_string(const std::string& text);

}  // namespace amrpg

#endif  // AMRPG_NET_HPP
