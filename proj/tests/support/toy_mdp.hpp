// Two-state, two-action MDP with horizon 2, small enough to enumerate every
// trajectory. Used as the oracle for the policy-gradient estimator.
#ifndef AMRPG_TESTS_TOY_MDP_HPP
#define AMRPG_TESTS_TOY_MDP_HPP

#include <array>
#include <functional>

#include "amrpg/envs.hpp"
#include "amrpg/net.hpp"

namespace amrpg::testing {

struct ToyMdpSpec {
  double p_start_one = 0.3;                  // P(s_0 = 1)
  std::array<double, 2> p_follow{0.8, 0.6};  // P(s' = a | s)
  std::array<double, 2> state_cost{0.2, 1.0};
  std::size_t horizon = 2;
};

class ToyMdp final : public Environment {
 public:
  explicit ToyMdp(ToyMdpSpec spec = {}) : spec_(spec) {}

  std::size_t horizon() const override { return spec_.horizon; }
  std::size_t observation_dim() const override { return 1; }
  ActionKind action_kind() const override { return ActionKind::Categorical; }
  std::size_t action_count() const override { return 2; }
  double normalized_distance() const override { return static_cast<double>(state_); }

 protected:
  StepResult do_reset(Rng& rng) override {
    rng_ = &rng;
    state_ = rng.uniform() < spec_.p_start_one ? 1 : 0;
    return observe();
  }
  StepResult do_step(const Action& a) override {
    const bool follow = rng_->uniform() < spec_.p_follow[state_];
    state_ = follow ? static_cast<int>(a.index) : 1 - static_cast<int>(a.index);
    return observe();
  }

 private:
  StepResult observe() const {
    StepResult r;
    r.observation = Vector::Constant(1, static_cast<double>(state_));
    r.cost = spec_.state_cost[state_];
    return r;
  }

  ToyMdpSpec spec_;
  Rng* rng_ = nullptr;
  int state_ = 0;
};

/// Exact expected total cost J(w) = sum over every (state, action) path of
/// p(path) * cost(path). Uses only the forward pass.
inline double toy_expected_cost(const PolicyNet& net, const ToyMdpSpec& spec) {
  std::function<double(int, std::size_t, const Vector&, const Action*)> value =
      [&](int s, std::size_t t, const Vector& m, const Action* prev) -> double {
    double total = spec.state_cost[s];
    if (t == spec.horizon) return total;
    const Vector y = net.augment(Vector::Constant(1, static_cast<double>(s)), prev);
    const StepOutput out = net.evaluate_step(y, m, t);
    for (std::size_t a = 0; a < 2; ++a) {
      const Action act{a, 0.0};
      const double pa = out.dist_params(static_cast<Eigen::Index>(a));
      const double pf = spec.p_follow[s];
      const int follow = static_cast<int>(a), other = 1 - static_cast<int>(a);
      total += pa * (pf * value(follow, t + 1, out.memory, &act) + (1 - pf) * value(other, t + 1, out.memory, &act));
    }
    return total;
  };
  const Vector m0 = Vector::Zero(static_cast<Eigen::Index>(net.memory_dim()));
  return (1 - spec.p_start_one) * value(0, 0, m0, nullptr) + spec.p_start_one * value(1, 0, m0, nullptr);
}

/// Small recurrent categorical net for the toy MDP.
inline NetArchitecture toy_architecture() {
  NetArchitecture a;
  a.observation_dim = 1;
  a.action_feature_dim = 2;
  a.recurrent = {{1 + 2 + 3, 3, Activation::Tanh, 1.0}};
  a.head = {{3, 2, Activation::Softmax, 1.0}};
  a.head_kind = HeadKind::Categorical;
  return a;
}

}  // namespace amrpg::testing

#endif  // AMRPG_TESTS_TOY_MDP_HPP
