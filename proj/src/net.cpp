#include "amrpg/net.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace amrpg {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double effective_beta(const LayerSpec& s) {
  return s.activation == Activation::BetaSoftmax ? s.beta : 1.0;
}

bool is_softmax(Activation a) { return a == Activation::Softmax || a == Activation::BetaSoftmax; }

Vector activate(const LayerSpec& spec, const Vector& z) {
  switch (spec.activation) {
    case Activation::Linear:
      return z;
    case Activation::Tanh:
      return z.array().tanh();
    case Activation::Elu:
      return z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
    case Activation::Softmax:
    case Activation::BetaSoftmax:
      return beta_softmax(z, effective_beta(spec));
  }
  throw std::logic_error("unknown activation");
}

/// Gradient w.r.t. the pre-activation given the gradient w.r.t. the activation.
Vector activation_backward(const LayerSpec& spec, const Vector& pre, const Vector& post, const Vector& grad) {
  switch (spec.activation) {
    case Activation::Linear:
      return grad;
    case Activation::Tanh:
      return grad.array() * (1.0 - post.array().square());
    case Activation::Elu:
      return grad.array() * (pre.array() > 0.0).select(Vector::Ones(pre.size()).array(), post.array() + 1.0);
    case Activation::Softmax:
    case Activation::BetaSoftmax: {
      const double dot = post.dot(grad);
      return effective_beta(spec) * post.array() * (grad.array() - dot);
    }
  }
  throw std::logic_error("unknown activation");
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Tanh: return "tanh";
    case Activation::Elu: return "elu";
    case Activation::Softmax: return "softmax";
    case Activation::BetaSoftmax: return "beta_softmax";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  if (name == "linear") return Activation::Linear;
  if (name == "tanh") return Activation::Tanh;
  if (name == "elu") return Activation::Elu;
  if (name == "softmax") return Activation::Softmax;
  if (name == "beta_softmax") return Activation::BetaSoftmax;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(HeadKind k) { return k == HeadKind::Gaussian ? "gaussian" : "categorical"; }

HeadKind head_kind_from_string(std::string_view name) {
  if (name == "gaussian") return HeadKind::Gaussian;
  if (name == "categorical") return HeadKind::Categorical;
  throw std::invalid_argument("unknown head kind '" + std::string(name) + "'");
}

Vector beta_softmax(const Vector& z, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta_softmax: beta must be positive");
  Vector scaled = beta * z;
  scaled.array() -= scaled.maxCoeff();
  Vector e = scaled.array().exp();
  return e / e.sum();
}

PolicyNet::PolicyNet(NetArchitecture arch) : arch_(std::move(arch)) {
  validate();
  allocate();
}

PolicyNet::PolicyNet(NetArchitecture arch, std::vector<Matrix> params) : PolicyNet(std::move(arch)) {
  if (params.size() != params_.size()) {
    throw std::invalid_argument("PolicyNet: expected " + std::to_string(params_.size()) +
                                " parameter tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].rows() != params_[k].rows() || params[k].cols() != params_[k].cols()) {
      throw std::invalid_argument("PolicyNet: parameter " + std::to_string(k) + " has wrong shape");
    }
  }
  params_ = std::move(params);
}

PolicyNet PolicyNet::initialized(NetArchitecture arch, Rng& rng) {
  PolicyNet net(std::move(arch));
  const std::size_t layers = net.arch_.recurrent.size() + net.arch_.head.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t copies = l == net.memory_layer_index() ? net.arch_.memory_steps : 1;
    for (std::size_t t = 0; t < copies; ++t) {
      Matrix& w = net.params_[net.weight_slot(l, t)];
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    }
  }
  return net;
}

void PolicyNet::validate() const {
  const auto& r = arch_.recurrent;
  const auto& h = arch_.head;
  if (r.empty()) throw std::invalid_argument("PolicyNet: need at least one recurrent (memory) layer");
  if (h.empty()) throw std::invalid_argument("PolicyNet: need at least one head layer");
  if (arch_.memory_steps == 0) throw std::invalid_argument("PolicyNet: memory_steps must be >= 1");
  auto check_chain = [](const std::vector<LayerSpec>& layers, const char* what) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& s = layers[i];
      if (s.input_dim == 0 || s.output_dim == 0) {
        throw std::invalid_argument(std::string("PolicyNet: zero-width ") + what + " layer");
      }
      if (s.activation == Activation::BetaSoftmax && !(s.beta > 0.0)) {
        throw std::invalid_argument("PolicyNet: beta_softmax needs beta > 0");
      }
      if (i > 0 && s.input_dim != layers[i - 1].output_dim) {
        throw std::invalid_argument(std::string("PolicyNet: ") + what + " layer " + std::to_string(i) +
                                    " input does not match previous output");
      }
    }
  };
  check_chain(r, "recurrent");
  check_chain(h, "head");
  const std::size_t d = r.back().output_dim;
  if (r.front().input_dim != arch_.observation_dim + arch_.action_feature_dim + d) {
    throw std::invalid_argument("PolicyNet: first recurrent layer must take [y, u_prev, m_prev] of width " +
                                std::to_string(arch_.observation_dim + arch_.action_feature_dim + d));
  }
  if (r.size() >= 2 && r[r.size() - 2].activation != Activation::Tanh) {
    throw std::invalid_argument("PolicyNet: the layer feeding the memory layer must use tanh");
  }
  if (h.front().input_dim != d) throw std::invalid_argument("PolicyNet: head input must equal memory dim");
  if (arch_.head_kind == HeadKind::Categorical) {
    if (!is_softmax(h.back().activation)) {
      throw std::invalid_argument("PolicyNet: categorical head must end in softmax");
    }
    if (arch_.action_feature_dim != 0 && arch_.action_feature_dim != h.back().output_dim) {
      throw std::invalid_argument("PolicyNet: categorical action features are one-hot");
    }
  } else {
    if (h.back().output_dim != 2 || h.back().activation != Activation::Linear) {
      throw std::invalid_argument("PolicyNet: gaussian head must end in a 2-wide linear layer");
    }
    if (arch_.action_feature_dim > 1) throw std::invalid_argument("PolicyNet: gaussian action features are scalar");
  }
}

void PolicyNet::allocate() {
  params_.clear();
  first_slot_.clear();
  const std::size_t nr = arch_.recurrent.size();
  for (std::size_t l = 0; l < nr + arch_.head.size(); ++l) {
    const LayerSpec& s = l < nr ? arch_.recurrent[l] : arch_.head[l - nr];
    const std::size_t copies = l == nr - 1 ? arch_.memory_steps : 1;
    first_slot_.push_back(params_.size());
    for (std::size_t t = 0; t < copies; ++t) params_.push_back(Matrix::Zero(s.output_dim, s.input_dim));
    for (std::size_t t = 0; t < copies; ++t) params_.push_back(Matrix::Zero(s.output_dim, 1));
  }
}

std::size_t PolicyNet::action_count() const {
  return arch_.head_kind == HeadKind::Categorical ? arch_.head.back().output_dim : 0;
}

std::size_t PolicyNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

std::vector<Matrix> PolicyNet::zero_like() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(Matrix::Zero(p.rows(), p.cols()));
  return out;
}

std::size_t PolicyNet::weight_slot(std::size_t layer, std::size_t t) const {
  if (layer == memory_layer_index()) return first_slot_[layer] + std::min(t, arch_.memory_steps - 1);
  return first_slot_[layer];
}

std::size_t PolicyNet::bias_slot(std::size_t layer, std::size_t t) const {
  if (layer == memory_layer_index()) {
    return first_slot_[layer] + arch_.memory_steps + std::min(t, arch_.memory_steps - 1);
  }
  return first_slot_[layer] + 1;
}

std::vector<std::size_t> PolicyNet::memory_weight_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < arch_.memory_steps; ++t) out.push_back(weight_slot(memory_layer_index(), t));
  return out;
}

std::vector<std::size_t> PolicyNet::memory_bias_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < arch_.memory_steps; ++t) out.push_back(bias_slot(memory_layer_index(), t));
  return out;
}

Vector PolicyNet::action_features(const Action& a) const {
  if (arch_.head_kind == HeadKind::Categorical) {
    Vector f = Vector::Zero(static_cast<Eigen::Index>(action_count()));
    f(static_cast<Eigen::Index>(a.index)) = 1.0;
    return f;
  }
  Vector f(1);
  f(0) = a.value;
  return f;
}

Vector PolicyNet::augment(const Vector& observation, const Action* previous_action) const {
  if (static_cast<std::size_t>(observation.size()) != arch_.observation_dim) {
    throw std::invalid_argument("PolicyNet::augment: observation has width " + std::to_string(observation.size()) +
                                ", expected " + std::to_string(arch_.observation_dim));
  }
  if (arch_.action_feature_dim == 0) return observation;
  Vector out = Vector::Zero(static_cast<Eigen::Index>(augmented_observation_dim()));
  out.head(observation.size()) = observation;
  if (previous_action) out.tail(static_cast<Eigen::Index>(arch_.action_feature_dim)) = action_features(*previous_action);
  return out;
}

namespace {

StepOutput run_layers(const PolicyNet& net, const Vector& augmented_obs, const Vector& m_prev, std::size_t t,
                      StepCache* cache) {
  const auto& arch = net.architecture();
  if (static_cast<std::size_t>(augmented_obs.size()) != net.augmented_observation_dim()) {
    throw std::invalid_argument("forward_step: observation width " + std::to_string(augmented_obs.size()) +
                                ", expected " + std::to_string(net.augmented_observation_dim()));
  }
  if (static_cast<std::size_t>(m_prev.size()) != net.memory_dim()) {
    throw std::invalid_argument("forward_step: memory width " + std::to_string(m_prev.size()) + ", expected " +
                                std::to_string(net.memory_dim()));
  }
  Vector a(static_cast<Eigen::Index>(net.input_dim()));
  a << augmented_obs, m_prev;
  if (cache) {
    cache->time = t;
    cache->input = a;
  }
  const std::size_t nr = arch.recurrent.size();
  const std::size_t total = nr + arch.head.size();
  StepOutput out;
  for (std::size_t l = 0; l < total; ++l) {
    const LayerSpec& spec = l < nr ? arch.recurrent[l] : arch.head[l - nr];
    const auto& p = net.params();
    Vector z = p[net.weight_slot(l, t)] * a + p[net.bias_slot(l, t)].col(0);
    a = activate(spec, z);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
    if (l == nr - 1) out.memory = a;
  }
  out.dist_params = std::move(a);
  return out;
}

}  // namespace

StepOutput PolicyNet::forward_step(const Vector& augmented_obs, const Vector& m_prev, ForwardTape& tape) const {
  StepCache cache;
  StepOutput out = run_layers(*this, augmented_obs, m_prev, tape.steps.size(), &cache);
  tape.steps.push_back(std::move(cache));
  return out;
}

StepOutput PolicyNet::evaluate_step(const Vector& augmented_obs, const Vector& m_prev, std::size_t t) const {
  return run_layers(*this, augmented_obs, m_prev, t, nullptr);
}

Vector PolicyNet::distribution(const Vector& dist_params) const {
  if (arch_.head_kind == HeadKind::Categorical) return dist_params;
  Vector out(2);
  out << dist_params(0), softplus(dist_params(1)) + kMinStd;
  return out;
}

double PolicyNet::log_prob(const Vector& dist_params, const Action& a) const {
  if (arch_.head_kind == HeadKind::Categorical) {
    return log_prob_categorical(std::span<const double>(dist_params.data(), dist_params.size()), a.index);
  }
  const Vector d = distribution(dist_params);
  return log_prob_gaussian(a.value, d(0), d(1));
}

Action PolicyNet::sample(const Vector& dist_params, Rng& rng) const {
  Action a;
  if (arch_.head_kind == HeadKind::Categorical) {
    a.index = sample_categorical(rng, std::span<const double>(dist_params.data(), dist_params.size()));
  } else {
    const Vector d = distribution(dist_params);
    a.value = sample_gaussian(rng, d(0), d(1));
  }
  return a;
}

Action PolicyNet::mode(const Vector& dist_params) const {
  Action a;
  if (arch_.head_kind == HeadKind::Categorical) {
    Eigen::Index best = 0;
    dist_params.maxCoeff(&best);
    a.index = static_cast<std::size_t>(best);
  } else {
    a.value = dist_params(0);
  }
  return a;
}

std::vector<Matrix> PolicyNet::bptt_logprob_grad(const ForwardTape& tape, std::span<const Action> actions,
                                                 std::span<const double> step_weights) const {
  std::vector<Matrix> grad = zero_like();
  accumulate_logprob_grad(tape, actions, step_weights, grad);
  return grad;
}

void PolicyNet::accumulate_logprob_grad(const ForwardTape& tape, std::span<const Action> actions,
                                        std::span<const double> step_weights, std::vector<Matrix>& grad) const {
  if (tape.size() != actions.size()) {
    throw std::invalid_argument("bptt_logprob_grad: tape has " + std::to_string(tape.size()) + " steps but " +
                                std::to_string(actions.size()) + " actions were given");
  }
  if (!step_weights.empty() && step_weights.size() != actions.size()) {
    throw std::invalid_argument("bptt_logprob_grad: step weight count mismatch");
  }
  if (grad.size() != params_.size()) throw std::invalid_argument("bptt_logprob_grad: gradient layout mismatch");

  const std::size_t nr = arch_.recurrent.size();
  const std::size_t total = nr + arch_.head.size();
  const auto d = static_cast<Eigen::Index>(memory_dim());
  auto spec_of = [&](std::size_t l) -> const LayerSpec& {
    return l < nr ? arch_.recurrent[l] : arch_.head[l - nr];
  };

  Vector dm_next = Vector::Zero(d);
  for (std::size_t step = tape.size(); step-- > 0;) {
    const StepCache& c = tape.steps[step];
    const std::size_t t = c.time;
    const double w = step_weights.empty() ? 1.0 : step_weights[step];
    auto layer_input = [&](std::size_t l) -> const Vector& { return l == 0 ? c.input : c.post[l - 1]; };

    // d(w * log pi) / d(pre-activation of the last head layer).
    Vector dz;
    const Vector& out = c.post.back();
    if (arch_.head_kind == HeadKind::Categorical) {
      dz = -effective_beta(arch_.head.back()) * w * out;
      dz(static_cast<Eigen::Index>(actions[step].index)) += effective_beta(arch_.head.back()) * w;
    } else {
      const double mean = out(0);
      const double s = softplus(out(1)) + kMinStd;
      const double r = actions[step].value - mean;
      dz.resize(2);
      dz(0) = w * r / (s * s);
      dz(1) = w * (r * r / (s * s * s) - 1.0 / s) * sigmoid(out(1));
    }

    Vector da;
    for (std::size_t l = total; l-- > 0;) {
      if (l == nr - 1) {
        // Memory layer output: head gradient plus the recurrence from t + 1.
        da += dm_next;
        dz = activation_backward(spec_of(l), c.pre[l], c.post[l], da);
      } else if (l < total - 1) {
        dz = activation_backward(spec_of(l), c.pre[l], c.post[l], da);
      }
      const std::size_t ws = weight_slot(l, t);
      grad[ws].noalias() += dz * layer_input(l).transpose();
      grad[bias_slot(l, t)].col(0) += dz;
      da.noalias() = params_[ws].transpose() * dz;
    }
    dm_next = da.tail(d);
  }
}

double PolicyNet::sequence_log_prob(std::span<const Vector> observations, std::span<const Action> actions) const {
  if (observations.size() != actions.size()) throw std::invalid_argument("sequence_log_prob: length mismatch");
  Vector m = Vector::Zero(static_cast<Eigen::Index>(memory_dim()));
  double total = 0.0;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    const Vector y = augment(observations[t], t == 0 ? nullptr : &actions[t - 1]);
    StepOutput out = evaluate_step(y, m, t);
    total += log_prob(out.dist_params, actions[t]);
    m = std::move(out.memory);
  }
  return total;
}

bool PolicyNet::operator==(const PolicyNet& other) const {
  if (!(arch_ == other.arch_)) return false;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (params_[k] != other.params_[k]) return false;
  }
  return true;
}

// Checkpoint layout:
//   AMRPG-CHECKPOINT 1
//   observation_dim <n>
//   action_feature_dim <n>
//   head_kind <gaussian|categorical>
//   memory_steps <n>
//   recurrent <count>      followed by `layer <in> <out> <activation> <beta>` lines
//   head <count>           likewise
//   params <count>         followed by `matrix <rows> <cols>` and one line per row
std::string checkpoint_to_string(const PolicyNet& net) {
  std::ostringstream os;
  os.precision(17);
  const auto& a = net.architecture();
  os << "AMRPG-CHECKPOINT 1\n";
  os << "observation_dim " << a.observation_dim << "\n";
  os << "action_feature_dim " << a.action_feature_dim << "\n";
  os << "head_kind " << to_string(a.head_kind) << "\n";
  os << "memory_steps " << a.memory_steps << "\n";
  auto layers = [&](const char* name, const std::vector<LayerSpec>& ls) {
    os << name << " " << ls.size() << "\n";
    for (const auto& s : ls) {
      os << "layer " << s.input_dim << " " << s.output_dim << " " << to_string(s.activation) << " " << s.beta << "\n";
    }
  };
  layers("recurrent", a.recurrent);
  layers("head", a.head);
  os << "params " << net.params().size() << "\n";
  for (const auto& p : net.params()) {
    os << "matrix " << p.rows() << " " << p.cols() << "\n";
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) os << (j ? " " : "") << p(i, j);
      os << "\n";
    }
  }
  return os.str();
}

namespace {

void expect_token(std::istream& is, const std::string& expected) {
  std::string tok;
  if (!(is >> tok) || tok != expected) {
    throw std::runtime_error("checkpoint: expected '" + expected + "', found '" + tok + "'");
  }
}

template <typename T>
T read_value(std::istream& is, const char* what) {
  T v{};
  if (!(is >> v)) throw std::runtime_error(std::string("checkpoint: could not read ") + what);
  return v;
}

// Accepts nan/inf so that diagnostic checkpoints written on divergence load back.
double read_real(std::istream& is, const char* what) {
  const auto tok = read_value<std::string>(is, what);
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) throw std::runtime_error(std::string("checkpoint: malformed ") + what + " '" + tok + "'");
  return v;
}

}  // namespace

PolicyNet checkpoint_from_string(const std::string& text) {
  std::istringstream is(text);
  expect_token(is, "AMRPG-CHECKPOINT");
  if (read_value<int>(is, "version") != 1) throw std::runtime_error("checkpoint: unsupported version");
  NetArchitecture a;
  expect_token(is, "observation_dim");
  a.observation_dim = read_value<std::size_t>(is, "observation_dim");
  expect_token(is, "action_feature_dim");
  a.action_feature_dim = read_value<std::size_t>(is, "action_feature_dim");
  expect_token(is, "head_kind");
  a.head_kind = head_kind_from_string(read_value<std::string>(is, "head_kind"));
  expect_token(is, "memory_steps");
  a.memory_steps = read_value<std::size_t>(is, "memory_steps");
  auto layers = [&](const char* name, std::vector<LayerSpec>& out) {
    expect_token(is, name);
    const auto n = read_value<std::size_t>(is, "layer count");
    for (std::size_t i = 0; i < n; ++i) {
      expect_token(is, "layer");
      LayerSpec s;
      s.input_dim = read_value<std::size_t>(is, "input_dim");
      s.output_dim = read_value<std::size_t>(is, "output_dim");
      s.activation = activation_from_string(read_value<std::string>(is, "activation"));
      s.beta = read_real(is, "beta");
      out.push_back(s);
    }
  };
  layers("recurrent", a.recurrent);
  layers("head", a.head);
  expect_token(is, "params");
  const auto n = read_value<std::size_t>(is, "parameter count");
  std::vector<Matrix> params;
  for (std::size_t k = 0; k < n; ++k) {
    expect_token(is, "matrix");
    const auto rows = read_value<Eigen::Index>(is, "rows");
    const auto cols = read_value<Eigen::Index>(is, "cols");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = read_real(is, "weight");
    params.push_back(std::move(m));
  }
  return PolicyNet(std::move(a), std::move(params));
}

void save_checkpoint(const PolicyNet& net, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << checkpoint_to_string(net);
  if (!os) throw std::runtime_error("error writing checkpoint " + path.string());
}

PolicyNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing checkpoint " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace amrpg
