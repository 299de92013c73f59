#include "amrpg/amr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace amrpg {

double SaliencyReport::threshold() const {
  if (saliency.empty()) return 0.0;
  return cutoff_ratio * *std::max_element(saliency.begin(), saliency.end());
}

Matrix stacked_memory_weights(const PolicyNet& net) {
  const auto slots = net.memory_weight_slots();
  if (slots.size() == 1) return net.params()[slots.front()];
  const Matrix& first = net.params()[slots.front()];
  Matrix out(first.rows(), first.cols() * static_cast<Eigen::Index>(slots.size()));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    out.middleCols(static_cast<Eigen::Index>(k) * first.cols(), first.cols()) = net.params()[slots[k]];
  }
  return out;
}

double amr_penalty(const PolicyNet& net, double lambda) {
  if (lambda == 0.0) return 0.0;
  return lambda * l21_norm(stacked_memory_weights(net));
}

void add_amr_penalty_grad(const PolicyNet& net, double lambda, std::vector<Matrix>& grad) {
  if (lambda == 0.0) return;
  const Matrix sub = l21_subgradient(stacked_memory_weights(net));
  const auto slots = net.memory_weight_slots();
  const Eigen::Index cols = net.params()[slots.front()].cols();
  for (std::size_t k = 0; k < slots.size(); ++k) {
    grad[slots[k]] += lambda * sub.middleCols(static_cast<Eigen::Index>(k) * cols, cols);
  }
}

std::vector<Matrix> amr_penalty_grad(const PolicyNet& net, double lambda) {
  std::vector<Matrix> grad = net.zero_like();
  add_amr_penalty_grad(net, lambda, grad);
  return grad;
}

SaliencyReport memory_saliency(const PolicyNet& net, double cutoff_ratio) {
  if (!(cutoff_ratio >= 0.0)) throw std::invalid_argument("memory_saliency: cutoff ratio must be >= 0");
  SaliencyReport report;
  report.cutoff_ratio = cutoff_ratio;
  const Matrix w = stacked_memory_weights(net);
  for (Eigen::Index i = 0; i < w.rows(); ++i) report.saliency.push_back(w.row(i).lpNorm<1>());
  const double thr = report.threshold();
  for (std::size_t i = 0; i < report.saliency.size(); ++i) {
    if (report.saliency[i] >= thr) report.retained.push_back(i);
  }
  return report;
}

namespace {

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

Matrix select_cols(const Matrix& m, const std::vector<Eigen::Index>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

double apply_elementwise(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Elu: return z > 0.0 ? z : std::expm1(z);
    default: return z;
  }
}

}  // namespace

PolicyNet hard_reduce(const PolicyNet& net, const SaliencyReport& report) {
  const std::size_t d = net.memory_dim();
  if (report.retained.empty()) throw std::invalid_argument("hard_reduce: retained set is empty");
  if (report.saliency.size() != d) throw std::invalid_argument("hard_reduce: report does not match memory dim");
  std::vector<bool> keep(d, false);
  for (std::size_t i : report.retained) {
    if (i >= d) throw std::invalid_argument("hard_reduce: retained index out of range");
    keep[i] = true;
  }
  std::vector<Eigen::Index> kept, cut;
  for (std::size_t i = 0; i < d; ++i) (keep[i] ? kept : cut).push_back(static_cast<Eigen::Index>(i));

  const NetArchitecture& old = net.architecture();
  const std::size_t mem = net.memory_layer_index();
  const std::size_t nr = old.recurrent.size();
  const auto r = kept.size();

  NetArchitecture arch = old;
  arch.recurrent[mem].output_dim = r;
  arch.recurrent.front().input_dim = old.observation_dim + old.action_feature_dim + r;
  arch.head.front().input_dim = r;

  // Columns of the first recurrent layer: [y, u_prev] untouched, m_prev filtered.
  std::vector<Eigen::Index> input_cols;
  const auto prefix = static_cast<Eigen::Index>(old.observation_dim + old.action_feature_dim);
  for (Eigen::Index j = 0; j < prefix; ++j) input_cols.push_back(j);
  for (Eigen::Index i : kept) input_cols.push_back(prefix + i);

  std::vector<Matrix> params = net.params();
  for (std::size_t t = 0; t < old.memory_steps; ++t) {
    const std::size_t ws = net.weight_slot(mem, t), bs = net.bias_slot(mem, t);
    params[ws] = select_rows(params[ws], kept);
    params[bs] = select_rows(params[bs], kept);
  }
  for (std::size_t t = 0; t < (mem == 0 ? old.memory_steps : 1); ++t) {
    const std::size_t ws = net.weight_slot(0, t);
    params[ws] = select_cols(params[ws], input_cols);
  }

  const Activation mem_act = old.recurrent[mem].activation;
  const bool elementwise = mem_act == Activation::Tanh || mem_act == Activation::Elu || mem_act == Activation::Linear;
  const std::size_t head_ws = net.weight_slot(nr), head_bs = net.bias_slot(nr);
  if (elementwise && old.memory_steps == 1) {
    const Matrix& bias = net.params()[net.bias_slot(mem)];
    const Matrix& head_w = net.params()[head_ws];
    for (Eigen::Index i : cut) {
      params[head_bs].col(0) += head_w.col(i) * apply_elementwise(mem_act, bias(i, 0));
    }
  }
  params[head_ws] = select_cols(params[head_ws], kept);
  return PolicyNet(std::move(arch), std::move(params));
}

std::string saliency_csv(const SaliencyReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "dimension,saliency,retained\n";
  std::vector<bool> keep(report.saliency.size(), false);
  for (std::size_t i : report.retained) keep[i] = true;
  for (std::size_t i = 0; i < report.saliency.size(); ++i) {
    os << i << "," << report.saliency[i] << "," << (keep[i] ? 1 : 0) << "\n";
  }
  return os.str();
}

void write_saliency_csv(const SaliencyReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << saliency_csv(report);
}

SaliencyReport read_saliency_csv(const std::filesystem::path& path, double cutoff_ratio) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing saliency file " + path.string());
  SaliencyReport report;
  report.cutoff_ratio = cutoff_ratio;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string dim, sal, ret;
    std::getline(ls, dim, ',');
    std::getline(ls, sal, ',');
    std::getline(ls, ret, ',');
    report.saliency.push_back(std::stod(sal));
    if (ret == "1") report.retained.push_back(std::stoul(dim));
  }
  return report;
}

}  // namespace amrpg
