#include "amrpg/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "amrpg/parallel.hpp"

namespace amrpg {

// --- Moore machines ---------------------------------------------------------

std::string observation_label(const Vector& y) {
  std::string out;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(static_cast<long long>(std::llround(y(i))));
  }
  return out;
}

namespace {

std::string state_name(int s) {
  if (s == MooreMachine::kStart) return "S";
  if (s == MooreMachine::kTerminal) return "T";
  return "m" + std::to_string(s);
}

int argmax(const Vector& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

std::vector<Trajectory> greedy_rollouts(const PolicyNet& net, const EnvSuite& suite, std::size_t n,
                                        std::uint64_t seed) {
  std::vector<Trajectory> out;
  for (std::size_t r = 0; r < n; ++r) {
    Rng rng(epoch_seed(seed, r));
    auto env = suite.make(r % suite.size());
    out.push_back(rollout(net, *env, rng, {.greedy = true, .record_tape = false}));
  }
  return out;
}

}  // namespace

std::string MooreMachine::to_dot(std::span<const std::string> action_names) const {
  std::ostringstream os;
  os << "digraph moore {\n  rankdir=LR;\n";
  os << "  S [shape=circle];\n  T [shape=doublecircle];\n";
  for (int s : states) {
    os << "  " << state_name(s) << " [shape=box, label=\"" << state_name(s) << "\\n";
    const auto it = action_label.find(s);
    if (it != action_label.end()) {
      if (it->second < action_names.size()) {
        os << action_names[it->second];
      } else {
        os << "u=" << it->second;
      }
    }
    os << "\"];\n";
  }
  for (const auto& [key, next] : transitions) {
    os << "  " << state_name(key.first) << " -> " << state_name(next) << " [label=\"y=" << key.second << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

MachineExtraction extract_moore_machine(const PolicyNet& net, const EnvSuite& suite, std::size_t n_rollouts,
                                        std::uint64_t seed) {
  const Activation mem = net.architecture().recurrent.back().activation;
  if (mem != Activation::Softmax && mem != Activation::BetaSoftmax) {
    throw std::invalid_argument("extract_moore_machine: memory layer must be a (beta-)softmax");
  }
  if (net.architecture().head_kind != HeadKind::Categorical) {
    throw std::invalid_argument("extract_moore_machine: policy head must be categorical");
  }
  MachineExtraction ex;
  MooreMachine& mm = ex.machine;
  std::set<int> states;
  auto add_transition = [&](int from, const std::string& obs, int to) {
    const auto [it, inserted] = mm.transitions.try_emplace({from, obs}, to);
    if (!inserted && it->second != to) {
      throw MachineConflict("nondeterministic transition from " + state_name(from) + " on y=" + obs + ": " +
                                state_name(it->second) + " vs " + state_name(to),
                            from, obs);
    }
  };

  for (const auto& traj : greedy_rollouts(net, suite, std::max<std::size_t>(n_rollouts, 1), seed)) {
    int prev = MooreMachine::kStart;
    for (std::size_t t = 0; t < traj.length(); ++t) {
      const int s = argmax(traj.memories[t]);
      ex.min_memory_confidence = std::min(ex.min_memory_confidence, traj.memories[t].maxCoeff());
      states.insert(s);
      add_transition(prev, observation_label(traj.observations[t]), s);
      const auto [it, inserted] = mm.action_label.try_emplace(s, traj.actions[t].index);
      if (!inserted && it->second != traj.actions[t].index) {
        throw MachineConflict("state " + state_name(s) + " emits two different actions", s, "");
      }
      prev = s;
    }
    // The episode end is a terminal transition unless that pair already leads
    // somewhere (a horizon cut-off is not a decision of the machine).
    mm.transitions.try_emplace({prev, observation_label(traj.final_observation)}, MooreMachine::kTerminal);
  }
  mm.states.assign(states.begin(), states.end());
  return ex;
}

std::size_t count_memory_states(const PolicyNet& net, const EnvSuite& suite, std::size_t n_rollouts,
                                std::uint64_t seed) {
  std::set<int> states;
  for (const auto& traj : greedy_rollouts(net, suite, std::max<std::size_t>(n_rollouts, 1), seed)) {
    for (const auto& m : traj.memories) states.insert(argmax(m));
  }
  return states.size();
}

std::vector<std::size_t> execute_moore_machine(const MooreMachine& machine, Environment& env, Rng& rng) {
  std::vector<std::size_t> actions;
  StepResult r = env.reset(rng);
  int state = MooreMachine::kStart;
  while (!r.done) {
    const auto it = machine.transitions.find({state, observation_label(r.observation)});
    if (it == machine.transitions.end()) {
      throw std::runtime_error("Moore machine has no transition from " + state_name(state) + " on y=" +
                               observation_label(r.observation));
    }
    if (it->second == MooreMachine::kTerminal) break;
    state = it->second;
    const std::size_t a = machine.action_label.at(state);
    actions.push_back(a);
    r = env.step(Action{a, 0.0});
  }
  return actions;
}

// --- Evaluation -------------------------------------------------------------

Stat summarize(std::span<const double> values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

void EvalReport::append(const EvalReport& other) {
  episodes.insert(episodes.end(), other.episodes.begin(), other.episodes.end());
}

std::vector<std::string> EvalReport::variants() const {
  std::vector<std::string> out;
  for (const auto& e : episodes)
    if (std::find(out.begin(), out.end(), e.variant) == out.end()) out.push_back(e.variant);
  return out;
}

namespace {

VariantSummary summarize_variant(const std::string& variant, const std::vector<const EpisodeRecord*>& eps) {
  std::vector<double> cost, dist;
  for (const auto* e : eps) {
    cost.push_back(e->cost);
    dist.push_back(e->final_distance);
  }
  return {variant, summarize(cost), summarize(dist)};
}

}  // namespace

std::vector<VariantSummary> EvalReport::summary() const {
  std::vector<VariantSummary> out;
  for (const auto& v : variants()) {
    std::vector<const EpisodeRecord*> eps;
    for (const auto& e : episodes)
      if (e.variant == v) eps.push_back(&e);
    out.push_back(summarize_variant(v, eps));
  }
  return out;
}

std::vector<std::pair<std::uint64_t, VariantSummary>> EvalReport::summary_by_seed() const {
  std::vector<std::uint64_t> seeds;
  for (const auto& e : episodes)
    if (std::find(seeds.begin(), seeds.end(), e.seed) == seeds.end()) seeds.push_back(e.seed);
  std::vector<std::pair<std::uint64_t, VariantSummary>> out;
  for (auto seed : seeds) {
    for (const auto& v : variants()) {
      std::vector<const EpisodeRecord*> eps;
      for (const auto& e : episodes)
        if (e.variant == v && e.seed == seed) eps.push_back(&e);
      if (!eps.empty()) out.emplace_back(seed, summarize_variant(v, eps));
    }
  }
  return out;
}

EvalReport evaluate(const PolicyNet& net, std::span<const EnvSuite> suites, std::size_t n_episodes,
                    const EvalOptions& options) {
  EvalReport report;
  for (const auto& suite : suites) {
    if (suite.size() == 0) throw std::invalid_argument("evaluate: empty suite");
    std::vector<EpisodeRecord> eps(n_episodes);
    parallel_for(n_episodes, options.workers, [&](std::size_t k) {
      Rng rng(epoch_seed(options.seed, k));
      const std::size_t scene = k % suite.size();
      auto env = suite.make(scene);
      const Trajectory traj = rollout(net, *env, rng, {.greedy = options.deterministic, .record_tape = false});
      eps[k] = {std::string(to_string(suite.variant)), options.policy_seed, k, scene, traj.total_cost,
                traj.final_normalized_distance};
    });
    report.episodes.insert(report.episodes.end(), eps.begin(), eps.end());
  }
  return report;
}

std::string eval_episodes_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,seed,episode,scene,cost,final_distance\n";
  for (const auto& e : report.episodes) {
    os << e.variant << "," << e.seed << "," << e.episode << "," << e.scene << "," << e.cost << "," << e.final_distance
       << "\n";
  }
  return os.str();
}

std::string eval_summary_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,episodes,mean_cost,std_cost,mean_distance,std_distance\n";
  for (const auto& s : report.summary()) {
    os << s.variant << "," << s.cost.n << "," << s.cost.mean << "," << s.cost.std << "," << s.distance.mean << ","
       << s.distance.std << "\n";
  }
  return os.str();
}

std::string eval_table(const EvalReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s | %-16s | %-14s\n", "Scenario", "Cost", "Dist.");
  os << line << std::string(58, '-') << "\n";
  for (const auto& s : report.summary()) {
    char cost[32], dist[32];
    std::snprintf(cost, sizeof cost, "%.2f +- %.2f", s.cost.mean, s.cost.std);
    std::snprintf(dist, sizeof dist, "%.2f +- %.2f", s.distance.mean, s.distance.std);
    std::snprintf(line, sizeof line, "%-22s | %-16s | %-14s\n", s.variant.c_str(), cost, dist);
    os << line;
  }
  return os.str();
}

EvalReport read_eval_episodes_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing evaluation file " + path.string());
  EvalReport report;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[6];
    for (auto& x : f) std::getline(ls, x, ',');
    report.episodes.push_back({f[0], std::stoull(f[1]), std::stoul(f[2]), std::stoul(f[3]), std::stod(f[4]),
                               std::stod(f[5])});
  }
  return report;
}

// --- Seed ensembles ---------------------------------------------------------

std::vector<RankStat> aggregate_saliency(std::span<const SaliencyReport> reports) {
  std::vector<RankStat> out;
  if (reports.empty()) return out;
  std::vector<std::vector<double>> sorted;
  std::size_t width = 0;
  for (const auto& r : reports) {
    auto s = r.saliency;
    std::sort(s.begin(), s.end(), std::greater<>());
    width = std::max(width, s.size());
    sorted.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < width; ++k) {
    std::vector<double> vals;
    for (const auto& s : sorted)
      if (k < s.size()) vals.push_back(s[k]);
    const Stat st = summarize(vals);
    out.push_back({k, st.mean, st.std});
  }
  return out;
}

PolicyNet initial_net(const NetArchitecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  return PolicyNet::initialized(arch, rng);
}

EnsembleResult seed_ensemble(const EnsembleSpec& spec, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("seed_ensemble: no seeds");
  EnsembleResult result;
  std::vector<SaliencyReport> saliencies;
  for (auto seed : seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    try {
      if (spec.on_seed_start) spec.on_seed_start(seed);
      TrainConfig cfg = spec.train;
      cfg.seed = seed;
      outcome.train = train(cfg, initial_net(spec.architecture, seed), spec.train_suite);
      outcome.saliency = memory_saliency(outcome.train->final_net, cfg.cutoff_ratio);
      saliencies.push_back(*outcome.saliency);
      result.eval.append(evaluate(outcome.train->final_net, spec.eval_suites, spec.eval_episodes,
                                  {.deterministic = spec.deterministic_eval, .seed = seed, .policy_seed = seed,
                                   .workers = cfg.workers}));
      outcome.ok = true;
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
    result.seeds.push_back(std::move(outcome));
  }
  result.saliency = aggregate_saliency(saliencies);
  return result;
}

std::string saliency_aggregate_csv(std::span<const RankStat> ranks) {
  std::ostringstream os;
  os.precision(17);
  os << "rank,mean,std\n";
  for (const auto& r : ranks) os << r.rank << "," << r.mean << "," << r.std << "\n";
  return os.str();
}

}  // namespace amrpg
