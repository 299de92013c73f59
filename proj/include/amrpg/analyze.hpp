#ifndef AMRPG_ANALYZE_HPP
#define AMRPG_ANALYZE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amrpg/amr.hpp"
#include "amrpg/envs.hpp"
#include "amrpg/net.hpp"
#include "amrpg/train.hpp"

namespace amrpg {

// --- Moore machines ---------------------------------------------------------

/// Discrete policy automaton. Memory states are identified by the argmax of
/// m_t; observations by their rounded components ("0", "1", ...).
struct MooreMachine {
  static constexpr int kStart = -1;
  static constexpr int kTerminal = -2;

  std::vector<int> states;                                 // sorted, excludes Start/Terminal
  std::map<int, std::size_t> action_label;                 // state -> action index
  std::map<std::pair<int, std::string>, int> transitions;  // (state, observation) -> next

  std::size_t state_count() const { return states.size(); }
  /// Graphviz description.
  std::string to_dot(std::span<const std::string> action_names = {}) const;
};

class MachineConflict : public std::runtime_error {
 public:
  MachineConflict(const std::string& what, int state, std::string observation)
      : std::runtime_error(what), state(state), observation(std::move(observation)) {}
  int state;
  std::string observation;
};

struct MachineExtraction {
  MooreMachine machine;
  /// Smallest max_i m_t(i) seen; below 0.9 the argmax labelling is suspect.
  double min_memory_confidence = 1.0;
  bool low_confidence() const { return min_memory_confidence < 0.9; }
};

std::string observation_label(const Vector& y);

/// Greedy rollouts with argmax discretisation of memory and action. Throws
/// MachineConflict when a (state, observation) pair or a state's action label
/// is observed with two different outcomes.
MachineExtraction extract_moore_machine(const PolicyNet& net, const EnvSuite& suite, std::size_t n_rollouts,
                                        std::uint64_t seed = 0);

/// Number of distinct memory argmax values along greedy rollouts.
std::size_t count_memory_states(const PolicyNet& net, const EnvSuite& suite, std::size_t n_rollouts,
                                std::uint64_t seed = 0);

/// Runs the machine symbolically on `env` and returns the actions it takes.
std::vector<std::size_t> execute_moore_machine(const MooreMachine& machine, Environment& env, Rng& rng);

// --- Evaluation -------------------------------------------------------------

struct EpisodeRecord {
  std::string variant;
  std::uint64_t seed = 0;  // training seed of the evaluated policy
  std::size_t episode = 0;
  std::size_t scene = 0;
  double cost = 0.0;
  double final_distance = 0.0;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

Stat summarize(std::span<const double> values);

struct VariantSummary {
  std::string variant;
  Stat cost;
  Stat distance;
};

struct EvalReport {
  std::vector<EpisodeRecord> episodes;

  void append(const EvalReport& other);
  /// Pooled over seeds, in order of first appearance.
  std::vector<VariantSummary> summary() const;
  std::vector<std::pair<std::uint64_t, VariantSummary>> summary_by_seed() const;
  std::vector<std::string> variants() const;
};

struct EvalOptions {
  bool deterministic = false;
  std::uint64_t seed = 0;       // sampling stream
  std::uint64_t policy_seed = 0;  // recorded in EpisodeRecord::seed
  std::size_t workers = 1;
};

/// Episode k of every variant runs scene k mod size with the same sampling
/// stream, so variants sharing geometry are paired.
EvalReport evaluate(const PolicyNet& net, std::span<const EnvSuite> suites, std::size_t n_episodes,
                    const EvalOptions& options = {});

std::string eval_episodes_csv(const EvalReport& report);
std::string eval_summary_csv(const EvalReport& report);
/// Fixed-width table with one row per variant: cost mean +- std, distance mean +- std.
std::string eval_table(const EvalReport& report);
EvalReport read_eval_episodes_csv(const std::filesystem::path& path);

// --- Seed ensembles ---------------------------------------------------------

struct EnsembleSpec {
  NetArchitecture architecture;
  TrainConfig train;
  EnvSuite train_suite;
  std::vector<EnvSuite> eval_suites;
  std::size_t eval_episodes = 20;
  bool deterministic_eval = false;
  /// Called before each seed starts; an exception marks that seed failed.
  std::function<void(std::uint64_t)> on_seed_start;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::optional<TrainResult> train;
  std::optional<SaliencyReport> saliency;
};

struct RankStat {
  std::size_t rank = 0;
  double mean = 0.0;
  double std = 0.0;
};

/// Per-seed saliencies sorted descending, then mean/std per rank across seeds.
std::vector<RankStat> aggregate_saliency(std::span<const SaliencyReport> reports);

struct EnsembleResult {
  std::vector<SeedOutcome> seeds;
  EvalReport eval;
  std::vector<RankStat> saliency;
};

/// Initial weights for `seed`: PolicyNet::initialized with Rng(seed).
PolicyNet initial_net(const NetArchitecture& arch, std::uint64_t seed);

/// train + evaluate per seed. A failing seed is recorded and the rest continue.
EnsembleResult seed_ensemble(const EnsembleSpec& spec, std::span<const std::uint64_t> seeds);

std::string saliency_aggregate_csv(std::span<const RankStat> ranks);

}  // namespace amrpg

#endif  // AMRPG_ANALYZE_HPP
