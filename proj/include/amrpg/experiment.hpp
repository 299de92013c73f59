#ifndef AMRPG_EXPERIMENT_HPP
#define AMRPG_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "amrpg/envs.hpp"
#include "amrpg/net.hpp"
#include "amrpg/train.hpp"

namespace amrpg {

// --- Configuration ----------------------------------------------------------

inline constexpr int kConfigVersion = 1;

struct LayerWidth {
  std::size_t width = 0;
  Activation activation = Activation::Tanh;
  bool operator==(const LayerWidth&) const = default;
};

/// Compact network description. The input width comes from the environment
/// and the output layer from the action space (softmax over the actions for
/// categorical control, two linear outputs for the Gaussian head).
struct NetworkSpec {
  std::vector<LayerWidth> hidden;  // recurrent layers before the memory layer
  std::size_t memory_dim = 10;
  Activation memory_activation = Activation::BetaSoftmax;
  double beta = 100.0;
  std::size_t memory_steps = 1;
  std::vector<LayerWidth> head_hidden;
  bool action_features = false;  // append u_{t-1} to y_t
  bool operator==(const NetworkSpec&) const = default;
};

struct EnvSpec {
  EnvKind kind = EnvKind::Grid;
  std::uint64_t suite_seed = 0;
  GridConfig grid;
  MazeParams maze;
  MazeGenConfig maze_gen;
  bool operator==(const EnvSpec&) const = default;
};

struct EvalSpec {
  std::vector<SuiteVariant> variants{SuiteVariant::Test};
  std::size_t episodes = 20;
  bool deterministic = false;
  bool operator==(const EvalSpec&) const = default;
};

struct AnalysisSpec {
  std::size_t machine_rollouts = 1;
  std::size_t finetune_epochs = 50;
  bool operator==(const AnalysisSpec&) const = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string name = "experiment";
  EnvSpec env;
  NetworkSpec network;
  TrainConfig train;
  EvalSpec eval;
  AnalysisSpec analysis;
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
  bool operator==(const ExperimentConfig&) const = default;
};

/// Invalid configuration. `field` is the dotted path ("train.lambda"), empty
/// for syntax errors; `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::string field, std::size_t line)
      : std::runtime_error(message), field(std::move(field)), line(line) {}
  std::string field;
  std::size_t line;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_string(const ExperimentConfig& config);
/// Throws ConfigError on semantically invalid values.
void validate_config(const ExperimentConfig& config);

NetArchitecture build_architecture(const ExperimentConfig& config);
EnvSuite build_suite(const ExperimentConfig& config, SuiteVariant variant);

/// "3", "0,2,5" or "0-19".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// Command-line values that replace config fields. Flags win over the file.
struct Overrides {
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::size_t> workers;
  std::optional<bool> deterministic;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
};
void apply_overrides(ExperimentConfig& config, const Overrides& o);

// --- Run directories --------------------------------------------------------

/// Fixed layout of one run:
///   config.snapshot  checkpoints/  metrics.csv  metrics.ndjson
///   suites/  reports/  plots/  [FAILED]
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path snapshot() const { return root / "config.snapshot"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path checkpoint(std::uint64_t seed, const std::string& tag) const;
  std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
  std::filesystem::path metrics_ndjson() const { return root / "metrics.ndjson"; }
  std::filesystem::path suites() const { return root / "suites"; }
  std::filesystem::path suite(SuiteVariant v) const;
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path report(const std::string& name) const { return reports() / name; }
  std::filesystem::path plots() const { return root / "plots"; }
  std::filesystem::path failed_marker() const { return root / "FAILED"; }
};

/// A required file of a run directory is absent.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& path)
      : std::runtime_error("missing artifact: " + path.string()), path(path) {}
  std::filesystem::path path;
};

/// At least one seed failed; partial artifacts and a FAILED marker remain.
class RunFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Creates <output_dir>/<name>-<UTC timestamp>[-k] with the fixed subdirectories.
RunLayout create_run_directory(const ExperimentConfig& config);
/// Opens an existing run and re-parses its snapshot.
ExperimentConfig load_run_config(const RunLayout& run);

// --- Commands ---------------------------------------------------------------

RunLayout cmd_train(const ExperimentConfig& config, std::ostream& log);

struct EvalRequest {
  std::optional<std::vector<SuiteVariant>> variants;
  std::optional<bool> deterministic;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> workers;
  std::string checkpoint = "final";  // final | best | finetuned
};
void cmd_eval(const RunLayout& run, const EvalRequest& request, std::ostream& log);
void cmd_analyze(const RunLayout& run, std::ostream& log);
void cmd_extract_machine(const RunLayout& run, std::optional<std::size_t> rollouts, std::ostream& log);
void cmd_plot(const RunLayout& run, std::ostream& log);
void cmd_reduce(const RunLayout& run, std::optional<std::size_t> epochs, std::optional<std::size_t> workers,
                std::ostream& log);

/// Seeds whose training finished, read from reports/train_summary.csv.
std::vector<std::uint64_t> completed_seeds(const RunLayout& run);

}  // namespace amrpg

#endif  // AMRPG_EXPERIMENT_HPP
