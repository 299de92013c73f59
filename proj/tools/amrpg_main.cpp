// amrpg: train, evaluate and analyse memory-reduced recurrent policies.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amrpg/experiment.hpp"
#include "amrpg/plot.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::optional<std::size_t> workers;
  bool deterministic = false;
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> rollouts;
  std::vector<std::string> variants;
  std::string checkpoint = "final";
};

amrpg::Overrides overrides(const Options& o) {
  amrpg::Overrides ov;
  if (o.seed) ov.seeds = std::vector<std::uint64_t>{*o.seed};
  if (!o.seeds.empty()) ov.seeds = amrpg::parse_seed_list(o.seeds);
  ov.workers = o.workers;
  if (o.deterministic) ov.deterministic = true;
  if (!o.out.empty()) ov.out = o.out;
  ov.epochs = o.epochs;
  return ov;
}

amrpg::EvalRequest eval_request(const Options& o) {
  amrpg::EvalRequest r;
  if (!o.variants.empty()) {
    std::vector<amrpg::SuiteVariant> vs;
    for (const auto& v : o.variants) vs.push_back(amrpg::suite_variant_from_string(v));
    r.variants = vs;
  }
  if (o.deterministic) r.deterministic = true;
  r.episodes = o.episodes;
  r.workers = o.workers;
  r.checkpoint = o.checkpoint;
  return r;
}

void after_train(const Options& o, const amrpg::RunLayout& run, bool full) {
  std::cout << run.root.string() << std::endl;
  if (!full) return;
  const auto config = amrpg::load_run_config(run);
  amrpg::cmd_eval(run, eval_request(o), std::cerr);
  amrpg::cmd_analyze(run, std::cerr);
  const auto mem = config.network.memory_activation;
  if (config.env.kind == amrpg::EnvKind::Grid &&
      (mem == amrpg::Activation::BetaSoftmax || mem == amrpg::Activation::Softmax)) {
    amrpg::cmd_extract_machine(run, o.rollouts, std::cerr);
  }
  amrpg::cmd_plot(run, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy gradient with active memory reduction"};
  app.require_subcommand(1);
  Options o;

  auto add_config_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "experiment config file (JSON)")->required()->check(CLI::ExistingFile);
    auto* seed = cmd->add_option("--seed", o.seed, "train a single seed");
    cmd->add_option("--seeds", o.seeds, "seed list: \"0-19\" or \"0,3,7\"")->excludes(seed);
    cmd->add_option("--workers", o.workers, "worker threads (results do not depend on this)")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--deterministic", o.deterministic, "evaluate with the distribution mode instead of sampling");
    cmd->add_option("--out", o.out, "output root directory (overrides output_dir)");
    cmd->add_option("--epochs", o.epochs, "override train.max_epochs")->check(CLI::PositiveNumber);
  };
  auto add_run_dir = [&](CLI::App* cmd) {
    cmd->add_option("run_dir", o.run_dir, "run directory created by train")->required();
  };
  auto add_eval_flags = [&](CLI::App* cmd) {
    cmd->add_option("--variants", o.variants, "suite variants: train, test, test_swapped_colors, test_new_colors")
        ->delimiter(',');
    cmd->add_option("--episodes", o.episodes, "episodes per variant and seed")->check(CLI::PositiveNumber);
    cmd->add_option("--checkpoint", o.checkpoint, "final, best or finetuned")
        ->check(CLI::IsMember({"final", "best", "finetuned"}));
  };

  auto* train = app.add_subcommand("train", "train every seed of a config into a new run directory");
  add_config_flags(train);
  auto* run = app.add_subcommand("run", "train, then eval, analyze, extract-machine (grid) and plot");
  add_config_flags(run);
  add_eval_flags(run);

  auto* eval = app.add_subcommand("eval", "evaluate trained policies on suite variants");
  add_run_dir(eval);
  add_eval_flags(eval);
  eval->add_flag("--deterministic", o.deterministic, "take the distribution mode instead of sampling");
  eval->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);

  auto* analyze = app.add_subcommand("analyze", "memory saliency per seed and across seeds");
  add_run_dir(analyze);
  auto* extract = app.add_subcommand("extract-machine", "Moore machines of discrete-memory policies");
  add_run_dir(extract);
  extract->add_option("--rollouts", o.rollouts, "greedy rollouts per seed")->check(CLI::PositiveNumber);
  auto* plot = app.add_subcommand("plot", "SVG charts from the logged CSV files");
  add_run_dir(plot);
  auto* reduce = app.add_subcommand("reduce", "cut low-saliency memory dims and finetune without the regularizer");
  add_run_dir(reduce);
  reduce->add_option("--epochs", o.epochs, "finetuning epochs");
  reduce->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (train->parsed() || run->parsed()) {
      amrpg::ExperimentConfig config;
      try {
        config = amrpg::load_config(o.config);
        amrpg::apply_overrides(config, overrides(o));
      } catch (const amrpg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
      }
      const amrpg::RunLayout layout = amrpg::cmd_train(config, std::cerr);
      after_train(o, layout, run->parsed());
    } else if (eval->parsed()) {
      amrpg::EvalRequest req;
      try {
        req = eval_request(o);
      } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitConfig;
      }
      amrpg::cmd_eval({o.run_dir}, req, std::cout);
    } else if (analyze->parsed()) {
      amrpg::cmd_analyze({o.run_dir}, std::cout);
    } else if (extract->parsed()) {
      amrpg::cmd_extract_machine({o.run_dir}, o.rollouts, std::cout);
    } else if (plot->parsed()) {
      amrpg::cmd_plot({o.run_dir}, std::cout);
    } else if (reduce->parsed()) {
      amrpg::cmd_reduce({o.run_dir}, o.epochs, o.workers, std::cout);
    }
  } catch (const amrpg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
