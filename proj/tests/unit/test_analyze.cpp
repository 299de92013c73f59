#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "amrpg/analyze.hpp"

using namespace amrpg;

namespace {

// Two-slot beta-softmax memory that flips between its slots on every step;
// slot 0 emits "up", slot 1 emits "right". On the 7x7 grid this walks the
// staircase from (5,1) to (1,5) in exactly T = 8 moves.
PolicyNet alternating_net() {
  NetArchitecture a;
  a.observation_dim = 1;
  a.recurrent = {{3, 2, Activation::BetaSoftmax, 100.0}};
  a.head = {{2, kGridActionCount, Activation::Softmax, 1.0}};
  PolicyNet net(a);
  Matrix& w = net.layer_weight(0);  // columns: y, m0, m1
  w << 0.0, -1.0, 1.0,
       0.0, 1.0, -1.0;
  net.params()[net.bias_slot(0)] << 0.5, 0.0;
  Matrix& h = net.layer_weight(1);
  h.setZero();
  h(0, 0) = 10.0;  // up
  h(1, 1) = 10.0;  // right
  return net;
}

// Soft memory (beta = 1) whose second slot slowly excites itself: the argmax
// stays on slot 0 for two steps and then moves, so (m0, y=0) has two successors.
PolicyNet drifting_net() {
  NetArchitecture a;
  a.observation_dim = 1;
  a.recurrent = {{3, 2, Activation::Softmax, 1.0}};
  a.head = {{2, kGridActionCount, Activation::Softmax, 1.0}};
  PolicyNet net(a);
  net.layer_weight(0) << 0.0, 0.0, 0.0,
                         0.0, 0.0, 3.0;
  net.params()[net.bias_slot(0)] << 0.0, -1.0;
  return net;
}

NetArchitecture maze_arch(std::size_t obs) {
  NetArchitecture a;
  a.observation_dim = obs;
  a.recurrent = {{obs + 4, 6, Activation::Tanh, 1.0}, {6, 4, Activation::Tanh, 1.0}};
  a.head = {{4, 2, Activation::Linear, 1.0}};
  a.head_kind = HeadKind::Gaussian;
  return a;
}

MazeGenConfig small_gen() {
  MazeGenConfig g;
  g.train_count = 6;
  g.test_count = 3;
  return g;
}

MazeParams short_maze() {
  MazeParams p;
  p.horizon = 6;
  return p;
}

}  // namespace

TEST_CASE("hand-built alternating policy yields a two-state machine") {
  const PolicyNet net = alternating_net();
  const EnvSuite suite = make_env_suite(EnvKind::Grid, SuiteVariant::Train, 0);
  const MachineExtraction ex = extract_moore_machine(net, suite, 5);
  const MooreMachine& mm = ex.machine;
  CHECK_FALSE(ex.low_confidence());
  REQUIRE(mm.state_count() == 2);
  const int a = mm.transitions.at({MooreMachine::kStart, "0"});
  const int b = mm.transitions.at({a, "0"});
  CHECK(a != b);
  CHECK(mm.transitions.at({b, "0"}) == a);
  CHECK(mm.action_label.at(a) == static_cast<std::size_t>(GridAction::Up));
  CHECK(mm.action_label.at(b) == static_cast<std::size_t>(GridAction::Right));
  // The goal observation ends the episode.
  CHECK(mm.transitions.at({b, "1"}) == MooreMachine::kTerminal);
  CHECK(count_memory_states(net, suite, 5) == 2);

  const std::string dot = mm.to_dot();
  CHECK(dot.find("digraph") == 0);
  CHECK(dot.find("S -> m" + std::to_string(a)) != std::string::npos);
  CHECK(dot.find("-> T") != std::string::npos);
}

TEST_CASE("extracted machine reproduces the greedy neural trajectory") {
  const PolicyNet net = alternating_net();
  const EnvSuite suite = make_env_suite(EnvKind::Grid, SuiteVariant::Train, 0);
  const MooreMachine mm = extract_moore_machine(net, suite, 3).machine;
  Rng r1(1), r2(1);
  auto env = suite.make(0);
  const auto symbolic = execute_moore_machine(mm, *env, r1);
  auto env2 = suite.make(0);
  const Trajectory neural = rollout(net, *env2, r2, {.greedy = true, .record_tape = false});
  REQUIRE(symbolic.size() == neural.length());
  for (std::size_t t = 0; t < symbolic.size(); ++t) CHECK(symbolic[t] == neural.actions[t].index);
  CHECK(neural.final_normalized_distance == 0.0);
  CHECK(symbolic.size() == 8);
}

TEST_CASE("non machine-like memory raises a conflict") {
  const PolicyNet net = drifting_net();
  const EnvSuite suite = make_env_suite(EnvKind::Grid, SuiteVariant::Train, 0);
  try {
    extract_moore_machine(net, suite, 1);
    FAIL("expected MachineConflict");
  } catch (const MachineConflict& c) {
    CHECK(c.state == 0);
    CHECK(c.observation == "0");
  }
  CHECK(count_memory_states(net, suite, 1) == 2);
}

TEST_CASE("machine extraction preconditions") {
  Rng rng(1);
  const PolicyNet gaussian = PolicyNet::initialized(maze_arch(68), rng);
  const EnvSuite maze = make_env_suite(EnvKind::Maze, SuiteVariant::Test, 1, {}, short_maze(), small_gen());
  CHECK_THROWS_AS(extract_moore_machine(gaussian, maze, 1), std::invalid_argument);

  NetArchitecture a;
  a.observation_dim = 1;
  a.recurrent = {{4, 3, Activation::Tanh, 1.0}};
  a.head = {{3, kGridActionCount, Activation::Softmax, 1.0}};
  const EnvSuite grid = make_env_suite(EnvKind::Grid, SuiteVariant::Train, 0);
  CHECK_THROWS_AS(extract_moore_machine(PolicyNet(a), grid, 1), std::invalid_argument);

  MooreMachine empty;
  GridNavEnv env;
  CHECK_THROWS_AS(execute_moore_machine(empty, env, rng), std::runtime_error);
}

TEST_CASE("observation labels round continuous values") {
  Vector y(3);
  y << 0.0, 1.0000001, -2.0;
  CHECK(observation_label(y) == "0,1,-2");
}

TEST_CASE("summary statistics") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const Stat s = summarize(v);
  CHECK(s.n == 4);
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const std::vector<double> one{7.0};
  CHECK(summarize(one).std == 0.0);
  CHECK(summarize(std::span<const double>{}).n == 0);
}

TEST_CASE("zero-horizon evaluation costs exactly one per episode") {
  GridConfig g;
  g.horizon = 0;
  const EnvSuite suite = make_env_suite(EnvKind::Grid, SuiteVariant::Test, 0, g);
  const std::vector<EnvSuite> suites{suite};
  Rng rng(1);
  NetArchitecture a;
  a.observation_dim = 1;
  a.recurrent = {{3, 2, Activation::BetaSoftmax, 100.0}};
  a.head = {{2, kGridActionCount, Activation::Softmax, 1.0}};
  const EvalReport r = evaluate(PolicyNet::initialized(a, rng), suites, 7);
  REQUIRE(r.episodes.size() == 7);
  for (const auto& e : r.episodes) {
    CHECK(e.cost == 1.0);
    CHECK(e.final_distance == 1.0);
  }
  const auto s = r.summary();
  REQUIRE(s.size() == 1);
  CHECK(s[0].cost.mean == 1.0);
  CHECK(s[0].cost.std == 0.0);
}

TEST_CASE("maze evaluation is deterministic and paired across variants") {
  Rng rng(3);
  const PolicyNet net = PolicyNet::initialized(maze_arch(68), rng);
  std::vector<EnvSuite> suites;
  for (auto v : {SuiteVariant::Test, SuiteVariant::TestSwappedColors, SuiteVariant::TestNewColors})
    suites.push_back(make_env_suite(EnvKind::Maze, v, 5, {}, short_maze(), small_gen()));
  const EvalOptions opts{.deterministic = false, .seed = 17, .policy_seed = 4, .workers = 1};
  const EvalReport a = evaluate(net, suites, 5, opts);
  EvalOptions threaded = opts;
  threaded.workers = 3;
  const EvalReport b = evaluate(net, suites, 5, threaded);
  CHECK(eval_episodes_csv(a) == eval_episodes_csv(b));
  REQUIRE(a.episodes.size() == 15);
  CHECK(a.variants() == std::vector<std::string>{"test", "test_swapped_colors", "test_new_colors"});
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(a.episodes[k].scene == k % 3);
    CHECK(a.episodes[5 + k].scene == a.episodes[k].scene);
    CHECK(a.episodes[10 + k].scene == a.episodes[k].scene);
    CHECK(a.episodes[k].seed == 4);
  }

  EvalOptions other = opts;
  other.seed = 18;
  CHECK(eval_episodes_csv(evaluate(net, suites, 5, other)) != eval_episodes_csv(a));

  // Greedy evaluation does not depend on the sampling stream.
  EvalOptions greedy = opts;
  greedy.deterministic = true;
  EvalOptions greedy2 = greedy;
  greedy2.seed = 99;
  CHECK(eval_episodes_csv(evaluate(net, suites, 4, greedy)) == eval_episodes_csv(evaluate(net, suites, 4, greedy2)));

  const std::string table = eval_table(a);
  CHECK(table.find("test_swapped_colors") != std::string::npos);
  CHECK(table.find("+-") != std::string::npos);
}

TEST_CASE("aggregates are recomputable from persisted episode records") {
  Rng rng(4);
  const PolicyNet net = PolicyNet::initialized(maze_arch(68), rng);
  const std::vector<EnvSuite> suites{make_env_suite(EnvKind::Maze, SuiteVariant::Test, 5, {}, short_maze(), small_gen()),
                                     make_env_suite(EnvKind::Maze, SuiteVariant::TestNewColors, 5, {}, short_maze(),
                                                    small_gen())};
  EvalReport report = evaluate(net, suites, 4, {.seed = 1, .policy_seed = 1});
  report.append(evaluate(net, suites, 4, {.seed = 2, .policy_seed = 2}));

  const auto dir = std::filesystem::temp_directory_path() / "amrpg_test_analyze";
  std::filesystem::create_directories(dir);
  const auto path = dir / "episodes.csv";
  {
    std::ofstream os(path);
    os << eval_episodes_csv(report);
  }
  const EvalReport loaded = read_eval_episodes_csv(path);
  CHECK(eval_episodes_csv(loaded) == eval_episodes_csv(report));
  CHECK(eval_summary_csv(loaded) == eval_summary_csv(report));

  // Independent recomputation of the pooled test row.
  std::vector<double> costs;
  for (const auto& e : loaded.episodes)
    if (e.variant == "test") costs.push_back(e.cost);
  REQUIRE(costs.size() == 8);
  double mean = 0.0;
  for (double c : costs) mean += c / 8.0;
  CHECK(report.summary()[0].cost.mean == doctest::Approx(mean).epsilon(1e-14));

  const auto by_seed = report.summary_by_seed();
  CHECK(by_seed.size() == 4);
  CHECK(by_seed[0].first == 1);
  CHECK(by_seed[0].second.cost.n == 4);

  CHECK_THROWS_AS(read_eval_episodes_csv(dir / "absent.csv"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("saliency aggregation sorts per seed before averaging") {
  SaliencyReport a, b;
  a.saliency = {0.1, 3.0, 1.0};
  b.saliency = {5.0, 0.3, 2.0};
  const std::vector<SaliencyReport> reports{a, b};
  const auto ranks = aggregate_saliency(reports);
  REQUIRE(ranks.size() == 3);
  CHECK(ranks[0].mean == doctest::Approx(4.0));
  CHECK(ranks[0].std == doctest::Approx(std::sqrt(2.0)));
  CHECK(ranks[1].mean == doctest::Approx(1.5));
  CHECK(ranks[2].mean == doctest::Approx(0.2));
  CHECK(aggregate_saliency(std::span<const SaliencyReport>{}).empty());

  const std::vector<SaliencyReport> single{a};
  for (const auto& r : aggregate_saliency(single)) CHECK(r.std == 0.0);
  CHECK(saliency_aggregate_csv(ranks).rfind("rank,mean,std\n0,4,", 0) == 0);
}

TEST_CASE("seed ensembles isolate failures") {
  EnsembleSpec spec;
  spec.architecture.observation_dim = 1;
  spec.architecture.recurrent = {{5, 4, Activation::BetaSoftmax, 100.0}};
  spec.architecture.head = {{4, kGridActionCount, Activation::Softmax, 1.0}};
  spec.train.max_epochs = 3;
  spec.train.rollouts_per_epoch = 8;
  spec.train.learning_rate = 0.05;
  spec.train.lambda = 0.1;
  spec.train.convergence_tol = 0.0;
  spec.train_suite = make_env_suite(EnvKind::Grid, SuiteVariant::Train, 0);
  spec.eval_suites = {make_env_suite(EnvKind::Grid, SuiteVariant::Test, 0)};
  spec.eval_episodes = 4;
  spec.on_seed_start = [](std::uint64_t seed) {
    if (seed == 2) throw std::runtime_error("injected failure");
  };
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const EnsembleResult r = seed_ensemble(spec, seeds);
  REQUIRE(r.seeds.size() == 3);
  CHECK(r.seeds[0].ok);
  CHECK_FALSE(r.seeds[1].ok);
  CHECK(r.seeds[1].error == "injected failure");
  CHECK(r.seeds[2].ok);
  CHECK(r.eval.episodes.size() == 8);
  CHECK(r.saliency.size() == 4);

  // A seed's outcome does not depend on which other seeds ran.
  const std::vector<std::uint64_t> only3{3};
  const EnsembleResult solo = seed_ensemble(spec, only3);
  CHECK(solo.seeds[0].train->final_net == r.seeds[2].train->final_net);
  for (const auto& rank : solo.saliency) CHECK(rank.std == 0.0);

  CHECK_THROWS_AS(seed_ensemble(spec, std::span<const std::uint64_t>{}), std::invalid_argument);
}
