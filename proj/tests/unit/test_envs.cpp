#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <vector>

#include "amrpg/envs.hpp"

using namespace amrpg;

namespace {

Action grid_action(GridAction a) { return Action{static_cast<std::size_t>(a), 0.0}; }
Action turn(double omega) { return Action{0, omega}; }

// Brute-force ray marcher: walks the ray in small steps until it leaves the
// open region, then bisects the crossing. Shares no code with ray_cast.
struct MarchHit {
  double depth;
  std::optional<std::size_t> obstacle;  // empty for the outer wall
};

bool blocked(const MazeScene& s, double x, double y, std::optional<std::size_t>* which) {
  if (x <= 0 || y <= 0 || x >= s.size || y >= s.size) {
    if (which) which->reset();
    return true;
  }
  for (std::size_t k = 0; k < s.obstacles.size(); ++k) {
    const Box& b = s.obstacles[k].box;
    if (x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1) {
      if (which) *which = k;
      return true;
    }
  }
  return false;
}

MarchHit march(const MazeScene& s, Vec2 p, double angle, double max_range) {
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double h = 2e-3;
  double t = 0;
  while (t < max_range && !blocked(s, p.x + t * dx, p.y + t * dy, nullptr)) t += h;
  if (t >= max_range) return {max_range, std::nullopt};
  double lo = std::max(0.0, t - h), hi = t;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (blocked(s, p.x + mid * dx, p.y + mid * dy, nullptr) ? hi : lo) = mid;
  }
  std::optional<std::size_t> which;
  blocked(s, p.x + hi * dx, p.y + hi * dy, &which);
  return {hi, which};
}

}  // namespace

TEST_CASE("grid start, goal and alternating path") {
  GridNavEnv env;
  Rng rng(0);
  const StepResult r0 = env.reset(rng);
  CHECK(r0.cost == 1.0);
  CHECK(r0.observation(0) == 0.0);
  CHECK_FALSE(r0.done);
  StepResult r;
  for (int i = 0; i < 8; ++i) {
    r = env.step(grid_action(i % 2 == 0 ? GridAction::Up : GridAction::Right));
    // Every step is goal-ward, so the cost drops by exactly 1/8.
    CHECK(r.cost == doctest::Approx(1.0 - (i + 1) / 8.0));
  }
  CHECK(env.position() == GridCell{1, 5});
  CHECK(r.cost == 0.0);
  CHECK(r.observation(0) == 1.0);
  CHECK(r.done);  // t = T
  CHECK_THROWS_AS(env.step(grid_action(GridAction::Stop)), std::logic_error);
}

TEST_CASE("grid boundary clamps and stop semantics") {
  GridNavEnv env;
  Rng rng(0);
  env.reset(rng);
  env.step(grid_action(GridAction::Left));  // (5,0)
  env.step(grid_action(GridAction::Left));  // clamped
  CHECK(env.position() == GridCell{5, 0});
  env.step(grid_action(GridAction::Down));
  env.step(grid_action(GridAction::Down));  // clamped at row 6
  CHECK(env.position() == GridCell{6, 0});
  const auto r = env.step(grid_action(GridAction::Stop));  // stop away from the goal continues
  CHECK_FALSE(r.done);
  CHECK(r.cost == doctest::Approx(10.0 / 8.0));
  CHECK_THROWS_AS(env.step(Action{5, 0.0}), std::invalid_argument);

  GridConfig near;
  near.start = {1, 4};
  GridNavEnv e2(near);
  e2.reset(rng);
  const auto g = e2.step(grid_action(GridAction::Right));
  CHECK(g.cost == 0.0);
  CHECK_FALSE(g.done);
  const auto s = e2.step(grid_action(GridAction::Stop));
  CHECK(s.done);
  CHECK(e2.time() == 2);
}

TEST_CASE("grid cost is zero exactly at the goal") {
  GridNavEnv env;
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    env.reset(rng);
    while (!env.done()) {
      const auto r = env.step(Action{rng.uniform_index(5), 0.0});
      CHECK((r.cost == 0.0) == env.at_goal());
      CHECK((r.observation(0) == 1.0) == env.at_goal());
      CHECK(r.cost >= 0.0);
    }
  }
}

TEST_CASE("zero horizon episode is done at reset") {
  GridConfig c;
  c.horizon = 0;
  GridNavEnv env(c);
  Rng rng(0);
  const auto r = env.reset(rng);
  CHECK(r.done);
  CHECK(r.cost == 1.0);
  CHECK_THROWS_AS(env.step(grid_action(GridAction::Up)), std::logic_error);
}

TEST_CASE("maze straight-line kinematics") {
  MazeScene scene;
  scene.start_heading = 0.0;
  MazeEnv env(scene);
  Rng rng(0);
  env.reset(rng);
  for (int i = 0; i < 5; ++i) env.step(turn(0.0));
  CHECK(env.state().position.x == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(env.state().position.y == doctest::Approx(1.0).epsilon(1e-12));

  // Turning: heading += omega * dt, clipped at omega_max.
  MazeEnv e2(scene);
  e2.reset(rng);
  e2.step(turn(1.0));
  CHECK(e2.state().heading == doctest::Approx(0.1));
  e2.step(turn(100.0));
  CHECK(e2.state().heading == doctest::Approx(0.1 + std::numbers::pi * 0.1));
  CHECK_THROWS_AS(e2.step(turn(NAN)), std::invalid_argument);
}

TEST_CASE("maze observation layout and horizon") {
  const EnvSuite suite = make_env_suite(EnvKind::Maze, SuiteVariant::Train, 3);
  auto env = suite.make(0);
  Rng rng(0);
  auto r = env->reset(rng);
  CHECK(r.observation.size() == 68);
  CHECK(r.cost == doctest::Approx(1.0));
  std::size_t steps = 0;
  while (!r.done) {
    r = env->step(turn(0.3));
    ++steps;
    CHECK(r.cost >= 0.0);
  }
  CHECK(steps == 80);
  CHECK_THROWS_AS(env->step(turn(0.0)), std::logic_error);
}

TEST_CASE("ray angles span the field of view evenly") {
  MazeParams p;
  CHECK(ray_angle(0.0, 0, p) == doctest::Approx(-std::numbers::pi / 4));
  CHECK(ray_angle(0.0, 16, p) == doctest::Approx(std::numbers::pi / 4));
  CHECK(ray_angle(0.0, 8, p) == doctest::Approx(0.0));
  for (std::size_t i = 1; i < 17; ++i)
    CHECK(ray_angle(1.0, i, p) - ray_angle(1.0, i - 1, p) == doctest::Approx(std::numbers::pi / 2 / 16));
}

TEST_CASE("wall 3 m ahead") {
  MazeScene scene;
  MazeParams p;
  const MazeState s{{7.0, 5.0}, 0.0};
  const auto obs = ray_cast(scene, s, p);
  REQUIRE(obs.hits.size() == 17);
  CHECK(obs.hits[8].depth == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(obs.hits[8].color == scene.wall_color);
  // Edge rays at +-45 degrees hit the same wall at 3 * sqrt(2).
  CHECK(obs.hits[0].depth == doctest::Approx(3.0 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("corner facing outward") {
  MazeScene scene;
  MazeParams p;
  for (double heading : {0.0, 0.3, std::numbers::pi / 4, 1.2}) {
    const auto obs = ray_cast(scene, MazeState{{0.01, 0.01}, heading}, p);
    for (const auto& h : obs.hits) CHECK(h.depth <= 10.0 * std::sqrt(2.0) + 1e-12);
  }
}

TEST_CASE("ray_cast agrees with a ray-marching oracle") {
  Rng rng(404);
  const EnvSuite suite = make_env_suite(EnvKind::Maze, SuiteVariant::Train, 12);
  MazeParams p;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const MazeScene& scene = suite.scenes[rng.uniform_index(suite.scenes.size())];
    Vec2 pos;
    do {
      pos = {rng.uniform(0.2, 9.8), rng.uniform(0.2, 9.8)};
    } while (blocked(scene, pos.x, pos.y, nullptr));
    const MazeState st{pos, rng.uniform(-std::numbers::pi, std::numbers::pi)};
    const auto obs = ray_cast(scene, st, p);
    for (std::size_t i = 0; i < obs.hits.size(); ++i) {
      const MarchHit m = march(scene, pos, ray_angle(st.heading, i, p), p.max_range);
      CHECK(std::abs(obs.hits[i].depth - m.depth) < 1e-3);
      const Color expected = m.obstacle ? scene.obstacles[*m.obstacle].color : scene.wall_color;
      CHECK(obs.hits[i].color == expected);
      ++checked;
    }
  }
  CHECK(checked == 60 * 17);
}

TEST_CASE("recolouring changes colours but never depths") {
  const EnvSuite test = make_env_suite(EnvKind::Maze, SuiteVariant::Test, 5);
  const EnvSuite swapped = make_env_suite(EnvKind::Maze, SuiteVariant::TestSwappedColors, 5);
  const EnvSuite fresh = make_env_suite(EnvKind::Maze, SuiteVariant::TestNewColors, 5);
  Rng rng(6);
  MazeParams p;
  for (std::size_t k = 0; k < test.scenes.size(); ++k) {
    for (int trial = 0; trial < 5; ++trial) {
      Vec2 pos;
      do {
        pos = {rng.uniform(0.2, 9.8), rng.uniform(0.2, 9.8)};
      } while (blocked(test.scenes[k], pos.x, pos.y, nullptr));
      const MazeState st{pos, rng.uniform(-3.0, 3.0)};
      const auto a = ray_cast(test.scenes[k], st, p);
      const auto b = ray_cast(swapped.scenes[k], st, p);
      const auto c = ray_cast(fresh.scenes[k], st, p);
      for (std::size_t i = 0; i < a.hits.size(); ++i) {
        CHECK(a.hits[i].depth == b.hits[i].depth);
        CHECK(a.hits[i].depth == c.hits[i].depth);
        if (a.hits[i].color == test.scenes[k].wall_color) CHECK(b.hits[i].color == a.hits[i].color);
      }
    }
  }
}

TEST_CASE("robot never leaves the maze or enters an obstacle") {
  const EnvSuite suite = make_env_suite(EnvKind::Maze, SuiteVariant::Train, 8);
  Rng rng(9);
  for (int ep = 0; ep < 40; ++ep) {
    const std::size_t k = rng.uniform_index(suite.size());
    auto env = suite.make(k);
    auto* maze = dynamic_cast<MazeEnv*>(env.get());
    REQUIRE(maze);
    env->reset(rng);
    while (!env->done()) {
      env->step(turn(rng.uniform(-4.0, 4.0)));
      const Vec2 q = maze->state().position;
      CHECK(q.x >= 0.0);
      CHECK(q.y >= 0.0);
      CHECK(q.x <= 10.0);
      CHECK(q.y <= 10.0);
      for (const auto& o : maze->scene().obstacles) CHECK_FALSE(o.box.contains_strictly(q));
    }
  }
}

TEST_CASE("collision projection") {
  MazeScene scene;
  scene.obstacles.push_back({{4, 4, 5, 5}, {1, 0, 0}});
  const Vec2 out = resolve_collisions(scene, {-0.5, 11.0});
  CHECK(out == Vec2{0.0, 10.0});
  const Vec2 in = resolve_collisions(scene, {4.1, 4.5});  // nearest face is x = 4
  CHECK(in.x == doctest::Approx(4.0));
  CHECK(in.y == doctest::Approx(4.5));
  const Vec2 free = resolve_collisions(scene, {2.0, 3.0});
  CHECK(free == Vec2{2.0, 3.0});
}

TEST_CASE("episode determinism") {
  const EnvSuite suite = make_env_suite(EnvKind::Maze, SuiteVariant::Test, 2);
  std::vector<double> omegas;
  Rng rng(3);
  for (int i = 0; i < 80; ++i) omegas.push_back(rng.uniform(-3, 3));
  auto run = [&] {
    auto env = suite.make(4);
    Rng r(1);
    std::vector<Vector> obs{env->reset(r).observation};
    for (double w : omegas) obs.push_back(env->step(turn(w)).observation);
    return obs;
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("suite construction invariants") {
  const EnvSuite train = make_env_suite(EnvKind::Maze, SuiteVariant::Train, 0);
  const EnvSuite test = make_env_suite(EnvKind::Maze, SuiteVariant::Test, 0);
  const EnvSuite swapped = make_env_suite(EnvKind::Maze, SuiteVariant::TestSwappedColors, 0);
  const EnvSuite fresh = make_env_suite(EnvKind::Maze, SuiteVariant::TestNewColors, 0);
  CHECK(train.size() == 250);
  CHECK(test.size() == 20);
  CHECK(swapped.size() == 20);
  CHECK(fresh.size() == 20);
  MazeGenConfig gen;
  std::vector<Color> training_colors{gen.wall_color};
  for (const auto& s : train.scenes) {
    REQUIRE(s.obstacles.size() == 2);
    CHECK(s.obstacles[0].color == gen.red);
    CHECK(s.obstacles[1].color == gen.blue);
    const auto& r = s.obstacles[0].box;
    const double cx = 0.5 * (r.x0 + r.x1), cy = 0.5 * (r.y0 + r.y1);
    CHECK(r.x1 - r.x0 == doctest::Approx(1.0));
    CHECK(cx >= gen.red_region.x0);
    CHECK(cx <= gen.red_region.x1);
    CHECK(cy >= gen.red_region.y0);
    CHECK(cy <= gen.red_region.y1);
    const auto& b = s.obstacles[1].box;
    CHECK(0.5 * (b.x0 + b.x1) >= gen.blue_region.x0);
    CHECK(0.5 * (b.y0 + b.y1) <= gen.blue_region.y1);
    CHECK(s.wall_color == gen.wall_color);
  }
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& t = test.scenes[k];
    CHECK(t.obstacles[0].box == swapped.scenes[k].obstacles[0].box);
    CHECK(t.obstacles[1].box == swapped.scenes[k].obstacles[1].box);
    CHECK(t.obstacles[0].box == fresh.scenes[k].obstacles[0].box);
    CHECK(swapped.scenes[k].obstacles[0].color == gen.blue);
    CHECK(swapped.scenes[k].obstacles[1].color == gen.red);
    for (const Color& c : {fresh.scenes[k].wall_color, fresh.scenes[k].obstacles[0].color,
                           fresh.scenes[k].obstacles[1].color}) {
      CHECK(c != gen.wall_color);
      CHECK(c != gen.red);
      CHECK(c != gen.blue);
    }
  }
  // Test geometry differs from training geometry, and suites are reproducible.
  CHECK(test.scenes[0].obstacles[0].box != train.scenes[0].obstacles[0].box);
  CHECK(make_env_suite(EnvKind::Maze, SuiteVariant::Train, 0) == train);
  CHECK(make_env_suite(EnvKind::Maze, SuiteVariant::Train, 1) != train);
  CHECK_THROWS_AS(suite_variant_from_string("validation"), std::invalid_argument);
}

TEST_CASE("suite file round trip") {
  const EnvSuite s = make_env_suite(EnvKind::Maze, SuiteVariant::TestNewColors, 17);
  CHECK(suite_from_string(suite_to_string(s)) == s);
  const EnvSuite g = make_env_suite(EnvKind::Grid, SuiteVariant::Train, 0);
  CHECK(suite_from_string(suite_to_string(g)) == g);
  const auto path = std::filesystem::temp_directory_path() / "amrpg_test_suite.txt";
  save_suite(s, path);
  CHECK(load_suite(path) == s);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(suite_from_string("AMRPG-SUITE 2\n"), std::runtime_error);
}
