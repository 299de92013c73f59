#include "amrpg/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace amrpg {

StepResult Environment::reset(Rng& rng) {
  t_ = 0;
  done_ = false;
  StepResult r = checked(do_reset(rng));
  if (horizon() == 0) r.done = true;
  done_ = r.done;
  return r;
}

StepResult Environment::step(const Action& action) {
  if (done_ || t_ >= horizon()) {
    throw std::logic_error("Environment::step called after the episode ended (t = " + std::to_string(t_) + ")");
  }
  StepResult r = checked(do_step(action));
  ++t_;
  if (t_ >= horizon()) r.done = true;
  done_ = r.done;
  return r;
}

StepResult Environment::checked(StepResult r) {
  if (!std::isfinite(r.cost) || r.cost < 0.0) {
    throw std::runtime_error("Environment produced an invalid cost " + std::to_string(r.cost));
  }
  return r;
}

// --- grid -------------------------------------------------------------------

namespace {

int manhattan(GridCell a, GridCell b) { return std::abs(a.row - b.row) + std::abs(a.col - b.col); }

}  // namespace

GridNavEnv::GridNavEnv(GridConfig config) : config_(config), pos_(config.start) {
  if (config_.rows <= 0 || config_.cols <= 0) throw std::invalid_argument("GridNavEnv: empty grid");
  auto inside = [&](GridCell c) { return c.row >= 0 && c.row < config_.rows && c.col >= 0 && c.col < config_.cols; };
  if (!inside(config_.start) || !inside(config_.goal)) throw std::invalid_argument("GridNavEnv: start/goal off grid");
  if (config_.start == config_.goal) throw std::invalid_argument("GridNavEnv: start equals goal");
}

double GridNavEnv::normalized_distance() const {
  return static_cast<double>(manhattan(pos_, config_.goal)) / manhattan(config_.start, config_.goal);
}

Vector GridNavEnv::observe() const {
  Vector y(1);
  y(0) = at_goal() ? 1.0 : 0.0;
  return y;
}

StepResult GridNavEnv::do_reset(Rng&) {
  pos_ = config_.start;
  return {observe(), normalized_distance(), false};
}

StepResult GridNavEnv::do_step(const Action& action) {
  static constexpr std::array<GridCell, kGridActionCount> kMoves{{{-1, 0}, {0, 1}, {1, 0}, {0, -1}, {0, 0}}};
  if (action.index >= kGridActionCount) {
    throw std::invalid_argument("GridNavEnv: invalid action index " + std::to_string(action.index));
  }
  const bool stop_at_goal = action.index == static_cast<std::size_t>(GridAction::Stop) && at_goal();
  const GridCell d = kMoves[action.index];
  pos_.row = std::clamp(pos_.row + d.row, 0, config_.rows - 1);
  pos_.col = std::clamp(pos_.col + d.col, 0, config_.cols - 1);
  return {observe(), normalized_distance(), stop_at_goal};
}

// --- maze -------------------------------------------------------------------

Vector RayObservation::flatten() const {
  Vector y(static_cast<Eigen::Index>(4 * hits.size()));
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(4 * i);
    y(k) = hits[i].color.r;
    y(k + 1) = hits[i].color.g;
    y(k + 2) = hits[i].color.b;
    y(k + 3) = hits[i].depth;
  }
  return y;
}

double ray_angle(double heading, std::size_t i, const MazeParams& params) {
  const double fov = params.fov_deg * std::numbers::pi / 180.0;
  if (params.rays == 1) return heading;
  return heading - 0.5 * fov + fov * static_cast<double>(i) / static_cast<double>(params.rays - 1);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Slab test: entry and exit distances of the ray o + t d through the box.
std::pair<double, double> slab(const Box& b, Vec2 o, Vec2 d) {
  double t0 = -kInf, t1 = kInf;
  auto axis = [&](double origin, double dir, double lo, double hi) {
    if (dir == 0.0) {
      if (origin < lo || origin > hi) {
        t0 = kInf;
        t1 = -kInf;
      }
      return;
    }
    double a = (lo - origin) / dir;
    double c = (hi - origin) / dir;
    if (a > c) std::swap(a, c);
    t0 = std::max(t0, a);
    t1 = std::min(t1, c);
  };
  axis(o.x, d.x, b.x0, b.x1);
  axis(o.y, d.y, b.y0, b.y1);
  return {t0, t1};
}

}  // namespace

RayObservation ray_cast(const MazeScene& scene, const MazeState& state, const MazeParams& params) {
  RayObservation obs;
  obs.hits.reserve(params.rays);
  const Box walls{0.0, 0.0, scene.size, scene.size};
  for (std::size_t i = 0; i < params.rays; ++i) {
    const double a = ray_angle(state.heading, i, params);
    const Vec2 d{std::cos(a), std::sin(a)};
    // From inside the square the wall hit is the slab exit.
    double best = std::max(0.0, slab(walls, state.position, d).second);
    Color color = scene.wall_color;
    for (const auto& ob : scene.obstacles) {
      const auto [t0, t1] = slab(ob.box, state.position, d);
      if (t0 > t1 || t1 < 0.0) continue;
      const double hit = std::max(t0, 0.0);
      if (hit < best) {
        best = hit;
        color = ob.color;
      }
    }
    obs.hits.push_back({color, std::min(best, params.max_range)});
  }
  return obs;
}

Vec2 resolve_collisions(const MazeScene& scene, Vec2 p) {
  p.x = std::clamp(p.x, 0.0, scene.size);
  p.y = std::clamp(p.y, 0.0, scene.size);
  for (const auto& ob : scene.obstacles) {
    const Box& b = ob.box;
    if (!b.contains_strictly(p)) continue;
    const double left = p.x - b.x0, right = b.x1 - p.x, down = p.y - b.y0, up = b.y1 - p.y;
    const double m = std::min({left, right, down, up});
    if (m == left) {
      p.x = b.x0;
    } else if (m == right) {
      p.x = b.x1;
    } else if (m == down) {
      p.y = b.y0;
    } else {
      p.y = b.y1;
    }
  }
  return p;
}

MazeEnv::MazeEnv(MazeScene scene, MazeParams params) : scene_(std::move(scene)), params_(params) {
  if (!(scene_.size > 0.0)) throw std::invalid_argument("MazeEnv: maze size must be positive");
  if (params_.rays == 0) throw std::invalid_argument("MazeEnv: need at least one ray");
  state_ = {scene_.start, scene_.start_heading};
  initial_distance_ = distance_to_goal();
  if (!(initial_distance_ > 0.0)) throw std::invalid_argument("MazeEnv: start coincides with goal");
}

double MazeEnv::distance_to_goal() const {
  return std::hypot(state_.position.x - scene_.goal.x, state_.position.y - scene_.goal.y);
}

double MazeEnv::normalized_distance() const { return distance_to_goal() / initial_distance_; }

StepResult MazeEnv::do_reset(Rng&) {
  state_ = {scene_.start, scene_.start_heading};
  return {ray_cast(scene_, state_, params_).flatten(), normalized_distance(), false};
}

StepResult MazeEnv::do_step(const Action& action) {
  if (!std::isfinite(action.value)) throw std::invalid_argument("MazeEnv: non-finite turning rate");
  const double omega = std::clamp(action.value, -params_.omega_max, params_.omega_max);
  state_.heading = std::remainder(state_.heading + omega * params_.dt, 2.0 * std::numbers::pi);
  Vec2 p{state_.position.x + params_.speed * params_.dt * std::cos(state_.heading),
         state_.position.y + params_.speed * params_.dt * std::sin(state_.heading)};
  state_.position = resolve_collisions(scene_, p);
  return {ray_cast(scene_, state_, params_).flatten(), normalized_distance(), false};
}

// --- suites -----------------------------------------------------------------

std::string_view to_string(EnvKind k) { return k == EnvKind::Grid ? "grid" : "maze"; }

EnvKind env_kind_from_string(std::string_view s) {
  if (s == "grid") return EnvKind::Grid;
  if (s == "maze") return EnvKind::Maze;
  throw std::invalid_argument("unknown environment kind '" + std::string(s) + "'");
}

std::string_view to_string(SuiteVariant v) {
  switch (v) {
    case SuiteVariant::Train: return "train";
    case SuiteVariant::Test: return "test";
    case SuiteVariant::TestSwappedColors: return "test_swapped_colors";
    case SuiteVariant::TestNewColors: return "test_new_colors";
  }
  return "?";
}

SuiteVariant suite_variant_from_string(std::string_view s) {
  if (s == "train") return SuiteVariant::Train;
  if (s == "test") return SuiteVariant::Test;
  if (s == "test_swapped_colors") return SuiteVariant::TestSwappedColors;
  if (s == "test_new_colors") return SuiteVariant::TestNewColors;
  throw std::invalid_argument("unknown suite variant '" + std::string(s) + "'");
}

std::unique_ptr<Environment> EnvSuite::make(std::size_t index) const {
  if (kind == EnvKind::Grid) return std::make_unique<GridNavEnv>(grid);
  if (index >= scenes.size()) throw std::out_of_range("EnvSuite::make: maze index out of range");
  return std::make_unique<MazeEnv>(scenes[index], maze);
}

namespace {

Obstacle sample_obstacle(Rng& rng, const Box& region, double size, Color color) {
  const double cx = rng.uniform(region.x0, region.x1);
  const double cy = rng.uniform(region.y0, region.y1);
  const double h = 0.5 * size;
  return {{cx - h, cy - h, cx + h, cy + h}, color};
}

std::vector<MazeScene> sample_scenes(Rng& rng, std::size_t count, const MazeGenConfig& gen) {
  std::vector<MazeScene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    MazeScene s;
    s.wall_color = gen.wall_color;
    s.obstacles.push_back(sample_obstacle(rng, gen.red_region, gen.obstacle_size, gen.red));
    s.obstacles.push_back(sample_obstacle(rng, gen.blue_region, gen.obstacle_size, gen.blue));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

EnvSuite make_env_suite(EnvKind kind, SuiteVariant variant, std::uint64_t suite_seed, const GridConfig& grid,
                        const MazeParams& maze, const MazeGenConfig& gen) {
  EnvSuite suite;
  suite.kind = kind;
  suite.variant = variant;
  suite.grid = grid;
  suite.maze = maze;
  if (kind == EnvKind::Grid) return suite;

  // Independent streams: 2s for training geometry, 2s + 1 for testing geometry.
  if (variant == SuiteVariant::Train) {
    Rng rng(2 * suite_seed);
    suite.scenes = sample_scenes(rng, gen.train_count, gen);
    return suite;
  }
  Rng rng(2 * suite_seed + 1);
  suite.scenes = sample_scenes(rng, gen.test_count, gen);
  for (auto& s : suite.scenes) {
    if (variant == SuiteVariant::TestSwappedColors) {
      std::swap(s.obstacles[0].color, s.obstacles[1].color);
    } else if (variant == SuiteVariant::TestNewColors) {
      s.wall_color = gen.new_wall_color;
      s.obstacles[0].color = gen.new_red;
      s.obstacles[1].color = gen.new_blue;
    }
  }
  return suite;
}

// Suite file layout:
//   AMRPG-SUITE 1
//   kind <grid|maze>
//   variant <name>
//   grid <rows> <cols> <start_row> <start_col> <goal_row> <goal_col> <horizon>
//   maze_params <speed> <dt> <horizon> <omega_max> <rays> <fov_deg> <max_range>
//   scenes <count>
//   scene <size> <start_x> <start_y> <heading> <goal_x> <goal_y> <wall_r> <wall_g> <wall_b> <obstacle count>
//   box <x0> <y0> <x1> <y1> <r> <g> <b>      (one per obstacle)
std::string suite_to_string(const EnvSuite& suite) {
  std::ostringstream os;
  os.precision(17);
  os << "AMRPG-SUITE 1\n";
  os << "kind " << to_string(suite.kind) << "\n";
  os << "variant " << to_string(suite.variant) << "\n";
  const auto& g = suite.grid;
  os << "grid " << g.rows << " " << g.cols << " " << g.start.row << " " << g.start.col << " " << g.goal.row << " "
     << g.goal.col << " " << g.horizon << "\n";
  const auto& m = suite.maze;
  os << "maze_params " << m.speed << " " << m.dt << " " << m.horizon << " " << m.omega_max << " " << m.rays << " "
     << m.fov_deg << " " << m.max_range << "\n";
  os << "scenes " << suite.scenes.size() << "\n";
  for (const auto& s : suite.scenes) {
    os << "scene " << s.size << " " << s.start.x << " " << s.start.y << " " << s.start_heading << " " << s.goal.x
       << " " << s.goal.y << " " << s.wall_color.r << " " << s.wall_color.g << " " << s.wall_color.b << " "
       << s.obstacles.size() << "\n";
    for (const auto& o : s.obstacles) {
      os << "box " << o.box.x0 << " " << o.box.y0 << " " << o.box.x1 << " " << o.box.y1 << " " << o.color.r << " "
         << o.color.g << " " << o.color.b << "\n";
    }
  }
  return os.str();
}

namespace {

void expect(std::istream& is, const char* word) {
  std::string tok;
  if (!(is >> tok) || tok != word) {
    throw std::runtime_error(std::string("suite file: expected '") + word + "', found '" + tok + "'");
  }
}

template <typename T>
void read(std::istream& is, T& v) {
  if (!(is >> v)) throw std::runtime_error("suite file: malformed number");
}

}  // namespace

EnvSuite suite_from_string(const std::string& text) {
  std::istringstream is(text);
  EnvSuite suite;
  std::string word;
  int version = 0;
  expect(is, "AMRPG-SUITE");
  read(is, version);
  if (version != 1) throw std::runtime_error("suite file: unsupported version");
  expect(is, "kind");
  read(is, word);
  suite.kind = env_kind_from_string(word);
  expect(is, "variant");
  read(is, word);
  suite.variant = suite_variant_from_string(word);
  expect(is, "grid");
  auto& g = suite.grid;
  read(is, g.rows);
  read(is, g.cols);
  read(is, g.start.row);
  read(is, g.start.col);
  read(is, g.goal.row);
  read(is, g.goal.col);
  read(is, g.horizon);
  expect(is, "maze_params");
  auto& m = suite.maze;
  read(is, m.speed);
  read(is, m.dt);
  read(is, m.horizon);
  read(is, m.omega_max);
  read(is, m.rays);
  read(is, m.fov_deg);
  read(is, m.max_range);
  expect(is, "scenes");
  std::size_t n = 0;
  read(is, n);
  for (std::size_t i = 0; i < n; ++i) {
    MazeScene s;
    std::size_t obstacles = 0;
    expect(is, "scene");
    read(is, s.size);
    read(is, s.start.x);
    read(is, s.start.y);
    read(is, s.start_heading);
    read(is, s.goal.x);
    read(is, s.goal.y);
    read(is, s.wall_color.r);
    read(is, s.wall_color.g);
    read(is, s.wall_color.b);
    read(is, obstacles);
    for (std::size_t k = 0; k < obstacles; ++k) {
      Obstacle o;
      expect(is, "box");
      read(is, o.box.x0);
      read(is, o.box.y0);
      read(is, o.box.x1);
      read(is, o.box.y1);
      read(is, o.color.r);
      read(is, o.color.g);
      read(is, o.color.b);
      s.obstacles.push_back(o);
    }
    suite.scenes.push_back(std::move(s));
  }
  return suite;
}

void save_suite(const EnvSuite& suite, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write suite file " + path.string());
  os << suite_to_string(suite);
}

EnvSuite load_suite(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing suite file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return suite_from_string(buf.str());
}

}  // namespace amrpg
