#ifndef AMRPG_ENVS_HPP
#define AMRPG_ENVS_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "amrpg/net.hpp"
#include "amrpg/numerics.hpp"

namespace amrpg {

enum class ActionKind { Categorical, Continuous };

struct StepResult {
  Vector observation;
  double cost = 0.0;
  bool done = false;
};

/// Episodic environment. reset() returns y_0 together with c_0 so that an
/// episode of horizon T accumulates T + 1 costs, c_0 .. c_T.
class Environment {
 public:
  virtual ~Environment() = default;

  StepResult reset(Rng& rng);
  /// Throws std::logic_error when called after the episode is done.
  StepResult step(const Action& action);

  virtual std::size_t horizon() const = 0;
  virtual std::size_t observation_dim() const = 0;
  virtual ActionKind action_kind() const = 0;
  /// Number of discrete actions; 0 for continuous control.
  virtual std::size_t action_count() const = 0;
  /// Current distance to goal divided by the initial distance.
  virtual double normalized_distance() const = 0;

  std::size_t time() const { return t_; }
  bool done() const { return done_; }

 protected:
  virtual StepResult do_reset(Rng& rng) = 0;
  virtual StepResult do_step(const Action& action) = 0;

 private:
  StepResult checked(StepResult r);

  std::size_t t_ = 0;
  bool done_ = true;
};

// ---------------------------------------------------------------------------
// Discrete grid navigation

struct GridCell {
  int row = 0;
  int col = 0;
  bool operator==(const GridCell&) const = default;
};

enum class GridAction : std::size_t { Up = 0, Right = 1, Down = 2, Left = 3, Stop = 4 };
inline constexpr std::size_t kGridActionCount = 5;

struct GridConfig {
  int rows = 7;
  int cols = 7;
  GridCell start{5, 1};
  GridCell goal{1, 5};
  std::size_t horizon = 8;

  bool operator==(const GridConfig&) const = default;
};

/// x_{t+1} = x_t + u_t clamped to the grid; y_t = 1 at the goal, else 0;
/// c_t = |x_t - g|_1 / |x_0 - g|_1. Ends at t = T or on `stop` at the goal.
class GridNavEnv final : public Environment {
 public:
  explicit GridNavEnv(GridConfig config = {});

  std::size_t horizon() const override { return config_.horizon; }
  std::size_t observation_dim() const override { return 1; }
  ActionKind action_kind() const override { return ActionKind::Categorical; }
  std::size_t action_count() const override { return kGridActionCount; }
  double normalized_distance() const override;

  const GridConfig& config() const { return config_; }
  GridCell position() const { return pos_; }
  bool at_goal() const { return pos_ == config_.goal; }

 protected:
  StepResult do_reset(Rng& rng) override;
  StepResult do_step(const Action& action) override;

 private:
  Vector observe() const;

  GridConfig config_;
  GridCell pos_;
};

// ---------------------------------------------------------------------------
// Continuous maze with an RGB-depth ray sensor

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

struct Color {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  bool operator==(const Color&) const = default;
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool contains_strictly(Vec2 p) const { return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1; }
  bool operator==(const Box&) const = default;
};

struct Obstacle {
  Box box;
  Color color;
  bool operator==(const Obstacle&) const = default;
};

/// One maze layout. The outer walls are the square [0, size]^2.
struct MazeScene {
  double size = 10.0;
  Vec2 start{1.0, 1.0};
  double start_heading = 0.7853981633974483;  // 45 degrees
  Vec2 goal{9.0, 9.0};
  Color wall_color{0.5, 0.5, 0.5};
  std::vector<Obstacle> obstacles;

  bool operator==(const MazeScene&) const = default;
};

struct MazeParams {
  double speed = 2.0;       // m/s
  double dt = 0.1;          // s
  std::size_t horizon = 80;
  double omega_max = 3.141592653589793;  // rad/s
  std::size_t rays = 17;
  double fov_deg = 90.0;
  double max_range = 15.0;  // m

  bool operator==(const MazeParams&) const = default;
};

struct MazeState {
  Vec2 position;
  double heading = 0.0;
};

struct RayHit {
  Color color;
  double depth = 0.0;
};

struct RayObservation {
  std::vector<RayHit> hits;
  /// [r, g, b, depth] per ray, rays ordered from heading - fov/2 to heading + fov/2.
  Vector flatten() const;
};

/// Angle of ray i of n across the field of view centred on `heading`.
double ray_angle(double heading, std::size_t i, const MazeParams& params);
RayObservation ray_cast(const MazeScene& scene, const MazeState& state, const MazeParams& params);
/// Point robot against the walls and boxes; penetrating positions are
/// projected back onto the nearest surface.
Vec2 resolve_collisions(const MazeScene& scene, Vec2 p);

class MazeEnv final : public Environment {
 public:
  MazeEnv(MazeScene scene, MazeParams params = {});

  std::size_t horizon() const override { return params_.horizon; }
  std::size_t observation_dim() const override { return 4 * params_.rays; }
  ActionKind action_kind() const override { return ActionKind::Continuous; }
  std::size_t action_count() const override { return 0; }
  double normalized_distance() const override;

  const MazeScene& scene() const { return scene_; }
  const MazeParams& params() const { return params_; }
  const MazeState& state() const { return state_; }

 protected:
  StepResult do_reset(Rng& rng) override;
  StepResult do_step(const Action& action) override;

 private:
  double distance_to_goal() const;

  MazeScene scene_;
  MazeParams params_;
  MazeState state_;
  double initial_distance_ = 1.0;
};

// ---------------------------------------------------------------------------
// Suites

enum class EnvKind { Grid, Maze };
enum class SuiteVariant { Train, Test, TestSwappedColors, TestNewColors };

std::string_view to_string(EnvKind k);
EnvKind env_kind_from_string(std::string_view s);
std::string_view to_string(SuiteVariant v);
SuiteVariant suite_variant_from_string(std::string_view s);

struct MazeGenConfig {
  std::size_t train_count = 250;
  std::size_t test_count = 20;
  double obstacle_size = 1.0;
  /// Ranges for the obstacle centres.
  Box red_region{2.5, 2.5, 4.5, 4.5};
  Box blue_region{5.5, 5.5, 7.5, 7.5};
  Color wall_color{0.5, 0.5, 0.5};
  Color red{1.0, 0.0, 0.0};
  Color blue{0.0, 0.0, 1.0};
  // Used only by the new-colors test variant; none appear in training.
  Color new_wall_color{0.85, 0.65, 0.3};
  Color new_red{0.1, 0.8, 0.1};
  Color new_blue{0.9, 0.2, 0.9};

  bool operator==(const MazeGenConfig&) const = default;
};

struct EnvSuite {
  EnvKind kind = EnvKind::Grid;
  SuiteVariant variant = SuiteVariant::Train;
  GridConfig grid;
  MazeParams maze;
  std::vector<MazeScene> scenes;

  std::size_t size() const { return kind == EnvKind::Grid ? 1 : scenes.size(); }
  std::size_t horizon() const { return kind == EnvKind::Grid ? grid.horizon : maze.horizon; }
  std::size_t observation_dim() const { return kind == EnvKind::Grid ? 1 : 4 * maze.rays; }
  std::unique_ptr<Environment> make(std::size_t index) const;

  bool operator==(const EnvSuite&) const = default;
};

/// Deterministic suite construction. Training mazes come from one stream of
/// the suite seed, testing mazes from another; the three testing variants
/// share geometry and differ only in colours.
EnvSuite make_env_suite(EnvKind kind, SuiteVariant variant, std::uint64_t suite_seed,
                        const GridConfig& grid = {}, const MazeParams& maze = {},
                        const MazeGenConfig& gen = {});

std::string suite_to_string(const EnvSuite& suite);
EnvSuite suite_from_string(const std::string& text);
void save_suite(const EnvSuite& suite, const std::filesystem::path& path);
EnvSuite load_suite(const std::filesystem::path& path);

}  // namespace amrpg

#endif  // AMRPG_ENVS_HPP
