#include "amrpg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "amrpg/amr.hpp"
#include "amrpg/analyze.hpp"
#include "amrpg/plot.hpp"

namespace amrpg {

using nlohmann::json;
namespace fs = std::filesystem;

// --- Config parsing ---------------------------------------------------------

namespace {

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

// Best-effort source line of a dotted field path: finds each key in turn,
// starting after the previous one. Array indices are skipped.
std::size_t line_of_field(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  bool found = false;
  std::istringstream parts(path);
  std::string key;
  while (std::getline(parts, key, '.')) {
    const auto bracket = key.find('[');
    if (bracket != std::string::npos) key = key.substr(0, bracket);
    if (key.empty()) continue;
    const auto at = text.find("\"" + key + "\"", pos);
    if (at == std::string::npos) break;
    pos = at + 1;
    found = true;
  }
  return found ? line_of_offset(text, pos) : 0;
}

class Reader {
 public:
  Reader(const json& j, std::string path, const std::string& text, const std::string& source)
      : j_(j), path_(std::move(path)), text_(text), source_(source) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    const std::size_t line = line_of_field(text_, field);
    std::string msg = source_;
    if (line) msg += ":" + std::to_string(line);
    msg += ": field '" + field + "': " + what;
    throw ConfigError(msg, field, line);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(at(key), field(key));
  }

  template <typename T>
  T convert(const json& v, const std::string& f) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(f, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(f, "expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(f, "expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(f, "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_string()) fail(f, "expected a string");
      return v.get<std::string>();
    }
  }

  std::vector<double> numbers(const std::string& key, std::size_t n) {
    const json& v = at(key);
    if (!v.is_array() || v.size() != n) fail(field(key), "expected an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(convert<double>(v[i], field(key)));
    return out;
  }

  Reader child(const std::string& key) { return Reader(at(key), field(key), text_, source_); }

  template <typename Fn>
  auto parse_enum(const std::string& key, Fn&& from_string) {
    const std::string s = convert<std::string>(at(key), field(key));
    try {
      return from_string(s);
    } catch (const std::exception& e) {
      fail(field(key), e.what());
    }
  }

  /// Rejects keys that were never read, which catches misspelt fields.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) fail(field(it.key()), "unknown field");
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
  const std::string& source_;
  std::set<std::string> used_;
};

Color read_color(Reader& r, const std::string& key, Color c) {
  if (!r.has(key)) return c;
  const auto v = r.numbers(key, 3);
  return {v[0], v[1], v[2]};
}

Box read_box(Reader& r, const std::string& key, Box b) {
  if (!r.has(key)) return b;
  const auto v = r.numbers(key, 4);
  return {v[0], v[1], v[2], v[3]};
}

GridCell read_cell(Reader& r, const std::string& key, GridCell c) {
  if (!r.has(key)) return c;
  const json& v = r.at(key);
  if (!v.is_array() || v.size() != 2) r.fail(r.field(key), "expected [row, col]");
  return {r.convert<int>(v[0], r.field(key)), r.convert<int>(v[1], r.field(key))};
}

std::vector<LayerWidth> read_layer_list(Reader& r, const std::string& key, const std::string& text,
                                        const std::string& source) {
  std::vector<LayerWidth> out;
  if (!r.has(key)) return out;
  const json& v = r.at(key);
  if (!v.is_array()) r.fail(r.field(key), "expected an array of {\"width\", \"activation\"} objects");
  for (std::size_t i = 0; i < v.size(); ++i) {
    Reader l(v[i], r.field(key) + "[" + std::to_string(i) + "]", text, source);
    LayerWidth w;
    if (!l.has("width")) l.fail(l.field("width"), "required");
    l.get("width", w.width);
    if (l.has("activation")) w.activation = l.parse_enum("activation", activation_from_string);
    l.finish();
    out.push_back(w);
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t line = line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(source + ":" + std::to_string(line) + ": syntax error: " + e.what(), "", line);
  }
  ExperimentConfig c;
  Reader r(root, "", text, source);
  if (!r.has("version")) r.fail("version", "required (current version is " + std::to_string(kConfigVersion) + ")");
  r.get("version", c.version);
  if (c.version != kConfigVersion) {
    r.fail("version", "unsupported version " + std::to_string(c.version) + ", expected " +
                          std::to_string(kConfigVersion));
  }
  r.get("name", c.name);
  r.get("output_dir", c.output_dir);
  if (r.has("seeds")) {
    const json& s = r.at("seeds");
    if (s.is_string()) {
      try {
        c.seeds = parse_seed_list(s.get<std::string>());
      } catch (const std::exception& e) {
        r.fail("seeds", e.what());
      }
    } else if (s.is_array()) {
      c.seeds.clear();
      for (const auto& v : s) c.seeds.push_back(r.convert<std::uint64_t>(v, "seeds"));
    } else {
      r.fail("seeds", "expected an array of integers or a range string such as \"0-19\"");
    }
  }

  if (r.has("env")) {
    Reader e = r.child("env");
    if (e.has("kind")) c.env.kind = e.parse_enum("kind", env_kind_from_string);
    e.get("suite_seed", c.env.suite_seed);
    if (e.has("grid")) {
      Reader g = e.child("grid");
      g.get("rows", c.env.grid.rows);
      g.get("cols", c.env.grid.cols);
      c.env.grid.start = read_cell(g, "start", c.env.grid.start);
      c.env.grid.goal = read_cell(g, "goal", c.env.grid.goal);
      g.get("horizon", c.env.grid.horizon);
      g.finish();
    }
    if (e.has("maze")) {
      Reader m = e.child("maze");
      auto& p = c.env.maze;
      m.get("speed", p.speed);
      m.get("dt", p.dt);
      m.get("horizon", p.horizon);
      m.get("omega_max", p.omega_max);
      m.get("rays", p.rays);
      m.get("fov_deg", p.fov_deg);
      m.get("max_range", p.max_range);
      m.finish();
    }
    if (e.has("maze_gen")) {
      Reader m = e.child("maze_gen");
      auto& g = c.env.maze_gen;
      m.get("train_count", g.train_count);
      m.get("test_count", g.test_count);
      m.get("obstacle_size", g.obstacle_size);
      g.red_region = read_box(m, "red_region", g.red_region);
      g.blue_region = read_box(m, "blue_region", g.blue_region);
      g.wall_color = read_color(m, "wall_color", g.wall_color);
      g.red = read_color(m, "red", g.red);
      g.blue = read_color(m, "blue", g.blue);
      g.new_wall_color = read_color(m, "new_wall_color", g.new_wall_color);
      g.new_red = read_color(m, "new_red", g.new_red);
      g.new_blue = read_color(m, "new_blue", g.new_blue);
      m.finish();
    }
    e.finish();
  }

  if (r.has("network")) {
    Reader n = r.child("network");
    auto& s = c.network;
    s.hidden = read_layer_list(n, "hidden", text, source);
    n.get("memory_dim", s.memory_dim);
    if (n.has("memory_activation")) s.memory_activation = n.parse_enum("memory_activation", activation_from_string);
    n.get("beta", s.beta);
    n.get("memory_steps", s.memory_steps);
    s.head_hidden = read_layer_list(n, "head_hidden", text, source);
    n.get("action_features", s.action_features);
    n.finish();
  }

  if (r.has("train")) {
    Reader t = r.child("train");
    auto& s = c.train;
    t.get("learning_rate", s.learning_rate);
    t.get("lambda", s.lambda);
    t.get("max_epochs", s.max_epochs);
    t.get("rollouts_per_epoch", s.rollouts_per_epoch);
    if (t.has("variance_reduction")) {
      s.variance_reduction = t.parse_enum("variance_reduction", variance_reduction_from_string);
    }
    t.get("convergence_window", s.convergence_window);
    t.get("convergence_tol", s.convergence_tol);
    t.get("workers", s.workers);
    t.get("cutoff_ratio", s.cutoff_ratio);
    if (t.has("adam")) {
      Reader a = t.child("adam");
      a.get("beta1", s.adam_beta1);
      a.get("beta2", s.adam_beta2);
      a.get("epsilon", s.adam_epsilon);
      a.finish();
    }
    t.finish();
  }

  if (r.has("eval")) {
    Reader v = r.child("eval");
    if (v.has("variants")) {
      const json& arr = v.at("variants");
      if (!arr.is_array()) v.fail(v.field("variants"), "expected an array of variant names");
      c.eval.variants.clear();
      for (const auto& x : arr) {
        const auto name = v.convert<std::string>(x, v.field("variants"));
        try {
          c.eval.variants.push_back(suite_variant_from_string(name));
        } catch (const std::exception& ex) {
          v.fail(v.field("variants"), ex.what());
        }
      }
    }
    v.get("episodes", c.eval.episodes);
    v.get("deterministic", c.eval.deterministic);
    v.finish();
  }

  if (r.has("analysis")) {
    Reader a = r.child("analysis");
    a.get("machine_rollouts", c.analysis.machine_rollouts);
    a.get("finetune_epochs", c.analysis.finetune_epochs);
    a.finish();
  }
  r.finish();

  try {
    validate_config(c);
  } catch (ConfigError& e) {
    const std::size_t line = line_of_field(text, e.field);
    std::string msg = source;
    if (line) msg += ":" + std::to_string(line);
    throw ConfigError(msg + ": " + e.what(), e.field, line);
  }
  return c;
}

void validate_config(const ExperimentConfig& c) {
  auto bad = [](const std::string& field, const std::string& what) {
    throw ConfigError("field '" + field + "': " + what, field, 0);
  };
  if (c.name.empty()) bad("name", "must not be empty");
  if (c.seeds.empty()) bad("seeds", "at least one seed is required");
  if (!(c.train.learning_rate > 0.0)) bad("train.learning_rate", "must be > 0");
  if (!(c.train.lambda >= 0.0)) bad("train.lambda", "must be >= 0");
  if (c.train.rollouts_per_epoch == 0) bad("train.rollouts_per_epoch", "must be >= 1");
  if (c.train.max_epochs == 0) bad("train.max_epochs", "must be >= 1");
  if (c.train.workers == 0) bad("train.workers", "must be >= 1");
  if (!(c.train.cutoff_ratio > 0.0 && c.train.cutoff_ratio < 1.0)) bad("train.cutoff_ratio", "must be in (0, 1)");
  if (c.network.memory_dim == 0) bad("network.memory_dim", "must be >= 1");
  if (c.network.memory_steps == 0) bad("network.memory_steps", "must be >= 1");
  if (!(c.network.beta > 0.0)) bad("network.beta", "must be > 0");
  for (const auto& l : c.network.hidden)
    if (l.width == 0) bad("network.hidden", "layer widths must be >= 1");
  for (const auto& l : c.network.head_hidden)
    if (l.width == 0) bad("network.head_hidden", "layer widths must be >= 1");
  if (c.eval.variants.empty()) bad("eval.variants", "at least one variant is required");
  if (c.env.kind == EnvKind::Grid) {
    const auto& g = c.env.grid;
    if (g.rows <= 0 || g.cols <= 0) bad("env.grid", "rows and cols must be positive");
    auto inside = [&](GridCell p) { return p.row >= 0 && p.row < g.rows && p.col >= 0 && p.col < g.cols; };
    if (!inside(g.start)) bad("env.grid.start", "outside the grid");
    if (!inside(g.goal)) bad("env.grid.goal", "outside the grid");
    if (g.start == g.goal) bad("env.grid.goal", "must differ from the start");
  } else {
    if (c.env.maze.rays < 2) bad("env.maze.rays", "must be >= 2");
    if (c.env.maze_gen.train_count == 0) bad("env.maze_gen.train_count", "must be >= 1");
    if (c.env.maze_gen.test_count == 0) bad("env.maze_gen.test_count", "must be >= 1");
  }
  try {
    PolicyNet probe(build_architecture(c));
  } catch (const std::exception& e) {
    bad("network", e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string(), "", 0);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

namespace {

json color_json(const Color& c) { return json::array({c.r, c.g, c.b}); }
json box_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }
json layers_json(const std::vector<LayerWidth>& ls) {
  json a = json::array();
  for (const auto& l : ls) a.push_back({{"width", l.width}, {"activation", std::string(to_string(l.activation))}});
  return a;
}

}  // namespace

std::string config_to_string(const ExperimentConfig& c) {
  json j;
  j["version"] = c.version;
  j["name"] = c.name;
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  const auto& g = c.env.grid;
  const auto& m = c.env.maze;
  const auto& mg = c.env.maze_gen;
  j["env"] = {{"kind", std::string(to_string(c.env.kind))},
              {"suite_seed", c.env.suite_seed},
              {"grid",
               {{"rows", g.rows},
                {"cols", g.cols},
                {"start", {g.start.row, g.start.col}},
                {"goal", {g.goal.row, g.goal.col}},
                {"horizon", g.horizon}}},
              {"maze",
               {{"speed", m.speed},
                {"dt", m.dt},
                {"horizon", m.horizon},
                {"omega_max", m.omega_max},
                {"rays", m.rays},
                {"fov_deg", m.fov_deg},
                {"max_range", m.max_range}}},
              {"maze_gen",
               {{"train_count", mg.train_count},
                {"test_count", mg.test_count},
                {"obstacle_size", mg.obstacle_size},
                {"red_region", box_json(mg.red_region)},
                {"blue_region", box_json(mg.blue_region)},
                {"wall_color", color_json(mg.wall_color)},
                {"red", color_json(mg.red)},
                {"blue", color_json(mg.blue)},
                {"new_wall_color", color_json(mg.new_wall_color)},
                {"new_red", color_json(mg.new_red)},
                {"new_blue", color_json(mg.new_blue)}}}};
  const auto& n = c.network;
  j["network"] = {{"hidden", layers_json(n.hidden)},
                  {"memory_dim", n.memory_dim},
                  {"memory_activation", std::string(to_string(n.memory_activation))},
                  {"beta", n.beta},
                  {"memory_steps", n.memory_steps},
                  {"head_hidden", layers_json(n.head_hidden)},
                  {"action_features", n.action_features}};
  const auto& t = c.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"lambda", t.lambda},
                {"max_epochs", t.max_epochs},
                {"rollouts_per_epoch", t.rollouts_per_epoch},
                {"variance_reduction", std::string(to_string(t.variance_reduction))},
                {"convergence_window", t.convergence_window},
                {"convergence_tol", t.convergence_tol},
                {"workers", t.workers},
                {"cutoff_ratio", t.cutoff_ratio},
                {"adam", {{"beta1", t.adam_beta1}, {"beta2", t.adam_beta2}, {"epsilon", t.adam_epsilon}}}};
  json variants = json::array();
  for (auto v : c.eval.variants) variants.push_back(std::string(to_string(v)));
  j["eval"] = {{"variants", variants}, {"episodes", c.eval.episodes}, {"deterministic", c.eval.deterministic}};
  j["analysis"] = {{"machine_rollouts", c.analysis.machine_rollouts},
                   {"finetune_epochs", c.analysis.finetune_epochs}};
  return j.dump(2) + "\n";
}

NetArchitecture build_architecture(const ExperimentConfig& c) {
  const auto& n = c.network;
  NetArchitecture a;
  const bool grid = c.env.kind == EnvKind::Grid;
  a.observation_dim = grid ? 1 : 4 * c.env.maze.rays;
  a.head_kind = grid ? HeadKind::Categorical : HeadKind::Gaussian;
  a.action_feature_dim = n.action_features ? (grid ? kGridActionCount : 1) : 0;
  a.memory_steps = n.memory_steps;
  std::size_t in = a.observation_dim + a.action_feature_dim + n.memory_dim;
  for (const auto& l : n.hidden) {
    a.recurrent.push_back({in, l.width, l.activation, 1.0});
    in = l.width;
  }
  a.recurrent.push_back({in, n.memory_dim, n.memory_activation,
                         n.memory_activation == Activation::BetaSoftmax ? n.beta : 1.0});
  in = n.memory_dim;
  for (const auto& l : n.head_hidden) {
    a.head.push_back({in, l.width, l.activation, 1.0});
    in = l.width;
  }
  if (grid) {
    a.head.push_back({in, kGridActionCount, Activation::Softmax, 1.0});
  } else {
    a.head.push_back({in, 2, Activation::Linear, 1.0});
  }
  return a;
}

EnvSuite build_suite(const ExperimentConfig& c, SuiteVariant variant) {
  return make_env_suite(c.env.kind, variant, c.env.suite_seed, c.env.grid, c.env.maze, c.env.maze_gen);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  auto number = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("invalid seed '" + s + "' in \"" + text + "\"");
    }
    return std::stoull(s);
  };
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ',')) {
    part.erase(std::remove(part.begin(), part.end(), ' '), part.end());
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(part));
    } else {
      const auto lo = number(part.substr(0, dash)), hi = number(part.substr(dash + 1));
      if (hi < lo) throw std::invalid_argument("empty seed range '" + part + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    }
  }
  if (out.empty()) throw std::invalid_argument("no seeds in \"" + text + "\"");
  return out;
}

void apply_overrides(ExperimentConfig& c, const Overrides& o) {
  if (o.seeds) c.seeds = *o.seeds;
  if (o.workers) c.train.workers = *o.workers;
  if (o.deterministic) c.eval.deterministic = *o.deterministic;
  if (o.out) c.output_dir = *o.out;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  validate_config(c);
}

// --- Run directory ----------------------------------------------------------

fs::path RunLayout::checkpoint(std::uint64_t seed, const std::string& tag) const {
  return checkpoints() / ("seed_" + std::to_string(seed) + "_" + tag + ".ckpt");
}

fs::path RunLayout::suite(SuiteVariant v) const { return suites() / (std::string(to_string(v)) + ".suite"); }

RunLayout create_run_directory(const ExperimentConfig& c) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const fs::path base = fs::path(c.output_dir) / (c.name + "-" + stamp);
  fs::path root = base;
  for (int k = 1; fs::exists(root); ++k) root = base.string() + "-" + std::to_string(k);
  RunLayout run{root};
  for (const auto& d : {run.checkpoints(), run.suites(), run.reports(), run.plots()}) fs::create_directories(d);
  return run;
}

ExperimentConfig load_run_config(const RunLayout& run) {
  if (!fs::is_directory(run.root)) throw MissingArtifact(run.root);
  if (!fs::exists(run.snapshot())) throw MissingArtifact(run.snapshot());
  return load_config(run.snapshot());
}

namespace {

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << s;
  if (!os) throw std::runtime_error("error writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

PolicyNet load_required_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact(path);
  return load_checkpoint(path);
}

EnvSuite load_or_build_suite(const RunLayout& run, const ExperimentConfig& c, SuiteVariant v) {
  const fs::path p = run.suite(v);
  if (fs::exists(p)) return load_suite(p);
  EnvSuite s = build_suite(c, v);
  save_suite(s, p);
  return s;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Sampling stream of evaluation episodes for a policy trained with `seed`;
// distinct from every training epoch stream.
std::uint64_t eval_stream(std::uint64_t seed) { return epoch_seed(seed ^ 0x9e3779b97f4a7c15ULL, 0); }

bool discrete_memory(const ExperimentConfig& c) {
  const auto a = c.network.memory_activation;
  return c.env.kind == EnvKind::Grid && (a == Activation::BetaSoftmax || a == Activation::Softmax);
}

}  // namespace

std::vector<std::uint64_t> completed_seeds(const RunLayout& run) {
  const fs::path p = run.report("train_summary.csv");
  if (!fs::exists(p)) throw MissingArtifact(p);
  const CsvTable t = read_csv(p);
  const std::size_t cs = t.column("seed"), cst = t.column("status");
  std::vector<std::uint64_t> out;
  for (const auto& row : t.rows)
    if (row[cst] == "ok") out.push_back(std::stoull(row[cs]));
  return out;
}

// --- train ------------------------------------------------------------------

RunLayout cmd_train(const ExperimentConfig& config, std::ostream& log) {
  validate_config(config);
  const RunLayout run = create_run_directory(config);
  write_text(run.snapshot(), config_to_string(config));
  log << "run directory: " << run.root.string() << "\n";

  const EnvSuite train_suite = build_suite(config, SuiteVariant::Train);
  save_suite(train_suite, run.suite(SuiteVariant::Train));
  for (auto v : config.eval.variants)
    if (v != SuiteVariant::Train) save_suite(build_suite(config, v), run.suite(v));

  std::ofstream csv(run.metrics_csv(), std::ios::binary);
  std::ofstream ndjson(run.metrics_ndjson(), std::ios::binary);
  csv << metrics_csv_header() << "\n";
  std::ostringstream summary;
  summary << "seed,status,epochs,converged,final_mean_cost,final_penalty,retained_dims,error\n";

  const NetArchitecture arch = build_architecture(config);
  std::vector<std::string> failures;
  for (auto seed : config.seeds) {
    TrainConfig tc = config.train;
    tc.seed = seed;
    TrainHooks hooks;
    hooks.diagnostic_checkpoint = run.checkpoint(seed, "diverged");
    const std::size_t report_every = std::max<std::size_t>(1, tc.max_epochs / 10);
    hooks.on_epoch = [&](const EpochMetrics& m) {
      csv << metrics_csv_row(m, seed) << "\n";
      ndjson << metrics_json_line(m, seed) << "\n";
      csv.flush();
      ndjson.flush();
      if (m.epoch % report_every == 0 || m.epoch + 1 == tc.max_epochs) {
        log << "seed " << seed << " epoch " << m.epoch << " cost " << fixed(m.mean_cost) << " penalty "
            << fixed(m.penalty) << " retained " << m.retained_dims << "\n";
      }
    };
    try {
      const TrainResult r = train(tc, initial_net(arch, seed), train_suite, hooks);
      save_checkpoint(r.final_net, run.checkpoint(seed, "final"));
      save_checkpoint(r.best_net, run.checkpoint(seed, "best"));
      const auto& last = r.metrics.back();
      summary << seed << ",ok," << r.metrics.size() << "," << (r.converged ? 1 : 0) << "," << last.mean_cost << ","
              << last.penalty << "," << memory_saliency(r.final_net, tc.cutoff_ratio).retained.size() << ",\n";
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      summary << seed << ",failed,,,,,," << msg << "\n";
      failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
      log << "seed " << seed << " FAILED: " << e.what() << "\n";
    }
    write_text(run.report("train_summary.csv"), summary.str());
  }
  if (!failures.empty()) {
    std::string all;
    for (const auto& f : failures) all += f + "\n";
    write_text(run.failed_marker(), all);
    throw RunFailure(std::to_string(failures.size()) + " of " + std::to_string(config.seeds.size()) +
                     " seeds failed; see " + run.failed_marker().string());
  }
  return run;
}

// --- eval -------------------------------------------------------------------

void cmd_eval(const RunLayout& run, const EvalRequest& req, std::ostream& log) {
  const ExperimentConfig c = load_run_config(run);
  const auto variants = req.variants.value_or(c.eval.variants);
  const bool deterministic = req.deterministic.value_or(c.eval.deterministic);
  const std::size_t episodes = req.episodes.value_or(c.eval.episodes);
  const std::size_t workers = req.workers.value_or(c.train.workers);
  if (variants.empty()) throw std::invalid_argument("eval: no variants requested");

  std::vector<EnvSuite> suites;
  for (auto v : variants) suites.push_back(load_or_build_suite(run, c, v));
  EvalReport report;
  for (auto seed : completed_seeds(run)) {
    const PolicyNet net = load_required_checkpoint(run.checkpoint(seed, req.checkpoint));
    report.append(evaluate(net, suites, episodes,
                           {.deterministic = deterministic, .seed = eval_stream(seed), .policy_seed = seed,
                            .workers = workers}));
  }
  if (report.episodes.empty()) throw std::runtime_error("eval: no completed seeds in " + run.root.string());

  const std::string prefix = req.checkpoint == "final" ? "eval" : "eval_" + req.checkpoint;
  write_text(run.report(prefix + "_episodes.csv"), eval_episodes_csv(report));
  write_text(run.report(prefix + "_summary.csv"), eval_summary_csv(report));
  std::ostringstream by_seed;
  by_seed.precision(17);
  by_seed << "seed,variant,episodes,mean_cost,std_cost,mean_distance,std_distance\n";
  for (const auto& [seed, s] : report.summary_by_seed()) {
    by_seed << seed << "," << s.variant << "," << s.cost.n << "," << s.cost.mean << "," << s.cost.std << ","
            << s.distance.mean << "," << s.distance.std << "\n";
  }
  write_text(run.report(prefix + "_by_seed.csv"), by_seed.str());
  const std::string table = eval_table(report);
  write_text(run.report(prefix + "_table.txt"), table);
  log << table;
}

// --- analyze ----------------------------------------------------------------

void cmd_analyze(const RunLayout& run, std::ostream& log) {
  const ExperimentConfig c = load_run_config(run);
  std::vector<SaliencyReport> reports;
  std::ostringstream retained;
  retained << "seed,memory_dim,retained,retained_dims\n";
  std::ostringstream states;
  states << "seed,states\n";
  std::map<std::size_t, std::size_t> histogram;
  const bool discrete = discrete_memory(c);
  const EnvSuite train_suite = discrete ? load_or_build_suite(run, c, SuiteVariant::Train) : EnvSuite{};

  for (auto seed : completed_seeds(run)) {
    const PolicyNet net = load_required_checkpoint(run.checkpoint(seed, "final"));
    const SaliencyReport rep = memory_saliency(net, c.train.cutoff_ratio);
    write_saliency_csv(rep, run.report("saliency_seed_" + std::to_string(seed) + ".csv"));
    retained << seed << "," << net.memory_dim() << "," << rep.retained.size() << ",";
    for (std::size_t i = 0; i < rep.retained.size(); ++i) retained << (i ? " " : "") << rep.retained[i];
    retained << "\n";
    log << "seed " << seed << ": retained " << rep.retained.size() << " of " << net.memory_dim() << "\n";
    reports.push_back(rep);
    if (discrete) {
      const std::size_t n = count_memory_states(net, train_suite, c.analysis.machine_rollouts, seed);
      states << seed << "," << n << "\n";
      ++histogram[n];
    }
  }
  write_text(run.report("retained.csv"), retained.str());
  write_text(run.report("saliency_aggregate.csv"), saliency_aggregate_csv(aggregate_saliency(reports)));
  if (discrete) {
    write_text(run.report("state_counts.csv"), states.str());
    std::ostringstream h;
    h << "states,seeds\n";
    for (const auto& [n, k] : histogram) h << n << "," << k << "\n";
    write_text(run.report("state_histogram.csv"), h.str());
  }
}

// --- extract-machine --------------------------------------------------------

void cmd_extract_machine(const RunLayout& run, std::optional<std::size_t> rollouts, std::ostream& log) {
  const ExperimentConfig c = load_run_config(run);
  if (!discrete_memory(c)) {
    throw std::invalid_argument("extract-machine needs a grid run with a (beta-)softmax memory layer");
  }
  const EnvSuite suite = load_or_build_suite(run, c, SuiteVariant::Train);
  const std::vector<std::string> names{"up", "right", "down", "left", "stop"};
  std::ostringstream table;
  table << "seed,status,states,min_memory_confidence,detail\n";
  for (auto seed : completed_seeds(run)) {
    const PolicyNet net = load_required_checkpoint(run.checkpoint(seed, "final"));
    try {
      const MachineExtraction ex = extract_moore_machine(net, suite, rollouts.value_or(c.analysis.machine_rollouts), seed);
      write_text(run.report("machine_seed_" + std::to_string(seed) + ".dot"), ex.machine.to_dot(names));
      table << seed << ",ok," << ex.machine.state_count() << "," << ex.min_memory_confidence << ","
            << (ex.low_confidence() ? "low memory confidence" : "") << "\n";
      log << "seed " << seed << ": " << ex.machine.state_count() << "-state machine";
      if (ex.low_confidence()) log << " (warning: memory confidence " << fixed(ex.min_memory_confidence, 3) << ")";
      log << "\n";
    } catch (const MachineConflict& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      table << seed << ",conflict,,," << msg << "\n";
      log << "seed " << seed << ": not machine-like yet: " << e.what() << "\n";
    }
  }
  write_text(run.report("machines.csv"), table.str());
}

// --- plot -------------------------------------------------------------------

void cmd_plot(const RunLayout& run, std::ostream& log) {
  if (!fs::exists(run.metrics_csv())) throw MissingArtifact(run.metrics_csv());
  fs::create_directories(run.plots());
  const CsvTable metrics = parse_csv(read_text(run.metrics_csv()));
  if (metrics.rows.empty()) throw EmptyPlotError("no epochs logged in " + run.metrics_csv().string());
  write_text_atomic(run.plots() / "training_curves.svg", training_curves_svg(metrics));
  log << "wrote " << (run.plots() / "training_curves.svg").string() << "\n";

  const fs::path sal = run.report("saliency_aggregate.csv");
  if (fs::exists(sal)) {
    write_text_atomic(run.plots() / "saliency.svg", saliency_bars_svg(read_csv(sal), 15));
    log << "wrote " << (run.plots() / "saliency.svg").string() << "\n";
  }
  const fs::path hist = run.report("state_histogram.csv");
  if (fs::exists(hist)) {
    write_text_atomic(run.plots() / "state_counts.svg", state_histogram_svg(read_csv(hist)));
    log << "wrote " << (run.plots() / "state_counts.svg").string() << "\n";
  }
}

// --- reduce -----------------------------------------------------------------

void cmd_reduce(const RunLayout& run, std::optional<std::size_t> epochs, std::optional<std::size_t> workers,
                std::ostream& log) {
  const ExperimentConfig c = load_run_config(run);
  const EnvSuite suite = load_or_build_suite(run, c, SuiteVariant::Train);
  const std::size_t n_epochs = epochs.value_or(c.analysis.finetune_epochs);
  std::ostringstream table;
  table.precision(17);
  table << "seed,memory_dim,reduced_dim,finetune_epochs,first_mean_cost,last_mean_cost\n";
  std::ostringstream metrics;
  metrics << metrics_csv_header() << "\n";
  for (auto seed : completed_seeds(run)) {
    const PolicyNet net = load_required_checkpoint(run.checkpoint(seed, "final"));
    const PolicyNet reduced = hard_reduce(net, memory_saliency(net, c.train.cutoff_ratio));
    save_checkpoint(reduced, run.checkpoint(seed, "reduced"));
    TrainConfig tc = c.train;
    // A distinct stream from the main run, still a function of the seed alone.
    tc.seed = epoch_seed(seed, 0x5245445543ULL);
    if (workers) tc.workers = *workers;
    const TrainResult r = finetune_reduced(reduced, tc, suite, n_epochs);
    save_checkpoint(r.final_net, run.checkpoint(seed, "finetuned"));
    for (const auto& m : r.metrics) metrics << metrics_csv_row(m, seed) << "\n";
    table << seed << "," << net.memory_dim() << "," << reduced.memory_dim() << "," << r.metrics.size() << ",";
    if (r.metrics.empty()) {
      table << ",\n";
    } else {
      table << r.metrics.front().mean_cost << "," << r.metrics.back().mean_cost << "\n";
    }
    log << "seed " << seed << ": memory " << net.memory_dim() << " -> " << reduced.memory_dim() << ", finetuned "
        << r.metrics.size() << " epochs\n";
  }
  write_text(run.report("reduce.csv"), table.str());
  write_text(run.report("finetune_metrics.csv"), metrics.str());
}

}  // namespace amrpg
