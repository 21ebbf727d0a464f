#include <charconv>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "cli.hpp"
#include "oscid/io.hpp"

namespace oscid::cli {
namespace {

using nlohmann::json;

// Reads keys from one object and remembers which were consumed, so that
// leftovers can be reported as unknown.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config key '{}' must be an object", path_));
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void mark(const char* key) { seen_.insert(key); }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const char* key, double& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(fmt::format("config key '{}' must be a number", where(key)));
    out = v.get<double>();
  }

  template <typename Int>
  void integer(const char* key, Int& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(fmt::format("config key '{}' must be an integer", where(key)));
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
        throw ConfigError(fmt::format("config key '{}' must be non-negative", where(key)));
      }
    }
    out = v.get<Int>();
  }

  void string(const char* key, std::string& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(fmt::format("config key '{}' must be a string", where(key)));
    out = v.get<std::string>();
  }

  std::optional<Block> child(const char* key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return Block(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("unknown config key '{}'", where(key.c_str())));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Theta read_theta(Block b) {
  Theta t;
  for (const char* k : {"epsilon", "alpha", "d"}) {
    if (!b.has(k)) throw ConfigError(fmt::format("config key '{}' is required", b.where(k)));
  }
  b.number("epsilon", t.epsilon);
  b.number("alpha", t.alpha);
  b.number("d", t.d);
  b.finish();
  return t;
}

const char* hint_name(const std::optional<GrowthHint>& h) {
  if (!h) return "auto";
  return *h == GrowthHint::kPositive ? "positive" : "non_positive";
}

std::optional<GrowthHint> parse_hint(const std::string& s) {
  if (s == "auto") return std::nullopt;
  if (s == "positive") return GrowthHint::kPositive;
  if (s == "non_positive") return GrowthHint::kNonPositive;
  throw ConfigError("config key 'grid.tau_hint' must be auto, positive or non_positive");
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<double> SweepSpec::values() const {
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-3));
  for (long k = 0; k <= n; ++k) {
    // Round off accumulation noise so that -0.1 + 10 * 0.01 is exactly 0.
    const double v = std::stod(fmt::format("{:.10g}", start + step * static_cast<double>(k)));
    out.push_back(std::abs(v) < 1e-12 * std::max(std::abs(start), std::abs(stop)) ? 0.0 : v);
  }
  return out;
}

RunConfig config_from_json(const json& input) {
  const json* jp = &input;
  if (input.is_object() && input.contains("config") && input.contains("command")) jp = &input.at("config");
  RunConfig cfg;
  Block root(*jp, "");

  if (auto b = root.child("model")) {
    b->number("epsilon", cfg.model.theta.epsilon);
    b->number("alpha", cfg.model.theta.alpha);
    b->number("d", cfg.model.theta.d);
    b->number("omega", cfg.model.omega);
    b->finish();
  }
  if (auto b = root.child("sim")) {
    b->number("t_max", cfg.sim.t_max);
    b->number("fs", cfg.sim.fs);
    b->integer("substeps", cfg.sim.substeps);
    b->number("x0", cfg.sim.x0);
    b->number("v0", cfg.sim.v0);
    b->number("transient_cycles", cfg.sim.transient_cycles);
    b->finish();
  }
  if (auto b = root.child("grid")) {
    b->integer("n_a", cfg.analysis.n_a);
    b->integer("n_tau", cfg.analysis.n_tau);
    std::string hint = "auto";
    b->string("tau_hint", hint);
    cfg.analysis.tau_hint = parse_hint(hint);
    b->integer("density_bins_per_grid_bin", cfg.analysis.km.density_bins_per_grid_bin);
    b->number("max_missing_fraction", cfg.analysis.km.max_missing_fraction);
    b->finish();
  }
  if (auto b = root.child("analysis")) {
    if (b->has("omega")) {
      double w = 0.0;
      b->number("omega", w);
      cfg.analysis.omega = w;
    } else {
      b->mark("omega");
    }
    if (auto bp = b->child("band_pass")) {
      BandPassOptions o;
      bp->number("f_center", o.f_center);
      bp->number("half_width", o.half_width);
      bp->finish();
      cfg.analysis.band_pass = o;
    }
    b->finish();
  }
  if (auto b = root.child("pde")) {
    b->number("a_max_factor", cfg.pde.a_max_factor);
    b->integer("n_cells", cfg.pde.n_cells);
    b->number("rel_tol", cfg.pde.rel_tol);
    b->number("abs_tol", cfg.pde.abs_tol);
    b->integer("max_steps", cfg.pde.max_steps);
    b->finish();
  }
  if (auto b = root.child("stop")) {
    b->number("theta_tol", cfg.stop.theta_tol);
    b->number("cost_tol", cfg.stop.cost_tol);
    b->integer("max_iterations", cfg.stop.max_iterations);
    b->integer("max_backtracks", cfg.stop.max_backtracks);
    b->integer("nm_max_iterations", cfg.stop.nm_max_iterations);
    b->finish();
  }
  if (root.has("method")) {
    std::string m;
    root.string("method", m);
    cfg.method = parse_method(m);
  } else {
    root.mark("method");
  }
  if (root.has("methods")) {
    const auto& arr = root.raw("methods");
    if (!arr.is_array() || arr.empty()) throw ConfigError("config key 'methods' must be a non-empty array");
    cfg.methods.clear();
    for (const auto& m : arr) {
      if (!m.is_string()) throw ConfigError("config key 'methods' must hold strings");
      cfg.methods.push_back(parse_method(m.get<std::string>()));
    }
  } else {
    root.mark("methods");
  }
  if (auto b = root.child("sweep")) {
    SweepSpec s;
    b->string("axis", s.axis);
    for (const char* k : {"start", "stop", "step"}) {
      if (!b->has(k)) throw ConfigError(fmt::format("config key 'sweep.{}' is required", k));
    }
    b->number("start", s.start);
    b->number("stop", s.stop);
    b->number("step", s.step);
    b->finish();
    cfg.sweep = s;
  }
  if (root.has("seeds")) {
    const auto& arr = root.raw("seeds");
    if (!arr.is_array() || arr.empty()) throw ConfigError("config key 'seeds' must be a non-empty array");
    cfg.seeds.clear();
    for (const auto& s : arr) {
      if (!s.is_number_unsigned()) throw ConfigError("config key 'seeds' must hold non-negative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  } else {
    root.mark("seeds");
  }
  if (root.has("output_dir")) {
    std::string s;
    root.string("output_dir", s);
    cfg.output_dir = s;
  } else {
    root.mark("output_dir");
  }
  if (root.has("input")) {
    std::string s;
    root.string("input", s);
    cfg.input = s;
  } else {
    root.mark("input");
  }
  if (root.has("segment")) {
    double s = 0.0;
    root.number("segment", s);
    cfg.segment = s;
  } else {
    root.mark("segment");
  }
  if (auto b = root.child("theta")) cfg.theta = read_theta(*b);
  root.integer("jobs", cfg.jobs);
  root.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

json to_json(const RunConfig& c) {
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(method_name(m));
  json j = {
      {"model",
       {{"epsilon", c.model.theta.epsilon}, {"alpha", c.model.theta.alpha}, {"d", c.model.theta.d},
        {"omega", c.model.omega}}},
      {"sim",
       {{"t_max", c.sim.t_max}, {"fs", c.sim.fs}, {"substeps", c.sim.substeps}, {"x0", c.sim.x0},
        {"v0", c.sim.v0}, {"transient_cycles", c.sim.transient_cycles}}},
      {"grid",
       {{"n_a", c.analysis.n_a}, {"n_tau", c.analysis.n_tau}, {"tau_hint", hint_name(c.analysis.tau_hint)},
        {"density_bins_per_grid_bin", c.analysis.km.density_bins_per_grid_bin},
        {"max_missing_fraction", c.analysis.km.max_missing_fraction}}},
      {"analysis", {{"omega", optional_number(c.analysis.omega)}}},
      {"pde",
       {{"a_max_factor", c.pde.a_max_factor}, {"n_cells", c.pde.n_cells}, {"rel_tol", c.pde.rel_tol},
        {"abs_tol", c.pde.abs_tol}, {"max_steps", c.pde.max_steps}}},
      {"stop",
       {{"theta_tol", c.stop.theta_tol}, {"cost_tol", c.stop.cost_tol}, {"max_iterations", c.stop.max_iterations},
        {"max_backtracks", c.stop.max_backtracks}, {"nm_max_iterations", c.stop.nm_max_iterations}}},
      {"method", method_name(c.method)},
      {"methods", methods},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir.string()},
      {"input", c.input ? json(c.input->string()) : json(nullptr)},
      {"segment", optional_number(c.segment)},
      {"jobs", c.jobs},
  };
  if (c.analysis.band_pass) {
    j["analysis"]["band_pass"] = {{"f_center", c.analysis.band_pass->f_center},
                                  {"half_width", c.analysis.band_pass->half_width}};
  }
  if (c.sweep) {
    j["sweep"] = {{"axis", c.sweep->axis}, {"start", c.sweep->start}, {"stop", c.sweep->stop}, {"step", c.sweep->step}};
  }
  if (c.theta) j["theta"] = oscid::to_json(*c.theta);
  return j;
}

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  auto parse = [&](std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(fmt::format("invalid seed range '{}' (expected a..b)", text));
    }
    return v;
  };
  const auto pos = text.find("..");
  if (pos == std::string::npos) return {parse(text)};
  const auto a = parse(std::string_view(text).substr(0, pos));
  const auto b = parse(std::string_view(text).substr(pos + 2));
  if (b < a) throw ConfigError(fmt::format("invalid seed range '{}' (end before start)", text));
  if (b - a >= 100000) throw ConfigError(fmt::format("seed range '{}' is too long", text));
  std::vector<std::uint64_t> out;
  for (auto s = a; s <= b; ++s) out.push_back(s);
  return out;
}

Theta parse_theta(const std::string& text) {
  std::vector<double> v;
  std::string_view rest(text);
  while (true) {
    const auto pos = rest.find(',');
    auto field = rest.substr(0, pos);
    double x = 0.0;
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
      throw ConfigError(fmt::format("invalid theta '{}' (expected eps,alpha,d)", text));
    }
    v.push_back(x);
    if (pos == std::string_view::npos) break;
    rest.remove_prefix(pos + 1);
  }
  if (v.size() != 3) throw ConfigError(fmt::format("invalid theta '{}' (expected eps,alpha,d)", text));
  return {v[0], v[1], v[2]};
}

void validate(const RunConfig& cfg, const std::string& command) {
  auto wrap = [](const char* block, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw ConfigError(fmt::format("config block '{}': {}", block, e.what()));
    }
  };
  if (cfg.jobs < 0) throw ConfigError("jobs must be non-negative");
  if (cfg.seeds.empty()) throw ConfigError("at least one seed is required");
  const bool simulates = command == "simulate" || command == "sweep";
  if (simulates) {
    wrap("model", [&] { validate(cfg.model); });
    wrap("sim", [&] { validate(cfg.sim, cfg.model.omega); });
  }
  if (command != "simulate") {
    wrap("grid", [&] { validate(cfg.analysis); });
    PdeConfig pde = cfg.pde;
    pde.checkpoint_times = {1.0};
    wrap("pde", [&] { validate(pde); });
    if (!(cfg.stop.theta_tol > 0.0 && cfg.stop.cost_tol > 0.0)) throw ConfigError("stop tolerances must be positive");
    if (cfg.stop.max_iterations == 0 || cfg.stop.nm_max_iterations == 0) {
      throw ConfigError("stop iteration caps must be positive");
    }
  }
  if (command == "identify" || command == "compare" || command == "report") {
    if (!cfg.input) throw ConfigError("an input CSV is required");
    if (!std::filesystem::exists(*cfg.input)) {
      throw ConfigError(fmt::format("input '{}' does not exist", cfg.input->string()));
    }
    if (cfg.segment && !(*cfg.segment > 0.0)) throw ConfigError("segment length must be positive");
  }
  if (command == "report") {
    if (!cfg.theta) throw ConfigError("report needs theta (--theta eps,alpha,d or a 'theta' block)");
    wrap("theta", [&] { validate(*cfg.theta); });
  }
  if (command == "sweep") {
    if (!cfg.sweep) throw ConfigError("sweep needs a 'sweep' block");
    const auto& s = *cfg.sweep;
    if (s.axis != "epsilon" && s.axis != "alpha") throw ConfigError("config key 'sweep.axis' must be epsilon or alpha");
    if (!(s.step > 0.0) || !(s.stop >= s.start)) throw ConfigError("sweep needs step > 0 and stop >= start");
    if ((s.stop - s.start) / s.step > 10000.0) throw ConfigError("sweep has too many values");
    for (double v : s.values()) {
      OscillatorModel m = cfg.model;
      (s.axis == "epsilon" ? m.theta.epsilon : m.theta.alpha) = v;
      wrap("sweep", [&] { validate(m); });
    }
  }
}

}  // namespace oscid::cli
