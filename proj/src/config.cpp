#include "aas/config.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "aas/error.hpp"

namespace aas {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    config_error(key + ": expected " + (std::is_integral_v<T> ? "an integer" : "a number") + ", got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  config_error(key + ": expected true or false, got '" + v + "'");
}

std::string parse_string(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool trainer = true;  // part of the hash
};

template <class T>
Key int_key(const char* name, T TrainConfig::*member) {
  return {name,
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.train.*member = parse_number<T>(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(c.train.*member); }};
}

Key real_key(const char* name, double TrainConfig::*member) {
  return {name,
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.train.*member = parse_number<double>(k, v);
          },
          [member](const RunConfig& c) { return format_real(c.train.*member); }};
}

Key bool_key(const char* name, bool TrainConfig::*member) {
  return {name,
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.train.*member = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(c.train.*member ? "true" : "false"); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"problem.name", [](RunConfig& c, const std::string&, const std::string& v) { c.train.problem = parse_string(v); },
       [](const RunConfig& c) { return c.train.problem; }},
      int_key("engine.stages", &TrainConfig::stages),
      int_key("engine.min_steps", &TrainConfig::min_steps),
      int_key("engine.max_steps", &TrainConfig::max_steps),
      int_key("engine.m", &TrainConfig::batch),
      int_key("engine.boundary_batch", &TrainConfig::boundary_batch),
      int_key("engine.n_r", &TrainConfig::n_interior),
      int_key("engine.n_b", &TrainConfig::n_boundary),
      real_key("engine.lr_theta", &TrainConfig::lr_theta),
      real_key("engine.lr_alpha", &TrainConfig::lr_alpha),
      real_key("engine.lr_theta_decay", &TrainConfig::lr_theta_decay),
      real_key("engine.gamma", &TrainConfig::gamma),
      real_key("engine.beta", &TrainConfig::beta),
      real_key("engine.beta_decay", &TrainConfig::beta_decay),
      int_key("engine.beta_period", &TrainConfig::beta_period),
      {"engine.regeneration",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const std::string s = parse_string(v);
         if (s == "replace") c.train.regeneration = Regeneration::Replace;
         else if (s == "augment") c.train.regeneration = Regeneration::Augment;
         else config_error(k + ": expected replace or augment, got '" + s + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.train.regeneration == Regeneration::Replace ? "replace" : "augment");
       }},
      bool_key("engine.resample_boundary", &TrainConfig::resample_boundary),
      int_key("engine.seed", &TrainConfig::seed),
      real_key("engine.divergence_limit", &TrainConfig::divergence_limit),
      int_key("net.depth", &TrainConfig::net_depth),
      int_key("net.width", &TrainConfig::net_width),
      int_key("flow.layers", &TrainConfig::flow_layers),
      int_key("flow.hidden", &TrainConfig::flow_hidden),
      int_key("flow.depth", &TrainConfig::flow_depth),
      real_key("flow.scale_bound", &TrainConfig::flow_scale_bound),
      bool_key("flow.mixture_prior", &TrainConfig::flow_mixture_prior),
      int_key("rar.add", &TrainConfig::rar_add),
      int_key("rar.pool_factor", &TrainConfig::rar_pool_factor),
      int_key("eval.points", &TrainConfig::eval_points),
      int_key("eval.w_draws", &TrainConfig::w_draws),
      int_key("eval.w_projections", &TrainConfig::w_projections),
      {"output.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = parse_string(v); },
       [](const RunConfig& c) { return c.out_dir; }, false},
      {"output.checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.checkpoint_every = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.checkpoint_every); }, false},
      {"output.scatter_points",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.scatter_points = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.scatter_points); }, false},
      {"output.wallclock",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.record_wallclock = parse_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.record_wallclock ? "true" : "false"); }, false},
  };
  return table;
}

std::string lines(const RunConfig& cfg, bool trainer_only) {
  std::ostringstream out;
  for (const Key& k : keys())
    if (k.trainer || !trainer_only) out << k.name << " = " << k.get(cfg) << '\n';
  return out.str();
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) fail("format_real: conversion failed");
  return std::string(buf, ptr);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Key& k : keys()) {
    if (key == k.name) {
      k.set(cfg, key, value);
      return;
    }
  }
  config_error("unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    // a '#' inside a quoted string is kept
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error("line " + std::to_string(line_no) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos)
      config_error("line " + std::to_string(line_no) + ": key '" + key + "' has no section");
    if (value.empty()) config_error("line " + std::to_string(line_no) + ": missing value for '" + key + "'");
    set_config_value(cfg, key, value);
  }
  check_run_config(cfg);
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_error("cannot open config '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return parse_config_text(s.str());
}

void check_run_config(const RunConfig& cfg) {
  validate(cfg.train);
  if (!(cfg.train.lr_theta > 0.0)) config_error("engine.lr_theta must be positive");
  if (!(cfg.train.lr_alpha > 0.0)) config_error("engine.lr_alpha must be positive");
  make_problem(cfg.train.problem);  // unknown names are config errors
  if (cfg.checkpoint_every < 1) config_error("output.checkpoint_every must be >= 1");
  if (cfg.scatter_points < 0) config_error("output.scatter_points must be >= 0");
  if (cfg.out_dir.empty()) config_error("output.dir must not be empty");
}

std::string canonical_text(const RunConfig& cfg) { return lines(cfg, false); }

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  for (unsigned char c : lines(cfg, true)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace aas
