#include "aas/run.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "aas/error.hpp"

namespace aas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) io_error("cannot write '" + p.string() + "'");
  f << text;
  if (!f) io_error("write failed for '" + p.string() + "'");
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) io_error("cannot read '" + p.string() + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) io_error("cannot create directory '" + p.string() + "': " + ec.message());
}

std::string stage_tag(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", k);
  return buf;
}

json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) io_error("checkpoint: matrix size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

json matrices_json(const std::vector<const Eigen::MatrixXd*>& ms) {
  json a = json::array();
  for (const Eigen::MatrixXd* m : ms) a.push_back(matrix_json(*m));
  return a;
}

json adam_json(const AdamState& s) {
  json m = json::array(), v = json::array();
  for (const auto& x : s.m) m.push_back(matrix_json(x));
  for (const auto& x : s.v) v.push_back(matrix_json(x));
  return {{"m", m}, {"v", v}, {"step", s.step}};
}

void restore_matrices(const json& j, const std::vector<Eigen::MatrixXd*>& into, const char* what) {
  if (j.size() != into.size()) io_error(std::string("checkpoint: wrong number of ") + what + " matrices");
  for (std::size_t k = 0; k < into.size(); ++k) {
    Eigen::MatrixXd m = matrix_from(j[k]);
    if (m.rows() != into[k]->rows() || m.cols() != into[k]->cols())
      io_error(std::string("checkpoint: ") + what + " shape mismatch");
    *into[k] = std::move(m);
  }
}

AdamState adam_from(const json& j) {
  AdamState s;
  for (const auto& x : j.at("m")) s.m.push_back(matrix_from(x));
  for (const auto& x : j.at("v")) s.v.push_back(matrix_from(x));
  s.step = j.at("step").get<long>();
  return s;
}

double parse_real(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) io_error(where + ": bad number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::string scatter_csv(const PointBatch& x, int stage, int limit) {
  const Eigen::Index n = limit > 0 ? std::min<Eigen::Index>(limit, x.rows()) : x.rows();
  std::string out = "# stage, then the point coordinates x1..xD\nstage";
  for (Eigen::Index k = 0; k < x.cols(); ++k) out += ",x" + std::to_string(k + 1);
  out += '\n';
  for (Eigen::Index i = 0; i < n; ++i) {
    out += std::to_string(stage);
    for (Eigen::Index k = 0; k < x.cols(); ++k) out += "," + format_real(x(i, k));
    out += '\n';
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---- metrics ----------------------------------------------------------------------

std::string metrics_header() {
  return "stage,min_loss,boundary_loss,max_objective,error,var_r2,sliced_w,beta,wallclock_s";
}

std::string metrics_row(const StageRecord& r, bool wallclock) {
  std::string s = std::to_string(r.stage);
  for (double v : {r.min_loss, r.boundary_loss, r.max_objective, r.error, r.var_r2, r.sliced_w, r.beta,
                   wallclock ? r.wallclock_s : 0.0})
    s += "," + format_real(v);
  return s;
}

std::vector<StageRecord> read_metrics(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) io_error("'" + path + "' is not a metrics file");
  std::vector<StageRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9) io_error("'" + path + "': malformed row");
    StageRecord r;
    r.stage = static_cast<int>(parse_real(f[0], path));
    double* dst[] = {&r.min_loss, &r.boundary_loss, &r.max_objective, &r.error, &r.var_r2, &r.sliced_w, &r.beta,
                     &r.wallclock_s};
    for (int k = 0; k < 8; ++k) *dst[k] = parse_real(f[k + 1], path);
    out.push_back(r);
  }
  return out;
}

// ---- checkpoints --------------------------------------------------------------------

std::string checkpoint_json(const TrainState& st, const std::string& hash) {
  json rngs = json::object();
  for (const auto& [label, r] : st.rngs) rngs[label] = r.state();
  json j = {{"format", "aas-checkpoint"},
            {"version", 1},
            {"config_hash", hash},
            {"method", method_name(st.method)},
            {"stage", st.stage},
            {"lr_theta", st.lr_theta},
            {"divergences", st.divergences},
            {"theta", matrices_json(st.net.parameters())},
            {"alpha", matrices_json(st.flow.parameters())},
            {"adam_theta", adam_json(st.adam_theta)},
            {"adam_alpha", adam_json(st.adam_alpha)},
            {"rng", rngs}};
  return j.dump(1);
}

void load_checkpoint(const std::string& text, TrainState& st) {
  json j;
  try {
    j = json::parse(text);
    if (j.at("format") != "aas-checkpoint" || j.at("version") != 1) io_error("checkpoint: unknown format");
    st.method = parse_method(j.at("method").get<std::string>());
    st.stage = j.at("stage").get<int>();
    st.lr_theta = j.at("lr_theta").get<double>();
    st.divergences = j.at("divergences").get<int>();
    restore_matrices(j.at("theta"), st.net.parameters(), "theta");
    restore_matrices(j.at("alpha"), st.flow.parameters(), "alpha");
    st.adam_theta = adam_from(j.at("adam_theta"));
    st.adam_alpha = adam_from(j.at("adam_alpha"));
    for (const auto& [label, state] : j.at("rng").items()) st.rngs[label].set_state(state.get<std::string>());
  } catch (const json::exception& e) {
    io_error(std::string("checkpoint: ") + e.what());
  }
}

// ---- training run --------------------------------------------------------------------

RunSummary run_training(const RunConfig& cfg, Method method, const StageCallback& on_stage) {
  check_run_config(cfg);
  const std::string hash = config_hash(cfg);
  const fs::path dir(cfg.out_dir);
  make_dirs(dir / "scatter");
  make_dirs(dir / "checkpoints");

  json values = json::object();
  {
    std::istringstream in(canonical_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      values[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  const json manifest = {
      {"version", kVersion},
      {"method", method_name(method)},
      {"problem", cfg.train.problem},
      {"seed", cfg.train.seed},
      {"config_hash", hash},
      {"config", values},
      {"layout",
       {{"metrics", "metrics.csv"},
        {"summary", "summary.json"},
        {"scatter", "scatter/stage_<k>_" + hash + ".csv"},
        {"checkpoints", "checkpoints/ckpt_" + hash + "_stage_<k>.json"}}}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!metrics) io_error("cannot write '" + (dir / "metrics.csv").string() + "'");
  metrics << metrics_header() << '\n';

  auto checkpoint = [&](const TrainState& st) {
    write_file(dir / "checkpoints" / ("ckpt_" + hash + "_stage_" + stage_tag(st.stage) + ".json"),
               checkpoint_json(st, hash) + "\n");
  };

  TrainHooks hooks;
  hooks.stage_done = [&](const TrainState& st, const StageRecord& rec, const PointBatch& used) {
    metrics << metrics_row(rec, cfg.record_wallclock) << '\n';
    metrics.flush();
    if (!metrics) io_error("write failed for metrics.csv");
    write_file(dir / "scatter" / ("stage_" + stage_tag(rec.stage) + "_" + hash + ".csv"),
               scatter_csv(used, rec.stage, cfg.scatter_points));
    if (st.stage % cfg.checkpoint_every == 0 || st.stage == cfg.train.stages) checkpoint(st);
    if (on_stage) on_stage(rec);
  };
  hooks.aborted = [&](const TrainState& st, const std::string&) { checkpoint(st); };

  const auto start = std::chrono::steady_clock::now();
  const TrainState st = train(cfg.train, method, hooks);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  RunSummary s;
  s.method = method_name(method);
  s.problem = cfg.train.problem;
  s.config_hash = hash;
  s.stages = static_cast<int>(st.history.size());
  s.final_error = st.history.back().error;
  s.min_var = std::numeric_limits<double>::infinity();
  for (const StageRecord& r : st.history) s.min_var = std::min(s.min_var, r.var_r2);
  s.final_sliced_w = st.history.back().sliced_w;
  s.wallclock = elapsed;
  const json summary = {{"final_error", s.final_error}, {"min_var", s.min_var},
                        {"final_sliced_w", s.final_sliced_w}, {"wallclock", s.wallclock},
                        {"method", s.method}, {"problem", s.problem},
                        {"stages", s.stages}, {"config_hash", hash}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  return s;
}

RunSummary read_summary(const std::string& dir) {
  const fs::path p = fs::path(dir) / "summary.json";
  if (!fs::exists(p)) io_error("no summary.json in '" + dir + "'");
  try {
    const json j = json::parse(read_file(p));
    RunSummary s;
    s.method = j.at("method").get<std::string>();
    s.problem = j.at("problem").get<std::string>();
    s.config_hash = j.at("config_hash").get<std::string>();
    s.stages = j.at("stages").get<int>();
    s.final_error = j.at("final_error").get<double>();
    s.min_var = j.at("min_var").get<double>();
    s.final_sliced_w = j.at("final_sliced_w").get<double>();
    s.wallclock = j.at("wallclock").get<double>();
    return s;
  } catch (const json::exception& e) {
    io_error("'" + p.string() + "': " + e.what());
  }
}

// ---- compare and export ----------------------------------------------------------------

Comparison compare_runs(const std::vector<std::string>& dirs) {
  if (dirs.empty()) fail("compare: no run directories");
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  std::set<std::string> methods, problems;
  for (const std::string& d : dirs) {
    const RunSummary s = read_summary(d);
    cells[{s.method, s.problem}].push_back(s.final_error);
    methods.insert(s.method);
    problems.insert(s.problem);
  }
  Comparison c;
  c.methods.assign(methods.begin(), methods.end());
  c.problems.assign(problems.begin(), problems.end());
  for (const auto& m : c.methods) {
    std::vector<double> row;
    for (const auto& p : c.problems) {
      auto it = cells.find({m, p});
      row.push_back(it == cells.end() ? std::nan("") : median(it->second));
    }
    c.error.push_back(row);
  }
  return c;
}

std::string Comparison::csv() const {
  std::string out = "method";
  for (const auto& p : problems) out += "," + p;
  out += '\n';
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out += methods[i];
    for (double v : error[i]) out += "," + (std::isnan(v) ? std::string() : format_real(v));
    out += '\n';
  }
  return out;
}

std::string Comparison::table() const {
  std::size_t w0 = 6;
  for (const auto& m : methods) w0 = std::max(w0, m.size());
  std::vector<std::size_t> w;
  for (const auto& p : problems) w.push_back(std::max<std::size_t>(p.size(), 10));
  auto pad = [](std::string s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
  std::string out = pad("method", w0);
  for (std::size_t j = 0; j < problems.size(); ++j) out += "  " + pad(problems[j], w[j]);
  out += '\n';
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out += pad(methods[i], w0);
    for (std::size_t j = 0; j < problems.size(); ++j) {
      char buf[32];
      if (std::isnan(error[i][j])) std::snprintf(buf, sizeof buf, "-");
      else std::snprintf(buf, sizeof buf, "%.3e", error[i][j]);
      out += "  " + pad(buf, w[j]);
    }
    out += '\n';
  }
  return out;
}

ExportKind parse_export_kind(const std::string& s) {
  if (s == "error_curve") return ExportKind::ErrorCurve;
  if (s == "variance_curve") return ExportKind::VarianceCurve;
  if (s == "scatter") return ExportKind::Scatter;
  config_error("unknown export '" + s + "' (expected error_curve, variance_curve or scatter)");
}

std::string export_run(const std::string& dir_s, ExportKind what) {
  const fs::path dir(dir_s);
  std::string name, text;
  if (what == ExportKind::Scatter) {
    name = "scatter";
    const fs::path sd = dir / "scatter";
    if (!fs::is_directory(sd)) io_error("no scatter directory in '" + dir_s + "'");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sd))
      if (e.path().extension() == ".csv") files.push_back(e.path());
    if (files.empty()) io_error("no scatter files in '" + sd.string() + "'");
    std::sort(files.begin(), files.end());
    bool header = false;
    for (const auto& f : files) {
      std::istringstream in(read_file(f));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("stage", 0) == 0) {
          if (!header) text = "# stage, then the training point coordinates x1..xD\n" + line + "\n";
          header = true;
          continue;
        }
        text += line + '\n';
      }
    }
  } else {
    const auto rows = read_metrics((dir / "metrics.csv").string());
    const bool err = what == ExportKind::ErrorCurve;
    name = err ? "error_curve" : "variance_curve";
    text = err ? "# stage, error (grid MSE or relative L2, per problem)\nstage,error\n"
               : "# stage, unbiased variance of r^2 on the uniform evaluation set\nstage,var_r2\n";
    for (const StageRecord& r : rows) text += std::to_string(r.stage) + "," + format_real(err ? r.error : r.var_r2) + "\n";
  }
  make_dirs(dir / "export");
  const fs::path out = dir / "export" / (name + ".csv");
  write_file(out, text);
  return out.string();
}

}  // namespace aas
