#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

#include "aas/config.hpp"
#include "aas/error.hpp"
#include "aas/run.hpp"
#include "fixtures.hpp"

using namespace aas;
namespace fs = std::filesystem;

namespace {

const char* kSmoke =
    "problem.name = one_peak\n"
    "engine.stages = 1\n"
    "engine.min_steps = 1\n"
    "engine.max_steps = 1\n"
    "engine.m = 4\n"
    "engine.n_r = 64\n"
    "engine.n_b = 32\n"
    "net.depth = 1\n"
    "net.width = 6\n"
    "flow.layers = 2\n"
    "flow.hidden = 4\n"
    "flow.depth = 1\n"
    "eval.points = 100\n"
    "eval.w_draws = 100\n"
    "eval.w_projections = 4\n"
    "rar.add = 8\n"
    "rar.pool_factor = 4\n";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aas_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

ErrorKind kind_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error for: " << text);
  return ErrorKind::Invalid;
}

std::string message_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

RunConfig smoke(const fs::path& out, int stages = 1) {
  RunConfig c = parse_config_text(kSmoke);
  c.out_dir = out.string();
  c.train.stages = stages;
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(AAS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

int lines_of(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("config: defaults and the problem key") {
  CHECK(message_of("") == "problem required");
  CHECK(kind_of("") == ErrorKind::Config);
  CHECK(message_of("# only a comment\n\n") == "problem required");
  const RunConfig c = parse_config_text("problem.name = one_peak\n");
  const TrainConfig d;
  CHECK(c.train.stages == d.stages);
  CHECK(c.train.min_steps == 100);
  CHECK(c.train.max_steps == 100);
  CHECK(c.train.batch == 500);
  CHECK(c.train.n_interior == 20000);
  CHECK(c.train.n_boundary == 4000);
  CHECK(c.train.lr_theta == 1e-3);
  CHECK(c.train.lr_alpha == 1e-4);
  CHECK(c.train.beta == 5.0);
  CHECK(c.checkpoint_every == 10);
}

TEST_CASE("config: beta decay keys") {
  const RunConfig c = parse_config_text(
      "problem.name = one_peak\nengine.beta = 5\nengine.beta_decay = 0.9\nengine.beta_period = 100\n");
  CHECK(c.train.beta == 5.0);
  CHECK(c.train.beta_decay == 0.9);
  CHECK(c.train.beta_period == 100);
  CHECK(beta_at(c.train, 99) == 5.0);
  CHECK(beta_at(c.train, 100) == 5.0 * 0.9);
  CHECK(beta_at(c.train, 250) == 5.0 * std::pow(0.9, 2));
}

TEST_CASE("config: rejected input") {
  const std::string p = "problem.name = one_peak\n";
  CHECK(kind_of(p + "engine.m = 0\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.stages = -1\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.beta_decay = 1.5\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.lr_theta = 0\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.nonsense = 3\n") == ErrorKind::Config);
  CHECK(kind_of(p + "other.m = 3\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.m = 2.5\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.m = ten\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.beta = fast\n") == ErrorKind::Config);
  CHECK(kind_of(p + "output.wallclock = maybe\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.regeneration = sometimes\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.m\n") == ErrorKind::Config);
  CHECK(kind_of(p + "m = 4\n") == ErrorKind::Config);
  CHECK(kind_of(p + "engine.m =\n") == ErrorKind::Config);
  CHECK(kind_of("problem.name = three_peak\n") == ErrorKind::Config);
  CHECK(message_of(p + "engine.nonsense = 3\n").find("nonsense") != std::string::npos);

  try {
    parse_config("/nonexistent/aas.cfg");
    FAIL("missing file accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("config: grammar details") {
  const RunConfig c = parse_config_text(
      "  problem.name = \"two_peak\"   # quoted\n"
      "engine.seed=42\n"
      "engine.regeneration = augment\n"
      "output.dir = \"out#1\"\n"
      "output.wallclock = true\n"
      "engine.gamma = 2.5e0\n");
  CHECK(c.train.problem == "two_peak");
  CHECK(c.train.seed == 42);
  CHECK(c.train.regeneration == Regeneration::Augment);
  CHECK(c.out_dir == "out#1");
  CHECK(c.record_wallclock);
  CHECK(c.train.gamma == 2.5);
}

TEST_CASE("config: canonical text round trip and hash") {
  RunConfig a = parse_config_text(std::string(kSmoke) + "engine.lr_theta = 0.00123\nengine.beta = 0.1\n");
  const RunConfig b = parse_config_text(canonical_text(a));
  CHECK(canonical_text(b) == canonical_text(a));
  CHECK(config_hash(b) == config_hash(a));
  CHECK(config_hash(a).size() == 16);
  CHECK(b.train.lr_theta == a.train.lr_theta);

  // output options do not enter the hash, trainer keys do
  RunConfig c = a;
  c.out_dir = "elsewhere";
  CHECK(config_hash(c) == config_hash(a));
  c.train.seed = 1;
  CHECK(config_hash(c) != config_hash(a));

  for (double v : {0.1, 1e-300, 123456.789, -2.5, 1.0 / 3.0}) CHECK(std::stod(format_real(v)) == v);
  CHECK(format_real(0.5) == "0.5");
}

TEST_CASE("train: smoke run directory") {
  const fs::path dir = scratch("smoke");
  for (Method m : {Method::Aas, Method::Pinn, Method::Rar}) {
    const fs::path d = dir / method_name(m);
    const RunConfig c = smoke(d);
    const RunSummary s = run_training(c, m);
    const std::string hash = config_hash(c);
    CHECK(s.stages == 1);
    CHECK(std::isfinite(s.final_error));

    const std::string metrics = slurp(d / "metrics.csv");
    CHECK(lines_of(metrics) == 2);
    CHECK(metrics.rfind("stage,min_loss,boundary_loss,max_objective,error,var_r2,sliced_w,beta,wallclock_s\n", 0) == 0);
    CHECK(fs::exists(d / "manifest.json"));
    CHECK(fs::exists(d / "summary.json"));
    CHECK(fs::exists(d / "scatter" / ("stage_0000_" + hash + ".csv")));
    CHECK(fs::exists(d / "checkpoints" / ("ckpt_" + hash + "_stage_0001.json")));

    const RunSummary r = read_summary(d.string());
    CHECK(r.final_error == s.final_error);
    CHECK(r.method == method_name(m));
    CHECK(r.problem == "one_peak");
    CHECK(r.config_hash == hash);
  }
}

TEST_CASE("train: same config and seed give identical metrics") {
  const fs::path dir = scratch("repeat");
  RunConfig a = smoke(dir / "a", 3);
  RunConfig b = smoke(dir / "b", 3);
  a.train.seed = b.train.seed = 9;
  run_training(a, Method::Aas);
  run_training(b, Method::Aas);
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  RunConfig c = smoke(dir / "c", 3);
  c.train.seed = 10;
  run_training(c, Method::Aas);
  CHECK(slurp(dir / "a" / "metrics.csv") != slurp(dir / "c" / "metrics.csv"));
}

TEST_CASE("metrics rows round trip") {
  StageRecord r;
  r.stage = 7;
  r.min_loss = 1.0 / 3.0;
  r.boundary_loss = 2e-300;
  r.max_objective = -12.25;
  r.error = 9.74e-4;
  r.var_r2 = 6.5e9;
  r.sliced_w = 0.123456789012345;
  r.beta = 4.5;
  r.wallclock_s = 1.5;
  const fs::path dir = scratch("rows");
  spit(dir / "metrics.csv", metrics_header() + "\n" + metrics_row(r, true) + "\n" + metrics_row(r, false) + "\n");
  const auto rows = read_metrics((dir / "metrics.csv").string());
  REQUIRE(rows.size() == 2);
  for (const StageRecord& q : rows) {
    CHECK(q.stage == 7);
    CHECK(q.min_loss == r.min_loss);
    CHECK(q.boundary_loss == r.boundary_loss);
    CHECK(q.max_objective == r.max_objective);
    CHECK(q.error == r.error);
    CHECK(q.var_r2 == r.var_r2);
    CHECK(q.sliced_w == r.sliced_w);
    CHECK(q.beta == r.beta);
  }
  CHECK(rows[0].wallclock_s == 1.5);
  CHECK(rows[1].wallclock_s == 0.0);
  CHECK(metrics_row(r, false).find(',') != std::string::npos);
  CHECK(metrics_row(r, false).find("0.3333333333333333") != std::string::npos);
}

TEST_CASE("checkpoint restores the training state") {
  TrainConfig c = smoke("unused").train;
  c.stages = 2;
  const TrainState st = train(c, Method::Aas);
  const std::string text = checkpoint_json(st, "abc");
  TrainState other = train(c, Method::Pinn);
  load_checkpoint(text, other);
  CHECK(other.stage == st.stage);
  CHECK(other.method == Method::Aas);
  CHECK(checkpoint_json(other, "abc") == text);
  CHECK_THROWS(load_checkpoint("{\"format\": \"something else\"}", other));
  CHECK_THROWS(load_checkpoint("not json", other));
}

TEST_CASE("compare: tables from summaries") {
  const fs::path dir = scratch("compare");
  auto fake = [&](const std::string& name, const std::string& method, const std::string& problem, double err) {
    const fs::path d = dir / name;
    fs::create_directories(d);
    spit(d / "summary.json", "{\"final_error\": " + format_real(err) + ", \"min_var\": 1, \"final_sliced_w\": 0.5, "
                             "\"wallclock\": 0, \"method\": \"" + method + "\", \"problem\": \"" + problem +
                             "\", \"stages\": 1, \"config_hash\": \"0\"}\n");
    return d.string();
  };
  const std::string a1 = fake("a1", "pinn", "one_peak", 2e-3), a2 = fake("a2", "pinn", "one_peak", 2e-3);
  const Comparison same = compare_runs({a1, a2});
  REQUIRE(same.methods.size() == 1);
  CHECK(same.error[0][0] == 2e-3);

  const std::string r = fake("r", "rar", "one_peak", 5e-4), s = fake("s", "aas", "one_peak", 3.25e-5);
  const Comparison three = compare_runs({r, a1, s});
  CHECK(three.methods == std::vector<std::string>{"aas", "pinn", "rar"});
  CHECK(three.problems == std::vector<std::string>{"one_peak"});
  CHECK(three.error[0][0] == read_summary(s).final_error);
  CHECK(three.error[1][0] == read_summary(a1).final_error);
  CHECK(three.error[2][0] == read_summary(r).final_error);
  CHECK(three.csv() == "method,one_peak\naas,3.25e-05\npinn,0.002\nrar,5e-04\n");
  CHECK(three.table().find("aas") < three.table().find("pinn"));

  // median of three, and an empty cell where a method lacks a problem
  const std::string m1 = fake("m1", "aas", "two_peak", 1.0), m2 = fake("m2", "aas", "two_peak", 5.0),
                    m3 = fake("m3", "aas", "two_peak", 2.0);
  const Comparison med = compare_runs({m1, m2, m3, a1});
  CHECK(med.error[0][1] == 2.0);
  CHECK(std::isnan(med.error[1][1]));
  CHECK(med.csv() == "method,one_peak,two_peak\naas,,2\npinn,0.002,\n");

  fs::create_directories(dir / "empty");
  try {
    compare_runs({(dir / "empty").string()});
    FAIL("missing summary accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("export: curves and scatter") {
  const fs::path dir = scratch("export");
  RunConfig c = smoke(dir / "run", 3);
  c.scatter_points = 0;
  c.train.n_interior = 4000;
  run_training(c, Method::Aas);
  const auto rows = read_metrics((dir / "run" / "metrics.csv").string());

  const std::string ec = slurp(export_run((dir / "run").string(), ExportKind::ErrorCurve));
  std::istringstream in(ec);
  std::string line;
  std::getline(in, line);
  CHECK(line[0] == '#');
  std::getline(in, line);
  CHECK(line == "stage,error");
  for (const StageRecord& r : rows) {
    std::getline(in, line);
    CHECK(line == std::to_string(r.stage) + "," + format_real(r.error));
  }

  // stage 0 comes from the initial identity flow: uniform on the square
  const std::string sc = slurp(export_run((dir / "run").string(), ExportKind::Scatter));
  std::istringstream sin(sc);
  std::getline(sin, line);
  CHECK(line[0] == '#');
  std::getline(sin, line);
  CHECK(line == "stage,x1,x2");
  double n = 0, s1 = 0, s2 = 0, q1 = 0;
  int other = 0;
  while (std::getline(sin, line)) {
    double st, x, y;
    char comma;
    std::istringstream ls(line);
    ls >> st >> comma >> x >> comma >> y;
    if (st != 0) {
      ++other;
      continue;
    }
    CHECK(std::abs(x) <= 1.0);
    CHECK(std::abs(y) <= 1.0);
    ++n;
    s1 += x;
    s2 += y;
    q1 += x * x;
  }
  CHECK(n == 4000);
  CHECK(other == 2 * 4000);
  const double se = std::sqrt(1.0 / 3.0 / n);
  CHECK(std::abs(s1 / n) < 3 * se);
  CHECK(std::abs(s2 / n) < 3 * se);
  // Var(x^2) = 1/5 - 1/9 for x ~ U(-1,1)
  CHECK(std::abs(q1 / n - 1.0 / 3.0) < 3 * std::sqrt((0.2 - 1.0 / 9.0) / n));

  CHECK_THROWS(export_run((dir / "missing").string(), ExportKind::ErrorCurve));
  CHECK(parse_export_kind("variance_curve") == ExportKind::VarianceCurve);
  CHECK_THROWS(parse_export_kind("histogram"));
}

TEST_CASE("export: variance curve of a frozen exact run is constant") {
  testing::IdentityProblem stub(2, ErrorMetric::GridMse);
  TrainConfig c = smoke("unused").train;
  c.problem = "identity_stub";
  c.stages = 4;
  c.lr_theta = 0.0;
  const fs::path dir = scratch("frozen");
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  metrics << metrics_header() << '\n';
  TrainHooks h;
  h.prepare = [](TrainState& st) {
    st.net.weight(st.net.layers() - 1).setZero();
    st.net.bias(st.net.layers() - 1).setZero();
  };
  h.stage_done = [&](const TrainState&, const StageRecord& r, const PointBatch&) { metrics << metrics_row(r, false) << '\n'; };
  train(c, Method::Pinn, stub, h);
  metrics.close();
  std::istringstream in(slurp(export_run(dir.string(), ExportKind::VarianceCurve)));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line == "stage,var_r2");
  int rows = 0;
  std::string first;
  while (std::getline(in, line)) {
    const std::string value = line.substr(line.find(',') + 1);
    if (rows == 0) first = value;
    CHECK(value == first);
    ++rows;
  }
  CHECK(rows == 4);
}

TEST_CASE("command line: exit codes") {
  const fs::path dir = scratch("exit");
  spit(dir / "smoke.cfg", kSmoke);
  spit(dir / "empty.cfg", "");
  spit(dir / "diverge.cfg", std::string(kSmoke) + "engine.divergence_limit = 1e-12\n");
  const std::string cfg = (dir / "smoke.cfg").string();

  CHECK(cli("train --config " + cfg + " --method aas --out " + (dir / "r1").string()) == 0);
  CHECK(cli("train --config " + cfg + " --method aas --out " + (dir / "r2").string()) == 0);
  CHECK(slurp(dir / "r1" / "metrics.csv") == slurp(dir / "r2" / "metrics.csv"));
  CHECK(lines_of(slurp(dir / "r1" / "metrics.csv")) == 2);
  CHECK(cli("train --config " + cfg + " --method pinn --seed 3 --out " + (dir / "r3").string()) == 0);
  CHECK(slurp(dir / "r3" / "manifest.json").find("\"seed\": 3") != std::string::npos);

  CHECK(cli("train --config " + (dir / "empty.cfg").string() + " --method aas --out " + (dir / "x").string()) == 1);
  CHECK(cli("train --config " + cfg + " --method sgd") == 1);
  CHECK(cli("train --method aas") == 1);
  CHECK(cli("train --config " + (dir / "nope.cfg").string() + " --method aas") == 3);
  CHECK(cli("train --config " + (dir / "diverge.cfg").string() + " --method pinn --out " + (dir / "d").string()) == 2);
  CHECK(fs::exists(dir / "d" / "checkpoints"));

  CHECK(cli("compare " + (dir / "r1").string() + " " + (dir / "r3").string()) == 0);
  CHECK(cli("compare " + (dir / "x").string()) == 3);
  CHECK(cli("export " + (dir / "r1").string() + " --what error_curve") == 0);
  CHECK(fs::exists(dir / "r1" / "export" / "error_curve.csv"));
  CHECK(cli("export " + (dir / "r1").string() + " --what histogram") == 1);
  CHECK(cli("export " + (dir / "missing").string() + " --what scatter") == 3);
  CHECK(cli("--version") == 0);
  CHECK(cli("") == 1);
}
