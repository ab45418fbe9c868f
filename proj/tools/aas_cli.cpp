#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "aas/aas.h"

namespace {

int exit_code(aas_status s) {
  switch (s) {
    case AAS_OK: return 0;
    case AAS_ERR_TRAINING: return 2;
    case AAS_ERR_IO: return 3;
    default: return 1;
  }
}

int report(aas_status s) {
  if (s != AAS_OK) std::fprintf(stderr, "error: %s\n", aas_last_error());
  return exit_code(s);
}

void print_stage(const aas_stage_record* r, void*) {
  std::fprintf(stderr, "stage %4d  loss %.4e  error %.4e  var %.4e  sliced_w %.4f\n", r->stage, r->min_loss, r->error,
               r->var_r2, r->sliced_w);
}

int cmd_train(const std::string& config, const std::string& method, const std::string& seed, const std::string& out) {
  aas_config* cfg = nullptr;
  aas_status s = aas_config_load(config.c_str(), &cfg);
  if (s == AAS_OK && !seed.empty()) s = aas_config_set(cfg, "engine.seed", seed.c_str());
  if (s == AAS_OK && !out.empty()) s = aas_config_set(cfg, "output.dir", out.c_str());
  if (s != AAS_OK) {
    aas_config_free(cfg);
    return report(s);
  }
  aas_run* run = nullptr;
  s = aas_train(cfg, method.c_str(), print_stage, nullptr, &run);
  if (s == AAS_OK)
    std::printf("%s: %d stages, final error %.6e\n", method.c_str(), aas_run_stage_count(run), aas_run_final_error(run));
  aas_run_free(run);
  aas_config_free(cfg);
  return report(s);
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& csv_path) {
  std::vector<const char*> p;
  for (const auto& d : dirs) p.push_back(d.c_str());
  char* table = nullptr;
  char* csv = nullptr;
  const aas_status s = aas_compare(p.data(), p.size(), &table, &csv);
  if (s != AAS_OK) return report(s);
  std::fputs(table, stdout);
  int rc = 0;
  if (!csv_path.empty()) {
    if (std::FILE* f = std::fopen(csv_path.c_str(), "wb")) {
      std::fputs(csv, f);
      std::fclose(f);
    } else {
      std::fprintf(stderr, "error: cannot write '%s'\n", csv_path.c_str());
      rc = 3;
    }
  } else {
    std::fputs("\n", stdout);
    std::fputs(csv, stdout);
  }
  aas_string_free(table);
  aas_string_free(csv);
  return rc;
}

int cmd_export(const std::string& dir, const std::string& what) {
  char* path = nullptr;
  const aas_status s = aas_export(dir.c_str(), what.c_str(), &path);
  if (s == AAS_OK) std::printf("%s\n", path);
  aas_string_free(path);
  return report(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial adaptive sampling for physics-informed networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(aas_version()));

  std::string config, method, seed, out;
  auto* train = app.add_subcommand("train", "Train one model and write a run directory");
  train->add_option("--config", config, "Config file (section.key = value)")->required();
  train->add_option("--method", method, "Sampling method")->required()->check(CLI::IsMember({"aas", "pinn", "rar"}));
  train->add_option("--seed", seed, "Master seed, overrides engine.seed")->check(CLI::NonNegativeNumber);
  train->add_option("--out", out, "Run directory, overrides output.dir");

  std::vector<std::string> dirs;
  std::string csv_path;
  auto* compare = app.add_subcommand("compare", "Median final error per method and problem");
  compare->add_option("dirs", dirs, "Run directories")->required();
  compare->add_option("--csv", csv_path, "Write the table as CSV here instead of stdout");

  std::string dir, what;
  auto* exp = app.add_subcommand("export", "Write figure data from a run directory");
  exp->add_option("dir", dir, "Run directory")->required();
  exp->add_option("--what", what, "Which series")
      ->required()
      ->check(CLI::IsMember({"error_curve", "variance_curve", "scatter"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (*train) return cmd_train(config, method, seed, out);
  if (*compare) return cmd_compare(dirs, csv_path);
  return cmd_export(dir, what);
}
