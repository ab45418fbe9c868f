#include "aas/aas.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>
#include <vector>

#include "aas/config.hpp"
#include "aas/error.hpp"
#include "aas/run.hpp"

struct aas_config {
  aas::RunConfig cfg;
  std::string text;
};

struct aas_run {
  std::vector<aas_stage_record> records;
  double final_error = 0.0;
};

namespace {

thread_local std::string g_error;

aas_status status_of(aas::ErrorKind k) {
  switch (k) {
    case aas::ErrorKind::Config: return AAS_ERR_CONFIG;
    case aas::ErrorKind::Training: return AAS_ERR_TRAINING;
    case aas::ErrorKind::Io: return AAS_ERR_IO;
    case aas::ErrorKind::Invalid: return AAS_ERR_INVALID;
  }
  return AAS_ERR_INVALID;
}

template <class F>
aas_status guarded(F&& f) {
  g_error.clear();
  try {
    f();
    return AAS_OK;
  } catch (const aas::Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
  } catch (const std::exception& e) {
    g_error = e.what();
  }
  return AAS_ERR_INVALID;
}

void need(const void* p, const char* what) {
  if (!p) aas::fail(std::string(what) + " is null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

aas_stage_record to_c(const aas::StageRecord& r) {
  return {r.stage, r.min_loss, r.boundary_loss, r.max_objective, r.error, r.var_r2, r.sliced_w, r.beta,
          r.wallclock_s};
}

}  // namespace

extern "C" {

const char* aas_last_error(void) { return g_error.c_str(); }
const char* aas_version(void) { return aas::kVersion; }

aas_status aas_config_load(const char* path, aas_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new aas_config{aas::parse_config(path), {}};
  });
}

aas_status aas_config_parse(const char* text, aas_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new aas_config{aas::parse_config_text(text), {}};
  });
}

aas_status aas_config_set(aas_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    aas::set_config_value(cfg->cfg, key, value);
  });
}

const char* aas_config_text(aas_config* cfg) {
  if (!cfg) return "";
  cfg->text = aas::canonical_text(cfg->cfg);
  return cfg->text.c_str();
}

void aas_config_free(aas_config* cfg) { delete cfg; }

aas_status aas_train(const aas_config* cfg, const char* method, aas_stage_fn on_stage, void* user, aas_run** out) {
  aas_run* run = nullptr;
  const aas_status st = guarded([&] {
    need(cfg, "config");
    need(method, "method");
    need(out, "out");
    const aas::Method m = aas::parse_method(method);
    run = new aas_run;
    const aas::RunSummary s = aas::run_training(cfg->cfg, m, [&](const aas::StageRecord& r) {
      run->records.push_back(to_c(r));
      if (on_stage) on_stage(&run->records.back(), user);
    });
    run->final_error = s.final_error;
  });
  if (out) {
    if (run && !run->records.empty() && st != AAS_OK) run->final_error = run->records.back().error;
    *out = run;
  } else {
    delete run;
  }
  return st;
}

int aas_run_stage_count(const aas_run* run) { return run ? static_cast<int>(run->records.size()) : 0; }

aas_status aas_run_record(const aas_run* run, int index, aas_stage_record* out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    if (index < 0 || index >= static_cast<int>(run->records.size())) aas::fail("stage index out of range");
    *out = run->records[index];
  });
}

double aas_run_final_error(const aas_run* run) { return run ? run->final_error : 0.0; }

void aas_run_free(aas_run* run) { delete run; }

aas_status aas_compare(const char* const* dirs, size_t count, char** table_out, char** csv_out) {
  return guarded([&] {
    need(dirs, "dirs");
    need(table_out, "table_out");
    std::vector<std::string> d;
    for (size_t i = 0; i < count; ++i) {
      need(dirs[i], "run directory");
      d.emplace_back(dirs[i]);
    }
    const aas::Comparison c = aas::compare_runs(d);
    *table_out = dup(c.table());
    if (csv_out) *csv_out = dup(c.csv());
  });
}

aas_status aas_export(const char* dir, const char* what, char** path_out) {
  return guarded([&] {
    need(dir, "dir");
    need(what, "what");
    need(path_out, "path_out");
    *path_out = dup(aas::export_run(dir, aas::parse_export_kind(what)));
  });
}

void aas_string_free(char* s) { std::free(s); }

}  // extern "C"
