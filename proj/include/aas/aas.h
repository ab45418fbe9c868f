#ifndef AAS_AAS_H
#define AAS_AAS_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define AAS_API __declspec(dllexport)
#else
#define AAS_API __attribute__((visibility("default")))
#endif

typedef enum aas_status {
  AAS_OK = 0,
  AAS_ERR_CONFIG = 1,
  AAS_ERR_TRAINING = 2,
  AAS_ERR_IO = 3,
  AAS_ERR_INVALID = 4
} aas_status;

typedef struct aas_config aas_config;
typedef struct aas_run aas_run;

typedef struct aas_stage_record {
  int stage;
  double min_loss;
  double boundary_loss;
  double max_objective;
  double error;
  double var_r2;
  double sliced_w;
  double beta;
  double wallclock_s;
} aas_stage_record;

typedef void (*aas_stage_fn)(const aas_stage_record* rec, void* user);

/* Message of the last failed call on this thread; empty after success. */
AAS_API const char* aas_last_error(void);
AAS_API const char* aas_version(void);

AAS_API aas_status aas_config_load(const char* path, aas_config** out);
AAS_API aas_status aas_config_parse(const char* text, aas_config** out);
/* One `section.key = value` override, e.g. ("engine.seed", "3"). */
AAS_API aas_status aas_config_set(aas_config* cfg, const char* key, const char* value);
/* Canonical text; the buffer stays valid until the next call on cfg. */
AAS_API const char* aas_config_text(aas_config* cfg);
AAS_API void aas_config_free(aas_config* cfg);

/* method: "aas", "pinn" or "rar". Writes the run directory named by output.dir.
   on_stage may be NULL. On a training abort *out still receives the records so far. */
AAS_API aas_status aas_train(const aas_config* cfg, const char* method, aas_stage_fn on_stage, void* user,
                             aas_run** out);
AAS_API int aas_run_stage_count(const aas_run* run);
AAS_API aas_status aas_run_record(const aas_run* run, int index, aas_stage_record* out);
AAS_API double aas_run_final_error(const aas_run* run);
AAS_API void aas_run_free(aas_run* run);

/* Table of median final errors, methods by problems. Text buffers come from
   malloc and are released with aas_string_free. csv_out may be NULL. */
AAS_API aas_status aas_compare(const char* const* dirs, size_t count, char** table_out, char** csv_out);
/* what: "error_curve", "variance_curve" or "scatter". */
AAS_API aas_status aas_export(const char* dir, const char* what, char** path_out);
AAS_API void aas_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
