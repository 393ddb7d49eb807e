#ifndef ETL_FFI_H
#define ETL_FFI_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values other than `Ok` name the failing error kind.
 */
typedef enum EtlStatus {
  ETL_STATUS_OK = 0,
  ETL_STATUS_INVALID_ARGUMENT = 1,
  ETL_STATUS_PANIC = 2,
  ETL_STATUS_CONFIG_PARSE = 10,
  ETL_STATUS_VALIDATION_ERROR = 11,
  ETL_STATUS_PARSE_ERROR = 12,
  ETL_STATUS_UNKNOWN_FEED = 13,
  ETL_STATUS_UNKNOWN_TARGET = 14,
  ETL_STATUS_FUTURE_DATE = 15,
  ETL_STATUS_TABLE_NOT_FOUND = 16,
  ETL_STATUS_STORE_CORRUPTION = 17,
  ETL_STATUS_PERSISTENCE_ERROR = 18,
  ETL_STATUS_INVARIANT_VIOLATION = 19,
  ETL_STATUS_SNAPSHOT_NOT_FOUND = 20,
  ETL_STATUS_MISSING_FK_VALUE = 21,
  ETL_STATUS_HISTORY_ROW_NOT_FOUND = 22,
  ETL_STATUS_STATIC_ROW_NOT_FOUND = 23,
  ETL_STATUS_DUPLICATE_STATIC = 24,
  ETL_STATUS_UNKNOWN_COLUMN = 25,
  ETL_STATUS_FEED_MISSING = 26,
  ETL_STATUS_PHASE_FAILURE = 27,
  ETL_STATUS_LV1_MISSING = 28,
  ETL_STATUS_BATCH_ORDER = 29,
  ETL_STATUS_INJECTED_FAULT = 30,
  ETL_STATUS_TARGET_SET_MISMATCH = 31,
} EtlStatus;

/**
 * Opaque pipeline handle.
 */
typedef struct EtlPipeline EtlPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens a pipeline. On success `*out` receives a handle owned by the caller.
 *
 * # Safety
 * `config_path` and `data_dir` must be valid C strings; `out` must be writable.
 */
enum EtlStatus etl_pipeline_open(const char *config_path,
                                 const char *data_dir,
                                 struct EtlPipeline **out);

/**
 * Runs one batch (`YYYYMMDD`). If `report_json` is not null it receives the
 * batch report, to be freed with `etl_string_free`.
 *
 * # Safety
 * `pipeline` must come from `etl_pipeline_open`; `batch_date` must be a
 * valid C string; `report_json` must be null or writable.
 */
enum EtlStatus etl_pipeline_run(struct EtlPipeline *pipeline,
                                const char *batch_date,
                                uint32_t parallelism,
                                char **report_json);

/**
 * Reruns a batch from its level-1 data.
 *
 * # Safety
 * Same contract as `etl_pipeline_run`.
 */
enum EtlStatus etl_pipeline_rerun(struct EtlPipeline *pipeline,
                                  const char *batch_date,
                                  uint32_t parallelism,
                                  char **report_json);

/**
 * Checks every storage invariant. `*count` receives the number of
 * violations; `violations_json`, if not null, their JSON list.
 *
 * # Safety
 * `pipeline` must come from `etl_pipeline_open`; `count` must be writable;
 * `violations_json` must be null or writable.
 */
enum EtlStatus etl_pipeline_verify(struct EtlPipeline *pipeline,
                                   size_t *count,
                                   char **violations_json);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *etl_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void etl_string_free(char *s);

/**
 * # Safety
 * `pipeline` must be null or a handle from `etl_pipeline_open`, freed once.
 */
void etl_pipeline_free(struct EtlPipeline *pipeline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ETL_FFI_H */
