/* C interface for the adaftr engine. Generated by cbindgen; do not edit. */

#ifndef ADAFTR_H
#define ADAFTR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum AdaftrStatus {
  AdaftrOk = 0,
  AdaftrInvalidArgument = 1,
  AdaftrIoError = 2,
  AdaftrConfigError = 3,
  AdaftrTrainError = 4,
  AdaftrMetricError = 5,
  AdaftrInternalError = 6,
} AdaftrStatus;

/**
 * Loaded dataset handle.
 */
typedef struct AdaftrDataset AdaftrDataset;

/**
 * Loaded model: parameters plus the configuration and schema they imply.
 */
typedef struct AdaftrModel AdaftrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message of the most recent error on this thread, or null.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *adaftr_last_error(void);

/**
 * Engine version as a static string.
 */
const char *adaftr_version(void);

/**
 * Loads a CSV dataset with its schema file. Returns null on failure.
 *
 * # Safety
 * `data_path` and `schema_path` must be valid NUL-terminated strings.
 */
struct AdaftrDataset *adaftr_dataset_load(const char *data_path, const char *schema_path);

/**
 * Number of records, or 0 for a null handle.
 */
uintptr_t adaftr_dataset_len(const struct AdaftrDataset *dataset);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `dataset` must come from `adaftr_dataset_load` and not be freed twice.
 */
void adaftr_dataset_free(struct AdaftrDataset *dataset);

/**
 * Loads a model checkpoint. Returns null on failure.
 *
 * # Safety
 * `checkpoint_path` must be a valid NUL-terminated string.
 */
struct AdaftrModel *adaftr_model_load(const char *checkpoint_path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `adaftr_model_load` and not be freed twice.
 */
void adaftr_model_free(struct AdaftrModel *model);

/**
 * Predicts click and conversion probabilities for one feature-id vector.
 * `feature_ids` must hold one id per schema field, each below the field
 * cardinality.
 *
 * # Safety
 * `feature_ids` must point to `field_count` readable ids; the output
 * pointers must be writable.
 */
enum AdaftrStatus adaftr_model_predict(const struct AdaftrModel *model,
                                       const uintptr_t *feature_ids,
                                       uintptr_t field_count,
                                       double *y_ctr_out,
                                       double *y_cvr_out);

/**
 * Evaluates a model on a dataset and returns the metrics report as a JSON
 * string, or null on failure. Free the string with `adaftr_string_free`.
 *
 * # Safety
 * Both handles must be valid and outlive the call.
 */
char *adaftr_model_evaluate_json(const struct AdaftrModel *model,
                                 const struct AdaftrDataset *dataset,
                                 bool percent);

/**
 * Trains a model on a CSV dataset and writes a checkpoint.
 * `config_kv` may be null or hold newline-separated `key=value` overrides
 * using the same keys as the CLI config file.
 *
 * # Safety
 * All path arguments must be valid NUL-terminated strings.
 */
enum AdaftrStatus adaftr_train(const char *data_path,
                               const char *schema_path,
                               const char *config_kv,
                               const char *checkpoint_out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void adaftr_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ADAFTR_H */
