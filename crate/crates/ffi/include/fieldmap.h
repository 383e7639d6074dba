#ifndef FIELDMAP_H
#define FIELDMAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_POINTER = 1,
  FM_STATUS_INVALID_UTF8 = 2,
  FM_STATUS_INVALID_CONFIG = 3,
  FM_STATUS_INVALID_ARGUMENT = 4,
  FM_STATUS_NUMERICAL = 5,
  FM_STATUS_MALFORMED_PACKET = 6,
  FM_STATUS_IO = 7,
  FM_STATUS_BUFFER_TOO_SMALL = 8,
  FM_STATUS_OUT_OF_RANGE = 9,
  FM_STATUS_PANIC = 10,
} FmStatus;

/**
 * Scenario configuration handle.
 */
typedef struct FmConfig FmConfig;

/**
 * Fitted exact GP posterior handle.
 */
typedef struct FmGp FmGp;

/**
 * Finished run handle.
 */
typedef struct FmRun FmRun;

/**
 * Network metrics of one step. Absent values are NaN.
 */
typedef struct FmNetworkMetrics {
  uint32_t step;
  double local_rmse;
  double local_nlpd;
  double overlap_rmse;
  double overlap_nlpd;
} FmNetworkMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *fm_last_error(void);

/**
 * Parses and validates a TOML scenario.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a writable pointer.
 */
enum FmStatus fm_config_from_toml(const char *toml, struct FmConfig **out);

/**
 * Loads a bundled preset by name.
 *
 * # Safety
 * `name` must be a nul-terminated string and `out` a writable pointer.
 */
enum FmStatus fm_config_preset(const char *name, struct FmConfig **out);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum FmStatus fm_config_set_seed(struct FmConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum FmStatus fm_config_set_steps(struct FmConfig *cfg, uint32_t steps);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void fm_config_free(struct FmConfig *cfg);

/**
 * Runs the scenario, plus the self-only baseline when the config asks for it.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a writable pointer.
 */
enum FmStatus fm_run_scenario(const struct FmConfig *cfg, struct FmRun **out);

/**
 * Number of recorded steps.
 *
 * # Safety
 * `run` must be a live run handle and `out` a writable pointer.
 */
enum FmStatus fm_run_step_count(const struct FmRun *run, size_t *out);

/**
 * Network metrics at history index `index`, from the shared run or, when
 * `baseline` is nonzero, from the self-only run.
 *
 * # Safety
 * `run` must be a live run handle and `out` a writable pointer.
 */
enum FmStatus fm_run_metrics(const struct FmRun *run,
                             size_t index,
                             int32_t baseline,
                             struct FmNetworkMetrics *out);

/**
 * Writes CSV outputs, the packet log and the manifest into `dir`.
 *
 * # Safety
 * `run` must be a live run handle and `dir` a nul-terminated string.
 */
enum FmStatus fm_run_write_outputs(const struct FmRun *run, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void fm_run_free(struct FmRun *run);

/**
 * Fits an exact GP to `n` points. `locations` holds `n * dim` coordinates,
 * one point per row.
 *
 * # Safety
 * `locations`, `values` and `noise_variances` must point to arrays of the
 * stated lengths and `out` must be writable.
 */
enum FmStatus fm_gp_fit(double signal_scale,
                        double length_scale,
                        size_t dim,
                        const double *locations,
                        const double *values,
                        const double *noise_variances,
                        size_t n,
                        struct FmGp **out);

/**
 * Posterior mean and variance at one point of dimension `dim`.
 *
 * # Safety
 * `gp` must be a live GP handle, `x` must hold `dim` values, and `mean`
 * and `variance` must be writable.
 */
enum FmStatus fm_gp_predict(const struct FmGp *gp,
                            const double *x,
                            size_t dim,
                            double *mean,
                            double *variance);

/**
 * # Safety
 * `gp` must be null or a handle not yet freed.
 */
void fm_gp_free(struct FmGp *gp);

/**
 * Encoded size in bytes of a packet with a `dim`-dimensional location.
 */
size_t fm_packet_encoded_len(size_t dim);

/**
 * Encodes one packet into `buf`. `written` receives the encoded length,
 * also when the buffer is too small.
 *
 * # Safety
 * `location` must hold `dim` values, `buf` must hold `cap` bytes and
 * `written` must be writable.
 */
enum FmStatus fm_packet_encode(uint32_t sender_id,
                               uint32_t step,
                               const double *location,
                               size_t dim,
                               double mean,
                               double variance,
                               uint8_t *buf,
                               size_t cap,
                               size_t *written);

/**
 * Decodes one packet record. `dim` receives the location dimension, also
 * when `location_cap` is too small.
 *
 * # Safety
 * `buf` must hold `len` bytes, `location` must hold `location_cap` values,
 * and the remaining output pointers must be writable.
 */
enum FmStatus fm_packet_decode(const uint8_t *buf,
                               size_t len,
                               uint32_t *sender_id,
                               uint32_t *step,
                               double *location,
                               size_t location_cap,
                               size_t *dim,
                               double *mean,
                               double *variance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIELDMAP_H */
