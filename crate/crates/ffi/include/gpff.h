#ifndef GPFF_H
#define GPFF_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GpffStatus {
  GPFF_STATUS_OK = 0,
  GPFF_STATUS_NULL_POINTER = 1,
  GPFF_STATUS_INVALID_UTF8 = 2,
  GPFF_STATUS_INVALID_ARGUMENT = 3,
  GPFF_STATUS_PARSE = 4,
  GPFF_STATUS_PROVIDER = 5,
  GPFF_STATUS_BUFFER_TOO_SMALL = 6,
  GPFF_STATUS_INTERNAL = 7,
} GpffStatus;

/**
 * Force provider handle.
 */
typedef struct GpffProvider GpffProvider;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Owned by the
 * library.
 */
const char *gpff_last_error(void);

/**
 * Library version, static storage.
 */
const char *gpff_version(void);

/**
 * Mixture oracle over the frames of an XYZ document. `sigma <= 0` infers
 * the noise level from the query; `rigid` superimposes references first.
 *
 * # Safety
 * `xyz` must be a valid C string; `out` must be writable.
 */
enum GpffStatus gpff_oracle_from_xyz(const char *xyz,
                                     double sigma,
                                     bool rigid,
                                     struct GpffProvider **out);

/**
 * HTTP force provider at `endpoint`; `timeout_secs == 0` keeps the default.
 *
 * # Safety
 * `endpoint` must be a valid C string; `out` must be writable.
 */
enum GpffStatus gpff_remote_provider_new(const char *endpoint,
                                         uint64_t timeout_secs,
                                         struct GpffProvider **out);

/**
 * # Safety
 * `provider` must come from this library and not be used afterwards.
 */
void gpff_provider_free(struct GpffProvider *provider);

/**
 * Evaluates forces for `n` atoms. `elements` holds `n` C strings;
 * `forces` receives `3n` values. `sigma_hint` (nullable) receives the
 * provider's noise level or NaN.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum GpffStatus gpff_provider_evaluate(const struct GpffProvider *provider,
                                       const char *const *elements,
                                       const double *positions,
                                       size_t n,
                                       double *forces,
                                       double *sigma_hint);

/**
 * Runs a batch and returns the structures as multi-frame XYZ in `out`.
 * `config_json` is a run configuration (nullable for defaults); its
 * `provider` field is ignored in favour of the handle. Failed
 * trajectories make the call fail.
 *
 * # Safety
 * `provider` must be a live handle; `out` must be writable.
 */
enum GpffStatus gpff_generate_xyz(const struct GpffProvider *provider,
                                  const char *config_json,
                                  char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void gpff_string_free(char *s);

/**
 * Writes the `steps + 1` noise levels (terminal zero last) into `levels`,
 * which holds `capacity` values.
 *
 * # Safety
 * `levels` must be valid for `capacity` writes.
 */
enum GpffStatus gpff_schedule(double rho,
                              double sigma_min,
                              double sigma_max,
                              size_t steps,
                              double *levels,
                              size_t capacity);

/**
 * Normalized principal-moment ratios of `n` positions.
 *
 * # Safety
 * `positions` must hold `3n` values; outputs must be writable.
 */
enum GpffStatus gpff_shape_point(const double *positions, size_t n, double *npr1, double *npr2);

/**
 * Noise level estimated from `n` force vectors.
 *
 * # Safety
 * `forces` must hold `3n` values; `sigma` must be writable.
 */
enum GpffStatus gpff_sigma_estimate(const double *forces, size_t n, double *sigma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPFF_H */
