#ifndef ECHOLOC_H
#define ECHOLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcholocStatus {
  ECHOLOC_STATUS_OK = 0,
  ECHOLOC_STATUS_NULL_POINTER = 1,
  ECHOLOC_STATUS_INVALID_INPUT = 2,
  ECHOLOC_STATUS_NUMERICAL = 3,
  ECHOLOC_STATUS_IO = 4,
  ECHOLOC_STATUS_PANIC = 5,
} EcholocStatus;

/**
 * Sampled multichannel observation.
 */
typedef struct EcholocObservation EcholocObservation;

/**
 * Output of [`echoloc_solve`].
 */
typedef struct EcholocResult EcholocResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *echoloc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *echoloc_version(void);

/**
 * Number of image sources of reflection order at most `max_order`.
 *
 * # Safety
 * `dims` and `src` point to 3 doubles, `absorption` to 6, `out` to a writable
 * `size_t`.
 */
enum EcholocStatus echoloc_image_source_count(const double *dims,
                                              const double *absorption,
                                              const double *src,
                                              uint32_t max_order,
                                              size_t *out);

/**
 * Synthesizes the RIR of a cuboid room with the image-source method.
 *
 * # Safety
 * `dims` and `src` point to 3 doubles, `absorption` to 6, `mics` to
 * `3 * n_mics` doubles (x, y, z per microphone). `out` must be writable; on
 * success it receives a handle to release with
 * [`echoloc_observation_free`].
 */
enum EcholocStatus echoloc_simulate(const double *dims,
                                    const double *absorption,
                                    const double *src,
                                    const double *mics,
                                    size_t n_mics,
                                    double fs,
                                    double t_max,
                                    uint32_t max_order,
                                    double c,
                                    struct EcholocObservation **out);

/**
 * Wraps caller-provided samples (`n_mics × n_samples`, row-major).
 *
 * # Safety
 * `mics` points to `3 * n_mics` doubles, `data` to `n_mics * n_samples`
 * doubles, `out` must be writable.
 */
enum EcholocStatus echoloc_observation_new(const double *mics,
                                           size_t n_mics,
                                           double fs,
                                           size_t n_samples,
                                           double c,
                                           const double *data,
                                           struct EcholocObservation **out);

/**
 * Writes the number of microphones and samples.
 *
 * # Safety
 * `obs` is a live handle; `n_mics` and `n_samples` are writable.
 */
enum EcholocStatus echoloc_observation_shape(const struct EcholocObservation *obs,
                                             size_t *n_mics,
                                             size_t *n_samples);

/**
 * Copies the samples into `buf`, which must hold `n_mics * n_samples`
 * doubles; `len` is its capacity.
 *
 * # Safety
 * `obs` is a live handle and `buf` points to `len` writable doubles.
 */
enum EcholocStatus echoloc_observation_data(const struct EcholocObservation *obs,
                                            double *buf,
                                            size_t len);

/**
 * New observation with Gaussian noise at the given peak signal-to-noise
 * ratio in dB.
 *
 * # Safety
 * `obs` is a live handle, `out` is writable.
 */
enum EcholocStatus echoloc_observation_add_noise(const struct EcholocObservation *obs,
                                                 double psnr_db,
                                                 uint64_t seed,
                                                 struct EcholocObservation **out);

/**
 * Releases an observation. Null is ignored.
 *
 * # Safety
 * `obs` is null or a handle not yet released.
 */
void echoloc_observation_free(struct EcholocObservation *obs);

/**
 * Recovers image sources. `config_json` holds a solver configuration
 * object (missing fields take their defaults) or is null for the defaults.
 *
 * # Safety
 * `obs` is a live handle, `config_json` is null or NUL-terminated UTF-8,
 * `out` is writable.
 */
enum EcholocStatus echoloc_solve(const struct EcholocObservation *obs,
                                 const char *config_json,
                                 struct EcholocResult **out);

/**
 * Number of recovered spikes, 0 for a null handle.
 *
 * # Safety
 * `res` is null or a live handle.
 */
size_t echoloc_result_spike_count(const struct EcholocResult *res);

/**
 * Copies amplitudes and positions (x, y, z per spike) of the recovered
 * spikes. `capacity` is the number of spikes the buffers can hold.
 *
 * # Safety
 * `res` is a live handle, `amplitudes` holds `capacity` doubles and
 * `positions` `3 * capacity` doubles.
 */
enum EcholocStatus echoloc_result_spikes(const struct EcholocResult *res,
                                         double *amplitudes,
                                         double *positions,
                                         size_t capacity);

/**
 * Stop reason: 0 certificate below `λ`, 1 amplitude below threshold,
 * 2 iteration limit, -1 for a null handle.
 *
 * # Safety
 * `res` is null or a live handle.
 */
int32_t echoloc_result_stop_reason(const struct EcholocResult *res);

/**
 * Final value of the regularized objective, NaN for a null handle.
 *
 * # Safety
 * `res` is null or a live handle.
 */
double echoloc_result_objective(const struct EcholocResult *res);

/**
 * The full result as JSON. Release the string with [`echoloc_string_free`].
 *
 * # Safety
 * `res` is a live handle, `out` is writable.
 */
enum EcholocStatus echoloc_result_to_json(const struct EcholocResult *res, char **out);

/**
 * Releases a result. Null is ignored.
 *
 * # Safety
 * `res` is null or a handle not yet released.
 */
void echoloc_result_free(struct EcholocResult *res);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or a string from this library not yet released.
 */
void echoloc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHOLOC_H */
