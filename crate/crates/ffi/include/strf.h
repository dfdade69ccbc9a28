#ifndef STRF_H
#define STRF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define STRF_OK 0

#define STRF_ERR_NULL 1

#define STRF_ERR_DOMAIN 2

#define STRF_ERR_CONFIG 3

#define STRF_ERR_IO 4

#define STRF_ERR_FORMAT 5

#define STRF_ERR_NON_FINITE 6

#define STRF_ERR_BUFFER 7

#define STRF_ERR_PANIC 8

typedef struct StrfEvents StrfEvents;

typedef struct StrfKernelBank StrfKernelBank;

typedef struct StrfLi StrfLi;

typedef struct StrfLif StrfLif;

typedef struct StrfNetwork StrfNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version and file format identifiers, as a static string.
 */
const char *strf_version(void);

/**
 * Copy the last error message of this thread into `buf` (NUL terminated,
 * truncated to fit). Returns the full message length without the NUL, or 0
 * when there is none.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null.
 */
size_t strf_last_error(char *buf, size_t len);

/**
 * Build a bank of `n_orientations x n_scales x n_skews x 3` kernels sampled
 * on a `grid x grid` lattice.
 *
 * # Safety
 * `scales` and `skews` must point to `n_scales` and `n_skews` doubles.
 */
int32_t strf_bank_new(size_t n_orientations,
                      const double *scales,
                      size_t n_scales,
                      const double *skews,
                      size_t n_skews,
                      size_t grid,
                      size_t supersample,
                      StrfKernelBank **out);

/**
 * Number of kernels, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t strf_bank_len(const StrfKernelBank *bank);

/**
 * Copy kernel `index` (row-major, `grid * grid` values) into `out`.
 *
 * # Safety
 * `bank` must be a live handle and `out` must hold `len` doubles.
 */
int32_t strf_bank_kernel(const StrfKernelBank *bank, size_t index, double *out, size_t len);

/**
 * # Safety
 * `bank` must be null or a handle not yet freed.
 */
void strf_bank_free(StrfKernelBank *bank);

/**
 * Leaky integrator with time constant `mu`, starting at rest.
 *
 * # Safety
 * `out` must be a valid pointer slot.
 */
int32_t strf_li_new(double mu, StrfLi **out);

/**
 * Advance by one step of length `dt`; the new state goes to `state`.
 *
 * # Safety
 * `li` must be a live handle and `state` writable.
 */
int32_t strf_li_step(StrfLi *li, double input, double dt, double *state);

/**
 * # Safety
 * `li` must be null or a handle not yet freed.
 */
void strf_li_free(StrfLi *li);

/**
 * Leaky integrate-and-fire unit with threshold `theta` and soft reset.
 *
 * # Safety
 * `out` must be a valid pointer slot.
 */
int32_t strf_lif_new(double mu, double theta, StrfLif **out);

/**
 * Advance one step; writes the membrane after any reset and whether it spiked.
 *
 * # Safety
 * `lif` must be a live handle; `membrane` and `spiked` writable.
 */
int32_t strf_lif_step(StrfLif *lif, double input, double dt, double *membrane, bool *spiked);

/**
 * # Safety
 * `lif` must be null or a handle not yet freed.
 */
void strf_lif_free(StrfLif *lif);

/**
 * Read an EVS1 event file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer slot.
 */
int32_t strf_events_read(const char *path, StrfEvents **out);

/**
 * Sensor height, width and frame count.
 *
 * # Safety
 * `events` must be a live handle; the outputs writable.
 */
int32_t strf_events_dims(const StrfEvents *events, size_t *height, size_t *width, size_t *n_frames);

/**
 * Number of events, or 0 for a null handle.
 *
 * # Safety
 * `events` must be null or a live handle.
 */
size_t strf_events_len(const StrfEvents *events);

/**
 * Event `index` as (frame, x, y, polarity).
 *
 * # Safety
 * `events` must be a live handle; the outputs writable.
 */
int32_t strf_events_get(const StrfEvents *events,
                        size_t index,
                        uint32_t *t,
                        uint16_t *x,
                        uint16_t *y,
                        int8_t *p);

/**
 * # Safety
 * `events` must be null or a handle not yet freed.
 */
void strf_events_free(StrfEvents *events);

/**
 * Load a parameter checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer slot.
 */
int32_t strf_network_load(const char *path, StrfNetwork **out);

/**
 * Fresh network from a JSON configuration (null means all defaults).
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` a valid slot.
 */
int32_t strf_network_init(const char *config_json, StrfNetwork **out);

/**
 * Input height and width, and the number of parameters.
 *
 * # Safety
 * `net` must be a live handle; the outputs writable.
 */
int32_t strf_network_dims(const StrfNetwork *net, size_t *height, size_t *width, size_t *n_params);

/**
 * Run on `n_steps` frames laid out `[n_steps, 2, height, width]` (ON then
 * OFF polarity). Writes `n_steps * 6` doubles to `coords`: per step the
 * (x, y) of the three classes in input pixels.
 *
 * # Safety
 * `frames` must hold `n_steps * 2 * height * width` doubles and `coords`
 * `coords_len` doubles.
 */
int32_t strf_network_forward(const StrfNetwork *net,
                             const double *frames,
                             size_t n_steps,
                             double *coords,
                             size_t coords_len);

/**
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void strf_network_free(StrfNetwork *net);

/**
 * Pooled standard deviation of two groups given as (n, mean, sd).
 *
 * # Safety
 * `out` must be writable.
 */
int32_t strf_pooled_sd(size_t n1,
                       double mean1,
                       double sd1,
                       size_t n2,
                       double mean2,
                       double sd2,
                       double *out);

/**
 * Effect size of the RF group (first) against the uniform group (second);
 * positive when the RF mean is lower.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t strf_cohens_d(size_t n_rf,
                      double mean_rf,
                      double sd_rf,
                      size_t n_uniform,
                      double mean_uniform,
                      double sd_uniform,
                      double *out);

/**
 * Monte-Carlo mean distance of random guesses on a `side` square.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t strf_random_baseline(double side, bool fixed_center, size_t n, uint64_t seed, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRF_H */
