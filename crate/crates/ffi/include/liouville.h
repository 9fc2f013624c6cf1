#ifndef LIOUVILLE_H
#define LIOUVILLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LvStatus {
  LV_STATUS_OK = 0,
  LV_STATUS_INVALID_ARGUMENT = 1,
  LV_STATUS_NULL_POINTER = 2,
  LV_STATUS_OUTSIDE_DOMAIN = 3,
  LV_STATUS_BOUNDARY_PROXIMITY = 4,
  LV_STATUS_INSUFFICIENT_MODES = 5,
  LV_STATUS_OUT_OF_RANGE = 6,
  LV_STATUS_NUMERICAL = 7,
  LV_STATUS_UNSUPPORTED = 8,
  LV_STATUS_PANIC = 9,
} LvStatus;

/**
 * Values accepted by the `domain` arguments.
 */
typedef enum LvDomain {
  LV_DOMAIN_UNIT_SQUARE = 0,
  LV_DOMAIN_UNIT_DISC = 1,
} LvDomain;

/**
 * Values accepted by the `variance_mode` argument.
 */
typedef enum LvVarianceMode {
  LV_VARIANCE_MODE_ANALYTIC_MODE_SUM = 0,
  LV_VARIANCE_MODE_CONFORMAL_RADIUS_FORMULA = 1,
} LvVarianceMode;

typedef struct LvClock LvClock;

typedef struct LvGff LvGff;

typedef struct LvPath LvPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lv_last_error(void);

/**
 * Library version, NUL-terminated and static.
 */
const char *lv_version(void);

/**
 * Samples a spectral field with `n_modes` modes from stream `(seed, replicate)`.
 * Disc fields live on the square `[-1, 1]²`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LvStatus lv_gff_sample(uint32_t domain,
                            size_t n_modes,
                            uint64_t seed,
                            uint64_t replicate,
                            struct LvGff **out);

/**
 * # Safety
 * `gff` must come from [`lv_gff_sample`] and not be freed twice. Null is ignored.
 */
void lv_gff_free(struct LvGff *gff);

/**
 * Circle average `h_ε(x, y)`.
 *
 * # Safety
 * `gff` and `out` must be valid pointers.
 */
enum LvStatus lv_gff_circle_average(const struct LvGff *gff,
                                    double x,
                                    double y,
                                    double epsilon,
                                    double *out);

/**
 * Analytic variance of the truncated circle average on the unit square.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LvStatus lv_circle_average_variance(double x,
                                         double y,
                                         double epsilon,
                                         size_t n_modes,
                                         double *out);

/**
 * Brownian path from `(x0, y0)` with step `dt`, stopped within `margin`
 * of the boundary or at `max_time`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LvStatus lv_path_sample(uint32_t domain,
                             double margin,
                             double x0,
                             double y0,
                             double dt,
                             double max_time,
                             uint64_t seed,
                             uint64_t replicate,
                             struct LvPath **out);

/**
 * # Safety
 * `path` must come from [`lv_path_sample`] and not be freed twice. Null is ignored.
 */
void lv_path_free(struct LvPath *path);

/**
 * Number of stored positions (stopping index plus one); 0 for null.
 *
 * # Safety
 * `path` must be null or valid.
 */
size_t lv_path_len(const struct LvPath *path);

/**
 * Copies up to `capacity` positions as interleaved `x, y` pairs into `xy`
 * (which must hold `2 * capacity` doubles) and writes the count to `written`.
 *
 * # Safety
 * All pointers must be valid for the stated sizes.
 */
enum LvStatus lv_path_positions(const struct LvPath *path,
                                double *xy,
                                size_t capacity,
                                size_t *written);

/**
 * Stopping time `min(T_r, max_time)` on the grid.
 *
 * # Safety
 * `path` and `out` must be valid pointers.
 */
enum LvStatus lv_path_duration(const struct LvPath *path, double *out);

/**
 * Liouville clock `μ_ε` along `path` with `ε = 2^-k`.
 *
 * # Safety
 * `gff`, `path` and `out` must be valid pointers.
 */
enum LvStatus lv_clock_compute(const struct LvGff *gff,
                               const struct LvPath *path,
                               double gamma,
                               uint32_t k,
                               uint32_t variance_mode,
                               struct LvClock **out);

/**
 * # Safety
 * `clock` must come from [`lv_clock_compute`] and not be freed twice. Null is ignored.
 */
void lv_clock_free(struct LvClock *clock);

/**
 * `μ_ε` at the stopping time.
 *
 * # Safety
 * `clock` and `out` must be valid pointers.
 */
enum LvStatus lv_clock_total(const struct LvClock *clock, double *out);

/**
 * `μ_ε(t)`.
 *
 * # Safety
 * `clock` and `out` must be valid pointers.
 */
enum LvStatus lv_clock_value_at(const struct LvClock *clock, double t, double *out);

/**
 * `μ_ε⁻¹(tau)` for `tau` in `[0, total]`.
 *
 * # Safety
 * `clock` and `out` must be valid pointers.
 */
enum LvStatus lv_clock_inverse(const struct LvClock *clock, double tau, double *out);

/**
 * KPZ-transformed dimension of a Euclidean dimension `d0`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LvStatus lv_kpz_dimension(double d0, double gamma, double *out);

double lv_thick_dim_formula(double alpha, double gamma);

double lv_zeta(double q, double gamma);

/**
 * `Q = γ/2 + 2/γ`.
 */
double lv_q_constant(double gamma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIOUVILLE_H */
