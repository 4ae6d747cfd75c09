#ifndef MAGLINK_H
#define MAGLINK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_POINTER = 1,
  ML_STATUS_INVALID_ARGUMENT = 2,
  ML_STATUS_INTEGRATION_BLOWUP = 3,
  ML_STATUS_ESTIMATOR_FAILURE = 4,
  ML_STATUS_CONFIG = 5,
  ML_STATUS_IO = 6,
  ML_STATUS_PANIC = 7,
} MlStatus;

/**
 * Extended Kalman filter bound to a copy of a plant model.
 */
typedef struct MlEkf MlEkf;

/**
 * Simulated magnet pair with its current state.
 */
typedef struct MlPlant MlPlant;

/**
 * Plant state: positions in m, velocities in m/s, time in s.
 */
typedef struct {
  double x1;
  double v1;
  double x2;
  double v2;
  double t;
} MlState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *ml_last_error(void);

/**
 * Creates a plant. A `coupling_kd` ≤ 0 selects the constant calibrated so
 * the pair detaches at 1.45 kg. The pair starts at rest at `x0` (m).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
MlStatus ml_plant_new(double coupling_kd, double x0, MlPlant **out);

/**
 * # Safety
 * `plant` must be null or a handle from [`ml_plant_new`] not yet freed.
 */
void ml_plant_free(MlPlant *plant);

/**
 * # Safety
 * `plant` must be a live handle and `out` writable.
 */
MlStatus ml_plant_get_state(const MlPlant *plant, MlState *out);

/**
 * # Safety
 * `plant` must be a live handle and `state` readable.
 */
MlStatus ml_plant_set_state(MlPlant *plant, const MlState *state);

/**
 * Advances the plant by `dt` seconds under motor force `u` (N).
 *
 * # Safety
 * `plant` must be a live handle.
 */
MlStatus ml_plant_step(MlPlant *plant, double u, double dt);

/**
 * Magnetic force on the (bottom, top) magnet at the current state, N.
 *
 * # Safety
 * `plant` must be a live handle; `bottom` and `top` writable.
 */
MlStatus ml_plant_magnetic_forces(const MlPlant *plant, double *bottom, double *top);

/**
 * Creates a filter for `plant`'s model, initialized at its current state.
 * `r_len` selects the mode: 1 (encoder only) or 2 (encoder and laser);
 * `r` holds the measurement variances in m².
 *
 * # Safety
 * `plant` must be a live handle, `r` must point to `r_len` doubles and
 * `out` must be writable.
 */
MlStatus ml_ekf_new(const MlPlant *plant,
                    double q_position,
                    double q_velocity,
                    const double *r,
                    uintptr_t r_len,
                    double p0_position,
                    double p0_velocity,
                    MlEkf **out);

/**
 * # Safety
 * `ekf` must be null or a handle from [`ml_ekf_new`] not yet freed.
 */
void ml_ekf_free(MlEkf *ekf);

/**
 * # Safety
 * `ekf` must be a live handle.
 */
MlStatus ml_ekf_predict(MlEkf *ekf, double u, double dt);

/**
 * Fuses `z_len` position readings (encoder first, then laser), m.
 *
 * # Safety
 * `ekf` must be a live handle and `z` must point to `z_len` doubles.
 */
MlStatus ml_ekf_update(MlEkf *ekf, const double *z, uintptr_t z_len);

/**
 * # Safety
 * `ekf` must be a live handle and `out` writable.
 */
MlStatus ml_ekf_estimate(const MlEkf *ekf, MlState *out);

/**
 * Copies the 4×4 covariance into `out` in row-major order.
 *
 * # Safety
 * `ekf` must be a live handle and `out` must have room for 16 doubles.
 */
MlStatus ml_ekf_covariance(const MlEkf *ekf, double *out);

/**
 * Root-mean-square difference of two series of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` must be writable.
 */
MlStatus ml_rmse(const double *a, const double *b, uintptr_t len, double *out);

/**
 * Runs a scenario (`static`, `dynamic`, `human`, `recovery`, `tune` or
 * `calibrate`) and writes its files under `out_dir`. `config_path` may be
 * null for the defaults.
 *
 * # Safety
 * Non-null string arguments must be NUL-terminated.
 */
MlStatus ml_run_scenario(const char *scenario, const char *config_path, const char *out_dir);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ml_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAGLINK_H */
