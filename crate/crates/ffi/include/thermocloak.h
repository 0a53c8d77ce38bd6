#ifndef THERMOCLOAK_H
#define THERMOCLOAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_INPUT = 2,
  TC_STATUS_CONFIG = 3,
  TC_STATUS_SOLVER = 4,
  TC_STATUS_IO = 5,
  TC_STATUS_PANIC = 6,
} TcStatus;

/**
 * A structured periodic unit-cell mesh with its factorization pattern.
 */
typedef struct TcCell TcCell;

/**
 * An optimization run.
 */
typedef struct TcRun TcRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *tc_last_error(void);

/**
 * Smoothed characteristic function of a level-set value.
 */
double tc_characteristic(double phi, double d);

/**
 * Principal values and angle (degrees) of a symmetric 2×2 tensor.
 *
 * # Safety
 * Output pointers must be valid for writes.
 */
enum TcStatus tc_diagonalize(double k11,
                             double k12,
                             double k22,
                             double *kbar1,
                             double *kbar2,
                             double *theta_deg);

/**
 * Builds a cell with `resolution` elements per side (even, at least 16).
 *
 * # Safety
 * `cell` must be valid for writes.
 */
enum TcStatus tc_cell_new(size_t resolution, struct TcCell **cell);

/**
 * # Safety
 * `cell` must come from [`tc_cell_new`] and not be used afterwards.
 */
void tc_cell_free(struct TcCell *cell);

/**
 * # Safety
 * `cell` must be a live handle or NULL.
 */
size_t tc_cell_num_nodes(const struct TcCell *cell);

/**
 * # Safety
 * `cell` must be a live handle or NULL.
 */
size_t tc_cell_num_elements(const struct TcCell *cell);

/**
 * Effective tensor `(K11, K12, K22)` for element-wise phase fractions `chi`
 * (1 selects `k_a`, 0 selects `k_b`).
 *
 * # Safety
 * `chi` must hold `n` values; `k_out` must have room for 3.
 */
enum TcStatus tc_cell_homogenize(const struct TcCell *cell,
                                 const double *chi,
                                 size_t n,
                                 double k_a,
                                 double k_b,
                                 double *k_out);

/**
 * Effective tensor for nodal level-set values `phi` at transition width `d`.
 *
 * # Safety
 * `phi` must hold `n` values; `k_out` must have room for 3.
 */
enum TcStatus tc_cell_homogenize_phi(const struct TcCell *cell,
                                     const double *phi,
                                     size_t n,
                                     double d,
                                     double k_a,
                                     double k_b,
                                     double *k_out);

/**
 * Starts a run from TOML config text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `run` must be valid for writes.
 */
enum TcStatus tc_run_from_config(const char *toml, struct TcRun **run);

/**
 * Starts a run from a bundled scenario such as `"scenario_w1"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `run` must be valid for writes.
 */
enum TcStatus tc_run_bundled(const char *name, struct TcRun **run);

/**
 * Continues a run from a checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `run` must be valid for writes.
 */
enum TcStatus tc_run_resume(const char *dir, struct TcRun **run);

/**
 * # Safety
 * `run` must come from a `tc_run_*` constructor and not be used afterwards.
 */
void tc_run_free(struct TcRun *run);

/**
 * Caps the run length; useful for short runs from bundled scenarios.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum TcStatus tc_run_set_max_iter(struct TcRun *run, size_t max_iter);

/**
 * One iteration. `finished` receives 1 once the run is complete.
 *
 * # Safety
 * `run` must be a live handle; `finished` may be NULL.
 */
enum TcStatus tc_run_step(struct TcRun *run, int32_t *finished);

/**
 * Runs to the end, checkpointing into `dir` when it is not NULL.
 *
 * # Safety
 * `run` must be a live handle; `dir` is NULL or a NUL-terminated path.
 */
enum TcStatus tc_run_to_end(struct TcRun *run, const char *dir);

/**
 * Writes a checkpoint into `dir`.
 *
 * # Safety
 * `run` must be a live handle; `dir` must be a NUL-terminated path.
 */
enum TcStatus tc_run_checkpoint(const struct TcRun *run, const char *dir);

/**
 * Latest objectives and their initial values. Before the first step all four are NaN.
 *
 * # Safety
 * `run` must be a live handle; `values` must have room for 4 doubles
 * `(J1, J2, J1_init, J2_init)`; `iteration` may be NULL.
 */
enum TcStatus tc_run_objectives(const struct TcRun *run, double *values, size_t *iteration);

/**
 * Current effective tensor `(K11, K12, K22)` of sector `sector` (zero-based).
 *
 * # Safety
 * `run` must be a live handle; `k_out` must have room for 3.
 */
enum TcStatus tc_run_tensor(const struct TcRun *run, size_t sector, double *k_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMOCLOAK_H */
