#ifndef FOGAS_H
#define FOGAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum {
  FOGAS_STATUS_OK = 0,
  FOGAS_STATUS_NULL_POINTER = 1,
  FOGAS_STATUS_INVALID_ARGUMENT = 2,
  FOGAS_STATUS_SHAPE = 3,
  FOGAS_STATUS_NUMERICAL = 4,
  FOGAS_STATUS_IO = 5,
  FOGAS_STATUS_PARSE = 6,
  FOGAS_STATUS_MISSING_TRAJECTORY = 7,
  FOGAS_STATUS_PANIC = 8,
} FogasStatus;

/**
 * Opaque offline dataset.
 */
typedef struct FogasDataset FogasDataset;

/**
 * Opaque linear MDP.
 */
typedef struct FogasMdp FogasMdp;

/**
 * Opaque solver run.
 */
typedef struct FogasRun FogasRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes, excluding
 * the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fogas_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fogas_version(void);

/**
 * Generates a random linear MDP.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle to free
 * with [`fogas_mdp_free`].
 */
FogasStatus fogas_mdp_generate(size_t states,
                               size_t actions,
                               size_t dim,
                               double gamma,
                               uint64_t seed,
                               FogasMdp **out);

/**
 * Loads an MDP document.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
FogasStatus fogas_mdp_load(const char *path, FogasMdp **out);

/**
 * Writes an MDP document.
 *
 * # Safety
 * `mdp` must be a live handle and `path` a NUL-terminated string.
 */
FogasStatus fogas_mdp_save(const FogasMdp *mdp, const char *path);

/**
 * # Safety
 * `mdp` must be null or a handle not yet freed.
 */
void fogas_mdp_free(FogasMdp *mdp);

/**
 * Number of states, actions and feature dimension.
 *
 * # Safety
 * All pointers must be valid.
 */
FogasStatus fogas_mdp_shape(const FogasMdp *mdp, size_t *states, size_t *actions, size_t *dim);

/**
 * Normalised return of the optimal policy.
 *
 * # Safety
 * `mdp` must be a live handle and `out` valid.
 */
FogasStatus fogas_mdp_optimal_return(const FogasMdp *mdp, double *out);

/**
 * Samples `n` transitions. `behavior` is `"uniform"` or `"eps:<v>"`;
 * `mode` is `"occupancy"` or `"uniform"`.
 *
 * # Safety
 * `mdp` must be a live handle, the strings NUL-terminated and `out` valid.
 */
FogasStatus fogas_dataset_collect(const FogasMdp *mdp,
                                  const char *behavior,
                                  const char *mode,
                                  size_t n,
                                  uint64_t seed,
                                  FogasDataset **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
FogasStatus fogas_dataset_load(const char *path, FogasDataset **out);

/**
 * # Safety
 * `data` must be a live handle and `path` NUL-terminated.
 */
FogasStatus fogas_dataset_save(const FogasDataset *data, const char *path);

/**
 * Number of transitions, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t fogas_dataset_len(const FogasDataset *data);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void fogas_dataset_free(FogasDataset *data);

/**
 * Runs the solver with auto-tuned step sizes. `iterations = 0` selects the
 * recommended `T` capped at 20000.
 *
 * # Safety
 * Handles must be live and `out` valid; free the result with [`fogas_run_free`].
 */
FogasStatus fogas_solve_auto(const FogasMdp *mdp,
                             const FogasDataset *data,
                             size_t iterations,
                             double delta,
                             uint64_t seed,
                             bool record_trajectory,
                             FogasRun **out);

/**
 * Runs the solver with manual step sizes. `d_theta <= 0` selects the
 * default radius.
 *
 * # Safety
 * Handles must be live and `out` valid; free the result with [`fogas_run_free`].
 */
FogasStatus fogas_solve_manual(const FogasMdp *mdp,
                               const FogasDataset *data,
                               size_t iterations,
                               double alpha,
                               double rho,
                               double eta,
                               double beta,
                               double d_theta,
                               uint64_t seed,
                               bool record_trajectory,
                               FogasRun **out);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void fogas_run_free(FogasRun *run);

/**
 * The output index `J` (1-based), or 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t fogas_run_chosen_index(const FogasRun *run);

/**
 * Copies the output policy parameter `alpha * theta_bar_{J-1}` into `buf`,
 * which must hold exactly `len = dim` values.
 *
 * # Safety
 * `run` must be a live handle and `buf` point to `len` writable doubles.
 */
FogasStatus fogas_run_policy_param(const FogasRun *run, double *buf, size_t len);

/**
 * Action probabilities of the output policy in `state`; `buf` must hold
 * exactly `len = actions` values.
 *
 * # Safety
 * Handles must be live and `buf` point to `len` writable doubles.
 */
FogasStatus fogas_run_action_probs(const FogasRun *run,
                                   const FogasMdp *mdp,
                                   size_t state,
                                   double *buf,
                                   size_t len);

/**
 * `rho(pi*) - rho(pi_J)` under the true model.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
FogasStatus fogas_run_suboptimality(const FogasRun *run, const FogasMdp *mdp, double *out);

/**
 * Writes the run document.
 *
 * # Safety
 * `run` must be a live handle and `path` NUL-terminated.
 */
FogasStatus fogas_run_save(const FogasRun *run, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOGAS_H */
