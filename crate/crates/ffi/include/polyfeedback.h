#ifndef POLYFEEDBACK_H
#define POLYFEEDBACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_INVALID_ARGUMENT = 3,
  PF_STATUS_CONFIG = 4,
  PF_STATUS_INFEASIBLE_INITIAL_GUESS = 5,
  PF_STATUS_FORMAT = 6,
  PF_STATUS_IO = 7,
  PF_STATUS_NUMERICAL = 8,
  PF_STATUS_PANIC = 9,
} PfStatus;

// Trained polynomial value function.
typedef struct PfModel PfModel;

// Closed-loop system of a registered benchmark.
typedef struct PfSystem PfSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *pf_last_error(void);

// Library version, a static string.
const char *pf_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a string produced by this library and not yet freed.
void pf_string_free(char *s);

// Creates the system of a registered benchmark. Pass NaN for `beta` to keep
// the benchmark's default control weight.
//
// # Safety
// `name` must be a nul-terminated string and `out` a valid pointer.
enum PfStatus pf_system_new(const char *name, double beta, struct PfSystem **out);

// # Safety
// `system` must be NULL or a handle from [`pf_system_new`] not yet freed.
void pf_system_free(struct PfSystem *system);

// State dimension, 0 for a NULL handle.
//
// # Safety
// `system` must be NULL or a live handle.
size_t pf_system_dim(const struct PfSystem *system);

// Control dimension, 0 for a NULL handle.
//
// # Safety
// `system` must be NULL or a live handle.
size_t pf_system_control_dim(const struct PfSystem *system);

// Loads a model from the JSON of a model artifact (`{basis, scale, theta}`).
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum PfStatus pf_model_from_json(const char *json, struct PfModel **out);

// # Safety
// `model` must be NULL or a handle from [`pf_model_from_json`] not yet freed.
void pf_model_free(struct PfModel *model);

// State dimension, 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
size_t pf_model_dim(const struct PfModel *model);

// Number of basis functions, 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
size_t pf_model_len(const struct PfModel *model);

// Value and gradient of `v` at `y`. `gradient` may be NULL.
//
// # Safety
// `y` and a non-NULL `gradient` must each hold `dim` doubles; `value` must
// be a valid pointer.
enum PfStatus pf_model_eval(const struct PfModel *model,
                            const double *y,
                            size_t dim,
                            double *value,
                            double *gradient);

// Feedback control `u = −(1/β) Bᵀ ∇v(y)`.
//
// # Safety
// `y` must hold `dim` doubles and `u` must hold `control_dim` doubles.
enum PfStatus pf_feedback(const struct PfSystem *system,
                          const struct PfModel *model,
                          const double *y,
                          size_t dim,
                          double *u,
                          size_t control_dim);

// Solves `AᵀP + PA − (1/β)PBBᵀP + Q = 0`. Matrices are row-major: `a` and
// `q` are `d×d`, `b` is `d×m`. Writes `P` (`d×d`) and the gain
// `K = (1/β)BᵀP` (`m×d`); `residual` may be NULL.
//
// # Safety
// All non-NULL pointers must reference buffers of the stated sizes.
enum PfStatus pf_solve_are(const double *a,
                           const double *b,
                           const double *q,
                           size_t d,
                           size_t m,
                           double beta,
                           double *p_out,
                           double *k_out,
                           double *residual);

// Runs an experiment from a JSON config and returns the run artifacts as a
// JSON array in `out` (release with [`pf_string_free`]).
//
// # Safety
// `config_json` must be a nul-terminated string and `out` a valid pointer.
enum PfStatus pf_run_experiment(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYFEEDBACK_H */
