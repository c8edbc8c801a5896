#ifndef SGOPT_H
#define SGOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SgoptOrdering {
  SGOPT_ORDERING_STRUCTURED = 0,
  SGOPT_ORDERING_MIN_DEGREE = 1,
} SgoptOrdering;

typedef enum SgoptStatus {
  SGOPT_STATUS_OK = 0,
  SGOPT_STATUS_NULL_POINTER = 1,
  SGOPT_STATUS_INVALID_ARGUMENT = 2,
  SGOPT_STATUS_INFEASIBLE = 3,
  SGOPT_STATUS_RANK_DEFICIENT = 4,
  SGOPT_STATUS_SINGULAR = 5,
  SGOPT_STATUS_NO_PROGRESS = 6,
  SGOPT_STATUS_CONFIG = 7,
  SGOPT_STATUS_INTERNAL = 8,
} SgoptStatus;

/**
 * A linear cart-pole chain problem: configuration plus physical parameters.
 */
typedef struct SgoptProblem SgoptProblem;

/**
 * An optimal trajectory and its cost.
 */
typedef struct SgoptSolution SgoptSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a problem with default physical parameters, evenly spaced
 * actuators and a zero initial state.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum SgoptStatus sgopt_problem_new(size_t n, size_t m, size_t horizon, struct SgoptProblem **out);

/**
 * Parses a JSON problem description. Missing keys take the validation
 * scenario's values (N = 3, M = 2, T = 150, 1.15 degree tilt).
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be valid for writing.
 */
enum SgoptStatus sgopt_problem_from_json(const char *json, struct SgoptProblem **out);

/**
 * Replaces the initial state; `len` must be `4 n` in `[x, xdot, theta, thetadot]`
 * order per body.
 *
 * # Safety
 * `problem` must come from this library; `x0` must point to `len` doubles.
 */
enum SgoptStatus sgopt_problem_set_initial_state(struct SgoptProblem *problem,
                                                 const double *x0,
                                                 size_t len);

/**
 * # Safety
 * `problem` must be null or come from this library, and not be used afterwards.
 */
void sgopt_problem_free(struct SgoptProblem *problem);

/**
 * Solves the linear problem by factor-graph elimination.
 *
 * # Safety
 * `problem` must come from this library; `out` must be valid for writing.
 */
enum SgoptStatus sgopt_solve(const struct SgoptProblem *problem,
                             enum SgoptOrdering ordering,
                             struct SgoptSolution **out);

/**
 * Solves the same linear problem with the dense Riccati recursion.
 *
 * # Safety
 * `problem` must come from this library; `out` must be valid for writing.
 */
enum SgoptStatus sgopt_riccati_solve(const struct SgoptProblem *problem,
                                     struct SgoptSolution **out);

/**
 * Optimal cost, or NaN for a null handle.
 *
 * # Safety
 * `solution` must be null or come from this library.
 */
double sgopt_solution_cost(const struct SgoptSolution *solution);

/**
 * Horizon, state length and control length of a solution.
 *
 * # Safety
 * `solution` must come from this library; each output pointer may be null.
 */
enum SgoptStatus sgopt_solution_dims(const struct SgoptSolution *solution,
                                     size_t *horizon,
                                     size_t *state_len,
                                     size_t *control_len);

/**
 * Copies the state at step `t` (`0 <= t < horizon`) into `out`.
 *
 * # Safety
 * `solution` must come from this library; `out` must hold `len` doubles.
 */
enum SgoptStatus sgopt_solution_state(const struct SgoptSolution *solution,
                                      size_t t,
                                      double *out,
                                      size_t len);

/**
 * Copies the control at step `t` (`0 <= t < horizon - 1`) into `out`.
 *
 * # Safety
 * `solution` must come from this library; `out` must hold `len` doubles.
 */
enum SgoptStatus sgopt_solution_control(const struct SgoptSolution *solution,
                                        size_t t,
                                        double *out,
                                        size_t len);

/**
 * # Safety
 * `solution` must be null or come from this library, and not be used afterwards.
 */
void sgopt_solution_free(struct SgoptSolution *solution);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *sgopt_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *sgopt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGOPT_H */
