#ifndef ONCOLYAP_H
#define ONCOLYAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OlStatus {
  OL_STATUS_OK = 0,
  OL_STATUS_NULL_POINTER = 1,
  OL_STATUS_INVALID_ARGUMENT = 2,
  OL_STATUS_PARSE = 3,
  /**
   * Integration failure: singularity, step underflow or divergence.
   */
  OL_STATUS_INTEGRATION = 4,
  /**
   * Linear algebra failure or an equilibrium that is not stable.
   */
  OL_STATUS_STABILITY = 5,
  /**
   * Certificate search found no clean radius.
   */
  OL_STATUS_CERTIFICATE = 6,
  /**
   * Multipoint solver failure (including infeasible solutions).
   */
  OL_STATUS_SOLVER = 7,
  OL_STATUS_PANIC = 99,
} OlStatus;

typedef enum OlLabel {
  OL_LABEL_STABLE = 0,
  OL_LABEL_UNSTABLE = 1,
  OL_LABEL_NON_HYPERBOLIC = 2,
} OlLabel;

typedef enum OlMethod {
  OL_METHOD_PICARD = 0,
  OL_METHOD_NEWTON = 1,
} OlMethod;

/**
 * Quadratic Lyapunov certificate around a boundary equilibrium.
 */
typedef struct OlCertificate OlCertificate;

/**
 * Validated model parameters.
 */
typedef struct OlParams OlParams;

/**
 * Dense trajectory of `(x1, x2, x3, u)`.
 */
typedef struct OlTrajectory OlTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ol_version(void);

/**
 * Copy of the calling thread's last error message, or NULL when the last
 * call succeeded. Release with [`ol_string_free`].
 */
char *ol_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void ol_string_free(char *s);

/**
 * Parse and validate parameters from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a writable pointer.
 */
enum OlStatus ol_params_from_json(const char *json, struct OlParams **out);

/**
 * The shipped illustrative parameter set.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum OlStatus ol_params_illustrative(struct OlParams **out);

/**
 * # Safety
 * `p` must be NULL or a handle from this library, freed once.
 */
void ol_params_free(struct OlParams *p);

/**
 * Fractional kills `g_1..g_3` at drug amount `u` into `out[3]`.
 *
 * # Safety
 * `params` must be a live handle and `out` point to 3 doubles.
 */
enum OlStatus ol_response_eval(const struct OlParams *params, double u, double *out);

/**
 * Right-hand side at `state[4] = (x1, x2, x3, u)` with infusion `v`.
 *
 * # Safety
 * `state` and `out` must each point to 4 doubles.
 */
enum OlStatus ol_vector_field(const struct OlParams *params,
                              const double *state,
                              double v,
                              double *out);

/**
 * Cell-block Jacobian at `x[3]` and drug amount `u`, row-major into `out[9]`.
 *
 * # Safety
 * `x` must point to 3 doubles and `out` to 9.
 */
enum OlStatus ol_jacobian(const struct OlParams *params, const double *x, double u, double *out);

/**
 * Integrate from `y0[4]` over `[t0, tf]` under constant infusion `v`.
 *
 * # Safety
 * `y0` must point to 4 doubles; `out` must be writable.
 */
enum OlStatus ol_integrate(const struct OlParams *params,
                           const double *y0,
                           double t0,
                           double tf,
                           double v,
                           double abs_tol,
                           double rel_tol,
                           struct OlTrajectory **out);

/**
 * Number of accepted steps including the initial point; 0 for NULL.
 *
 * # Safety
 * `traj` must be NULL or a live handle.
 */
size_t ol_trajectory_len(const struct OlTrajectory *traj);

/**
 * Time and state of step `i`.
 *
 * # Safety
 * `traj` must be live, `t` writable and `state` point to 4 doubles.
 */
enum OlStatus ol_trajectory_point(const struct OlTrajectory *traj,
                                  size_t i,
                                  double *t,
                                  double *state);

/**
 * Dense-output state at time `t` inside the integrated span.
 *
 * # Safety
 * `traj` must be live and `state` point to 4 doubles.
 */
enum OlStatus ol_trajectory_state_at(const struct OlTrajectory *traj, double t, double *state);

/**
 * # Safety
 * `traj` must be NULL or a handle from this library, freed once.
 */
void ol_trajectory_free(struct OlTrajectory *traj);

/**
 * The three boundary equilibria at constant infusion `dose`: points into
 * `points[9]` (row per equilibrium) and feasibility flags into
 * `feasible[3]`.
 *
 * # Safety
 * `points` must point to 9 doubles and `feasible` to 3 bytes.
 */
enum OlStatus ol_boundary_equilibria(const struct OlParams *params,
                                     double dose,
                                     double *points,
                                     uint8_t *feasible);

/**
 * Local classification of boundary equilibrium `which`. Eigenvalues go to
 * `eigs[6]` as `(re, im)` pairs sorted by descending real part.
 *
 * # Safety
 * `eigs` must point to 6 doubles and `label` be writable.
 */
enum OlStatus ol_classify(const struct OlParams *params,
                          double dose,
                          uint32_t which,
                          double eps_eig,
                          double *eigs,
                          enum OlLabel *label);

/**
 * Solve `B A + Aᵀ B = -I` for row-major `a[9]` into `b[9]`.
 *
 * # Safety
 * `a` and `b` must each point to 9 doubles.
 */
enum OlStatus ol_solve_lyapunov(const double *a, double *b);

/**
 * Build a certificate for boundary equilibrium `which` inside the box
 * `[0, box_bounds[i]]`.
 *
 * # Safety
 * `box_bounds` must point to 3 doubles; `out` must be writable.
 */
enum OlStatus ol_certificate_build(const struct OlParams *params,
                                   double dose,
                                   uint32_t which,
                                   const double *box_bounds,
                                   size_t budget,
                                   uint64_t seed,
                                   struct OlCertificate **out);

/**
 * Radius `r` and level `C` of a certificate.
 *
 * # Safety
 * `cert` must be live; `r` and `c` writable.
 */
enum OlStatus ol_certificate_level(const struct OlCertificate *cert, double *r, double *c);

/**
 * Whether `x[3]` lies in the certified set.
 *
 * # Safety
 * `x` must point to 3 doubles; `inside` must be writable.
 */
enum OlStatus ol_certificate_contains(const struct OlCertificate *cert,
                                      const double *x,
                                      uint8_t *inside);

/**
 * JSON form of a certificate. Release with [`ol_string_free`].
 *
 * # Safety
 * `cert` must be live; `out` must be writable.
 */
enum OlStatus ol_certificate_to_json(const struct OlCertificate *cert, char **out);

/**
 * # Safety
 * `cert` must be NULL or a handle from this library, freed once.
 */
void ol_certificate_free(struct OlCertificate *cert);

/**
 * Solve a multipoint problem given as JSON
 * (`{"t0", "T", "nodes", "alpha", "x0", "u0"}`) under constant infusion
 * `v`. Writes the initial cell state to `y[3]` and the final residual.
 *
 * # Safety
 * `spec_json` must be NUL-terminated; `y` must point to 3 doubles and
 * `residual` be writable.
 */
enum OlStatus ol_multipoint_solve(const struct OlParams *params,
                                  const char *spec_json,
                                  double v,
                                  enum OlMethod method,
                                  double tol,
                                  size_t max_iter,
                                  double *y,
                                  double *residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONCOLYAP_H */
