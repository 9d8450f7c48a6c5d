#ifndef BARRIER_EXT_H
#define BARRIER_EXT_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Constraint handlers, in the same order as the Rust enum.
 */
typedef enum BxHandler {
  BX_HANDLER_QUADRATIC_PENALTY = 0,
  BX_HANDLER_RELU_PENALTY = 1,
  BX_HANDLER_STANDARD_LOG_BARRIER = 2,
  BX_HANDLER_LOG_BARRIER_EXTENSION = 3,
} BxHandler;

/**
 * Status codes returned by every fallible function.
 */
typedef enum BxStatus {
  BX_STATUS_OK = 0,
  BX_STATUS_NULL_POINTER = 1,
  /**
   * Argument outside a function's domain, e.g. the standard barrier at `z >= 0`.
   */
  BX_STATUS_DOMAIN = 2,
  BX_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The numerical minimization behind a certificate did not converge.
   */
  BX_STATUS_CERTIFICATION = 4,
  BX_STATUS_INTERNAL = 5,
} BxStatus;

/**
 * Opaque convex quadratic program `min ||θ - c||²  s.t.  Aθ <= b`.
 */
typedef struct BxQp BxQp;

/**
 * Opaque barrier hardness schedule.
 */
typedef struct BxSchedule BxSchedule;

/**
 * Scalar summary of a duality-gap certificate.
 */
typedef struct BxCertificate {
  double t;
  size_t n;
  double primal;
  double dual;
  double gap;
  /**
   * `N / t`
   */
  double bound;
  double stationarity;
  bool feasible;
  /**
   * Constraint counts in `f <= -1/t²`, `-1/t² < f <= 0`, `f > 0`.
   */
  size_t cases[3];
  bool passed;
} BxCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version.
 */
const char *bx_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t bx_last_error_message(char *buf, size_t len);

/**
 * Log-barrier extension value at `z` (defined for every real `z`).
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_psi_ext(double z, double t, double *out);

/**
 * Derivative of the extension; equals the implicit dual variable.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_psi_ext_grad(double z, double t, double *out);

/**
 * Standard log barrier `-(1/t) log(-z)`; `BX_STATUS_DOMAIN` for `z >= 0`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_psi_std(double z, double t, double *out);

/**
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_implicit_dual(double z, double t, double *out);

/**
 * Handler value `P(z)` at hardness `t` (ignored by the quadratic penalty).
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_handler_value(enum BxHandler handler, double z, double t, double *out);

/**
 * Handler derivative `P'(z)`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_handler_grad(enum BxHandler handler, double z, double t, double *out);

/**
 * New schedule starting at `t0` and multiplied by `mu` per step.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum BxStatus bx_schedule_new(double t0, double mu, struct BxSchedule **out);

/**
 * # Safety
 * `schedule` must come from [`bx_schedule_new`]; `out` must be valid.
 */
enum BxStatus bx_schedule_t(const struct BxSchedule *schedule, double *out);

/**
 * Advance by one step (one epoch).
 *
 * # Safety
 * `schedule` must come from [`bx_schedule_new`].
 */
enum BxStatus bx_schedule_step(struct BxSchedule *schedule);

/**
 * # Safety
 * `schedule` must be null or come from [`bx_schedule_new`], and not be used
 * afterwards.
 */
void bx_schedule_free(struct BxSchedule *schedule);

/**
 * QP with objective center `center[dim]`, row-major constraint matrix
 * `rows[n * dim]` and bounds `rhs[n]`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` valid for writes.
 */
enum BxStatus bx_qp_new(size_t dim,
                        size_t n,
                        const double *center,
                        const double *rows,
                        const double *rhs,
                        struct BxQp **out);

/**
 * Random QP of the certification suite, with a known interior point.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BxStatus bx_qp_random(uint64_t seed, size_t index, struct BxQp **out);

/**
 * # Safety
 * `qp` must come from a `bx_qp_*` constructor.
 */
enum BxStatus bx_qp_dims(const struct BxQp *qp, size_t *dim, size_t *n);

/**
 * # Safety
 * `qp` must be null or come from a `bx_qp_*` constructor, and not be used
 * afterwards.
 */
void bx_qp_free(struct BxQp *qp);

/**
 * Standard-barrier certificate (gap equals `N/t`) from a strictly feasible
 * `start[dim]`; null `start` uses the known interior point of a random QP.
 * `theta_out[dim]` may be null.
 *
 * # Safety
 * Non-null pointers must be valid for the stated lengths.
 */
enum BxStatus bx_certify_prop1(const struct BxQp *qp,
                               const double *start,
                               double t,
                               double tol,
                               struct BxCertificate *out,
                               double *theta_out);

/**
 * Extension certificate (gap at most `N/t`) from any `start[dim]`; null
 * `start` uses the objective center.
 *
 * # Safety
 * Non-null pointers must be valid for the stated lengths.
 */
enum BxStatus bx_certify_prop2(const struct BxQp *qp,
                               const double *start,
                               double t,
                               double tol,
                               struct BxCertificate *out,
                               double *theta_out);

/**
 * Dice index of two binary masks (nonzero bytes are foreground); 1 when
 * both are empty.
 *
 * # Safety
 * `pred` and `gt` must be valid for `len` bytes; `out` valid for writes.
 */
enum BxStatus bx_dice(const uint8_t *pred, const uint8_t *gt, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BARRIER_EXT_H */
