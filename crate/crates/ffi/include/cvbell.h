#ifndef CVBELL_H
#define CVBELL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvbellStatus {
  CVBELL_STATUS_OK = 0,
  CVBELL_STATUS_INVALID_ARGUMENT = 1,
  CVBELL_STATUS_NUMERICAL_DOMAIN = 2,
  CVBELL_STATUS_RESOURCE_LIMIT = 3,
  /**
   * An iteration or the optimizer stopped before meeting its tolerance.
   */
  CVBELL_STATUS_CONVERGENCE = 4,
  CVBELL_STATUS_INTERNAL = 5,
  CVBELL_STATUS_NULL_POINTER = 6,
  CVBELL_STATUS_BUFFER_TOO_SMALL = 7,
  CVBELL_STATUS_PANIC = 8,
} CvbellStatus;

typedef enum CvbellInequality {
  CVBELL_INEQUALITY_FUNCTIONAL = 0,
  CVBELL_INEQUALITY_CFRD = 1,
  CVBELL_INEQUALITY_MK = 2,
} CvbellInequality;

/**
 * Gauss-Hermite quadrature rule (opaque).
 */
typedef struct CvbellRule CvbellRule;

/**
 * GHZ-class state with loss and dephasing (opaque).
 */
typedef struct CvbellState CvbellState;

/**
 * Both sides of an inequality and their ratio.
 */
typedef struct CvbellResult {
  double lhs;
  double rhs;
  double ratio;
  /**
   * Parameter of `x/(1+eps x^2)`; NaN when no such function was used.
   */
  double epsilon;
  bool violates;
} CvbellResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * Valid until the next `cvbell_*` call on the same thread.
 */
const char *cvbell_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cvbell_version(void);

/**
 * Builds a Gauss-Hermite rule of `order` nodes (1..=512).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CvbellStatus cvbell_rule_new(size_t order, struct CvbellRule **out);

/**
 * # Safety
 * `rule` must come from [`cvbell_rule_new`] and not be used afterwards. NULL is ignored.
 */
void cvbell_rule_free(struct CvbellRule *rule);

/**
 * Materialises the state with `n` modes, split `r`, purity `p` and efficiency `eta`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CvbellStatus cvbell_state_new(size_t n,
                                   size_t r,
                                   double p,
                                   double eta,
                                   struct CvbellState **out);

/**
 * # Safety
 * `state` must come from [`cvbell_state_new`] and not be used afterwards. NULL is ignored.
 */
void cvbell_state_free(struct CvbellState *state);

/**
 * Closed-form value for a balanced state (`r = floor(N/2)`), with the
 * mixture purity model and the self-consistent `eps`. MK ignores `rule`
 * (which may then be NULL).
 *
 * # Safety
 * `rule` must be a live handle (or NULL for MK); `out` must be writable.
 */
enum CvbellStatus cvbell_closed_form(enum CvbellInequality inequality,
                                     size_t n,
                                     double p,
                                     double eta,
                                     const struct CvbellRule *rule,
                                     struct CvbellResult *out);

/**
 * Exact Fock-space evaluation at the optimal angles: the functional
 * inequality maximised over `eps`, CFRD with `f = g = x`, and MK with
 * sign-binned outcomes.
 *
 * # Safety
 * `state` and `rule` must be live handles; `out` must be writable.
 */
enum CvbellStatus cvbell_oracle(enum CvbellInequality inequality,
                                const struct CvbellState *state,
                                const struct CvbellRule *rule,
                                struct CvbellResult *out);

/**
 * Smallest efficiency with a violation at purity `fixed`, or with
 * `purity` set, the smallest purity at efficiency `fixed`. `*found` is
 * false (and `*value` NaN) when no value up to one violates.
 *
 * # Safety
 * `rule` must be a live handle; `value` and `found` must be writable.
 */
enum CvbellStatus cvbell_critical(enum CvbellInequality inequality,
                                  size_t n,
                                  double fixed,
                                  bool purity,
                                  const struct CvbellRule *rule,
                                  double *value,
                                  bool *found);

/**
 * Critical `eta p^2` of the binned MK inequality, `2^((1-2N)/N) pi`.
 *
 * # Safety
 * `out` must be writable.
 */
enum CvbellStatus cvbell_mk_critical_product(size_t n, double *out);

/**
 * Optimises `f = g` freely on the positive quadrature nodes, starting from
 * `f(x) = x`. Node values go to `values` (`capacity` doubles; the required
 * length is written to `*len`). On non-convergence the best point is still
 * written and `CVBELL_STATUS_CONVERGENCE` is returned.
 *
 * # Safety
 * `state` and `rule` must be live handles; `values` must hold `capacity`
 * doubles (may be NULL when `capacity` is 0); `len` and `out` must be writable.
 */
enum CvbellStatus cvbell_optimize(const struct CvbellState *state,
                                  const struct CvbellRule *rule,
                                  double *values,
                                  size_t capacity,
                                  size_t *len,
                                  struct CvbellResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVBELL_H */
