#ifndef DICHOTOMY_H
#define DICHOTOMY_H

/* This file is generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by the fallible entry points.
 */
typedef enum {
  /**
   * Success.
   */
  DICHO_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DICHO_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or otherwise malformed.
   */
  DICHO_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The matrix is singular or has an eigenvalue too close to the unit
   * circle for the requested tolerance.
   */
  DICHO_STATUS_NOT_HYPERBOLIC = 3,
  /**
   * A numerical routine failed.
   */
  DICHO_STATUS_NUMERICAL_FAILURE = 4,
  /**
   * A panic was caught at the boundary.
   */
  DICHO_STATUS_PANIC = 5,
} DichoStatus;

/**
 * Opaque certification report handle.
 */
typedef struct DichoReport DichoReport;

/**
 * Opaque stable/unstable splitting handle.
 */
typedef struct DichoSplitting DichoSplitting;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Computes the hyperbolic splitting of a row-major `n x n` matrix.
 *
 * On success `*out` owns a new handle that must be released with
 * [`dicho_splitting_free`].
 *
 * # Safety
 * `entries` must point to `n * n` readable doubles and `out` to a writable
 * pointer slot; both must stay valid for the duration of the call.
 */
DichoStatus dicho_splitting_compute(const double *entries,
                                    uintptr_t n,
                                    double tol,
                                    DichoSplitting **out);

/**
 * Dimension of the stable subspace, or -1 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_splitting_compute`].
 */
int dicho_splitting_stable_dim(const DichoSplitting *handle);

/**
 * Dimension of the unstable subspace, or -1 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_splitting_compute`].
 */
int dicho_splitting_unstable_dim(const DichoSplitting *handle);

/**
 * Distance of the closest eigenvalue modulus to 1, or NaN for a null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_splitting_compute`].
 */
double dicho_splitting_margin(const DichoSplitting *handle);

/**
 * Copies the stable spectral projector into `out` (row-major, `n * n`).
 *
 * # Safety
 * `out` must point to `n * n` writable doubles, where `n` is the dimension
 * the handle was built with.
 */
DichoStatus dicho_splitting_stable_projector(const DichoSplitting *handle, double *out);

/**
 * Copies the orthonormal stable basis into `out` (row-major, `n * k_s`).
 *
 * # Safety
 * `out` must point to `n * k_s` writable doubles.
 */
DichoStatus dicho_splitting_stable_basis(const DichoSplitting *handle, double *out);

/**
 * Releases a splitting handle. Null is accepted.
 *
 * # Safety
 * `handle` must be null or an unreleased pointer from
 * [`dicho_splitting_compute`]; it must not be used afterwards.
 */
void dicho_splitting_free(DichoSplitting *handle);

/**
 * Runs the certification pipeline on a built-in model.
 *
 * `name` is one of "torus_example", "counterexample_a5",
 * "random_asymptotic"; `k` the number of torus factors; `c` the quadratic
 * coupling of the torus model; `seed` the random-model seed; `mesh_m` the
 * vertices per generator loop; `window` the lattice half-length. On success
 * `*out` owns a handle to be released with [`dicho_report_free`].
 *
 * # Safety
 * `name` must be a valid NUL-terminated string and `out` a writable pointer
 * slot.
 */
DichoStatus dicho_certify_model(const char *name,
                                uintptr_t k,
                                double c,
                                uint64_t seed,
                                uintptr_t mesh_m,
                                uintptr_t window,
                                DichoReport **out);

/**
 * Conclusion of a report: 0 = certified bifurcation, 1 = no certificate,
 * 2 = assumptions violated, -1 = null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_certify_model`].
 */
int dicho_report_conclusion(const DichoReport *handle);

/**
 * Whether the first Stiefel-Whitney classes of the two stable bundles
 * differ: 1 yes, 0 no, -1 unknown (no certificate computed or null handle).
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_certify_model`].
 */
int dicho_report_w1_mismatch(const DichoReport *handle);

/**
 * Number of bifurcation candidate vertices in the report, or -1.
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_certify_model`].
 */
int dicho_report_candidate_count(const DichoReport *handle);

/**
 * Borrowed pointer to the report serialized as JSON; valid until
 * [`dicho_report_free`] is called on the handle. Null for a null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from [`dicho_certify_model`].
 */
const char *dicho_report_json(const DichoReport *handle);

/**
 * Releases a report handle. Null is accepted.
 *
 * # Safety
 * `handle` must be null or an unreleased pointer from
 * [`dicho_certify_model`]; it must not be used afterwards.
 */
void dicho_report_free(DichoReport *handle);

/**
 * Library version as a static string.
 */
const char *dicho_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DICHOTOMY_H */
