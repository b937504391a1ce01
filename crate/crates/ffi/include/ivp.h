#ifndef IVP_H
#define IVP_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum IvpStatus {
  IVP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  IVP_STATUS_NULL_POINTER = 1,
  /**
   * Input failed validation (dimensions, domains, file contents).
   */
  IVP_STATUS_INVALID = 2,
  /**
   * A numerical failure: non-finite values, conditioning, singular covariance.
   */
  IVP_STATUS_NUMERICAL = 3,
  /**
   * A file could not be read.
   */
  IVP_STATUS_IO = 4,
  /**
   * The library panicked; this is a bug.
   */
  IVP_STATUS_PANIC = 5,
} IvpStatus;

/**
 * Opaque network structure.
 */
typedef struct IvpStructure IvpStructure;

/**
 * Opaque time-invariant system.
 */
typedef struct IvpSystem IvpSystem;

/**
 * Differential-privacy budget: `(epsilon, delta)`, adjacency radius `d`, `n_traj`
 * trajectories of horizon `horizon`.
 */
typedef struct IvpBudget {
  double epsilon;
  double delta;
  double d;
  size_t n_traj;
  size_t horizon;
} IvpBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on the calling thread, or null. Valid until the next call
 * into this library on the same thread.
 */
const char *ivp_last_error_message(void);

/**
 * Loads a system JSON file (`n`, `m`, `A`, `C`, optional `noise`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IvpStatus ivp_system_load(const char *path, struct IvpSystem **out);

/**
 * Parses a system from a JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum IvpStatus ivp_system_from_json(const char *json, struct IvpSystem **out);

/**
 * Builds a system from row-major `A` (`n x n`) and `C` (`m x n`) with i.i.d. noise.
 *
 * # Safety
 * `a` must hold `n * n` values, `c` must hold `m * n` values; `out` must be writable.
 */
enum IvpStatus ivp_system_from_matrices(size_t n,
                                        size_t m,
                                        const double *a,
                                        const double *c,
                                        double sigma_nu,
                                        double sigma_omega,
                                        struct IvpSystem **out);

/**
 * Releases a system. Null is ignored.
 *
 * # Safety
 * `sys` must come from this library and not be used afterwards.
 */
void ivp_system_free(struct IvpSystem *sys);

/**
 * State and output dimensions.
 *
 * # Safety
 * `sys` must be a live handle; `n` and `m` must be writable.
 */
enum IvpStatus ivp_system_dims(const struct IvpSystem *sys, size_t *n, size_t *m);

/**
 * Whether the whole initial state is private (the pair is unobservable).
 *
 * # Safety
 * `sys` must be a live handle; `out` must be writable.
 */
enum IvpStatus ivp_whole_vector_private(const struct IvpSystem *sys, bool *out);

/**
 * Whether `node` stays private when the nodes in `public[0..public_len]` are disclosed.
 *
 * # Safety
 * `sys` must be a live handle; `public` must hold `public_len` indices; `out` must be writable.
 */
enum IvpStatus ivp_node_private(const struct IvpSystem *sys,
                                size_t node,
                                const size_t *public_,
                                size_t public_len,
                                bool *out);

/**
 * Network privacy index `n - rank(O_ob) - 1`.
 *
 * # Safety
 * `sys` must be a live handle; `out` must be writable.
 */
enum IvpStatus ivp_privacy_index(const struct IvpSystem *sys, int64_t *out);

/**
 * Standard normal upper tail probability.
 */
double ivp_q_function(double w);

/**
 * Inverse of the upper tail on `(0, 0.5]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum IvpStatus ivp_q_inverse(double p, double *out);

/**
 * Gaussian-mechanism calibration constant.
 *
 * # Safety
 * `out` must be writable.
 */
enum IvpStatus ivp_kappa(double epsilon, double delta, double *out);

/**
 * Smallest i.i.d. measurement-noise standard deviation certifying the budget.
 *
 * # Safety
 * `sys` and `budget` must be valid; `out` must be writable.
 */
enum IvpStatus ivp_calibrate(const struct IvpSystem *sys,
                             const struct IvpBudget *budget_ptr,
                             double *out);

/**
 * Evaluates the sufficient DP condition for the system's own noise. `lhs` and `rhs` may be
 * null; otherwise they receive the two sides of the plain condition.
 *
 * # Safety
 * `sys` and `budget` must be valid; `satisfied` must be writable.
 */
enum IvpStatus ivp_check_dp(const struct IvpSystem *sys,
                            const struct IvpBudget *budget_ptr,
                            bool refined,
                            bool *satisfied,
                            double *lhs,
                            double *rhs);

/**
 * Loads a structure JSON file (`n`, `m`, `structure.edges`, `structure.sensor_edges`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IvpStatus ivp_structure_load(const char *path, struct IvpStructure **out);

/**
 * Parses a structure from a JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum IvpStatus ivp_structure_from_json(const char *json, struct IvpStructure **out);

/**
 * Releases a structure. Null is ignored.
 *
 * # Safety
 * `structure` must come from this library and not be used afterwards.
 */
void ivp_structure_free(struct IvpStructure *structure);

/**
 * Whether `node` is private for almost all weight configurations of the structure.
 *
 * # Safety
 * `structure` must be a live handle; `public` must hold `public_len` indices; `out` must be
 * writable.
 */
enum IvpStatus ivp_generic_node_privacy(const struct IvpStructure *structure,
                                        size_t node,
                                        const size_t *public_,
                                        size_t public_len,
                                        size_t samples,
                                        uint64_t seed,
                                        bool *out);

/**
 * Generic network privacy index of the structure.
 *
 * # Safety
 * `structure` must be a live handle; `out` must be writable.
 */
enum IvpStatus ivp_generic_privacy_index(const struct IvpStructure *structure,
                                         size_t samples,
                                         uint64_t seed,
                                         int64_t *out);

/**
 * JSON report with the whole-vector verdict and the privacy index. Release the string with
 * [`ivp_string_free`].
 *
 * # Safety
 * `sys` must be a live handle; `out` must be writable.
 */
enum IvpStatus ivp_audit_json(const struct IvpSystem *sys, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void ivp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IVP_H */
