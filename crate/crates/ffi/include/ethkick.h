#ifndef ETHKICK_H
#define ETHKICK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible entry point.
 */
typedef enum EthkickStatus {
  ETHKICK_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ETHKICK_STATUS_NULL_POINTER = 1,
  /**
   * Bad input: malformed JSON, invalid model or pulse, index out of range.
   */
  ETHKICK_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A numerical stage failed (eigensolver, stability gate, quadrature).
   */
  ETHKICK_STATUS_NUMERICAL = 3,
  /**
   * Reading or writing files failed.
   */
  ETHKICK_STATUS_IO = 4,
  /**
   * An internal panic was caught.
   */
  ETHKICK_STATUS_PANIC = 5,
} EthkickStatus;

/**
 * Diagonalized model plus its kick/pulse propagator data.
 */
typedef struct EthkickSystem EthkickSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *ethkick_last_error(void);

/**
 * Forgets the last error message of this thread.
 */
void ethkick_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ethkick_version(void);

/**
 * Builds and diagonalizes the model described by `model_json` (the `model`
 * object of an experiment spec). On success `*out` receives a handle that
 * must be released with [`ethkick_system_free`].
 *
 * # Safety
 * `model_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EthkickStatus ethkick_system_new(const char *model_json, struct EthkickSystem **out);

/**
 * Releases a handle from [`ethkick_system_new`]. Null is a no-op.
 *
 * # Safety
 * `system` must be null or a handle that has not been freed yet.
 */
void ethkick_system_free(struct EthkickSystem *system);

/**
 * Hilbert-space dimension of the system.
 *
 * # Safety
 * `system` must be a live handle and `out` a valid pointer.
 */
enum EthkickStatus ethkick_system_dim(const struct EthkickSystem *system, size_t *out);

/**
 * Copies the ascending eigenvalues of `H0` into `buf`, which must hold at
 * least `len >= dim` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum EthkickStatus ethkick_system_energies(const struct EthkickSystem *system,
                                           double *buf,
                                           size_t len);

/**
 * Largest absolute matrix element of `H0`.
 *
 * # Safety
 * `system` must be a live handle and `out` a valid pointer.
 */
enum EthkickStatus ethkick_system_h_max(const struct EthkickSystem *system, double *out);

/**
 * Exact energy change of eigenstate `n` after the kick `exp(-i lambda O)`.
 *
 * # Safety
 * `system` must be a live handle and `out` a valid pointer.
 */
enum EthkickStatus ethkick_kick_eigenstate(const struct EthkickSystem *system,
                                           size_t n,
                                           double lambda,
                                           double *out);

/**
 * Exact energy change of the canonical state at inverse temperature `beta`
 * after the kick `exp(-i lambda O)`.
 *
 * # Safety
 * `system` must be a live handle and `out` a valid pointer.
 */
enum EthkickStatus ethkick_kick_thermal(const struct EthkickSystem *system,
                                        double beta,
                                        double lambda,
                                        double *out);

/**
 * Kick energy change in the all-orders series convention, summed with the
 * unnormalized Boltzmann weights `exp(-beta E_n)`.
 *
 * # Safety
 * `system` must be a live handle and `out` a valid pointer.
 */
enum EthkickStatus ethkick_kick_series_convention(const struct EthkickSystem *system,
                                                  double beta,
                                                  double lambda,
                                                  double *out);

/**
 * Exact energy change of the canonical state at `beta` driven by the pulse
 * in `pulse_json` (e.g. `{"shape":"hann","amplitude":0.1,"duration":1}`).
 * `dt <= 0` selects the default step.
 *
 * # Safety
 * `system` must be a live handle, `pulse_json` NUL-terminated and `out` valid.
 */
enum EthkickStatus ethkick_pulse_thermal(const struct EthkickSystem *system,
                                         double beta,
                                         const char *pulse_json,
                                         double dt,
                                         double *out);

/**
 * Runs one study (`model-info`, `eth-stats`, `spectral`, `kick`, `pulse` or
 * `scaling`) on the experiment spec `spec_json` and writes its CSV tables and
 * summary into `out_dir`. `cache_dir` may be null.
 *
 * # Safety
 * All non-null pointers must be NUL-terminated strings.
 */
enum EthkickStatus ethkick_run_study(const char *study,
                                     const char *spec_json,
                                     const char *out_dir,
                                     const char *cache_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ETHKICK_H */
