#ifndef RYDFLAT_H
#define RYDFLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_NUMERICAL = 3,
  RF_STATUS_BUFFER_TOO_SMALL = 4,
  RF_STATUS_PANIC = 5,
} RfStatus;

typedef enum RfDisorderMode {
  RF_DISORDER_MODE_POSITIONAL = 0,
  RF_DISORDER_MODE_FLAT_PAIR_ONLY = 1,
  RF_DISORDER_MODE_FLAT_ALL_SITES = 2,
} RfDisorderMode;

/**
 * Band structure on a momentum grid.
 */
typedef struct RfBands RfBands;

/**
 * Flat-band state evolving under one disorder realization of the
 * effective ladder Hamiltonian.
 */
typedef struct RfEvolution RfEvolution;

/**
 * Leg-resolved moments of the excitation profile (rungs counted from 1).
 */
typedef struct RfObservables {
  double mean_upper;
  double mean_lower;
  double dx_upper;
  double dx_lower;
} RfObservables;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *rf_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *rf_version(void);

/**
 * Computes the synthetic-lattice bands of a built-in lattice (`"chain"`,
 * `"ladder"`, `"square"`, `"triangular"`, `"honeycomb"`) or of a lattice
 * JSON document, on the `k_y = 0` cut with `kpoints` points.
 */
enum RfStatus rf_bands_compute(const char *lattice, size_t kpoints, struct RfBands **out);

void rf_bands_free(struct RfBands *bands);

/**
 * Writes the number of momenta and bands.
 */
enum RfStatus rf_bands_shape(const struct RfBands *bands, size_t *n_k, size_t *n_bands);

/**
 * Copies the energies row-major (`n_k x n_bands`, ascending per row).
 */
enum RfStatus rf_bands_energies(const struct RfBands *bands, double *buf, size_t len);

/**
 * Number of bands whose spread over the grid is below `tol`.
 */
enum RfStatus rf_bands_flat_count(const struct RfBands *bands, double tol, size_t *count);

/**
 * Density of the relative pair shift `dv = d^-alpha - 1` at spread `s`.
 */
enum RfStatus rf_shift_density(double dv, double s, uint32_t alpha, double *out);

/**
 * Fills `buf` with `n` sampled relative pair shifts.
 */
enum RfStatus rf_sample_shifts(size_t n,
                               double s,
                               uint32_t alpha,
                               uint64_t seed,
                               double *buf,
                               size_t len);

/**
 * Localization lengths `xi1 <= xi2` (unit cells) of the disordered ladder
 * at `energy`, with standard errors. `strength` is `s` for positional
 * disorder (then `alpha`, `v0_over_omega` apply) and `W` otherwise.
 */
enum RfStatus rf_localization_lengths(double energy,
                                      enum RfDisorderMode mode,
                                      double strength,
                                      uint32_t alpha,
                                      double v0_over_omega,
                                      size_t n_steps,
                                      uint64_t seed,
                                      double *xi,
                                      double *xi_stderr);

/**
 * Fitted exponents `nu` with `xi ~ strength^-nu` over an ascending grid of
 * `n` disorder strengths.
 */
enum RfStatus rf_scaling_exponents(double energy,
                                   enum RfDisorderMode mode,
                                   const double *grid,
                                   size_t n,
                                   size_t n_steps,
                                   uint64_t seed,
                                   double *nu);

/**
 * Flat-band state on rungs `L/2, L/2 + 1` of an `L`-rung ladder under one
 * positional-disorder realization.
 */
enum RfStatus rf_evolution_new(size_t length,
                               double s,
                               double v0_over_omega,
                               uint32_t alpha,
                               uint64_t seed,
                               struct RfEvolution **out);

void rf_evolution_free(struct RfEvolution *evolution);

/**
 * Profile moments at time `t` (units of `1/Omega`).
 */
enum RfStatus rf_evolution_observe(const struct RfEvolution *evolution,
                                   double t,
                                   struct RfObservables *out);

/**
 * Normalized per-rung profiles of both legs at time `t`; each buffer
 * must hold `L` values.
 */
enum RfStatus rf_evolution_profile(const struct RfEvolution *evolution,
                                   double t,
                                   double *upper,
                                   double *lower,
                                   size_t len);

/**
 * Fidelity of the six-pulse preparation on rungs `rung, rung + 1`
 * (1-based). `full_hamiltonian` selects finite-duration pulses at Rabi
 * frequency `omega_r` instead of ideal gates.
 */
enum RfStatus rf_prepare_fidelity(size_t length,
                                  size_t rung,
                                  bool full_hamiltonian,
                                  double omega_r,
                                  double v0_over_omega,
                                  double *fidelity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RYDFLAT_H */
