#ifndef DECOHIST_H
#define DECOHIST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DH_KERNEL_ZERO 0

#define DH_KERNEL_TOP_HAT 1

#define DH_KERNEL_TOP_HAT_SHELL 2

typedef enum DhStatus {
  DH_STATUS_OK = 0,
  DH_STATUS_NULL_POINTER = 1,
  DH_STATUS_INVALID_ARGUMENT = 2,
  DH_STATUS_CAP_EXCEEDED = 3,
  // Bins, histories or negative probabilities.
  DH_STATUS_HISTORY = 4,
  // Correlation model, quadrature, sampling or fit.
  DH_STATUS_STATISTICS = 5,
  DH_STATUS_CONFIG = 6,
  DH_STATUS_IO = 7,
  // The experiment ran but at least one invariant check failed.
  DH_STATUS_INVARIANT_FAILED = 8,
  DH_STATUS_PANIC = 9,
} DhStatus;

// Decoherence functional over all alternative strings.
typedef struct DhDecoherence DhDecoherence;

// Hamiltonian together with its propagator.
typedef struct DhHamiltonian DhHamiltonian;

// Many-body state.
typedef struct DhState DhState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *dh_last_error_message(void);

// `particles` copies of a Gaussian packet on a ring of `sites` sites.
//
// # Safety
// `out` must be a valid pointer to write the new handle to.
enum DhStatus dh_state_gaussian_product(size_t sites,
                                        double center,
                                        double width,
                                        double momentum,
                                        size_t particles,
                                        struct DhState **out);

// State from `sites^particles` amplitudes given as real and imaginary parts.
// The result is normalized.
//
// # Safety
// `re` and `im` must point to `len` doubles each; `out` must be writable.
enum DhStatus dh_state_from_amplitudes(size_t sites,
                                       size_t particles,
                                       const double *re,
                                       const double *im,
                                       size_t len,
                                       struct DhState **out);

// Normalized `w_a |a> + w_b |b>`. `overlap_re`/`overlap_im` receive `<a|b>`
// and may be null.
//
// # Safety
// `a` and `b` must be live state handles; `out` must be writable.
enum DhStatus dh_state_superpose(const struct DhState *a,
                                 const struct DhState *b,
                                 double wa_re,
                                 double wa_im,
                                 double wb_re,
                                 double wb_im,
                                 double *overlap_re,
                                 double *overlap_im,
                                 struct DhState **out);

// Number of amplitudes, or 0 for a null handle.
//
// # Safety
// `state` must be null or a live state handle.
size_t dh_state_dim(const struct DhState *state);

// Copies the amplitudes into `re` and `im`, each of length `len >= dim`.
//
// # Safety
// `state` must be a live handle; `re` and `im` must hold `len` doubles.
enum DhStatus dh_state_amplitudes(const struct DhState *state, double *re, double *im, size_t len);

// # Safety
// `state` must be null or a handle not yet freed.
void dh_state_free(struct DhState *state);

// Hamiltonian on a ring with unit mass, spacing and hbar.
//
// `potential[r]` is the pair energy at site distance `r`; `detached` lists
// sites with their hopping links removed. Either array may be empty.
//
// # Safety
// Arrays must hold the stated number of elements; `out` must be writable.
enum DhStatus dh_hamiltonian_new(size_t sites,
                                 size_t particles,
                                 const double *potential,
                                 size_t potential_len,
                                 const size_t *detached,
                                 size_t detached_len,
                                 struct DhHamiltonian **out);

// # Safety
// `h` must be null or a handle not yet freed.
void dh_hamiltonian_free(struct DhHamiltonian *h);

// Evolves `state` by time `t`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum DhStatus dh_evolve(const struct DhHamiltonian *h,
                        const struct DhState *state,
                        double t,
                        struct DhState **out);

// Mean, variance and peaking ratio of the particle number in sites
// `start .. start + len` (mod sites). The ratio is NaN when the mean vanishes.
//
// # Safety
// `state` must be live; out pointers must be writable.
enum DhStatus dh_number_peaking(const struct DhState *state,
                                size_t start,
                                size_t len,
                                double *mean,
                                double *variance,
                                double *ratio);

// Decoherence functional of histories that bin the particle number in a
// window at each of `times`, all with the same `edges`.
//
// # Safety
// Handles must be live; arrays must hold the stated lengths; `out` writable.
enum DhStatus dh_decoherence_number(const struct DhState *state,
                                    const struct DhHamiltonian *h,
                                    size_t start,
                                    size_t len,
                                    const double *edges,
                                    size_t edges_len,
                                    const double *times,
                                    size_t times_len,
                                    struct DhDecoherence **out);

// Number of alternative strings, or 0 for a null handle.
//
// # Safety
// `d` must be null or live.
size_t dh_decoherence_len(const struct DhDecoherence *d);

// `D(alpha_i, alpha_j)`, alternatives in lexicographic order.
//
// # Safety
// `d` must be live; `re` and `im` writable.
enum DhStatus dh_decoherence_get(const struct DhDecoherence *d,
                                 size_t i,
                                 size_t j,
                                 double *re,
                                 double *im);

// Largest normalized off-diagonal magnitude and largest raw `|D|` off the
// diagonal. Either output may be null.
//
// # Safety
// `d` must be live.
enum DhStatus dh_decoherence_measure(const struct DhDecoherence *d,
                                     double *epsilon,
                                     double *max_offdiag);

// # Safety
// `d` must be null or a handle not yet freed.
void dh_decoherence_free(struct DhDecoherence *d);

// Large-N variance ratio for a uniform density in a periodic box of side
// `box_side`, smeared over a cube of side `volume_side`.
//
// # Safety
// `out` must be writable.
enum DhStatus dh_variance_ratio_limit(size_t dim,
                                      double box_side,
                                      uint32_t kernel,
                                      double amplitude,
                                      double length,
                                      double volume_side,
                                      double *out);

// Variance ratio at `particles` particles for the same setup as
// [`dh_variance_ratio_limit`].
//
// # Safety
// `out` must be writable.
enum DhStatus dh_variance_ratio_finite_n(size_t dim,
                                         double box_side,
                                         uint32_t kernel,
                                         double amplitude,
                                         double length,
                                         double volume_side,
                                         uint64_t particles,
                                         double *out);

// Runs the experiment in the config file at `config_path` and writes its
// CSVs and summary to `out_dir`, or to the config's `output.dir` when
// `out_dir` is null. Returns `InvariantFailed` if any check failed.
//
// # Safety
// `config_path` must be a nul-terminated string; `out_dir` null or one.
enum DhStatus dh_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DECOHIST_H */
