#ifndef CAPGAME_H
#define CAPGAME_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Payoff weighting for [`cg_instance_new`].
typedef enum CgPayoffMode {
  CG_PAYOFF_MODE_UNIFORM = 0,
  CG_PAYOFF_MODE_PATH_LENGTH = 1,
} CgPayoffMode;

// Status codes returned by every fallible function.
typedef enum CgStatus {
  CG_STATUS_OK = 0,
  // A required pointer argument was null.
  CG_STATUS_NULL_POINTER = 1,
  // An argument was out of range or inconsistent.
  CG_STATUS_INVALID_ARGUMENT = 2,
  // A file could not be read or parsed.
  CG_STATUS_IO = 3,
  // An algorithm failed on a valid input.
  CG_STATUS_ALGORITHM = 4,
  // The optimizer stopped before reaching the requested tolerance.
  CG_STATUS_NOT_CONVERGED = 5,
  // A panic was caught at the boundary.
  CG_STATUS_PANIC = 6,
} CgStatus;

// Opaque network instance.
typedef struct CgInstance CgInstance;

// Opaque strategy profile (a `links x flows` allocation matrix).
typedef struct CgProfile CgProfile;

// Equilibrium check summary.
typedef struct CgNashReport {
  // 1 when every relative gap is within tolerance.
  int32_t is_nash;
  double max_gap;
  // Link with the largest gap, or -1 when there are no links.
  int64_t worst_link;
  // Social welfare; `-INFINITY` when some flow has zero rate and the
  // utility diverges.
  double welfare;
} CgNashReport;

// Closed-form price of anarchy of the serial topology.
typedef struct CgSerialPoA {
  double chi;
  double poa1;
  double poa2;
  double poa;
} CgSerialPoA;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cg_version(void);

// Message describing the last failure on this thread, or null if none.
//
// The pointer stays valid until the next failing call on this thread.
const char *cg_last_error(void);

// Builds an instance from a row-major `links x flows` routing matrix of
// 0/1 bytes.
//
// `weights` may be null, in which case every weight is 1.
//
// # Safety
// `routing` must point to `links * flows` bytes, `capacities` to `links`
// doubles, `weights` (if non-null) to `flows` doubles, and `out` must be a
// valid pointer to writable storage.
enum CgStatus cg_instance_new(size_t links,
                              size_t flows,
                              const uint8_t *routing,
                              const double *capacities,
                              double gamma,
                              const double *weights,
                              enum CgPayoffMode mode,
                              struct CgInstance **out);

// Loads an instance from a TOML file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CgStatus cg_instance_load(const char *path, struct CgInstance **out);

// Releases an instance. Null is ignored.
//
// # Safety
// `inst` must be null or a handle returned by this library that has not
// been freed.
void cg_instance_free(struct CgInstance *inst);

// Number of links, or 0 for a null handle.
//
// # Safety
// `inst` must be null or a live handle.
size_t cg_instance_links(const struct CgInstance *inst);

// Number of flows, or 0 for a null handle.
//
// # Safety
// `inst` must be null or a live handle.
size_t cg_instance_flows(const struct CgInstance *inst);

// One-step proportional allocation.
//
// # Safety
// `inst` must be a live handle and `out` a valid pointer.
enum CgStatus cg_one_step(const struct CgInstance *inst, struct CgProfile **out);

// Iterated allocation. `iterations` (if non-null) receives the number of
// iterations performed.
//
// # Safety
// `inst` must be a live handle, `out` a valid pointer and `iterations`
// null or valid.
enum CgStatus cg_iterated(const struct CgInstance *inst,
                          struct CgProfile **out,
                          size_t *iterations);

// Loads a profile from a TOML file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CgStatus cg_profile_load(const char *path, struct CgProfile **out);

// Releases a profile. Null is ignored.
//
// # Safety
// `profile` must be null or a handle returned by this library that has
// not been freed.
void cg_profile_free(struct CgProfile *profile);

// Reads the allocation of `link` to `flow`.
//
// # Safety
// `profile` must be a live handle and `out` a valid pointer.
enum CgStatus cg_profile_get(const struct CgProfile *profile,
                             size_t link,
                             size_t flow,
                             double *out);

// Writes the end-to-end rates of `profile` into `rates[0..flows]`.
//
// # Safety
// `inst` and `profile` must be live handles and `rates` must point to
// `len` writable doubles.
enum CgStatus cg_rates(const struct CgInstance *inst,
                       const struct CgProfile *profile,
                       double *rates,
                       size_t len);

// Social welfare of a profile; `-INFINITY` when it diverges.
//
// # Safety
// `inst` and `profile` must be live handles and `out` a valid pointer.
enum CgStatus cg_welfare(const struct CgInstance *inst,
                         const struct CgProfile *profile,
                         double *out);

// Checks whether `profile` is a Nash equilibrium within relative
// tolerance `rel_tol`.
//
// # Safety
// `inst` and `profile` must be live handles and `out` a valid pointer.
enum CgStatus cg_nash_check(const struct CgInstance *inst,
                            const struct CgProfile *profile,
                            double rel_tol,
                            struct CgNashReport *out);

// Solves the utility maximization problem by dual decomposition.
//
// On success `objective` receives the optimal welfare and, if `rates` is
// non-null, the optimal rates are written to `rates[0..flows]`. When the
// solver stops early the outputs are still written and
// `CG_STATUS_NOT_CONVERGED` is returned.
//
// # Safety
// `inst` must be a live handle, `objective` a valid pointer, and `rates`
// null or pointing to `len` writable doubles.
enum CgStatus cg_dual_solve(const struct CgInstance *inst,
                            double tol,
                            size_t max_iter,
                            double *objective,
                            double *rates,
                            size_t len);

// Closed-form price of anarchy of a serial network with `links` links.
//
// # Safety
// `local_weights` must point to `links` doubles and `out` must be valid.
enum CgStatus cg_serial_poa(size_t links,
                            double gamma,
                            const double *local_weights,
                            double long_weight,
                            double long_b,
                            struct CgSerialPoA *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPGAME_H */
