#ifndef CHIPLET_MEANFIELD_H
#define CHIPLET_MEANFIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_CONFIG = 3,
  CM_STATUS_CONVERGENCE = 4,
  CM_STATUS_NUMERICAL = 5,
  CM_STATUS_CAPACITY = 6,
  CM_STATUS_IO = 7,
  CM_STATUS_PANIC = 8,
} CmStatus;

/**
 * Which interaction a capacitance kernel describes.
 */
typedef enum CmKernelRole {
  CM_KERNEL_ROLE_CHIPLET_CHIPLET = 0,
  CM_KERNEL_ROLE_CHIPLET_ELECTRODE = 1,
} CmKernelRole;

/**
 * Opaque capacitance kernel.
 */
typedef struct CmCapacitance CmCapacitance;

/**
 * Opaque density flow built from a JSON run config.
 */
typedef struct CmFlow CmFlow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *cm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cm_version(void);

/**
 * Build a kernel from `n` explicit `(a[k], c[k])` terms.
 *
 * # Safety
 * `a` and `c` must point to `n` doubles; `out` must be valid for a write.
 */
enum CmStatus cm_capacitance_new(const double *a,
                                 const double *c,
                                 size_t n,
                                 double delta,
                                 enum CmKernelRole role,
                                 struct CmCapacitance **out);

/**
 * Sample the chiplet-chiplet and chiplet-electrode kernels from one seed.
 *
 * # Safety
 * `cc_out` and `ce_out` must be valid for writes.
 */
enum CmStatus cm_capacitance_sample(uint64_t seed,
                                    size_t terms,
                                    double delta,
                                    struct CmCapacitance **cc_out,
                                    struct CmCapacitance **ce_out);

/**
 * Kernel value at separation `r >= 0` (mm).
 *
 * # Safety
 * `handle` must come from this library and not be freed; `out` must be valid for a write.
 */
enum CmStatus cm_capacitance_value(const struct CmCapacitance *handle, double r, double *out);

/**
 * Number of erf terms in a kernel, or 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or a live handle from this library.
 */
size_t cm_capacitance_term_count(const struct CmCapacitance *handle);

/**
 * Release a kernel. NULL is ignored.
 *
 * # Safety
 * `handle` must be NULL or a handle from this library that is not used afterwards.
 */
void cm_capacitance_free(struct CmCapacitance *handle);

/**
 * Exact 2-Wasserstein distance between two small weighted point clouds.
 *
 * Points are interleaved `x0, y0, x1, y1, ...`; weights must each sum to one.
 * Instances with more than 64 coupling entries return `Capacity`.
 *
 * # Safety
 * `xy_a` holds `2 n_a` doubles and `w_a` holds `n_a` (likewise for `b`); `out` must be valid for a write.
 */
enum CmStatus cm_exact_w2(const double *xy_a,
                          const double *w_a,
                          size_t n_a,
                          const double *xy_b,
                          const double *w_b,
                          size_t n_b,
                          double *out);

/**
 * Entropic transport cost `sum P_ij |x_i - y_j|^2` (a squared distance).
 *
 * # Safety
 * Same layout as [`cm_exact_w2`].
 */
enum CmStatus cm_sinkhorn_w2(const double *xy_a,
                             const double *w_a,
                             size_t n_a,
                             const double *xy_b,
                             const double *w_b,
                             size_t n_b,
                             double eps,
                             double tol,
                             size_t max_iter,
                             double *out);

/**
 * Create a flow from JSON config text (`"{}"` gives the defaults).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum CmStatus cm_flow_new(const char *config_json, struct CmFlow **out);

/**
 * Advance the flow by `steps` steps. On failure the state stays at the last good step.
 *
 * # Safety
 * `handle` must be a live flow handle.
 */
enum CmStatus cm_flow_step(struct CmFlow *handle, size_t steps);

/**
 * Total free energy of the current density.
 *
 * # Safety
 * `handle` must be a live flow handle; `out` must be valid for a write.
 */
enum CmStatus cm_flow_energy(const struct CmFlow *handle, double *out);

/**
 * Current time.
 *
 * # Safety
 * `handle` must be a live flow handle; `out` must be valid for a write.
 */
enum CmStatus cm_flow_time(const struct CmFlow *handle, double *out);

/**
 * Grid shape `nx`, `ny`; the density buffer has `nx * ny` entries, x fastest.
 *
 * # Safety
 * `handle` must be a live flow handle; `nx` and `ny` must be valid for writes.
 */
enum CmStatus cm_flow_grid_shape(const struct CmFlow *handle, size_t *nx, size_t *ny);

/**
 * Copy the nodal density values into `buf`, which must hold exactly `nx * ny` doubles.
 *
 * # Safety
 * `handle` must be a live flow handle; `buf` must be valid for `len` writes.
 */
enum CmStatus cm_flow_density(const struct CmFlow *handle, double *buf, size_t len);

/**
 * Release a flow. NULL is ignored.
 *
 * # Safety
 * `handle` must be NULL or a flow handle that is not used afterwards.
 */
void cm_flow_free(struct CmFlow *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHIPLET_MEANFIELD_H */
