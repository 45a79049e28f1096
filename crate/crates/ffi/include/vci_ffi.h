#ifndef VCI_FFI_H
#define VCI_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define VCI_STATUS_OK 0

/**
 * Invalid argument or configuration (mirrors CLI exit code 2).
 */
#define VCI_STATUS_CONFIG 2

/**
 * Solver failure such as non-convergence (mirrors CLI exit code 3).
 */
#define VCI_STATUS_SOLVER 3

/**
 * File system or parse failure (mirrors CLI exit code 4).
 */
#define VCI_STATUS_IO 4

/**
 * A required pointer argument was null.
 */
#define VCI_STATUS_NULL_POINTER 5

/**
 * A string argument was not valid UTF-8.
 */
#define VCI_STATUS_UTF8 6

/**
 * The library panicked; the call had no effect.
 */
#define VCI_STATUS_PANIC 7

/**
 * Ground metric selector for distance calls.
 */
typedef enum VciMetric {
  VciMetricVoi = 0,
  VciMetricBinder = 1,
} VciMetric;

/**
 * Opaque empirical posterior over partitions.
 */
typedef struct VciPosterior VciPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message from the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread; never free it.
 */
const char *vci_last_error(void);

/**
 * Variation of information between two partitions given as label arrays of
 * length `n`. Writes the distance (in nats) to `out`.
 *
 * # Safety
 * `a` and `b` must point to `n` readable elements; `out` must be writable.
 */
int32_t vci_voi(const uint32_t *a, const uint32_t *b, uintptr_t n, double *out);

/**
 * Binder loss between two partitions given as label arrays of length `n`.
 *
 * # Safety
 * `a` and `b` must point to `n` readable elements; `out` must be writable.
 */
int32_t vci_binder(const uint32_t *a, const uint32_t *b, uintptr_t n, double *out);

/**
 * Entropy (nats) of the cluster-size distribution of one partition.
 *
 * # Safety
 * `labels` must point to `n` readable elements; `out` must be writable.
 */
int32_t vci_partition_entropy(const uint32_t *labels, uintptr_t n, double *out);

/**
 * Reads an empirical posterior file into a new handle written to `out`.
 * The caller owns the handle and must release it with `vci_posterior_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t vci_posterior_read(const char *path, struct VciPosterior **out);

/**
 * Releases a handle returned by `vci_posterior_read`. Null is a no-op.
 *
 * # Safety
 * `posterior` must be a handle from this library, not yet freed.
 */
void vci_posterior_free(struct VciPosterior *posterior);

/**
 * Number of support atoms, written to `out`.
 *
 * # Safety
 * `posterior` must be a live handle; `out` must be writable.
 */
int32_t vci_posterior_num_atoms(const struct VciPosterior *posterior, uintptr_t *out);

/**
 * Number of items each partition atom covers, written to `out`.
 *
 * # Safety
 * `posterior` must be a live handle; `out` must be writable.
 */
int32_t vci_posterior_num_items(const struct VciPosterior *posterior, uintptr_t *out);

/**
 * Copies atom `index` into caller-owned storage: its canonical labels into
 * `labels_out` (length `len`, which must equal the item count) and its
 * weight into `weight_out`.
 *
 * # Safety
 * `posterior` must be a live handle; `labels_out` must hold `len` writable
 * elements; `weight_out` must be writable.
 */
int32_t vci_posterior_atom(const struct VciPosterior *posterior,
                           uintptr_t index,
                           uint32_t *labels_out,
                           uintptr_t len,
                           double *weight_out);

/**
 * Expected ground-metric distance from the posterior to one fixed
 * partition of `n` labels, written to `out`.
 *
 * # Safety
 * `posterior` must be a live handle; `labels` must point to `n` readable
 * elements; `out` must be writable.
 */
int32_t vci_posterior_expected_distance(const struct VciPosterior *posterior,
                                        const uint32_t *labels,
                                        uintptr_t n,
                                        enum VciMetric metric,
                                        double *out);

/**
 * Entropic Wasserstein distance between two posterior files under the
 * chosen ground metric. Writes the bare transport cost to
 * `transport_cost_out` and the regularized objective to `objective_out`.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; both outputs must be writable.
 */
int32_t vci_wasserstein_distance(const char *path_a,
                                 const char *path_b,
                                 enum VciMetric metric,
                                 double epsilon,
                                 double *transport_cost_out,
                                 double *objective_out);

/**
 * Runs the full sharded-consensus pipeline described by a JSON config
 * file; artifacts land in the config's output directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
int32_t vci_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCI_FFI_H */
