#ifndef IPQGR_H
#define IPQGR_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IpqgrStatus {
  IPQGR_STATUS_OK = 0,
  IPQGR_STATUS_INVALID_ARGUMENT = 2,
  IPQGR_STATUS_INVALID_STATE = 3,
  IPQGR_STATUS_FORMAT = 4,
  IPQGR_STATUS_CORRUPTION = 5,
  IPQGR_STATUS_UNSUPPORTED_VERSION = 6,
  IPQGR_STATUS_IO = 7,
  IPQGR_STATUS_NULL_POINTER = 8,
  IPQGR_STATUS_PANIC = 9,
} IpqgrStatus;

typedef enum IpqgrThresholdMode {
  IPQGR_THRESHOLD_MODE_NONE = 0,
  IPQGR_THRESHOLD_MODE_AD_ONLY = 1,
  IPQGR_THRESHOLD_MODE_MD_ONLY = 2,
  IPQGR_THRESHOLD_MODE_BOTH = 3,
} IpqgrThresholdMode;

/**
 * Opaque codebook handle. Documents get ids `0, 1, 2, ...` in the order
 * they are passed to build and ingest calls.
 */
typedef struct IpqgrCodebook IpqgrCodebook;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Cluster `count` row-major vectors of length `dim` into `groups` groups of
 * `centroids` centroids. When `codes_out` is non-null it receives
 * `count * groups` code entries.
 *
 * # Safety
 * `embeddings` must point to `count * dim` doubles; `codes_out`, when
 * non-null, to `count * groups` writable integers; `out` must be valid.
 */
enum IpqgrStatus ipqgr_codebook_build(const double *embeddings,
                                      size_t count,
                                      size_t dim,
                                      size_t groups,
                                      size_t centroids,
                                      uint64_t seed,
                                      uint32_t *codes_out,
                                      struct IpqgrCodebook **out);

/**
 * # Safety
 * `cb` must be null or a handle from [`ipqgr_codebook_build`] not yet freed.
 */
void ipqgr_codebook_free(struct IpqgrCodebook *cb);

/**
 * # Safety
 * `cb` must be a live handle, `x` must point to `dim` doubles and
 * `code_out` to `code_len` writable integers.
 */
enum IpqgrStatus ipqgr_codebook_quantize(const struct IpqgrCodebook *cb,
                                         const double *x,
                                         size_t dim,
                                         uint32_t *code_out,
                                         size_t code_len);

/**
 * # Safety
 * `cb` must be a live handle, `code` must point to `code_len` integers and
 * `out` to `dim` writable doubles.
 */
enum IpqgrStatus ipqgr_codebook_reconstruct(const struct IpqgrCodebook *cb,
                                            const uint32_t *code,
                                            size_t code_len,
                                            double *out,
                                            size_t dim);

/**
 * Index `count` new vectors as the next session. Existing codes are never
 * changed. `codes_out`, when non-null, receives `count * groups` entries.
 *
 * # Safety
 * `cb` must be a live handle, `embeddings` must point to `count * dim`
 * doubles and `codes_out`, when non-null, to `count * groups` integers.
 */
enum IpqgrStatus ipqgr_codebook_ingest(struct IpqgrCodebook *cb,
                                       const double *embeddings,
                                       size_t count,
                                       size_t dim,
                                       enum IpqgrThresholdMode mode,
                                       uint64_t seed,
                                       uint32_t *codes_out);

/**
 * # Safety
 * `cb` must be a live handle and `out` valid for writing.
 */
enum IpqgrStatus ipqgr_codebook_num_centroids(const struct IpqgrCodebook *cb,
                                              size_t group,
                                              size_t *out);

/**
 * Number of groups, or 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live handle.
 */
size_t ipqgr_codebook_num_groups(const struct IpqgrCodebook *cb);

/**
 * Sessions ingested so far (0 right after build).
 *
 * # Safety
 * `cb` must be null or a live handle.
 */
uint32_t ipqgr_codebook_session(const struct IpqgrCodebook *cb);

/**
 * Run the full protocol on a dataset directory. `config_json` may be
 * empty for defaults. The JSON report is returned in `report_out` and
 * must be released with [`ipqgr_string_free`].
 *
 * # Safety
 * String arguments must be NUL-terminated; `report_out` must be valid.
 */
enum IpqgrStatus ipqgr_run_experiment(const char *config_json,
                                      const char *data_dir,
                                      char **report_out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void ipqgr_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *ipqgr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ipqgr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IPQGR_H */
