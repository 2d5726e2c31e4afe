#ifndef QSYNTH_H
#define QSYNTH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  QS_STATUS_OK = 0,
  QS_STATUS_NULL_ARGUMENT = 1,
  QS_STATUS_INVALID_UTF8 = 2,
  QS_STATUS_INVALID_INPUT = 3,
  QS_STATUS_PARSE_ERROR = 4,
  QS_STATUS_IO_ERROR = 5,
  QS_STATUS_UNSUPPORTED = 6,
  QS_STATUS_PANIC = 7,
} QsStatus;

/**
 * Loaded retrieval index.
 */
typedef struct QsIndex QsIndex;

/**
 * Whitelist of known framework names.
 */
typedef struct QsWhitelist QsWhitelist;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next qsynth call on the same thread; do not free.
 */
const char *qs_last_error(void);

/**
 * Static library version string; do not free.
 */
const char *qs_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void qs_string_free(char *s);

QsWhitelist *qs_whitelist_bundled(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
QsStatus qs_whitelist_load(const char *path, QsWhitelist **out);

/**
 * # Safety
 * `wl` must be null or a handle from this library, freed once.
 */
void qs_whitelist_free(QsWhitelist *wl);

/**
 * Quantum feature set of `code` as JSON.
 *
 * # Safety
 * `code` must be a NUL-terminated string; `out_json` must be writable.
 */
QsStatus qs_extract_features(const char *code, char **out_json);

/**
 * Framework names used by `code` that the whitelist does not know, as a
 * JSON array.
 *
 * # Safety
 * `code` must be a NUL-terminated string, `wl` a live handle and
 * `out_json` writable.
 */
QsStatus qs_violations(const char *code, const QsWhitelist *wl, char **out_json);

/**
 * # Safety
 * `hyp` and `reference` must be NUL-terminated strings; `out` writable.
 */
QsStatus qs_dataflow_match(const char *hyp, const char *reference, double *out);

/**
 * All CodeBLEU components and their mean as JSON.
 *
 * # Safety
 * `hyp` and `reference` must be NUL-terminated strings; `out_json` writable.
 */
QsStatus qs_codebleu(const char *hyp, const char *reference, char **out_json);

/**
 * # Safety
 * `hyp` and `reference` must be NUL-terminated strings; `out` writable.
 */
QsStatus qs_rouge_l(const char *hyp, const char *reference, double *out);

/**
 * Exact Jaccard similarity of the two sources' token shingle sets.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated strings; `out` writable.
 */
QsStatus qs_shingle_jaccard(const char *a, const char *b, double *out);

/**
 * Near-duplicate removal over `[{"id": .., "code": ..}, ..]`. Writes the
 * outcome (`retained` indices, `duplicates`, `candidate_pairs`) as JSON.
 *
 * # Safety
 * `items_json` must be a NUL-terminated string; `out_json` writable.
 */
QsStatus qs_dedup(const char *items_json, double threshold, uint64_t seed, char **out_json);

/**
 * # Safety
 * `dir` must be a NUL-terminated string; `out` writable.
 */
QsStatus qs_index_load(const char *dir, QsIndex **out);

/**
 * # Safety
 * `idx` must be null or a handle from this library, freed once.
 */
void qs_index_free(QsIndex *idx);

/**
 * # Safety
 * `idx` must be a live handle.
 */
size_t qs_index_len(const QsIndex *idx);

/**
 * Top-`k` hits for a text query as JSON. Only indexes built with the
 * hashed embedding provider can embed text here; others report
 * `Unsupported` and must be queried with [`qs_index_query_vector`].
 *
 * # Safety
 * `idx` must be a live handle, `query` a NUL-terminated string and
 * `out_json` writable.
 */
QsStatus qs_index_query(const QsIndex *idx, const char *query, size_t k, char **out_json);

/**
 * Top-`k` hits for a precomputed embedding of length `dim`, as JSON.
 *
 * # Safety
 * `idx` must be a live handle, `values` must point to `dim` doubles and
 * `out_json` must be writable.
 */
QsStatus qs_index_query_vector(const QsIndex *idx,
                               const double *values,
                               size_t dim,
                               size_t k,
                               char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSYNTH_H */
