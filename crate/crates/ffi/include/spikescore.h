#ifndef SPIKESCORE_H
#define SPIKESCORE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_UTF8 = 2,
  SS_STATUS_INVALID_ARGUMENT = 3,
  SS_STATUS_SEQUENCE_TOO_SHORT = 4,
  SS_STATUS_VARIANCE_UNDEFINED = 5,
  SS_STATUS_NON_POSITIVE_MEAN = 6,
  SS_STATUS_NON_FINITE = 7,
  SS_STATUS_DIMENSION_MISMATCH = 8,
  SS_STATUS_AUROC_UNDEFINED = 9,
  SS_STATUS_OUT_OF_RANGE = 10,
  SS_STATUS_DUPLICATE_ID = 11,
  SS_STATUS_IO = 12,
  SS_STATUS_PARSE = 13,
  SS_STATUS_BUFFER_TOO_SMALL = 14,
  SS_STATUS_PANIC = 15,
  SS_STATUS_OTHER = 16,
} SsStatus;

/*
 Exact cosine retrieval index loaded from JSON.
 */
typedef struct SsIndex SsIndex;

/*
 Trained probe loaded from JSON.
 */
typedef struct SsProbe SsProbe;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failing call on this thread, or NULL if none.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *ss_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/*
 SpikeScore of a per-turn score sequence and the 1-indexed turn attaining it.
 `out_peak_turn` may be NULL.

 # Safety
 `scores` must point to `len` doubles; `out_spike` must be writable.
 */
enum SsStatus ss_spike_score(const double *scores,
                             size_t len,
                             double *out_spike,
                             size_t *out_peak_turn);

/*
 Sample coefficient of variation of a score sequence.

 # Safety
 `scores` must point to `len` doubles; `out` must be writable.
 */
enum SsStatus ss_coefficient_of_variation(const double *scores, size_t len, double *out);

/*
 AUROC of `values` against 0/1 `labels`, ties counted as one half.

 # Safety
 `values` and `labels` must each point to `len` elements; `out` must be writable.
 */
enum SsStatus ss_auroc(const double *values, const uint8_t *labels, size_t len, double *out);

/*
 Lower bound on P(S_h > S_t) from the mean ratio, std ratio and factual CV.

 # Safety
 `out` must be writable.
 */
enum SsStatus ss_cantelli_bound(double delta, double r, double c, double *out);

/*
 Writes 1 when `spike >= lambda`, else 0.

 # Safety
 `out` must be writable.
 */
enum SsStatus ss_decide(double spike, double lambda, uint8_t *out);

/*
 Threshold from factual-only spikes at the requested false-positive rate.

 # Safety
 `spikes` must point to `len` doubles; `out_lambda` must be writable.
 */
enum SsStatus ss_calibrate_threshold(const double *spikes,
                                     size_t len,
                                     double target_fpr,
                                     double *out_lambda);

/*
 Parses a probe from a JSON string.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_probe_from_json(const char *json, struct SsProbe **out);

/*
 Loads a probe file written by `train-probe`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_probe_load(const char *path, struct SsProbe **out);

/*
 Input dimension expected by the probe, or 0 for NULL.

 # Safety
 `probe` must be NULL or a live handle.
 */
size_t ss_probe_input_dim(const struct SsProbe *probe);

/*
 Scores one feature vector.

 # Safety
 `probe` must be a live handle, `x` must point to `len` doubles and `out` must be writable.
 */
enum SsStatus ss_probe_score(const struct SsProbe *probe, const double *x, size_t len, double *out);

/*
 # Safety
 `probe` must be NULL or a handle not yet freed.
 */
void ss_probe_free(struct SsProbe *probe);

/*
 Parses an index from a JSON string.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_index_from_json(const char *json, struct SsIndex **out);

/*
 Loads an index file written by `rag-build`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_index_load(const char *path, struct SsIndex **out);

/*
 Number of documents, or 0 for NULL.

 # Safety
 `index` must be NULL or a live handle.
 */
size_t ss_index_len(const struct SsIndex *index);

/*
 Embedding dimension, or 0 for NULL.

 # Safety
 `index` must be NULL or a live handle.
 */
size_t ss_index_dimension(const struct SsIndex *index);

/*
 Document id at position `i` (id order), or NULL when out of range.
 Owned by the handle.

 # Safety
 `index` must be NULL or a live handle.
 */
const char *ss_index_doc_id(const struct SsIndex *index, size_t i);

/*
 Exact top-`k` documents for a raw query vector. Writes document
 positions (usable with [`ss_index_doc_id`]) and cosine scores, best first.

 # Safety
 `query` must point to `dim` doubles; `out_positions` and `out_scores`
 must each have room for `capacity` elements.
 */
enum SsStatus ss_index_query(const struct SsIndex *index,
                             const double *query,
                             size_t dim,
                             size_t k,
                             size_t *out_positions,
                             double *out_scores,
                             size_t capacity);

/*
 # Safety
 `index` must be NULL or a handle not yet freed.
 */
void ss_index_free(struct SsIndex *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKESCORE_H */
