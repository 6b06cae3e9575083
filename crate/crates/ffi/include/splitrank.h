#ifndef SPLITRANK_H
#define SPLITRANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_POINTER = 1,
  SR_STATUS_INVALID_UTF8 = 2,
  SR_STATUS_INPUT = 3,
  SR_STATUS_FORMAT = 4,
  SR_STATUS_VERSION = 5,
  SR_STATUS_CONFIG = 6,
  SR_STATUS_IO = 7,
  SR_STATUS_BACKEND = 8,
  SR_STATUS_BUILD = 9,
  SR_STATUS_JSON = 10,
  SR_STATUS_TRAINING = 11,
  SR_STATUS_BUFFER_TOO_SMALL = 12,
  SR_STATUS_PANIC = 13,
} SrStatus;

// Query-side encoder: embedding dictionary plus query-arm bundle.
typedef struct SrEncoder SrEncoder;

// One loaded searcher shard with its cross bundle.
typedef struct SrShard SrShard;

// One scored member.
typedef struct SrHit {
  uint64_t uid;
  float score;
  float semantic;
  float term_match;
} SrHit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a
// successful call. Valid until the next call on the same thread.
const char *sr_last_error_message(void);

// Static, NUL-terminated name of a status code.
const char *sr_status_name(enum SrStatus status);

// Load an encoder from an embedding dictionary file and a query-arm bundle
// directory. On success `*out` owns a handle for [`sr_encoder_free`].
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum SrStatus sr_encoder_open(const char *dict_path,
                              const char *query_arm_dir,
                              struct SrEncoder **out);

// # Safety
// `encoder` must be NULL or a handle from [`sr_encoder_open`] not yet freed.
void sr_encoder_free(struct SrEncoder *encoder);

// Length of the query representation; 0 for NULL.
//
// # Safety
// `encoder` must be NULL or a live handle.
size_t sr_encoder_dim(const struct SrEncoder *encoder);

// Model version id the encoder was built for; 0 for NULL.
//
// # Safety
// `encoder` must be NULL or a live handle.
uint16_t sr_encoder_version(const struct SrEncoder *encoder);

// Encode a query. `facets_json` is NULL or a JSON object mapping facet
// names to string arrays, e.g. `{"skill":["java"]}`. Writes `dim` floats to
// `out` (capacity `out_cap`) and, when `out_misses` is not NULL, the number
// of query tokens the dictionary could not resolve.
//
// # Safety
// `encoder` must be a live handle; `out` must hold `out_cap` floats.
enum SrStatus sr_encoder_encode(const struct SrEncoder *encoder,
                                const char *text,
                                const char *facets_json,
                                float *out,
                                size_t out_cap,
                                size_t *out_misses);

// Load one shard directory together with its cross bundle directory.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum SrStatus sr_shard_open(const char *shard_dir, const char *cross_dir, struct SrShard **out);

// # Safety
// `shard` must be NULL or a handle from [`sr_shard_open`] not yet freed.
void sr_shard_free(struct SrShard *shard);

// Number of members in the shard; 0 for NULL.
//
// # Safety
// `shard` must be NULL or a live handle.
size_t sr_shard_len(const struct SrShard *shard);

// Retrieve members holding any of `terms_json` (a JSON array of
// `[field_id, token]` pairs), score them against `qrep` and write the top
// `k` hits, best first. `hits_cap` must be at least `k`; `*out_count`
// receives the number of hits written.
//
// # Safety
// `shard` must be a live handle, `qrep` must hold `qrep_len` floats and
// `hits` must hold `hits_cap` entries.
enum SrStatus sr_shard_search(const struct SrShard *shard,
                              uint16_t version,
                              const float *qrep,
                              size_t qrep_len,
                              const char *terms_json,
                              size_t max_candidates,
                              size_t k,
                              float w_sem,
                              float w_term,
                              struct SrHit *hits,
                              size_t hits_cap,
                              size_t *out_count);

// Symmetric int8 quantization of `n` floats: writes `n` values and the
// scale. Non-finite input is an `Input` error.
//
// # Safety
// `v` must hold `n` floats and `out_values` `n` bytes.
enum SrStatus sr_quantize(const float *v, size_t n, int8_t *out_values, float *out_scale);

// Inverse of [`sr_quantize`]: `out[i] = values[i] * scale`.
//
// # Safety
// `values` must hold `n` bytes and `out` `n` floats.
enum SrStatus sr_dequantize(const int8_t *values, size_t n, float scale, float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLITRANK_H */
