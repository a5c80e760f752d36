#ifndef GOP_REUSE_H
#define GOP_REUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GrStatus {
  GR_STATUS_OK = 0,
  GR_STATUS_NULL_POINTER = 1,
  GR_STATUS_INVALID_ARGUMENT = 2,
  GR_STATUS_MALFORMED_STREAM = 3,
  GR_STATUS_INVALID_STREAM = 4,
  GR_STATUS_PIPELINE = 5,
  GR_STATUS_PANIC = 6,
} GrStatus;

/**
 * Opaque parsed stream.
 */
typedef struct GrStream GrStream;

/**
 * Library-owned byte buffer; release with [`gr_bytes_free`].
 */
typedef struct GrBytes {
  uint8_t *data;
  size_t len;
} GrBytes;

typedef struct GrAnomalyVerdict {
  bool abnormal;
  bool degenerate_sigma;
  double flagged_fraction;
  size_t t1_count;
  size_t t2_count;
  size_t joint_count;
  double mu;
  double sigma;
} GrAnomalyVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL.
 *
 * The pointer stays valid until the next library call on this thread.
 */
const char *gr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gr_version(void);

/**
 * Parses a binary or JSON sidecar.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum GrStatus gr_stream_parse(const uint8_t *data, size_t len, struct GrStream **out);

/**
 * Builds a stream from a synthetic generator spec in JSON.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` must be writable.
 */
enum GrStatus gr_synth_generate(const char *spec_json, struct GrStream **out);

/**
 * Releases a stream. NULL is ignored.
 *
 * # Safety
 * `stream` must come from this library and not be freed twice.
 */
void gr_stream_free(struct GrStream *stream);

/**
 * # Safety
 * `stream` must be a live handle; `out` must be writable.
 */
enum GrStatus gr_stream_frame_count(const struct GrStream *stream, size_t *out);

/**
 * # Safety
 * `stream` must be a live handle; `out` must be writable.
 */
enum GrStatus gr_stream_gop_count(const struct GrStream *stream, size_t *out);

/**
 * # Safety
 * `stream` must be a live handle; `width` and `height` must be writable.
 */
enum GrStatus gr_stream_dims(const struct GrStream *stream, uint32_t *width, uint32_t *height);

/**
 * Serializes to the binary sidecar format.
 *
 * # Safety
 * `stream` must be a live handle; `out` must be writable.
 */
enum GrStatus gr_stream_emit(const struct GrStream *stream, struct GrBytes *out);

/**
 * # Safety
 * `bytes` must come from [`gr_stream_emit`] and not be freed twice.
 */
void gr_bytes_free(struct GrBytes bytes);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void gr_string_free(char *s);

/**
 * Accumulates the GOP holding `frame_index` and runs the abnormal-frame
 * test on that frame with threshold `tau_ab`.
 *
 * # Safety
 * `stream` must be a live handle; `out` must be writable.
 */
enum GrStatus gr_detect_abnormal(const struct GrStream *stream,
                                 uint32_t frame_index,
                                 double tau_ab,
                                 struct GrAnomalyVerdict *out);

/**
 * Runs the pipeline with built-in detectors and returns the report as JSON.
 *
 * `config_json` may be NULL for defaults. Per-frame detector failures are
 * part of the report and do not change the status.
 *
 * # Safety
 * `stream` must be a live handle; `config_json` must be NULL or a
 * NUL-terminated string; `out` must be writable. Free the result with
 * [`gr_string_free`].
 */
enum GrStatus gr_run_pipeline(const struct GrStream *stream, const char *config_json, char **out);

/**
 * Analytic system capability with `p_pb = 1 - p_i`.
 *
 * # Safety
 * `out` must be writable.
 */
enum GrStatus gr_system_capability(double p_i,
                                   double p_ab,
                                   double p_new,
                                   double c_i,
                                   double c_pb,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOP_REUSE_H */
