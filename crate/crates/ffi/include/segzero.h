#ifndef SEGZERO_H
#define SEGZERO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SegzeroStatus {
  SEGZERO_STATUS_OK = 0,
  SEGZERO_STATUS_NULL_POINTER = 1,
  SEGZERO_STATUS_INVALID_UTF8 = 2,
  SEGZERO_STATUS_INVALID_ARGUMENT = 3,
  SEGZERO_STATUS_IO = 4,
  SEGZERO_STATUS_PARSE = 5,
  SEGZERO_STATUS_BACKEND = 6,
  SEGZERO_STATUS_NON_FINITE_LOSS = 7,
  SEGZERO_STATUS_BUFFER_TOO_SMALL = 8,
  SEGZERO_STATUS_PANIC = 9,
} SegzeroStatus;

/**
 * Answer grammar used when parsing and scoring.
 */
typedef enum SegzeroFormat {
  SEGZERO_FORMAT_STRICT = 0,
  SEGZERO_FORMAT_SOFT = 1,
} SegzeroFormat;

/**
 * Opaque list of ground-truth records.
 */
typedef struct SegzeroDataset SegzeroDataset;

/**
 * Opaque trained or freshly initialised policy.
 */
typedef struct SegzeroPolicy SegzeroPolicy;

/**
 * Box corners then the two points, in 840×840 frame pixels.
 */
typedef struct SegzeroPrompt {
  double x1;
  double y1;
  double x2;
  double y2;
  double p1x;
  double p1y;
  double p2x;
  double p2y;
} SegzeroPrompt;

typedef struct SegzeroRewards {
  double thinking_format;
  double seg_format;
  double bbox_iou;
  double bbox_l1;
  double point_l1;
  double total;
} SegzeroRewards;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *segzero_last_error(void);

/**
 * Library version as a static string.
 */
const char *segzero_version(void);

/**
 * Creates a freshly initialised segmentation policy.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SegzeroStatus segzero_policy_new(uint64_t seed, struct SegzeroPolicy **out);

/**
 * Loads a policy checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SegzeroStatus segzero_policy_load(const char *path, struct SegzeroPolicy **out);

/**
 * Writes a policy checkpoint.
 *
 * # Safety
 * `policy` must come from this library; `path` must be NUL-terminated.
 */
enum SegzeroStatus segzero_policy_save(const struct SegzeroPolicy *policy, const char *path);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void segzero_policy_free(struct SegzeroPolicy *policy);

/**
 * Number of trainable parameters, or 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or come from this library.
 */
size_t segzero_policy_num_params(const struct SegzeroPolicy *policy);

/**
 * Generates `n` synthetic records from `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SegzeroStatus segzero_dataset_synth(size_t n, uint64_t seed, struct SegzeroDataset **out);

/**
 * Reads a JSON-lines dataset file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum SegzeroStatus segzero_dataset_load(const char *path, struct SegzeroDataset **out);

/**
 * Number of records, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t segzero_dataset_len(const struct SegzeroDataset *ds);

/**
 * # Safety
 * `ds` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void segzero_dataset_free(struct SegzeroDataset *ds);

/**
 * Argmax response of `policy` to record `index`, copied into `buf` with a
 * terminating NUL. `written` receives the text length without the NUL; on
 * `BUFFER_TOO_SMALL` it holds the length needed.
 *
 * # Safety
 * Handles must come from this library; `buf` must have room for `cap`
 * bytes (it may be null when `cap` is 0); `written` must be writable.
 */
enum SegzeroStatus segzero_policy_respond(const struct SegzeroPolicy *policy,
                                          const struct SegzeroDataset *ds,
                                          size_t index,
                                          char *buf,
                                          size_t cap,
                                          size_t *written);

/**
 * Extracts the prompt from a response. `found` is set to 0 when the
 * response has no parseable answer, in which case `out` is untouched.
 *
 * # Safety
 * `response` must be NUL-terminated; `out` and `found` writable.
 */
enum SegzeroStatus segzero_parse_prompt(const char *response,
                                        enum SegzeroFormat format,
                                        struct SegzeroPrompt *out,
                                        int32_t *found);

/**
 * Scores a response against record `index` with default thresholds.
 *
 * # Safety
 * `response` must be NUL-terminated, `ds` from this library, `out` writable.
 */
enum SegzeroStatus segzero_score(const char *response,
                                 const struct SegzeroDataset *ds,
                                 size_t index,
                                 enum SegzeroFormat format,
                                 struct SegzeroRewards *out);

/**
 * gIoU and cIoU over a synthetic dataset with the synthetic segmenter.
 * A null policy evaluates the ground-truth oracle prompts instead.
 *
 * # Safety
 * Handles must be null (policy only) or come from this library; `giou`
 * and `ciou` must be writable.
 */
enum SegzeroStatus segzero_evaluate(const struct SegzeroPolicy *policy,
                                    const struct SegzeroDataset *ds,
                                    double *giou,
                                    double *ciou);

/**
 * Runs `steps` GRPO steps on `ds` in place, with default settings apart
 * from the seed and learning rate.
 *
 * # Safety
 * Handles must come from this library; `policy` is updated in place.
 */
enum SegzeroStatus segzero_train(struct SegzeroPolicy *policy,
                                 const struct SegzeroDataset *ds,
                                 size_t steps,
                                 uint64_t seed,
                                 double learning_rate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGZERO_H */
