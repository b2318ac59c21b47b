#ifndef DASTMIX_H
#define DASTMIX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a `dm_` call.
 */
typedef enum DmStatus {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_POINTER = 1,
  DM_STATUS_INVALID_UTF8 = 2,
  DM_STATUS_IO = 3,
  DM_STATUS_FORMAT = 4,
  DM_STATUS_INVALID_ARGUMENT = 5,
  /**
   * The signal carries no usable tempo (too short, silent, aperiodic).
   */
  DM_STATUS_SIGNAL = 6,
  /**
   * Mixture constraints could not be met.
   */
  DM_STATUS_SYNTHESIS = 7,
  DM_STATUS_SHAPE = 8,
  DM_STATUS_NUMERIC = 9,
  DM_STATUS_PANIC = 10,
} DmStatus;

/**
 * A loaded clip corpus.
 */
typedef struct DmCorpus DmCorpus;

/**
 * A trained classifier head.
 */
typedef struct DmModel DmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dm_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call on this thread that returns a status.
 */
const char *dm_last_error_message(void);

void dm_clear_error(void);

/**
 * # Safety
 * `p` must come from this library with the same `len`, or be NULL.
 */
void dm_f32_free(float *p, size_t len);

/**
 * # Safety
 * `p` must come from this library with the same `len`, or be NULL.
 */
void dm_f64_free(double *p, size_t len);

/**
 * # Safety
 * `p` must be a string returned by this library, or NULL.
 */
void dm_string_free(char *p);

/**
 * Loads a corpus manifest, binning tempi at `bin_width` BPM.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated string; `out` must be writable.
 */
enum DmStatus dm_corpus_open(const char *manifest_path, double bin_width, struct DmCorpus **out);

/**
 * # Safety
 * `corpus` must come from [`dm_corpus_open`] and not be used afterwards.
 */
void dm_corpus_free(struct DmCorpus *corpus);

/**
 * Number of clips; 0 for NULL.
 *
 * # Safety
 * `corpus` must be a live handle or NULL.
 */
size_t dm_corpus_len(const struct DmCorpus *corpus);

/**
 * Clip counts per instrument as a JSON object string; free with
 * [`dm_string_free`].
 *
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum DmStatus dm_corpus_summary_json(const struct DmCorpus *corpus, char **out);

/**
 * Writes `total` mixtures (a multiple of 5) under `out_dir` using
 * `strategy` (`random`, `bpm`, `dastgah`, `dastgah-bpm`), with every other
 * setting at its default.
 *
 * # Safety
 * Pointers must be valid; `out_written` may be NULL.
 */
enum DmStatus dm_synthesize(const struct DmCorpus *corpus,
                            const char *out_dir,
                            const char *strategy,
                            size_t total,
                            uint64_t seed,
                            size_t *out_written);

/**
 * Global tempo of a mono clip, in BPM.
 *
 * # Safety
 * `samples` must point to `len` floats; `out_bpm` must be writable.
 */
enum DmStatus dm_estimate_tempo(const float *samples,
                                size_t len,
                                uint32_t sample_rate,
                                double *out_bpm);

/**
 * Tempo and beat times (seconds). Free the beats with [`dm_f64_free`].
 *
 * # Safety
 * `samples` must point to `len` floats; out-pointers must be writable.
 */
enum DmStatus dm_beat_track(const float *samples,
                            size_t len,
                            uint32_t sample_rate,
                            double *out_bpm,
                            double **out_beats,
                            size_t *out_count);

/**
 * Pitch-preserving stretch; `rate > 1` shortens. Free the output with
 * [`dm_f32_free`].
 *
 * # Safety
 * `samples` must point to `len` floats; out-pointers must be writable.
 */
enum DmStatus dm_time_stretch(const float *samples,
                              size_t len,
                              uint32_t sample_rate,
                              double rate,
                              float **out,
                              size_t *out_len);

/**
 * Moves a clip from `source_bpm` to `target_bpm` and fits it to the
 * canonical segment length. Free the output with [`dm_f32_free`].
 *
 * # Safety
 * `samples` must point to `len` floats; out-pointers must be writable.
 */
enum DmStatus dm_match_tempo(const float *samples,
                             size_t len,
                             uint32_t sample_rate,
                             double source_bpm,
                             double target_bpm,
                             float **out,
                             size_t *out_len);

/**
 * Pseudo-encoder layer stack, row-major `layers x dim`, `dim = n_mels`.
 * Free with [`dm_f64_free`] using `layers * dim`.
 *
 * # Safety
 * `samples` must point to `len` floats; out-pointers must be writable.
 */
enum DmStatus dm_pseudo_encode(const float *samples,
                               size_t len,
                               uint32_t sample_rate,
                               size_t n_mels,
                               double **out,
                               size_t *out_layers,
                               size_t *out_dim);

/**
 * Loads a head checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DmStatus dm_model_load(const char *path, struct DmModel **out);

/**
 * # Safety
 * `m` must come from [`dm_model_load`] and not be used afterwards.
 */
void dm_model_free(struct DmModel *m);

/**
 * Output width of the head; 0 for NULL.
 *
 * # Safety
 * `m` must be a live handle or NULL.
 */
size_t dm_model_num_classes(const struct DmModel *m);

/**
 * Per-class probabilities for a row-major `layers x dim` stack, written to
 * `out_probs`, which must hold `capacity >= dm_model_num_classes` values.
 *
 * # Safety
 * `values` must point to `layers * dim` doubles; `out_probs` to `capacity`.
 */
enum DmStatus dm_model_predict(const struct DmModel *m,
                               const double *values,
                               size_t layers,
                               size_t dim,
                               double *out_probs,
                               size_t capacity);

/**
 * Macro ROC-AUC over classes that have both positives and negatives.
 * `scores` and `labels` are row-major `n x classes`.
 *
 * # Safety
 * Both arrays must hold `n * classes` values; `out` must be writable.
 */
enum DmStatus dm_roc_auc(const double *scores,
                         const uint8_t *labels,
                         size_t n,
                         size_t classes,
                         double *out);

/**
 * Cell-wise accuracy with `score >= threshold` predicting a positive.
 *
 * # Safety
 * Both arrays must hold `n * classes` values; `out` must be writable.
 */
enum DmStatus dm_hamming_accuracy(const double *scores,
                                  const uint8_t *labels,
                                  size_t n,
                                  size_t classes,
                                  double threshold,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DASTMIX_H */
