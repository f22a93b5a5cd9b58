#ifndef CARDCORR_H
#define CARDCORR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CardcorrStatus {
  CARDCORR_STATUS_OK = 0,
  CARDCORR_STATUS_NULL_POINTER = 1,
  CARDCORR_STATUS_INVALID_UTF8 = 2,
  CARDCORR_STATUS_PARSE = 3,
  CARDCORR_STATUS_INVALID_ARGUMENT = 4,
  CARDCORR_STATUS_IO = 5,
  CARDCORR_STATUS_VERSION_MISMATCH = 6,
  CARDCORR_STATUS_DATA = 7,
  CARDCORR_STATUS_PANIC = 8,
} CardcorrStatus;

typedef enum CardcorrSplit {
  CARDCORR_SPLIT_TEST = 0,
  CARDCORR_SPLIT_VALIDATION = 1,
  CARDCORR_SPLIT_ALL = 2,
} CardcorrSplit;

/**
 * A loaded trace corpus.
 */
typedef struct CardcorrCorpus CardcorrCorpus;

/**
 * A trained model artifact.
 */
typedef struct CardcorrModel CardcorrModel;

/**
 * An evaluation report; row 0 is always the native estimate.
 */
typedef struct CardcorrReport CardcorrReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *cardcorr_last_error_message(void);

/**
 * Q-error of one estimate, with both sides floored at 1.
 */
double cardcorr_qerror(double est, double act);

/**
 * Parses a canonical corpus JSON document.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum CardcorrStatus cardcorr_corpus_from_json(const char *json, struct CardcorrCorpus **out);

/**
 * Loads a corpus JSON file or an EXPLAIN manifest directory.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum CardcorrStatus cardcorr_corpus_load(const char *path, struct CardcorrCorpus **out);

/**
 * Generates a synthetic corpus with default settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum CardcorrStatus cardcorr_corpus_generate(size_t n_executions,
                                             uint64_t seed,
                                             struct CardcorrCorpus **out);

/**
 * Number of executions, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t cardcorr_corpus_len(const struct CardcorrCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void cardcorr_corpus_free(struct CardcorrCorpus *corpus);

/**
 * Trains a model. `config_json` holds training settings as JSON (missing
 * keys take defaults) and may be null for all defaults.
 *
 * # Safety
 * `corpus` must be a live handle, `config_json` null or nul-terminated,
 * `out` writable.
 */
enum CardcorrStatus cardcorr_model_train(const struct CardcorrCorpus *corpus,
                                         const char *config_json,
                                         struct CardcorrModel **out);

/**
 * # Safety
 * `path` must be nul-terminated; `out` writable.
 */
enum CardcorrStatus cardcorr_model_load(const char *path, struct CardcorrModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` nul-terminated.
 */
enum CardcorrStatus cardcorr_model_save(const struct CardcorrModel *model, const char *path);

/**
 * The artifact as JSON; free the string with [`cardcorr_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum CardcorrStatus cardcorr_model_to_json(const struct CardcorrModel *model, char **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cardcorr_model_free(struct CardcorrModel *model);

/**
 * Corrects every trace with the model's stored policy and returns the
 * corrected corpus as canonical JSON.
 *
 * # Safety
 * `model` and `corpus` must be live handles; `out` writable.
 */
enum CardcorrStatus cardcorr_predict(const struct CardcorrModel *model,
                                     const struct CardcorrCorpus *corpus,
                                     char **out);

/**
 * Evaluates native estimates and the model on a split.
 *
 * # Safety
 * `model` and `corpus` must be live handles; `out` writable.
 */
enum CardcorrStatus cardcorr_evaluate(const struct CardcorrModel *model,
                                      const struct CardcorrCorpus *corpus,
                                      enum CardcorrSplit split,
                                      struct CardcorrReport **out);

/**
 * Number of rows (native plus models) in the report.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t cardcorr_report_rows(const struct CardcorrReport *report);

/**
 * P90 Q-error of report row `row`.
 *
 * # Safety
 * `report` must be a live handle; `out` writable.
 */
enum CardcorrStatus cardcorr_report_p90(const struct CardcorrReport *report,
                                        size_t row,
                                        double *out);

/**
 * The full report as JSON; free the string with [`cardcorr_string_free`].
 *
 * # Safety
 * `report` must be a live handle; `out` writable.
 */
enum CardcorrStatus cardcorr_report_to_json(const struct CardcorrReport *report, char **out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void cardcorr_report_free(struct CardcorrReport *report);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void cardcorr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARDCORR_H */
