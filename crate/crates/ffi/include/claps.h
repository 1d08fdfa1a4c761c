#ifndef CLAPS_H
#define CLAPS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  CLAPS_STATUS_OK = 0,
  CLAPS_STATUS_NULL_ARGUMENT = 1,
  CLAPS_STATUS_INVALID_UTF8 = 2,
  CLAPS_STATUS_CONFIG = 3,
  CLAPS_STATUS_ORACLE = 4,
  CLAPS_STATUS_DATA = 5,
  CLAPS_STATUS_PANIC = 6,
} ClapsStatus;

/**
 * Scoring client with its cache and query counters.
 */
typedef struct ClapsSession ClapsSession;

/**
 * Token vocabulary together with its leading-space convention.
 */
typedef struct ClapsVocab ClapsVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Owned by the library.
 */
const char *claps_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *claps_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void claps_string_free(char *s);

/**
 * Loads a vocabulary file. `marker` is `spm`, `bpe`, `flag` or a literal
 * glyph; NULL means `spm`. With `word_tokens_only` nonzero, tokens without
 * the marker are dropped.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
ClapsStatus claps_vocab_load(const char *path,
                             const char *marker,
                             int32_t word_tokens_only,
                             ClapsVocab **out);

/**
 * # Safety
 * `vocab` must be a live handle; `out` must be writable.
 */
ClapsStatus claps_vocab_len(const ClapsVocab *vocab, uintptr_t *out);

/**
 * # Safety
 * `vocab` must be NULL or a handle from [`claps_vocab_load`], not yet freed.
 */
void claps_vocab_free(ClapsVocab *vocab);

/**
 * Opens a scoring session. Exactly one of `endpoint` and `synthetic_spec`
 * must be non-NULL. `cache_dir` may be NULL for an in-memory cache.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
ClapsStatus claps_session_open(const char *endpoint,
                               const char *synthetic_spec,
                               const char *cache_dir,
                               uintptr_t parallelism,
                               ClapsSession **out);

/**
 * Queries issued through this session so far.
 *
 * # Safety
 * `session` must be a live handle; both out pointers must be writable.
 */
ClapsStatus claps_session_queries(const ClapsSession *session,
                                  uint64_t *prompt_evals,
                                  uint64_t *example_forwards);

/**
 * # Safety
 * `session` must be NULL or a handle from [`claps_session_open`], not yet freed.
 */
void claps_session_free(ClapsSession *session);

/**
 * Few-shot reward of a prompt on the validation shots drawn from the train split.
 *
 * # Safety
 * Handles must be live; `tokens` must point to `len` ids (may be NULL when
 * `len` is 0); strings must be NUL-terminated; `out` must be writable.
 */
ClapsStatus claps_prompt_reward(const ClapsSession *session,
                                const ClapsVocab *vocab,
                                const uint32_t *tokens,
                                uintptr_t len,
                                const char *dataset,
                                const char *template_,
                                uintptr_t shots,
                                uint64_t seed,
                                double *out);

/**
 * Accuracy of a prompt on a whole dataset split (`split` NULL means `test`).
 *
 * # Safety
 * As for [`claps_prompt_reward`].
 */
ClapsStatus claps_evaluate(const ClapsSession *session,
                           const ClapsVocab *vocab,
                           const uint32_t *tokens,
                           uintptr_t len,
                           const char *dataset,
                           const char *split,
                           const char *template_,
                           double *out_accuracy);

/**
 * Runs the full pipeline from a TOML config using `session` for scoring.
 * On success `*out_json` receives the outcome as JSON.
 *
 * # Safety
 * `session` must be live; `config_path` NUL-terminated; `out_json` writable.
 */
ClapsStatus claps_run_pipeline(const ClapsSession *session,
                               const char *config_path,
                               char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAPS_H */
