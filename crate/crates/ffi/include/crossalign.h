#ifndef CROSSALIGN_H
#define CROSSALIGN_H

/* Generated by cbindgen from the crossalign-ffi sources. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CaStatus {
  CA_STATUS_OK = 0,
  CA_STATUS_NULL_POINTER = 1,
  CA_STATUS_INVALID_ARGUMENT = 2,
  CA_STATUS_IO = 3,
  CA_STATUS_PARSE = 4,
  CA_STATUS_DIMENSION_MISMATCH = 5,
  CA_STATUS_UNKNOWN_TOKEN = 6,
  CA_STATUS_EMPTY = 7,
  CA_STATUS_DIVERGED = 8,
  CA_STATUS_INTERNAL = 9,
} CaStatus;

typedef struct CaDictionary CaDictionary;

typedef struct CaMap CaMap;

typedef struct CaSpace CaSpace;

typedef struct CaAdversarialConfig {
  size_t epochs;
  size_t steps_per_epoch;
  size_t batch_size;
  size_t dis_steps;
  double lr_discriminator;
  double lr_mapping;
  double label_smoothing;
  double input_dropout;
  double ortho_beta;
  size_t hidden;
  /**
   * Non-zero samples batches by word frequency.
   */
  uint8_t frequency_sampling;
  size_t selection_top;
  size_t csls_k;
  uint64_t seed;
} CaAdversarialConfig;

typedef struct CaRefineConfig {
  size_t dict_max_rank;
  size_t csls_k;
  size_t iterations;
  /**
   * Non-zero for the orthogonal solve.
   */
  uint8_t orthogonal;
} CaRefineConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *ca_last_error_message(void);

/**
 * Loads a space in text embedding format.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CaStatus ca_space_load(const char *path, struct CaSpace **out);

/**
 * Builds a space from `n` NUL-terminated tokens and an `n x dim` row-major array.
 *
 * # Safety
 * `tokens` must hold `n` valid strings and `data` `n * dim` values.
 */
enum CaStatus ca_space_from_rows(const char *const *tokens,
                                 const double *data,
                                 size_t n,
                                 size_t dim,
                                 struct CaSpace **out);

/**
 * Attaches word counts from a `token count` file.
 *
 * # Safety
 * `space` must come from this library; `path` must be a NUL-terminated string.
 */
enum CaStatus ca_space_attach_frequencies(struct CaSpace *space, const char *path);

/**
 * # Safety
 * `space` must come from this library; `path` must be a NUL-terminated string.
 */
enum CaStatus ca_space_save(const struct CaSpace *space, const char *path);

/**
 * Writes a new, unit-normalized copy of `space` to `out`.
 *
 * # Safety
 * `space` must come from this library and `out` be a valid pointer.
 */
enum CaStatus ca_space_normalize(const struct CaSpace *space, struct CaSpace **out);

/**
 * Number of words, or 0 for a null handle.
 *
 * # Safety
 * `space` must be null or come from this library.
 */
size_t ca_space_len(const struct CaSpace *space);

/**
 * Vector dimension, or 0 for a null handle.
 *
 * # Safety
 * `space` must be null or come from this library.
 */
size_t ca_space_dim(const struct CaSpace *space);

/**
 * Token of `row`, owned by the space; null when out of range.
 *
 * # Safety
 * `space` must be null or come from this library.
 */
const char *ca_space_token(const struct CaSpace *space, size_t row);

/**
 * Row of `token`, written to `out_row`.
 *
 * # Safety
 * `space` must come from this library, `token` be NUL-terminated and `out_row` valid.
 */
enum CaStatus ca_space_index_of(const struct CaSpace *space, const char *token, size_t *out_row);

/**
 * # Safety
 * `space` must be null or come from this library, and not be used afterwards.
 */
void ca_space_free(struct CaSpace *space);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CaStatus ca_map_load(const char *path, struct CaMap **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum CaStatus ca_map_identity(size_t dim, struct CaMap **out);

/**
 * # Safety
 * `map` must come from this library; `path` must be a NUL-terminated string.
 */
enum CaStatus ca_map_save(const struct CaMap *map, const char *path);

/**
 * Output (`rows`) and input (`cols`) dimensions of the map.
 *
 * # Safety
 * `map` must come from this library; `rows` and `cols` must be valid pointers.
 */
enum CaStatus ca_map_dims(const struct CaMap *map, size_t *rows, size_t *cols);

/**
 * Copies the matrix row-major into `buf`, which must hold `rows * cols` values.
 *
 * # Safety
 * `map` must come from this library; `buf` must hold `len` values.
 */
enum CaStatus ca_map_copy_matrix(const struct CaMap *map, double *buf, size_t len);

/**
 * # Safety
 * `map` must be null or come from this library, and not be used afterwards.
 */
void ca_map_free(struct CaMap *map);

/**
 * Loads a `source target` pair-per-line dictionary.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CaStatus ca_dictionary_load(const char *path, struct CaDictionary **out);

/**
 * Number of pairs, or 0 for a null handle.
 *
 * # Safety
 * `dict` must be null or come from this library.
 */
size_t ca_dictionary_len(const struct CaDictionary *dict);

/**
 * # Safety
 * `dict` must be null or come from this library, and not be used afterwards.
 */
void ca_dictionary_free(struct CaDictionary *dict);

/**
 * Library defaults: learning rates 1e-3 and orthogonality beta 1e-3.
 */
struct CaAdversarialConfig ca_adversarial_config_default(void);

/**
 * Settings that converge on vocabularies of a few thousand words.
 */
struct CaAdversarialConfig ca_adversarial_config_desk_scale(void);

struct CaRefineConfig ca_refine_config_default(void);

/**
 * Adversarial training; writes the selected map to `out`. On divergence the
 * last finite checkpoint is still written and `CA_STATUS_DIVERGED` returned.
 *
 * # Safety
 * Handles must come from this library; `config` and `out` must be valid pointers.
 */
enum CaStatus ca_align_adversarial(const struct CaSpace *source,
                                   const struct CaSpace *target,
                                   const struct CaAdversarialConfig *config,
                                   struct CaMap **out);

/**
 * # Safety
 * Handles must come from this library; `config` and `out` must be valid pointers.
 */
enum CaStatus ca_refine(const struct CaSpace *source,
                        const struct CaSpace *target,
                        const struct CaMap *initial,
                        const struct CaRefineConfig *config,
                        struct CaMap **out);

/**
 * Solves the map from a known dictionary; `orthogonal` non-zero for Procrustes.
 *
 * # Safety
 * Handles must come from this library; `out` must be a valid pointer.
 */
enum CaStatus ca_solve_supervised(const struct CaSpace *source,
                                  const struct CaSpace *target,
                                  const struct CaDictionary *dict,
                                  uint8_t orthogonal,
                                  struct CaMap **out);

/**
 * CSLS top-`k` target rows for source row `query_row`. Writes up to `k`
 * indices and scores and the number written to `out_count`. With
 * `k_neighbors` 0 plain cosine is used.
 *
 * # Safety
 * Handles must come from this library; the output arrays must hold `k` values.
 */
enum CaStatus ca_csls_topk(const struct CaSpace *source,
                           const struct CaSpace *target,
                           const struct CaMap *map,
                           size_t query_row,
                           size_t k_neighbors,
                           size_t k,
                           size_t *out_indices,
                           double *out_scores,
                           size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSALIGN_H */
