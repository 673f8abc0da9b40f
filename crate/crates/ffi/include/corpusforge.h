#ifndef CORPUSFORGE_H
#define CORPUSFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_OVERSIZE = 3,
  CF_STATUS_MISSING_VECTOR = 4,
  CF_STATUS_INTERNAL = 5,
  CF_STATUS_PANIC = 6,
} CfStatus;

/**
 * Opaque packing result.
 */
typedef struct CfPackPlan CfPackPlan;

/**
 * Opaque similarity result.
 */
typedef struct CfSimilarityReport CfSimilarityReport;

typedef struct CfPackStats {
  size_t count;
  double fill_mean;
  double fill_std;
  double max_len_std;
  double efficiency;
} CfPackStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *cf_last_error(void);

/**
 * Balance-aware greedy knapsack packing.
 *
 * # Safety
 * `lengths` must point to `n` values; `out` must be writable.
 */
enum CfStatus cf_pack_balanced(const uint64_t *lengths,
                               size_t n,
                               uint64_t capacity,
                               size_t delta,
                               struct CfPackPlan **out);

/**
 * Sequential-fill greedy packing.
 *
 * # Safety
 * As for [`cf_pack_balanced`].
 */
enum CfStatus cf_pack_naive_greedy(const uint64_t *lengths,
                                   size_t n,
                                   uint64_t capacity,
                                   struct CfPackPlan **out);

/**
 * Shortest-pack-first packing.
 *
 * # Safety
 * As for [`cf_pack_balanced`].
 */
enum CfStatus cf_pack_spfhp(const uint64_t *lengths,
                            size_t n,
                            uint64_t capacity,
                            struct CfPackPlan **out);

/**
 * Number of knapsacks, or 0 for null.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t cf_pack_plan_len(const struct CfPackPlan *plan);

/**
 * Number of samples in knapsack `k`, or 0 when out of range.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t cf_pack_plan_knapsack_len(const struct CfPackPlan *plan, size_t k);

/**
 * Copy the sample indices of knapsack `k` (in placement order) into
 * `out`, which must hold `cap` entries, at least the knapsack length.
 *
 * # Safety
 * `plan` must be a live handle; `out` must be valid for `cap` writes.
 */
enum CfStatus cf_pack_plan_knapsack(const struct CfPackPlan *plan,
                                    size_t k,
                                    size_t *out,
                                    size_t cap);

/**
 * Trailing empty knapsacks removed from a balanced plan.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t cf_pack_plan_dropped_empty(const struct CfPackPlan *plan);

/**
 * Balance statistics; fails for an empty plan.
 *
 * # Safety
 * `plan` must be a live handle; `out` must be writable.
 */
enum CfStatus cf_pack_plan_stats(const struct CfPackPlan *plan, struct CfPackStats *out);

/**
 * # Safety
 * `plan` must be null or a handle not yet freed.
 */
void cf_pack_plan_free(struct CfPackPlan *plan);

/**
 * Similarity of `n` new samples against `m` pool samples. Vectors are
 * row-major: `new_image` is `n * image_dim` floats, and so on.
 *
 * # Safety
 * Every array must hold the stated number of floats; `out` must be
 * writable.
 */
enum CfStatus cf_similarity_score(const float *new_image,
                                  const float *new_text,
                                  size_t n,
                                  const float *pool_image,
                                  const float *pool_text,
                                  size_t m,
                                  size_t image_dim,
                                  size_t text_dim,
                                  double dedup_threshold,
                                  struct CfSimilarityReport **out);

/**
 * Mean best product, or NaN for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double cf_similarity_report_score(const struct CfSimilarityReport *report);

/**
 * Largest per-sample product, or NaN for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double cf_similarity_report_max_term(const struct CfSimilarityReport *report);

/**
 * Number of new samples covered.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t cf_similarity_report_len(const struct CfSimilarityReport *report);

/**
 * Per new sample: best product, index of the best pool sample, and
 * whether it reaches the dedup threshold. Any output pointer may be null
 * to skip it; non-null ones must hold `cap` >= report length entries.
 *
 * # Safety
 * `report` must be a live handle; outputs valid for `cap` writes.
 */
enum CfStatus cf_similarity_report_terms(const struct CfSimilarityReport *report,
                                         double *products,
                                         size_t *best_index,
                                         bool *duplicate,
                                         size_t cap);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void cf_similarity_report_free(struct CfSimilarityReport *report);

/**
 * Quota under the default rules. `override_quota` is used when
 * `has_override` is true.
 *
 * # Safety
 * `out` must be writable.
 */
enum CfStatus cf_quota_for_source(uint64_t size,
                                  bool has_override,
                                  uint64_t override_quota,
                                  uint64_t *out);

/**
 * Seeded k-means over `n` row-major points of `dim` values. Writes one
 * cluster index per point and the final objective.
 *
 * # Safety
 * `points` must hold `n * dim` values, `assignments` `n` entries;
 * `objective` must be writable.
 */
enum CfStatus cf_kmeans(const double *points,
                        size_t n,
                        size_t dim,
                        size_t k,
                        uint64_t seed,
                        size_t max_iter,
                        double tol,
                        size_t *assignments,
                        double *objective);

/**
 * Token cost of one image of the given size under tiling.
 */
uint64_t cf_image_tokens(uint32_t width, uint32_t height, uint32_t max_tiles);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORPUSFORGE_H */
