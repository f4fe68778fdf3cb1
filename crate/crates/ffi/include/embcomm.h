#ifndef EMBCOMM_H
#define EMBCOMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcKind {
  EC_KIND_ZIPF = 0,
  EC_KIND_EXPONENTIAL = 1,
  EC_KIND_HALF_NORMAL = 2,
} EcKind;

typedef enum EcStatus {
  EC_STATUS_OK = 0,
  EC_STATUS_INVALID_ARGUMENT = 1,
  EC_STATUS_NULL_POINTER = 2,
  EC_STATUS_INFEASIBLE = 3,
  EC_STATUS_INTERNAL = 4,
  EC_STATUS_PANIC = 5,
} EcStatus;

typedef enum EcSearchMethod {
  EC_SEARCH_METHOD_SCAN = 0,
  EC_SEARCH_METHOD_BINARY_SEARCH = 1,
  EC_SEARCH_METHOD_SCAN_FALLBACK = 2,
  EC_SEARCH_METHOD_FIXED = 3,
} EcSearchMethod;

typedef struct EcCachePlan EcCachePlan;

typedef struct EcDistribution EcDistribution;

// Expected communication, in embedding-vector and sample-index units.
typedef struct EcCost {
  double index_cost;
  double embedding_cost;
  double total;
} EcCost;

// Device memory model; `efficiency` is the usable fraction of `memory`.
typedef struct EcDevice {
  uint64_t memory;
  uint64_t activation_params;
  uint64_t embedding_params;
  double efficiency;
} EcDevice;

// Effect of caching the next most probable embedding.
typedef struct EcMarginal {
  uint32_t candidate_id;
  uint64_t batch_size;
  uint64_t next_batch_size;
  double presence_gain;
  double threshold;
  double delta_comm;
  bool recommend;
} EcMarginal;

// Monte Carlo estimate of distinct embeddings per batch.
typedef struct EcUniqueEstimate {
  double mean;
  double std_error;
  uint64_t max;
} EcUniqueEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ec_version(void);

// Message for the most recent failure on this thread, or NULL.
const char *ec_last_error_message(void);

// Default shape parameter for a parametric family.
double ec_default_shape(enum EcKind k);

// Builds a distribution from per-id probabilities summing to 1.
//
// # Safety
// `probs` must point to `len` readable doubles and `out` to a writable
// handle slot.
enum EcStatus ec_distribution_new(const double *probs, size_t len, struct EcDistribution **out);

// Builds a parametric distribution over `size` embeddings.
//
// # Safety
// `out` must point to a writable handle slot.
enum EcStatus ec_distribution_parametric(enum EcKind k,
                                         size_t size,
                                         double shape,
                                         struct EcDistribution **out);

// Builds a distribution from a JSON spec such as
// `{"kind":"zipf","size":1000,"shape":1.0}`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable handle slot.
enum EcStatus ec_distribution_from_json(const char *json, struct EcDistribution **out);

// # Safety
// `dist` must be NULL or a handle from an `ec_distribution_*` constructor
// that has not been freed.
void ec_distribution_free(struct EcDistribution *dist);

// Number of embeddings, or 0 for NULL.
//
// # Safety
// `dist` must be NULL or a live handle.
size_t ec_distribution_len(const struct EcDistribution *dist);

// Probability that an embedding with lookup probability `p` appears in a
// batch of `b` independent lookups.
//
// # Safety
// `out` must be writable.
enum EcStatus ec_batch_presence_prob(double p, uint64_t b, double *out);

// Expected distinct embeddings in a batch of `b` lookups.
//
// # Safety
// `dist` must be a live handle and `out` writable.
enum EcStatus ec_expected_unique(const struct EcDistribution *dist, uint64_t b, double *out);

// Epoch cost without coalescing: one embedding per lookup.
//
// # Safety
// `out` must be writable.
enum EcStatus ec_baseline_epoch_cost(uint64_t num_samples,
                                     uint64_t b,
                                     uint32_t lookups,
                                     double *out);

// Epoch cost with per-batch coalescing and the given ids cached on device.
// Pass `cached_len = 0` for no cache.
//
// # Safety
// `dist` must be a live handle, `cached` must point to `cached_len` ids and
// `out` must be writable.
enum EcStatus ec_cached_epoch_cost(const struct EcDistribution *dist,
                                   uint64_t num_samples,
                                   uint64_t b,
                                   uint32_t lookups,
                                   const uint32_t *cached,
                                   size_t cached_len,
                                   struct EcCost *out);

// Largest batch that fits once `cache_size` embeddings are resident.
//
// # Safety
// `device` must be readable and `out` writable.
enum EcStatus ec_max_batch_size(const struct EcDevice *device, uint64_t cache_size, uint64_t *out);

// Whether caching the most probable uncached embedding lowers the epoch
// cost, given `cache_size` embeddings already cached.
//
// # Safety
// `dist` must be a live handle, `device` readable and `out` writable.
enum EcStatus ec_delta_comm(const struct EcDistribution *dist,
                            const struct EcDevice *device,
                            uint64_t num_samples,
                            uint32_t lookups,
                            uint64_t cache_size,
                            struct EcMarginal *out);

// Chooses the cache size minimizing expected epoch cost.
// `exhaustive` evaluates every size; otherwise a verified binary search.
//
// # Safety
// `dist` must be a live handle, `device` readable and `out` a writable
// handle slot.
enum EcStatus ec_plan(const struct EcDistribution *dist,
                      const struct EcDevice *device,
                      uint64_t num_samples,
                      uint32_t lookups,
                      bool exhaustive,
                      struct EcCachePlan **out);

// # Safety
// `plan` must be NULL or a live handle from [`ec_plan`].
void ec_plan_free(struct EcCachePlan *plan);

// # Safety
// `plan` must be a live handle.
uint64_t ec_plan_cache_size(const struct EcCachePlan *plan);

// # Safety
// `plan` must be a live handle.
uint64_t ec_plan_batch_size(const struct EcCachePlan *plan);

// # Safety
// `plan` must be a live handle.
bool ec_plan_feasible(const struct EcCachePlan *plan);

// # Safety
// `plan` must be a live handle.
enum EcSearchMethod ec_plan_method(const struct EcCachePlan *plan);

// Expected epoch cost of the plan; fails for infeasible plans.
//
// # Safety
// `plan` must be a live handle and `out` writable.
enum EcStatus ec_plan_cost(const struct EcCachePlan *plan, struct EcCost *out);

// Copies up to `capacity` cached ids into `ids` and returns the total
// number of cached ids. Call with `capacity = 0` to size the buffer.
//
// # Safety
// `plan` must be a live handle and `ids` must have room for `capacity` ids.
size_t ec_plan_cached_ids(const struct EcCachePlan *plan, uint32_t *ids, size_t capacity);

// Monte Carlo mean of distinct embeddings per batch over `trials`
// independent batches, reproducible from `seed`.
//
// # Safety
// `dist` must be a live handle and `out` writable.
enum EcStatus ec_measure_unique(const struct EcDistribution *dist,
                                uint64_t b,
                                uint64_t trials,
                                uint64_t seed,
                                struct EcUniqueEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBCOMM_H */
