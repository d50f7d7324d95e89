/* C interface of the mrtensor multiresolution tensor compression
 * library. Kept in sync with crates/mrtensor-capi/src/lib.rs by hand;
 * the exported symbols are the source of truth.
 *
 * Conventions:
 *  - Handles are opaque; create/read functions hand out ownership and
 *    the matching *_free releases it. Freeing NULL is a no-op.
 *  - Fallible calls return an MrtStatus code. Out-pointers are written
 *    only on MRT_OK.
 *  - mrt_last_error_message() describes the most recent failure on the
 *    calling thread; the pointer stays valid until the next failing
 *    call on that thread.
 */

#ifndef MRTENSOR_H
#define MRTENSOR_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct MrtTensor MrtTensor;
typedef struct MrtMs MrtMs;

typedef enum MrtStatus {
  MRT_OK = 0,
  MRT_ERR_NULL_ARGUMENT = 1,
  MRT_ERR_UTF8 = 2,
  MRT_ERR_INVALID_ARGUMENT = 3,
  MRT_ERR_SHAPE = 4,
  MRT_ERR_DIVISIBILITY = 5,
  MRT_ERR_ELEMENT_LIMIT = 6,
  MRT_ERR_RANKS = 7,
  MRT_ERR_FORMAT = 8,
  MRT_ERR_IO = 9,
  MRT_ERR_CONTAINER = 10,
  MRT_ERR_UNSUPPORTED = 11,
  MRT_ERR_INTERNAL = 99
} MrtStatus;

typedef struct MrtCompressOptions {
  /* 0 = tensor train, 1 = canonical. */
  int32_t base_format;
  uint64_t batch_size;
  /* Negative: use the largest level count the shape divides. */
  int64_t levels;
  /* Per-level ranks, coarsest first (length ranks_len), or NULL to use
   * uniform_rank on every level. */
  const uint64_t *ranks;
  uint64_t ranks_len;
  uint64_t uniform_rank;
  uint64_t max_iter;
  uint64_t seed;
  /* Nonzero selects the scale-by-scale restructured sweep order. */
  uint8_t restructured;
} MrtCompressOptions;

const char *mrt_last_error_message(void);

/* Dense tensors (row-major f64, shape of `order` mode sizes). */
int32_t mrt_tensor_create(uint64_t order, const uint64_t *shape,
                          const double *data, MrtTensor **out);
void mrt_tensor_free(MrtTensor *t);
int32_t mrt_tensor_order(const MrtTensor *t, uint64_t *out);
int32_t mrt_tensor_shape(const MrtTensor *t, uint64_t *out);
int32_t mrt_tensor_len(const MrtTensor *t, uint64_t *out);
int32_t mrt_tensor_copy_data(const MrtTensor *t, double *out, uint64_t len);
int32_t mrt_tensor_read(const char *path, MrtTensor **out);   /* MRT0 */
int32_t mrt_tensor_write(const MrtTensor *t, const char *path);

/* Multiresolution tensors. */
int32_t mrt_ms_compress(const MrtTensor *t, const MrtCompressOptions *opts,
                        MrtMs **out);
void mrt_ms_free(MrtMs *ms);
int32_t mrt_ms_reconstruct(const MrtMs *ms, MrtTensor **out);
int32_t mrt_ms_read(const char *path, MrtMs **out);           /* MRTC */
int32_t mrt_ms_write(const MrtMs *ms, const char *path);
int32_t mrt_ms_levels(const MrtMs *ms, uint64_t *out);
int32_t mrt_ms_parameter_count(const MrtMs *ms, uint64_t *out);
int32_t mrt_ms_compression_ratio(const MrtMs *ms, double *out);
int32_t mrt_ms_stability_margin(const MrtMs *ms, double *out);
int32_t mrt_ms_relative_error(const MrtMs *ms, const MrtTensor *original,
                              double *out);

#ifdef __cplusplus
}
#endif

#endif /* MRTENSOR_H */
