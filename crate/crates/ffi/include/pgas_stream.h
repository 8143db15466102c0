#ifndef PGAS_STREAM_H
#define PGAS_STREAM_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define PS_DIST_BLOCK 0

#define PS_DIST_CYCLIC 1

#define PS_DIST_BLOCK_CYCLIC 2

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_GRID_PID_MISMATCH = 3,
  PS_STATUS_DUPLICATE_PID = 4,
  PS_STATUS_OVERLAP_ON_NON_BLOCK = 5,
  PS_STATUS_RANK_MISMATCH = 6,
  PS_STATUS_EMPTY_GRID = 7,
  PS_STATUS_ZERO_BLOCK_SIZE = 8,
  PS_STATUS_UNKNOWN_PID = 9,
  PS_STATUS_DIMENSION_TOO_SMALL = 10,
  PS_STATUS_INDEX_OUT_OF_BOUNDS = 11,
  PS_STATUS_NOT_LOCAL = 12,
  PS_STATUS_LOCAL_INDEX_OUT_OF_BOUNDS = 13,
  PS_STATUS_ALLOCATION_FAILURE = 14,
  PS_STATUS_PID_MISMATCH = 15,
  PS_STATUS_MALFORMED_HALO = 16,
  PS_STATUS_ZERO_TRIALS = 17,
  PS_STATUS_ZERO_ELEMENTS = 18,
  PS_STATUS_BAD_Q = 19,
  PS_STATUS_ZERO_TIMEOUT = 20,
  PS_STATUS_OVERFLOW = 21,
  PS_STATUS_RANK_OUT_OF_RANGE = 22,
  PS_STATUS_LENGTH_MISMATCH = 23,
  PS_STATUS_ZERO_TIME = 24,
  PS_STATUS_RUNTIME = 25,
  PS_STATUS_PANIC = 26,
} PsStatus;

/*
 Opaque distributed array handle, one pid's piece.
 */
typedef struct PsDArray PsDArray;

/*
 Opaque map handle.
 */
typedef struct PsMap PsMap;

/*
 Distribution of one dimension. `block_size` is read for block-cyclic only.
 */
typedef struct PsDist {
  uint32_t kind;
  size_t block_size;
} PsDist;

/*
 Inputs of one STREAM run over a `[1, np]` row map.
 */
typedef struct PsStreamParams {
  size_t np;
  size_t threads;
  size_t n_per_proc;
  size_t n_trials;
  double q;
  struct PsDist dist;
  size_t overlap;
} PsStreamParams;

/*
 One pid's measurements. Kernel arrays are ordered copy, scale, add, triad.
 */
typedef struct PsRankResult {
  size_t pid;
  size_t local_elements;
  size_t threads;
  size_t n_trials;
  double times[4];
  double bandwidths[4];
  bool validated;
  double max_rel_err[3];
  double tolerance;
  double checksum;
} PsRankResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Name of a status code, or "Unknown". The string is static.
 */
const char *ps_status_name(int status);

/*
 Message of the last failure on this thread. Valid until the next failing call.
 */
const char *ps_last_error_message(void);

/*
 Prefix of the environment variables the library reads.
 */
const char *ps_env_prefix(void);

/*
 True: [`ps_darray_local`] hands out the array's own storage, not a copy.
 */
bool ps_local_is_zero_copy(void);

/*
 Builds a map from a grid, one distribution per dimension, the pid list in
 row-major slot order and per-dimension overlap.

 # Safety
 Each pointer must reference the stated number of elements; `out` must be writable.
 */
enum PsStatus ps_map_new(const size_t *grid,
                         size_t grid_len,
                         const struct PsDist *dists,
                         size_t dists_len,
                         const size_t *pids,
                         size_t pids_len,
                         const size_t *overlap,
                         size_t overlap_len,
                         struct PsMap **out);

/*
 `[1, np]` grid with pids `0..np` and `dist` along the second dimension.

 # Safety
 `out` must be writable.
 */
enum PsStatus ps_map_row(size_t np, struct PsDist dist, size_t overlap, struct PsMap **out);

/*
 # Safety
 `map` must come from this library and not be freed twice. Null is ignored.
 */
void ps_map_free(struct PsMap *map);

/*
 # Safety
 `map` must be a live handle and `out` writable.
 */
enum PsStatus ps_map_np(const struct PsMap *map, size_t *out);

/*
 Pid owning global `index` of an array with global `dims`.

 # Safety
 `dims` and `index` point to two elements each; `out` is writable.
 */
enum PsStatus ps_map_owner(const struct PsMap *map,
                           const size_t *dims,
                           const size_t *index,
                           size_t *out);

/*
 Local position of global `index` on `pid`, owned or halo.

 # Safety
 `dims`, `index` and `out` point to two elements each.
 */
enum PsStatus ps_map_global_to_local(const struct PsMap *map,
                                     const size_t *dims,
                                     size_t pid,
                                     const size_t *index,
                                     size_t *out);

/*
 Global index of local position `local` on `pid`.

 # Safety
 `dims`, `local` and `out` point to two elements each.
 */
enum PsStatus ps_map_local_to_global(const struct PsMap *map,
                                     const size_t *dims,
                                     size_t pid,
                                     const size_t *local,
                                     size_t *out);

/*
 Grid coordinates of `pid`.

 # Safety
 `out` points to two writable elements.
 */
enum PsStatus ps_map_grid_coords(const struct PsMap *map, size_t pid, size_t *out);

/*
 Shape of the block `pid` owns, halo excluded.

 # Safety
 `dims` and `out` point to two elements each.
 */
enum PsStatus ps_map_local_shape(const struct PsMap *map,
                                 const size_t *dims,
                                 size_t pid,
                                 size_t *out);

/*
 Zero-filled `rows x cols` array as seen by `pid`. The map is copied.

 # Safety
 `map` must be a live handle and `out` writable.
 */
enum PsStatus ps_zeros(size_t rows,
                       size_t cols,
                       const struct PsMap *map,
                       size_t pid,
                       struct PsDArray **out);

/*
 # Safety
 `arr` must come from this library and not be freed twice. Null is ignored.
 */
void ps_darray_free(struct PsDArray *arr);

/*
 Owned elements of the local piece, row-major, without copying. The pointer
 stays valid until the array is freed.

 # Safety
 `arr` must be a live handle; `data` and `len` must be writable.
 */
enum PsStatus ps_darray_local(struct PsDArray *arr, double **data, size_t *len);

/*
 Local shape of the owned block.

 # Safety
 `arr` must be a live handle; `out` points to two writable elements.
 */
enum PsStatus ps_darray_local_shape(const struct PsDArray *arr, size_t *out);

/*
 Sets every local element, halo included.

 # Safety
 `arr` must be a live handle.
 */
enum PsStatus ps_darray_fill(struct PsDArray *arr, double value);

/*
 Reads global `index` from the local piece.

 # Safety
 `index` points to two elements; `out` is writable.
 */
enum PsStatus ps_darray_get(const struct PsDArray *arr, const size_t *index, double *out);

/*
 Writes global `index` in the local piece.

 # Safety
 `index` points to two elements.
 */
enum PsStatus ps_darray_set(struct PsDArray *arr, const size_t *index, double value);

/*
 Correctly rounded sum of the owned elements.

 # Safety
 `arr` must be a live handle and `out` writable.
 */
enum PsStatus ps_darray_checksum(const struct PsDArray *arr, double *out);

/*
 Single process, one thread, 2^24 elements, Nt = 10, block, no overlap.
 */
struct PsStreamParams ps_stream_params_default(void);

/*
 Runs the four kernels on `pid`'s piece, validates and computes bandwidths,
 exactly as a benchmark worker does but without communication or pinning.

 # Safety
 `params` must be readable and `out` writable.
 */
enum PsStatus ps_run_stream(const struct PsStreamParams *params,
                            size_t pid,
                            struct PsRankResult *out);

/*
 Bytes one trial of kernel `k` (0 copy .. 3 triad) moves per element, or 0.
 */
uint64_t ps_kernel_bytes_per_element(int k);

/*
 max(1e-10, 20 Nt eps), the relative tolerance validation uses.
 */
double ps_tolerance(size_t n_trials);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGAS_STREAM_H */
