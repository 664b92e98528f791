#ifndef UPLIFT_H
#define UPLIFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum UpliftStatus {
  UPLIFT_STATUS_OK = 0,
  UPLIFT_STATUS_NULL_POINTER = 1,
  UPLIFT_STATUS_INVALID_ARGUMENT = 2,
  UPLIFT_STATUS_INVALID_SCHEDULE = 3,
  UPLIFT_STATUS_SHAPE_MISMATCH = 4,
  UPLIFT_STATUS_IO = 5,
  UPLIFT_STATUS_FORMAT = 6,
  UPLIFT_STATUS_CHECKSUM = 7,
  UPLIFT_STATUS_SKELETON_MISMATCH = 8,
  UPLIFT_STATUS_NUMERIC = 9,
  // A Rust panic was caught at the boundary.
  UPLIFT_STATUS_INTERNAL = 10,
} UpliftStatus;

// Loaded dataset file.
typedef struct UpliftDataset UpliftDataset;

// Trained or freshly initialised network.
typedef struct UpliftModel UpliftModel;

typedef struct UpliftModelInfo {
  size_t joints;
  size_t window;
  size_t stride_in;
  size_t stride_out;
  size_t n_out;
  size_t parameters;
  double flops_per_forward;
} UpliftModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *uplift_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library from this thread.
const char *uplift_last_error_message(void);

// Load a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum UpliftStatus uplift_model_load(const char *path, struct UpliftModel **out);

// Randomly initialised network from a JSON model configuration.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum UpliftStatus uplift_model_new(const char *config_json,
                                   uint64_t seed,
                                   struct UpliftModel **out);

// Write the model as a checkpoint file.
//
// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum UpliftStatus uplift_model_save(const struct UpliftModel *model, const char *path);

// # Safety
// `model` must be NULL or a handle from this library not yet freed.
void uplift_model_free(struct UpliftModel *model);

// # Safety
// `model` must come from this library; `out` must be writable.
enum UpliftStatus uplift_model_info(const struct UpliftModel *model, struct UpliftModelInfo *out);

// Number of key-frame inputs of one window at `stride_in`.
//
// # Safety
// `model` must come from this library; `out` must be writable.
enum UpliftStatus uplift_model_window_inputs(const struct UpliftModel *model,
                                             size_t stride_in,
                                             size_t *out);

// 3D pose of the center frame of one window whose `n_in` key-frame 2D
// poses are given in temporal order at `stride_in`.
//
// # Safety
// `poses2d` must hold `n_in * joints * 2` values; `out3d` must hold
// `out_len >= joints * 3` values.
enum UpliftStatus uplift_model_predict_center(const struct UpliftModel *model,
                                              size_t stride_in,
                                              const double *poses2d,
                                              size_t n_in,
                                              double *out3d,
                                              size_t out_len);

// Dense 3D poses for a whole 2D sequence: sliding windows at `stride_in`,
// bilinear upsampling between output strides.
//
// # Safety
// `poses2d` must hold `frames * joints * 2` values; `out3d` must hold
// `out_len >= frames * joints * 3` values.
enum UpliftStatus uplift_model_infer_sequence(const struct UpliftModel *model,
                                              size_t stride_in,
                                              const double *poses2d,
                                              size_t frames,
                                              bool flip_tta,
                                              double *out3d,
                                              size_t out_len);

// Load and validate a dataset file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum UpliftStatus uplift_dataset_load(const char *path, struct UpliftDataset **out);

// # Safety
// `dataset` must be NULL or a handle from this library not yet freed.
void uplift_dataset_free(struct UpliftDataset *dataset);

// Sequence count, joint count and frame rate.
//
// # Safety
// `dataset` must come from this library; outputs must be writable.
enum UpliftStatus uplift_dataset_info(const struct UpliftDataset *dataset,
                                      size_t *sequences,
                                      size_t *joints,
                                      double *frame_rate);

// # Safety
// `dataset` must come from this library; `out` must be writable.
enum UpliftStatus uplift_dataset_frames(const struct UpliftDataset *dataset,
                                        size_t sequence,
                                        size_t *out);

// Copy the normalized 2D poses (`frames * joints * 2`) of one sequence.
//
// # Safety
// `dataset` must come from this library; `out` must hold `out_len` values.
enum UpliftStatus uplift_dataset_copy_2d(const struct UpliftDataset *dataset,
                                         size_t sequence,
                                         double *out,
                                         size_t out_len);

// Copy the camera-space 3D poses (`frames * joints * 3`, mm) of one sequence.
//
// # Safety
// `dataset` must come from this library; `out` must hold `out_len` values.
enum UpliftStatus uplift_dataset_copy_3d(const struct UpliftDataset *dataset,
                                         size_t sequence,
                                         double *out,
                                         size_t out_len);

// Mean root-relative per-joint position error over `frames` poses, with
// joint 0 as the root.
//
// # Safety
// `pred` and `gt` must each hold `frames * joints * 3` values; `out` must
// be writable.
enum UpliftStatus uplift_mpjpe(const double *pred,
                               const double *gt,
                               size_t frames,
                               size_t joints,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UPLIFT_H */
