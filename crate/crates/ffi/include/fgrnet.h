#ifndef FGRNET_H
#define FGRNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FgrStatus {
  FGR_STATUS_OK = 0,
  FGR_STATUS_NULL_POINTER = 1,
  FGR_STATUS_INVALID_ARGUMENT = 2,
  FGR_STATUS_SHAPE = 3,
  FGR_STATUS_IO = 4,
  FGR_STATUS_FORMAT = 5,
  FGR_STATUS_NUMERIC = 6,
  FGR_STATUS_PANIC = 7,
} FgrStatus;

typedef enum FgrMethod {
  FGR_METHOD_GRADIENT = 0,
  FGR_METHOD_GRAD_CAM = 1,
  FGR_METHOD_GRAD_CAM_WEIGHTED = 2,
  FGR_METHOD_OCCLUSION = 3,
} FgrMethod;

/*
 Opaque model handle.
 */
typedef struct FgrModel FgrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a checkpoint. On success `*out` owns a handle to release with
 [`fgr_model_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FgrStatus fgr_model_load(const char *path, struct FgrModel **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must come from [`fgr_model_load`] and not be used afterwards.
 */
void fgr_model_free(struct FgrModel *model);

/*
 Input geometry and class count; any output pointer may be null.

 # Safety
 `model` must be a live handle; non-null outputs must be writable.
 */
enum FgrStatus fgr_model_info(const struct FgrModel *model,
                              size_t *channels,
                              size_t *size,
                              size_t *classes);

/*
 Class probabilities of one image. `probs` receives `classes` values;
 `class_out`, if not null, the most probable class.

 # Safety
 `pixels` must hold `pixels_len` readable values and `probs`
 `probs_len` writable ones.
 */
enum FgrStatus fgr_model_predict(const struct FgrModel *model,
                                 const float *pixels,
                                 size_t pixels_len,
                                 float *probs,
                                 size_t probs_len,
                                 size_t *class_out);

/*
 Saliency map of `class` for one image, `size * size` row-major values.
 GradCAM variants are rectified when `rectify` is non-zero; occlusion
 uses a gray baseline and a patch of one eighth of the side.

 # Safety
 As [`fgr_model_predict`], with `map` holding `map_len` writable values.
 */
enum FgrStatus fgr_model_saliency(const struct FgrModel *model,
                                  const float *pixels,
                                  size_t pixels_len,
                                  enum FgrMethod method,
                                  size_t class_index,
                                  int32_t rectify,
                                  double *map,
                                  size_t map_len);

/*
 Message of the last failed call on this thread, empty after a success.
 Valid until the next call on the same thread.
 */
const char *fgr_last_error_message(void);

/*
 NUL-terminated library version.
 */
const char *fgr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGRNET_H */
