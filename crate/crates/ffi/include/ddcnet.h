#ifndef DDCNET_H
#define DDCNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum DdcStatus {
  DDC_STATUS_OK = 0,
  DDC_STATUS_NULL_ARGUMENT = 1,
  DDC_STATUS_USAGE = 2,
  DDC_STATUS_DATA = 3,
  DDC_STATUS_NUMERIC = 4,
  DDC_STATUS_PANIC = 5,
} DdcStatus;

/*
 Opaque model handle.
 */
typedef struct DdcModel DdcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or an empty string.
 The pointer stays valid until the next call into this library.
 */
const char *ddc_last_error(void);

/*
 Creates the canonical architecture with He-initialized weights.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum DdcStatus ddc_model_new_default(uint64_t seed, struct DdcModel **out);

/*
 Loads a `DDCM` checkpoint file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid handle pointer.
 */
enum DdcStatus ddc_model_load(const char *path, struct DdcModel **out);

/*
 Writes the model as a `DDCM` checkpoint file.

 # Safety
 `model` must come from this library; `path` must be NUL-terminated.
 */
enum DdcStatus ddc_model_save(const struct DdcModel *model, const char *path);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must be null or a handle not already freed.
 */
void ddc_model_free(struct DdcModel *model);

/*
 Number of trainable scalars, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t ddc_model_param_count(const struct DdcModel *model);

/*
 Full-resolution flow for one frame pair. `h` and `w` must be multiples
 of 4; `flow_out` receives `2 * h * w` floats.

 # Safety
 `frame1` and `frame2` must point to `3 * h * w` floats and `flow_out` to
 `2 * h * w` writable floats.
 */
enum DdcStatus ddc_model_infer(const struct DdcModel *model,
                               const float *frame1,
                               const float *frame2,
                               size_t h,
                               size_t w,
                               float *flow_out);

/*
 Reads the dimensions of a `.flo` file.

 # Safety
 `path` must be NUL-terminated; `h` and `w` must be writable.
 */
enum DdcStatus ddc_flo_dims(const char *path, size_t *h, size_t *w);

/*
 Reads a `.flo` file into `uv_out`, which must hold exactly `len` floats
 (`2 * h * w`; see [`ddc_flo_dims`]). Unknown-flow markers are copied as stored.

 # Safety
 `path` must be NUL-terminated and `uv_out` must point to `len` writable floats.
 */
enum DdcStatus ddc_flo_read(const char *path, float *uv_out, size_t len);

/*
 Writes `2 * h * w` interleaved floats as a `.flo` file.

 # Safety
 `path` must be NUL-terminated and `uv` must point to `2 * h * w` floats.
 */
enum DdcStatus ddc_flo_write(const char *path, const float *uv, size_t h, size_t w);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDCNET_H */
