#ifndef DEOCC_H
#define DEOCC_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum DeoccStatus {
  DEOCC_STATUS_OK = 0,
  // A required pointer argument was null.
  DEOCC_STATUS_NULL_ARGUMENT = 1,
  // An argument was out of range, e.g. image size or a non-UTF-8 path.
  DEOCC_STATUS_INVALID_ARGUMENT = 2,
  // Configuration problem, including checkpoint version mismatches.
  DEOCC_STATUS_CONFIG = 3,
  // Unreadable or malformed input data.
  DEOCC_STATUS_DATA = 4,
  // The checkpoint failed its integrity check.
  DEOCC_STATUS_CHECKPOINT = 5,
  // Tensor or image shapes disagree.
  DEOCC_STATUS_SHAPE = 6,
  // Non-finite values during computation.
  DEOCC_STATUS_NUMERIC = 7,
  // Stage ordering violation.
  DEOCC_STATUS_STAGE_ORDER = 8,
  // A Rust panic was caught at the boundary.
  DEOCC_STATUS_INTERNAL = 9,
} DeoccStatus;

// Training stage recorded in a checkpoint.
typedef enum DeoccStage {
  DEOCC_STAGE_PRETRAIN = 0,
  DEOCC_STAGE_STAGE1 = 1,
  DEOCC_STAGE_STAGE2 = 2,
} DeoccStage;

// Opaque generator loaded from a checkpoint.
typedef struct DeoccModel DeoccModel;

typedef struct DeoccModelInfo {
  // Required input width and height in pixels.
  uint32_t resolution;
  uint32_t base_width;
  uint32_t latent_dim;
  enum DeoccStage stage;
  uint64_t step;
  // True when attention fusion is trained and used by default.
  bool attention;
} DeoccModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *deocc_version(void);

// Message for the most recent failed call on this thread, or null after a
// successful call. Valid until the next call into the library on this thread.
const char *deocc_last_error_message(void);

// Static name of a status code.
const char *deocc_status_name(enum DeoccStatus status);

// Loads the generator from a checkpoint file. On success `*out` owns a model
// that must be released with `deocc_model_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum DeoccStatus deocc_model_load(const char *path, struct DeoccModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from `deocc_model_load` and not be used afterwards.
void deocc_model_free(struct DeoccModel *model);

// # Safety
// `model` must be a live model and `out` writable.
enum DeoccStatus deocc_model_info(const struct DeoccModel *model, struct DeoccModelInfo *out);

// Reconstructs the occluded region of `rgb` and writes the composited result
// to `out_rgb`; unmasked pixels are copied from the input unchanged. Width and
// height must equal the model resolution. Attention fusion is applied when
// `use_attention` is set and the checkpoint comes from stage 2.
//
// # Safety
// `rgb` and `out_rgb` must each hold `width * height * 3` bytes and `mask`
// `width * height` bytes; `out_rgb` may not overlap the inputs.
enum DeoccStatus deocc_reconstruct(const struct DeoccModel *model,
                                   const uint8_t *rgb,
                                   const uint8_t *mask,
                                   uint32_t width,
                                   uint32_t height,
                                   bool use_attention,
                                   uint8_t *out_rgb);

// Mean SSIM over the three channels of two RGB images.
//
// # Safety
// `a` and `b` must each hold `width * height * 3` bytes; `out` must be writable.
enum DeoccStatus deocc_ssim(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t width,
                            uint32_t height,
                            double *out);

// PSNR in dB for unit dynamic range, capped at 100 for identical images.
//
// # Safety
// `a` and `b` must each hold `width * height * 3` bytes; `out` must be writable.
enum DeoccStatus deocc_psnr(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t width,
                            uint32_t height,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEOCC_H */
