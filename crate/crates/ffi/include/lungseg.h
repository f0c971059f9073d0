#ifndef LUNGSEG_H
#define LUNGSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define LSEG_OK 0

/**
 * Invalid argument, shape or configuration.
 */
#define LSEG_ERR_USAGE 1

#define LSEG_ERR_IO 2

#define LSEG_ERR_NUMERIC 3

/**
 * Malformed checkpoint or image data.
 */
#define LSEG_ERR_FORMAT 4

/**
 * A Rust panic was caught at the boundary.
 */
#define LSEG_ERR_PANIC 5

/**
 * Opaque model handle.
 */
typedef struct LsegModel LsegModel;

/**
 * Architecture of a model, as stored in its checkpoint.
 */
typedef struct LsegModelConfig {
  uint32_t in_channels;
  uint32_t out_channels;
  uint32_t depth;
  uint32_t base_channels;
  uint32_t input_size;
} LsegModelConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lseg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lseg_version(void);

/**
 * Loads a checkpoint. On success `*out` receives a new handle.
 */
int32_t lseg_model_load(const char *path, struct LsegModel **out);

/**
 * Creates a freshly initialised model (useful for testing bindings).
 */
int32_t lseg_model_init(const struct LsegModelConfig *config,
                        uint64_t seed,
                        struct LsegModel **out);

/**
 * Writes the model to a checkpoint file.
 */
int32_t lseg_model_save(const struct LsegModel *model, const char *path);

/**
 * Releases a handle. NULL is ignored.
 */
void lseg_model_free(struct LsegModel *model);

int32_t lseg_model_config(const struct LsegModel *model, struct LsegModelConfig *out);

/**
 * Segments a row-major 8-bit grayscale image of `width`×`height` pixels.
 * `mask_out` must hold `width * height` bytes and receives 255 for lung
 * and 0 elsewhere.
 */
int32_t lseg_model_predict(const struct LsegModel *model,
                           const uint8_t *pixels,
                           uint32_t width,
                           uint32_t height,
                           double threshold,
                           uint8_t *mask_out);

/**
 * Dice coefficient of two masks of `len` bytes each (nonzero = foreground).
 * Two empty masks score 1.
 */
int32_t lseg_dice(const uint8_t *a, const uint8_t *b, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUNGSEG_H */
