#ifndef RPPG_H
#define RPPG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Zero is success.
 */
typedef enum rppg_status {
  RPPG_STATUS_OK = 0,
  RPPG_STATUS_NULL_POINTER = 1,
  RPPG_STATUS_INVALID_ARGUMENT = 2,
  RPPG_STATUS_CONSTANT_SIGNAL = 3,
  RPPG_STATUS_TOO_SHORT = 4,
  RPPG_STATUS_OUT_OF_BAND = 5,
  RPPG_STATUS_NO_PEAKS = 6,
  RPPG_STATUS_TOO_FEW_PEAKS = 7,
  RPPG_STATUS_ZERO_HF = 8,
  RPPG_STATUS_LENGTH_MISMATCH = 9,
  RPPG_STATUS_EMPTY = 10,
  RPPG_STATUS_BLOCK_TOO_SHORT = 11,
  RPPG_STATUS_GRID_MISMATCH = 12,
  RPPG_STATUS_SINGLETON_SET = 13,
  RPPG_STATUS_BAD_SHAPE = 14,
  RPPG_STATUS_CORRUPT_CHECKPOINT = 15,
  RPPG_STATUS_BUFFER_TOO_SMALL = 16,
  RPPG_STATUS_IO = 17,
  RPPG_STATUS_OTHER = 18,
  RPPG_STATUS_PANIC = 19,
} rppg_status;

/**
 * Opaque trained encoder.
 */
typedef struct rppg_model rppg_model;

/**
 * Opaque band-limited power spectrum.
 */
typedef struct rppg_psd rppg_psd;

/**
 * Contrastive loss terms between two PSD sets from different videos.
 */
typedef struct rppg_loss {
  double total;
  double positive;
  double negative;
} rppg_loss;

/**
 * Spectral HRV features. `rf_hz` is NaN and `lf_hf` infinite when
 * `zero_hf` is nonzero.
 */
typedef struct rppg_hrv {
  double rf_hz;
  double lf_nu;
  double hf_nu;
  double lf_hf;
  int32_t zero_hf;
} rppg_hrv;

/**
 * MAE, RMSE and Pearson R. `has_r` is zero (and `r` NaN) when either
 * series is constant.
 */
typedef struct rppg_agreement {
  double mae;
  double rmse;
  double r;
  int32_t has_r;
} rppg_agreement;

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *rppg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rppg_version(void);

/**
 * Band-limited, unit-sum PSD of a trace at the given grid resolution in Hz.
 *
 * # Safety
 * `samples` must point to `n` doubles; `out_psd` must be writable.
 */
enum rppg_status rppg_psd_compute(const double *samples,
                                  size_t n,
                                  double fs,
                                  double resolution_hz,
                                  struct rppg_psd **out_psd);

/**
 * Releases a PSD handle. Null is ignored.
 *
 * # Safety
 * `psd` must come from [`rppg_psd_compute`] and not be used afterwards.
 */
void rppg_psd_free(struct rppg_psd *psd);

/**
 * Number of frequency bins, 0 for a null handle.
 *
 * # Safety
 * `psd` must be null or a live handle.
 */
size_t rppg_psd_len(const struct rppg_psd *psd);

/**
 * Copies bin frequencies (Hz) and powers into caller buffers of `capacity`
 * elements. Either buffer may be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold `capacity` doubles.
 */
enum rppg_status rppg_psd_copy(const struct rppg_psd *psd,
                               double *freqs_out,
                               double *power_out,
                               size_t capacity);

/**
 * Heart rate in bpm at the spectral peak.
 *
 * # Safety
 * `psd` must be a live handle; `out_bpm` writable.
 */
enum rppg_status rppg_psd_hr(const struct rppg_psd *psd, double *out_bpm);

/**
 * Fraction of band power farther than `half_window_hz` from the reference
 * heart rate. A non-positive half window selects the default.
 *
 * # Safety
 * `psd` must be a live handle; `out_ipr` writable.
 */
enum rppg_status rppg_psd_ipr(const struct rppg_psd *psd,
                              double hr_true_bpm,
                              double half_window_hz,
                              double *out_ipr);

/**
 * Heart rate of a trace at test resolution.
 *
 * # Safety
 * `samples` must point to `n` doubles; `out_bpm` writable.
 */
enum rppg_status rppg_estimate_hr(const double *samples, size_t n, double fs, double *out_bpm);

/**
 * Contrastive loss of two PSD sets; set `a` and set `b` are treated as
 * coming from different videos.
 *
 * # Safety
 * `a` and `b` must point to `na`/`nb` live handles; `out_loss` writable.
 */
enum rppg_status rppg_contrastive_loss(const struct rppg_psd *const *a,
                                       size_t na,
                                       const struct rppg_psd *const *b,
                                       size_t nb,
                                       struct rppg_loss *out_loss);

/**
 * Peak detection followed by HRV analysis of a trace.
 *
 * # Safety
 * `samples` must point to `n` doubles; `out_hrv` writable.
 */
enum rppg_status rppg_hrv_metrics(const double *samples,
                                  size_t n,
                                  double fs,
                                  struct rppg_hrv *out_hrv);

/**
 * Agreement between predicted and reference heart rates.
 *
 * # Safety
 * `pred` and `truth` must point to `n` doubles; `out_agreement` writable.
 */
enum rppg_status rppg_agreement_metrics(const double *pred,
                                        const double *truth,
                                        size_t n,
                                        struct rppg_agreement *out_agreement);

/**
 * Freshly initialized encoder.
 *
 * # Safety
 * `out_model` must be writable.
 */
enum rppg_status rppg_model_new(size_t s_out,
                                size_t base_channels,
                                double frame_rate,
                                uint64_t seed,
                                struct rppg_model **out_model);

/**
 * Loads a checkpoint written by the training pipeline.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` writable.
 */
enum rppg_status rppg_model_load(const char *path, struct rppg_model **out_model);

/**
 * Writes the model as a checkpoint.
 *
 * # Safety
 * `model` must be a live handle; `path` NUL-terminated.
 */
enum rppg_status rppg_model_save(const struct rppg_model *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void rppg_model_free(struct rppg_model *model);

/**
 * Fewest frames the encoder accepts, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rppg_model_min_frames(const struct rppg_model *model);

/**
 * Side length of the square input frames.
 */
size_t rppg_input_size(void);

/**
 * rPPG trace of a preprocessed clip: `n_frames` frames of
 * `rppg_input_size()`² RGB pixels, row-major, channels last, values in
 * [0, 1]. Writes `n_frames` samples.
 *
 * # Safety
 * `frames` must hold `n_frames * size * size * 3` floats and `out_trace`
 * `capacity` doubles.
 */
enum rppg_status rppg_model_infer(const struct rppg_model *model,
                                  const float *frames,
                                  size_t n_frames,
                                  double fps,
                                  double *out_trace,
                                  size_t capacity);

#endif  /* RPPG_H */
