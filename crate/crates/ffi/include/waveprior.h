#ifndef WAVEPRIOR_H
#define WAVEPRIOR_H

/* Generated by cbindgen from waveprior-ffi; regenerate via cargo build, do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>
typedef struct WpModel WpModel;
typedef struct WpSchedule WpSchedule;

/**
 * Call outcome. Non-zero values mirror the CLI exit codes, with
 * `NULL_ARG` reserved for pointer misuse that only exists at this boundary.
 */
typedef enum WpStatus {
  WP_STATUS_OK = 0,
  WP_STATUS_CONFIG_ERROR = 2,
  WP_STATUS_IO_ERROR = 3,
  WP_STATUS_NUMERIC_ERROR = 4,
  WP_STATUS_NULL_ARG = 5,
} WpStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *wp_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *wp_version(void);

/**
 * Creates the linear beta schedule. On success `*out` owns the handle.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum WpStatus wp_schedule_linear(size_t num_steps,
                                 double beta_min,
                                 double beta_max,
                                 WpSchedule **out);

/**
 * Releases a schedule handle; a null handle is ignored.
 *
 * # Safety
 * `sched` must have come from this library and not been freed already.
 */
void wp_schedule_free(WpSchedule *sched);

/**
 * Number of diffusion steps T.
 *
 * # Safety
 * `sched` must be a live schedule handle or null (returns 0).
 */
size_t wp_schedule_steps(const WpSchedule *sched);

/**
 * Writes ᾱ(t) for t in [0, T] into `*out`.
 *
 * # Safety
 * `sched` and `out` must be valid pointers.
 */
enum WpStatus wp_schedule_alpha_bar(const WpSchedule *sched, size_t t, double *out);

/**
 * Loads a trained checkpoint; on success `*out_model` and `*out_sched` own
 * the model and the schedule it was trained with.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; out params must be valid.
 */
enum WpStatus wp_model_load_checkpoint(const char *path,
                                       WpModel **out_model,
                                       WpSchedule **out_sched);

/**
 * Creates an analytic AR(1) Gaussian prior of dimension `dim` with
 * correlation `rho` (|rho| < 1) as a score model.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum WpStatus wp_model_gaussian_ar1(size_t dim, double rho, WpModel **out);

/**
 * Releases a model handle; a null handle is ignored.
 *
 * # Safety
 * `model` must have come from this library and not been freed already.
 */
void wp_model_free(WpModel *model);

/**
 * Draws one unconditional sample of `len` values into `out`.
 *
 * # Safety
 * `model` and `sched` must be live handles; `out` must hold `len` doubles.
 */
enum WpStatus wp_sample_prior(const WpModel *model,
                              const WpSchedule *sched,
                              size_t len,
                              uint64_t seed,
                              double *out);

/**
 * Declips `y` (amplitude-saturated at `threshold`) with reconstruction
 * guidance of strength `xi0`; writes `len` restored samples into `out`.
 *
 * # Safety
 * `y` and `out` must hold `len` doubles; the handles must be live.
 */
enum WpStatus wp_declip(const WpModel *model,
                        const WpSchedule *sched,
                        const double *y,
                        size_t len,
                        double threshold,
                        double xi0,
                        uint64_t seed,
                        double *out);

/**
 * Bandwidth-extends the lowpassed observation `y` by imputation. The FIR
 * lowpass is designed from `cutoff_hz`, `sample_rate` and odd `taps`.
 *
 * # Safety
 * `y` and `out` must hold `len` doubles; the handles must be live.
 */
enum WpStatus wp_bwe(const WpModel *model,
                     const WpSchedule *sched,
                     const double *y,
                     size_t len,
                     double cutoff_hz,
                     double sample_rate,
                     size_t taps,
                     uint64_t seed,
                     double *out);

/**
 * Inverts a log-mel spectrogram. `mel_values` holds `n_mels * n_frames`
 * doubles in mel-major order; the waveform written to `out` has `out_len`
 * samples, which must analyse to exactly `n_frames` frames.
 *
 * # Safety
 * `mel_values` must hold `n_mels * n_frames` doubles and `out` must hold
 * `out_len` doubles; the handles must be live.
 */
enum WpStatus wp_vocode(const WpModel *model,
                        const WpSchedule *sched,
                        const double *mel_values,
                        size_t n_mels,
                        size_t n_frames,
                        size_t n_fft,
                        size_t hop,
                        double sample_rate,
                        double fmin,
                        double fmax,
                        size_t out_len,
                        double xi0,
                        uint64_t seed,
                        double *out);

/**
 * Separates the two-source mixture `y`. `model2` may be null to reuse
 * `model1` for both sources; `out1`/`out2` each receive `len` samples.
 *
 * # Safety
 * `y`, `out1` and `out2` must hold `len` doubles; the handles must be live.
 */
enum WpStatus wp_separate(const WpModel *model1,
                          const WpModel *model2,
                          const WpSchedule *sched,
                          const double *y,
                          size_t len,
                          uint64_t seed,
                          double *out1,
                          double *out2);

/**
 * Scale-invariant SNR of `estimate` against `reference`, in dB.
 *
 * # Safety
 * `reference` and `estimate` must hold `len` doubles; `out_db` must be valid.
 */
enum WpStatus wp_si_snr(const double *reference,
                        const double *estimate,
                        size_t len,
                        double *out_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAVEPRIOR_H */
