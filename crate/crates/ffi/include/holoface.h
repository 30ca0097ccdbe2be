#ifndef HOLOFACE_H
#define HOLOFACE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HfBackend {
  HF_BACKEND_NONE = 0,
  HF_BACKEND_LOCAL = 1,
  HF_BACKEND_REMOTE = 2,
} HfBackend;

typedef enum HfMode {
  HF_MODE_DETECTING = 0,
  HF_MODE_TRACKING = 1,
} HfMode;

typedef enum HfStatus {
  HF_STATUS_OK = 0,
  HF_STATUS_NULL_POINTER = 1,
  HF_STATUS_INVALID_ARGUMENT = 2,
  HF_STATUS_IO = 3,
  HF_STATUS_PARSE = 4,
  HF_STATUS_FIT_FAILED = 5,
  HF_STATUS_PANIC = 6,
} HfStatus;

/**
 * Constant-acceleration position filter, one Kalman filter per axis.
 */
typedef struct HfFilter HfFilter;

typedef struct HfModel HfModel;

/**
 * The full tracking state machine driven by host callbacks.
 */
typedef struct HfTracker HfTracker;

typedef struct HfIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
} HfIntrinsics;

typedef struct HfPose {
  /**
   * Row-major.
   */
  double rotation[9];
  double translation[3];
} HfPose;

typedef struct HfFitResult {
  /**
   * Head pose in the camera frame.
   */
  struct HfPose pose;
  /**
   * Pixels.
   */
  double rms_residual;
  uint32_t iterations;
  bool converged;
} HfFitResult;

typedef struct HfFilterConfig {
  /**
   * m/s².
   */
  double sigma_a;
  /**
   * Meters.
   */
  double sigma_z;
  /**
   * Seconds.
   */
  double tau_m;
  /**
   * Seconds.
   */
  double max_prediction_horizon;
  /**
   * Meters.
   */
  double avg_translation_threshold;
  /**
   * Radians.
   */
  double avg_rotation_threshold;
  /**
   * Seconds.
   */
  double acquisition_to_render_delay;
} HfFilterConfig;

typedef struct HfFaceBox {
  double x;
  double y;
  double width;
  double height;
} HfFaceBox;

/**
 * Writes a face box and returns true when a face is found.
 */
typedef bool (*HfDetectFn)(void *user, uint64_t frame_id, struct HfFaceBox *out);

/**
 * Refines `count` landmarks (`init`, frame pixels) into `out` and sets
 * `confidence` in [0, 1]. Returns false when alignment failed.
 */
typedef bool (*HfAlignFn)(void *user,
                          uint64_t frame_id,
                          const double *init,
                          size_t count,
                          double *out,
                          double *confidence);

typedef struct HfCallbacks {
  /**
   * Passed back to both callbacks unchanged.
   */
  void *user;
  HfDetectFn detect;
  HfAlignFn align;
} HfCallbacks;

typedef struct HfFrame {
  uint64_t frame_id;
  /**
   * Seconds.
   */
  double acquisition_time;
  /**
   * Camera pose in the world at acquisition.
   */
  struct HfPose cam_to_world;
  /**
   * Optional 8-bit grayscale image, row stride `stride` bytes; NULL for none.
   */
  const uint8_t *image;
  uint32_t width;
  uint32_t height;
  uint32_t stride;
} HfFrame;

typedef struct HfTrackOutput {
  enum HfMode mode;
  bool tracking_valid;
  enum HfBackend backend;
  bool fallback;
  /**
   * When false the pose fields hold the identity.
   */
  bool has_pose;
  struct HfPose camera_pose;
  struct HfPose world_pose_raw;
  struct HfPose world_pose_filtered;
  struct HfPose world_pose_predicted;
  /**
   * NaN when no fit was made.
   */
  double rms_residual;
  /**
   * NaN without a failure predictor or fit.
   */
  double predicted_sse;
  /**
   * Landmarks written to the caller's buffer.
   */
  size_t landmark_count;
} HfTrackOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * The bundled model scaled to a 63 mm pupil distance.
 *
 * # Safety
 * `out` must be NULL or point to writable storage for one pointer.
 */
enum HfStatus hf_model_bundled(struct HfModel **out);

/**
 * Loads a JSON face model.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as for [`hf_model_bundled`].
 */
enum HfStatus hf_model_load(const char *path, struct HfModel **out);

/**
 * A copy of `model` rescaled so its pupil distance is `ipd` meters.
 *
 * # Safety
 * `model` must be a live handle; `out` as for [`hf_model_bundled`].
 */
enum HfStatus hf_model_scale_to_ipd(const struct HfModel *model, double ipd, struct HfModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void hf_model_free(struct HfModel *model);

/**
 * Number of landmarks the model expects; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t hf_model_landmark_count(const struct HfModel *model);

/**
 * Number of blendshapes; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t hf_model_blendshape_count(const struct HfModel *model);

/**
 * Pupil distance in model units; NaN for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
double hf_model_pupil_distance(const struct HfModel *model);

/**
 * Fits head pose and blendshape weights to `count` landmarks.
 *
 * `warm_start` may be NULL for a closed-form initial guess. When `weights`
 * is not NULL, `weights_len` must equal the blendshape count and receives
 * the fitted weights.
 *
 * # Safety
 * Pointers must be valid for the stated lengths (`landmarks`: 2·count doubles).
 */
enum HfStatus hf_fit(const struct HfModel *model,
                     const double *landmarks_uv,
                     size_t count,
                     const struct HfIntrinsics *k,
                     const struct HfPose *warm_start,
                     double *weights,
                     size_t weights_len,
                     struct HfFitResult *out);

/**
 * Fills `out` with the default filter parameters.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum HfStatus hf_filter_config_default(struct HfFilterConfig *out);

/**
 * `config` may be NULL for defaults. The filter starts empty; the first
 * update initializes it.
 *
 * # Safety
 * `config` must be NULL or readable; `out` writable.
 */
enum HfStatus hf_filter_new(const struct HfFilterConfig *config, struct HfFilter **out);

/**
 * Adds a position measurement (meters) taken at `timestamp` seconds.
 *
 * # Safety
 * `filter` must be a live handle and `position` point to 3 doubles.
 */
enum HfStatus hf_filter_update(struct HfFilter *filter, const double *position, double timestamp);

/**
 * Filtered position at the last update.
 *
 * # Safety
 * `filter` must be a live handle and `out` point to 3 writable doubles.
 */
enum HfStatus hf_filter_position(const struct HfFilter *filter, double *out);

/**
 * Position extrapolated `horizon` seconds past the last update (clamped to
 * the configured maximum).
 *
 * # Safety
 * As for [`hf_filter_position`].
 */
enum HfStatus hf_filter_predict(const struct HfFilter *filter, double horizon, double *out);

/**
 * # Safety
 * `filter` must be NULL or a handle not yet freed.
 */
void hf_filter_free(struct HfFilter *filter);

/**
 * Creates a tracker over a copy of `model`.
 *
 * `config_json` may be NULL for defaults, otherwise a JSON tracker
 * configuration object (unknown fields are rejected). Both callbacks are
 * required.
 *
 * # Safety
 * `model`, `k` and `callbacks` must be readable; `config_json` NULL or a
 * NUL-terminated string; `out` writable. `callbacks->user` must stay valid
 * for the tracker's lifetime.
 */
enum HfStatus hf_tracker_new(const struct HfModel *model,
                             const struct HfIntrinsics *k,
                             const char *config_json,
                             const struct HfCallbacks *callbacks,
                             struct HfTracker **out);

/**
 * Processes one frame; `render_time` (seconds) sets the prediction horizon.
 *
 * When `landmarks_out` is not NULL it must hold `2 * landmarks_capacity`
 * doubles with `landmarks_capacity` at least the model's landmark count.
 *
 * # Safety
 * `tracker` must be a live handle, `frame` readable (its image valid for
 * `stride * height` bytes when set), `out` writable.
 */
enum HfStatus hf_tracker_step(struct HfTracker *tracker,
                              const struct HfFrame *frame,
                              double render_time,
                              struct HfTrackOutput *out,
                              double *landmarks_out,
                              size_t landmarks_capacity);

/**
 * Current mode; detecting for NULL.
 *
 * # Safety
 * `tracker` must be NULL or a live handle.
 */
enum HfMode hf_tracker_mode(const struct HfTracker *tracker);

/**
 * # Safety
 * `tracker` must be NULL or a handle not yet freed.
 */
void hf_tracker_free(struct HfTracker *tracker);

/**
 * Landmark error normalized by the distance between two ground-truth eye corners.
 *
 * # Safety
 * `pred` and `gt` must hold 2·count doubles; `out` writable.
 */
enum HfStatus hf_normalized_error(const double *pred,
                                  const double *gt,
                                  size_t count,
                                  size_t left_eye,
                                  size_t right_eye,
                                  double *out);

/**
 * Area under the error CED curve on [0, limit], in percent. Infinite errors
 * count as failures.
 *
 * # Safety
 * `errors` must hold `count` doubles; `out` writable.
 */
enum HfStatus hf_auc(const double *errors, size_t count, double limit, double *out);

/**
 * Percentage of errors above `threshold`.
 *
 * # Safety
 * As for [`hf_auc`].
 */
enum HfStatus hf_failure_rate(const double *errors, size_t count, double threshold, double *out);

/**
 * Encoded size in bytes of an alignment request carrying `landmarks` points.
 */
size_t hf_request_len(size_t landmarks);

/**
 * Encoded size in bytes of the matching response.
 */
size_t hf_response_len(size_t landmarks);

/**
 * Upstream bit rate in bits per second at `fps` requests per second.
 */
double hf_request_bitrate(size_t landmarks, double fps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOLOFACE_H */
