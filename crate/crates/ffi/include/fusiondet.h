/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef FUSIONDET_H
#define FUSIONDET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FdStatus {
  FD_STATUS_OK = 0,
  FD_STATUS_NULL_POINTER = 1,
  FD_STATUS_INVALID_UTF8 = 2,
  // Invalid configuration or inconsistent shapes.
  FD_STATUS_CONFIG = 3,
  // Input outside an operation's domain (e.g. a point behind the camera).
  FD_STATUS_DOMAIN = 4,
  // Index past the end of a collection.
  FD_STATUS_OUT_OF_RANGE = 5,
  // I/O, serialization or other runtime failure.
  FD_STATUS_RUNTIME = 6,
  FD_STATUS_PANIC = 7,
} FdStatus;

typedef struct FdDetections FdDetections;

// Configuration plus initialized weights.
typedef struct FdPipeline FdPipeline;

typedef struct FdScene FdScene;

// One detection from the last decoder layer.
typedef struct FdDetection {
  // x, y, z, length, width, height, yaw, vx, vy.
  double bbox[9];
  uint32_t class_id;
  double score;
} FdDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next `fd_*` call on this thread.
const char *fd_last_error_message(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void fd_string_free(char *s);

// Default configuration as pretty-printed JSON.
//
// # Safety
// `out` must be a valid pointer.
enum FdStatus fd_config_default_json(char **out);

// Validate a JSON config (null means defaults) and initialize the model.
//
// # Safety
// `config_json` is null or a NUL-terminated string; `out` must be valid.
enum FdStatus fd_pipeline_new(const char *config_json, struct FdPipeline **out);

// # Safety
// `p` is null or a live handle from [`fd_pipeline_new`].
void fd_pipeline_free(struct FdPipeline *p);

// Generate a synthetic scene from the pipeline's scene settings.
//
// # Safety
// `p` must be a live pipeline handle and `out` a valid pointer.
enum FdStatus fd_scene_generate(const struct FdPipeline *p, uint64_t seed, struct FdScene **out);

// Parse a scene from its JSON form.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum FdStatus fd_scene_from_json(const char *json, struct FdScene **out);

// # Safety
// `s` is null or a live scene handle.
void fd_scene_free(struct FdScene *s);

// # Safety
// `s` must be a live scene handle and `out` a valid pointer.
enum FdStatus fd_scene_to_json(const struct FdScene *s, char **out);

// Number of LiDAR points in a scene; 0 for a null handle.
//
// # Safety
// `s` is null or a live scene handle.
size_t fd_scene_point_count(const struct FdScene *s);

// Number of camera views in a scene; 0 for a null handle.
//
// # Safety
// `s` is null or a live scene handle.
size_t fd_scene_view_count(const struct FdScene *s);

// Project a world point into view `view` of the scene's rig. Writes
// `(u, v, depth)` to `out_uvd`; `FD_STATUS_DOMAIN` if the point is behind
// the camera.
//
// # Safety
// `s` must be a live scene handle; `out_uvd` must point to 3 doubles.
enum FdStatus fd_world_to_image(const struct FdScene *s,
                                size_t view,
                                double x,
                                double y,
                                double z,
                                double *out_uvd);

// Run detection on a scene without writing files.
//
// # Safety
// `p` and `s` must be live handles and `out` a valid pointer.
enum FdStatus fd_pipeline_run(const struct FdPipeline *p,
                              const struct FdScene *s,
                              struct FdDetections **out);

// Full forward run writing all artifacts (scene, detections, heatmaps,
// weights, report) to `out_dir`.
//
// # Safety
// `p` must be a live handle and `out_dir` a NUL-terminated string.
enum FdStatus fd_pipeline_forward_to_dir(const struct FdPipeline *p, const char *out_dir);

// Number of detections; 0 for a null handle.
//
// # Safety
// `d` is null or a live detections handle.
size_t fd_detections_count(const struct FdDetections *d);

// Copy detection `index` into `out`.
//
// # Safety
// `d` must be a live handle and `out` a valid pointer.
enum FdStatus fd_detections_get(const struct FdDetections *d,
                                size_t index,
                                struct FdDetection *out);

// # Safety
// `d` is null or a live detections handle.
void fd_detections_free(struct FdDetections *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSIONDET_H */
