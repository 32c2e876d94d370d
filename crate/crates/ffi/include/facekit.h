#ifndef FACEKIT_H
#define FACEKIT_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 1 to 4 match the CLI exit codes.
 */
typedef enum FkStatus {
  FK_STATUS_OK = 0,
  FK_STATUS_ERROR = 1,
  FK_STATUS_MISSING_INPUT = 2,
  FK_STATUS_INVALID = 3,
  FK_STATUS_NUMERICAL = 4,
  FK_STATUS_NULL_POINTER = 5,
  FK_STATUS_PANIC = 6,
} FkStatus;

typedef struct FkFit FkFit;

typedef struct FkMesh FkMesh;

typedef struct FkModel FkModel;

typedef struct FkRig FkRig;

/**
 * Coarse fitting options; see [`fk_fit_options_default`].
 */
typedef struct FkFitOptions {
  double w_id;
  double w_exp;
  double w_tex;
  uint32_t max_iterations;
  bool freeze_scale;
} FkFitOptions;

/**
 * Orthographic camera.
 */
typedef struct FkCamera {
  uint32_t width;
  uint32_t height;
  double pixels_per_unit;
  double d_cam;
} FkCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fk_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fk_version(void);

struct FkFitOptions fk_fit_options_default(void);

/**
 * Loads a CFM1 model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FkStatus fk_model_load(const char *path, struct FkModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`fk_model_load`].
 */
void fk_model_free(struct FkModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t fk_model_landmark_count(const struct FkModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t fk_model_vertex_count(const struct FkModel *model);

/**
 * Coarse reconstruction from `count` landmarks given as interleaved pixel
 * coordinates `x0 y0 x1 y1 ...`. `weights` may be null for unit weights and
 * `options` null for the defaults.
 *
 * # Safety
 * Arrays must hold `2 * count` and `count` doubles; pointers must be valid.
 */
enum FkStatus fk_fit(const struct FkModel *model,
                     const double *landmarks_xy,
                     const double *weights,
                     size_t count,
                     const struct FkCamera *camera,
                     const struct FkFitOptions *options,
                     struct FkFit **out);

/**
 * # Safety
 * `f` must be null or a handle from [`fk_fit`].
 */
void fk_fit_free(struct FkFit *f);

/**
 * Mean weighted squared landmark error of the fit in px^2, or NaN for a null handle.
 *
 * # Safety
 * `f` must be a valid handle.
 */
double fk_fit_landmark_error(const struct FkFit *f);

/**
 * Writes the row-major rotation, the translation and the scale of the fitted
 * pose.
 *
 * # Safety
 * `rotation` must hold 9 doubles, `translation` 3, `scale` 1.
 */
enum FkStatus fk_fit_pose(const struct FkFit *f,
                          double *rotation,
                          double *translation,
                          double *scale);

/**
 * Laplacian refinement of a coarse fit toward the landmarks.
 *
 * # Safety
 * As for [`fk_fit`].
 */
enum FkStatus fk_refine(const struct FkModel *model,
                        const struct FkFit *f,
                        const double *landmarks_xy,
                        const double *weights,
                        size_t count,
                        double lambda,
                        struct FkMesh **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FkStatus fk_mesh_load_obj(const char *path, struct FkMesh **out);

/**
 * # Safety
 * `mesh` must be a valid handle and `path` a NUL-terminated string.
 */
enum FkStatus fk_mesh_save_obj(const struct FkMesh *mesh, const char *path);

/**
 * # Safety
 * `mesh` must be null or a mesh handle.
 */
void fk_mesh_free(struct FkMesh *mesh);

/**
 * # Safety
 * `mesh` must be a valid handle.
 */
size_t fk_mesh_vertex_count(const struct FkMesh *mesh);

/**
 * # Safety
 * `mesh` must be a valid handle.
 */
size_t fk_mesh_face_count(const struct FkMesh *mesh);

/**
 * Copies the vertex positions as `x y z` triples into `out`, which must hold
 * `3 * vertex_count` doubles.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum FkStatus fk_mesh_vertices(const struct FkMesh *mesh, double *out, size_t len);

/**
 * Transfers the standard expression templates of `model` onto `neutral`.
 * A negative `eyeball_inset` skips eyeball fitting.
 *
 * # Safety
 * Handles must be valid and `out` a valid pointer.
 */
enum FkStatus fk_rig_build(const struct FkModel *model,
                           const struct FkMesh *neutral,
                           double eyeball_inset,
                           struct FkRig **out);

/**
 * Loads a rig from a CFR1 file, or from a JSON export when the path ends in
 * `.json`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FkStatus fk_rig_load(const char *path, struct FkRig **out);

/**
 * # Safety
 * `rig` must be a valid handle and `path` a NUL-terminated string.
 */
enum FkStatus fk_rig_save(const struct FkRig *rig, const char *path);

/**
 * Writes the JSON export; `texture` may be null.
 *
 * # Safety
 * `rig` must be a valid handle; strings must be NUL-terminated.
 */
enum FkStatus fk_rig_save_json(const struct FkRig *rig, const char *path, const char *texture);

/**
 * # Safety
 * `rig` must be null or a rig handle.
 */
void fk_rig_free(struct FkRig *rig);

/**
 * # Safety
 * `rig` must be a valid handle.
 */
size_t fk_rig_expression_count(const struct FkRig *rig);

/**
 * # Safety
 * `rig` must be a valid handle.
 */
size_t fk_rig_vertex_count(const struct FkRig *rig);

/**
 * Name of expression `i`, owned by the rig, or null when out of range.
 *
 * # Safety
 * `rig` must be a valid handle.
 */
const char *fk_rig_expression_name(const struct FkRig *rig, size_t i);

/**
 * Evaluates `S_0 + sum_i beta_i B_i` into `out` (`3 * vertex_count` doubles).
 *
 * # Safety
 * `beta` must hold `beta_len` doubles and `out` `out_len` writable doubles.
 */
enum FkStatus fk_rig_evaluate(const struct FkRig *rig,
                              const double *beta,
                              size_t beta_len,
                              double *out,
                              size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACEKIT_H */
