/* C interface to the multi-view stereo toolkit. */
#ifndef LSM_LSM_H
#define LSM_LSM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(LSM_BUILDING_LIBRARY)
#define LSM_API __attribute__((visibility("default")))
#else
#define LSM_API
#endif

typedef enum lsm_status {
  LSM_OK = 0,
  LSM_ERR_INVALID_ARGUMENT = 1,
  LSM_ERR_IO = 2,
  LSM_ERR_PARSE = 3,
  LSM_ERR_CHECK_FAILED = 4, /* a verification ran but did not pass */
  LSM_ERR_INTERNAL = 5
} lsm_status;

/* Message of the last failed call on this thread ("" if none). */
LSM_API const char* lsm_last_error(void);
LSM_API const char* lsm_status_name(lsm_status status);

/* ---- opaque handles ---------------------------------------------------- */

/* Text report produced by a command; also holds key=value lines. */
typedef struct lsm_report lsm_report;
LSM_API const char* lsm_report_text(const lsm_report* report);
LSM_API const char* lsm_report_key_values(const lsm_report* report);
/* Looks up a numeric value by key; LSM_ERR_INVALID_ARGUMENT if absent. */
LSM_API lsm_status lsm_report_get(const lsm_report* report, const char* key, double* value);
LSM_API void lsm_report_free(lsm_report* report);

/* Dataset opened read-only. */
typedef struct lsm_dataset lsm_dataset;
LSM_API lsm_status lsm_dataset_open(const char* path, lsm_dataset** out);
LSM_API size_t lsm_dataset_scene_count(const lsm_dataset* dataset);
LSM_API const char* lsm_dataset_scene_name(const lsm_dataset* dataset, size_t index);
LSM_API size_t lsm_dataset_view_count(const lsm_dataset* dataset, size_t index);
LSM_API void lsm_dataset_close(lsm_dataset* dataset);

/* TensorFile contents converted to doubles. */
typedef struct lsm_tensor lsm_tensor;
LSM_API lsm_status lsm_tensor_read(const char* path, lsm_tensor** out);
LSM_API size_t lsm_tensor_rank(const lsm_tensor* tensor);
LSM_API uint32_t lsm_tensor_dim(const lsm_tensor* tensor, size_t axis);
LSM_API size_t lsm_tensor_size(const lsm_tensor* tensor);
LSM_API const double* lsm_tensor_data(const lsm_tensor* tensor);
LSM_API void lsm_tensor_free(lsm_tensor* tensor);

/* ---- commands ---------------------------------------------------------- */
/* Options structs must be initialised with their *_init function. */

typedef struct lsm_gen_data_options {
  int scenes;
  int views;
  int resolution;
  int width;
  int height;
  int textured;
  double texture_frequency;
  double light_jitter_deg;
  const char* family; /* NULL or "" cycles sphere, box, composite */
  uint64_t seed;
} lsm_gen_data_options;
LSM_API void lsm_gen_data_options_init(lsm_gen_data_options* o);
LSM_API lsm_status lsm_gen_data(const lsm_gen_data_options* o, const char* out_dir);

typedef struct lsm_gradcheck_options {
  const char* op; /* all | bilinear | unproject | project | gru | layers */
  int trials;
  double tol;
  uint64_t seed;
  int adjoint;
  const char* out_dir; /* optional */
} lsm_gradcheck_options;
LSM_API void lsm_gradcheck_options_init(lsm_gradcheck_options* o);
/* LSM_ERR_CHECK_FAILED when any error exceeds the tolerance; the report is
   produced either way. */
LSM_API lsm_status lsm_gradcheck(const lsm_gradcheck_options* o, lsm_report** report);

typedef struct lsm_visual_hull_options {
  int views; /* 0 = all */
  double occupancy_fraction;
  double threshold;
} lsm_visual_hull_options;
LSM_API void lsm_visual_hull_options_init(lsm_visual_hull_options* o);
LSM_API lsm_status lsm_visual_hull(const char* data_dir, const char* out_dir,
                                   const lsm_visual_hull_options* o, lsm_report** report);

typedef struct lsm_plane_sweep_options {
  int planes;
  int window;
  int views;     /* 0 = all */
  int ref_views; /* 0 = every used view */
  int min_views;
} lsm_plane_sweep_options;
LSM_API void lsm_plane_sweep_options_init(lsm_plane_sweep_options* o);
LSM_API lsm_status lsm_plane_sweep(const char* data_dir, const char* out_dir,
                                   const lsm_plane_sweep_options* o, lsm_report** report);

typedef struct lsm_train_options {
  const char* config_json; /* optional model config (JSON text) */
  const char* head;        /* optional override: voxel | depth */
  const char* fusion;      /* optional override: pointwise | gru */
  int iters;
  int has_seed;
  uint64_t seed;
  int verbose;
} lsm_train_options;
LSM_API void lsm_train_options_init(lsm_train_options* o);
LSM_API lsm_status lsm_train_toy(const char* data_dir, const char* out_dir,
                                 const lsm_train_options* o, lsm_report** report);

typedef struct lsm_eval_options {
  const char* pred_dir;   /* either a prediction directory ... */
  const char* checkpoint; /* ... or a checkpoint directory */
  int has_threshold;
  double threshold;
  int views;
} lsm_eval_options;
LSM_API void lsm_eval_options_init(lsm_eval_options* o);
LSM_API lsm_status lsm_eval(const char* data_dir, const char* out_dir, const lsm_eval_options* o,
                            lsm_report** report);

typedef struct lsm_sweep_views_options {
  const char* method; /* "visual-hull" or a checkpoint directory */
  int max_views;
  int has_threshold;
  double threshold;
} lsm_sweep_views_options;
LSM_API void lsm_sweep_views_options_init(lsm_sweep_views_options* o);
LSM_API lsm_status lsm_sweep_views(const char* data_dir, const char* out_dir,
                                   const lsm_sweep_views_options* o, lsm_report** report);

typedef struct lsm_perturb_options {
  const double* thetas_deg; /* NULL = 0, 2.5, 5, 10 */
  size_t theta_count;
  int views; /* 0 = all */
  int draws;
  uint64_t seed;
  double threshold;
} lsm_perturb_options;
LSM_API void lsm_perturb_options_init(lsm_perturb_options* o);
LSM_API lsm_status lsm_perturb_eval(const char* data_dir, const char* out_dir,
                                    const lsm_perturb_options* o, lsm_report** report);

LSM_API lsm_status lsm_export_ply(const char* data_dir, const char* depth_dir,
                                  const char* out_dir, lsm_report** report);

#ifdef __cplusplus
}
#endif

#endif
