/* C interface to the gazecontact library.
 *
 * Every function returning gc_status leaves a thread-local message that
 * gc_last_error() reports until the next failing call on the same thread.
 * Handles are opaque and owned by the caller; free them with the matching
 * *_free function (passing NULL is allowed). Output paths may be NULL to
 * skip that output. Files are written atomically.
 */
#ifndef GAZECONTACT_H
#define GAZECONTACT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GC_API __declspec(dllexport)
#else
#define GC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gc_status {
  GC_OK = 0,
  GC_ERR_DEGENERATE_INPUT = 1,
  GC_ERR_DIMENSION_MISMATCH = 2,
  GC_ERR_SHAPE_MISMATCH = 3,
  GC_ERR_OUT_OF_BOUNDS = 4,
  GC_ERR_IO = 5,
  GC_ERR_USAGE = 6,
  GC_ERR_NUMERIC = 7,
  GC_ERR_INVALID_ARGUMENT = 8, /* NULL handle or out-pointer */
  GC_ERR_INTERNAL = 9
} gc_status;

GC_API const char* gc_version(void);
GC_API const char* gc_status_name(gc_status status);
GC_API const char* gc_last_error(void);

/* ---- run configuration ------------------------------------------------ */

typedef struct gc_config gc_config;

GC_API gc_status gc_config_new(gc_config** out);
GC_API gc_status gc_config_load(const char* path, gc_config** out);
/* GC_ERR_USAGE for keys the library does not know. */
GC_API gc_status gc_config_set(gc_config* config, const char* key, const char* value);
GC_API void gc_config_free(gc_config* config);

/* ---- synthetic data --------------------------------------------------- */

/* n <= 0 takes synth.n from the config (default 5000). Writes
 * out_dir/manifest.csv and out_dir/images/. out_dir must exist. */
GC_API gc_status gc_synth_dataset(const gc_config* config, int n, uint64_t seed, const char* out_dir);

/* Two-identity multi-face stream: out_dir/frames/NNNNN.ppm,
 * out_dir/detections.jsonl and out_dir/truth.jsonl (the child box per frame). */
GC_API gc_status gc_synth_stream(int frames, uint64_t seed, const char* out_dir);

/* ---- datasets ----------------------------------------------------------- */

typedef struct gc_dataset gc_dataset;

typedef enum gc_fold_side { GC_FOLD_TRAIN = 0, GC_FOLD_TEST = 1 } gc_fold_side;

/* Parses the manifest and loads every image. */
GC_API gc_status gc_dataset_open(const char* manifest_path, gc_dataset** out);
/* Sessions of one side of a fold from a folds CSV written by gc_folds_write. */
GC_API gc_status gc_dataset_fold(const gc_dataset* dataset, const char* folds_csv, int fold, gc_fold_side side,
                                 gc_dataset** out);
GC_API size_t gc_dataset_frames(const gc_dataset* dataset);
GC_API size_t gc_dataset_sessions(const gc_dataset* dataset);
GC_API size_t gc_dataset_positives(const gc_dataset* dataset);
GC_API void gc_dataset_free(gc_dataset* dataset);

/* n_folds <= 0 takes eval.folds from the config (default 5). */
GC_API gc_status gc_folds_write(const gc_dataset* dataset, const gc_config* config, int n_folds, uint64_t seed,
                                const char* out_csv);

/* ---- models ------------------------------------------------------------- */

typedef struct gc_model gc_model;

/* Called once per training iteration for the network methods. */
typedef void (*gc_progress_fn)(int iteration, double lr, double total_loss, double ce_loss, double pose_loss,
                               void* user);

/* method: "picnn", "alexnet", "peec" or "gazelock". */
GC_API gc_status gc_train(const gc_dataset* dataset, const char* method, const gc_config* config, uint64_t seed,
                          gc_progress_fn progress, void* user, gc_model** out);
GC_API gc_status gc_model_load(const char* path, gc_model** out);
GC_API gc_status gc_model_save(const gc_model* model, const char* path);
/* Training log CSV; GC_ERR_USAGE for methods without an iterative log. */
GC_API gc_status gc_model_save_log(const gc_model* model, const char* path);
GC_API const char* gc_model_method(const gc_model* model);
/* Hash of the encoded model file. */
GC_API uint64_t gc_model_hash(const gc_model* model);
/* Frames used and excluded (no landmarks) during training; 0 for loaded models. */
GC_API size_t gc_model_used(const gc_model* model);
GC_API size_t gc_model_excluded(const gc_model* model);
GC_API void gc_model_free(gc_model* model);

/* Per-frame scores as CSV (session_id,frame_index,truth,score). */
GC_API gc_status gc_predict(const gc_model* model, const gc_dataset* dataset, const char* scores_csv,
                            size_t* unscored);

/* conv1 filters and conv1..3 activations for one image (network methods). */
GC_API gc_status gc_visualize(const gc_model* model, const char* image_path, const char* out_dir);

/* ---- evaluation ------------------------------------------------------- */

typedef struct gc_metrics {
  double max_f1;
  double max_mcc;
  double auc_pr;
  double precision;  /* at max F1 */
  double recall;     /* at max F1 */
  double threshold;  /* at max F1 */
  size_t positives;
  size_t negatives;
  size_t unscored;
} gc_metrics;

GC_API gc_status gc_evaluate(const char* scores_csv, const char* report_csv, const char* curve_csv,
                             const char* curve_svg, gc_metrics* out);

/* Pose histograms from a dataset and, when detections_jsonl is given, face
 * center histograms normalized by the frame size. Either input may be NULL. */
GC_API gc_status gc_stats(const gc_dataset* dataset, const char* detections_jsonl, int frame_width, int frame_height,
                          const char* stats_csv, const char* stats_svg, const char* availability_csv);

/* Retrains `method` on growing session subsets of `train` and evaluates on `test`. */
GC_API gc_status gc_sweep(const gc_dataset* train, const gc_dataset* test, const char* method, const gc_config* config,
                          const int* session_counts, size_t n_counts, uint64_t seed, const char* sweep_csv,
                          const char* sweep_svg);

/* ---- child-face selection --------------------------------------------- */

/* Reads detections JSON lines and the frame images frames_dir/NNNNN.ppm.
 * child_csv lists frame,x,y,w,h,score per frame (empty box fields when no
 * child); child_jsonl holds the same boxes in detections format. */
GC_API gc_status gc_select(const char* detections_jsonl, const char* frames_dir, const gc_config* config,
                           const char* child_csv, const char* child_jsonl);

GC_API gc_status gc_box_eval(const char* predicted_jsonl, const char* truth_jsonl, double iou_threshold,
                             double* precision, double* recall);

#ifdef __cplusplus
}
#endif

#endif
