#ifndef FEWSHOT_H
#define FEWSHOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every call.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_ARGUMENT = 1,
  FS_STATUS_INVALID_UTF8 = 2,
  FS_STATUS_INVALID_ARGUMENT = 3,
  FS_STATUS_IO = 4,
  FS_STATUS_CONTRACT = 5,
  FS_STATUS_PANIC = 6,
} FsStatus;

/*
 Labeled train/dev/test splits.
 */
typedef struct FsDataset FsDataset;

/*
 A K-shot training set with its evaluation pool.
 */
typedef struct FsEpisode FsEpisode;

/*
 A saved encoder plus classification head.
 */
typedef struct FsModel FsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *fs_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *fs_version(void);

/*
 # Safety
 `s` must come from this library or be null.
 */
void fs_string_free(char *s);

/*
 Loads a dataset directory or file. `format` is `"csv"` or `"jsonl"`.

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
enum FsStatus fs_dataset_load(const char *path, const char *format, struct FsDataset **out);

/*
 Builds the synthetic toy dataset (2 to 6 intents).

 # Safety
 `out` must be writable.
 */
enum FsStatus fs_dataset_synthetic(uintptr_t labels,
                                   uintptr_t train_per_label,
                                   uintptr_t eval_per_label,
                                   uint64_t seed,
                                   struct FsDataset **out);

/*
 # Safety
 `ds` must be a live handle and `out_labels` writable.
 */
enum FsStatus fs_dataset_num_labels(const struct FsDataset *ds, uintptr_t *out_labels);

/*
 Row count of a split: 0 train, 1 dev, 2 test.

 # Safety
 `ds` must be a live handle and `out_rows` writable.
 */
enum FsStatus fs_dataset_split_len(const struct FsDataset *ds, uint32_t split, uintptr_t *out_rows);

/*
 Human-readable split statistics.

 # Safety
 `ds` must be a live handle and `out` writable.
 */
enum FsStatus fs_dataset_stats(const struct FsDataset *ds, char **out);

/*
 # Safety
 `ds` must come from this library or be null.
 */
void fs_dataset_free(struct FsDataset *ds);

/*
 Draws exactly `k` train items per label.

 # Safety
 `ds` must be a live handle and `out` writable.
 */
enum FsStatus fs_episode_sample(const struct FsDataset *ds,
                                uintptr_t k,
                                uint64_t seed,
                                struct FsEpisode **out);

/*
 # Safety
 `ep` must be a live handle and `out_items` writable.
 */
enum FsStatus fs_episode_num_items(const struct FsEpisode *ep, uintptr_t *out_items);

/*
 The episode in its on-disk JSON form.

 # Safety
 `ep` must be a live handle and `out` writable.
 */
enum FsStatus fs_episode_to_json(const struct FsEpisode *ep, char **out);

/*
 Generation prompt built from the episode's items for `label`.

 # Safety
 `ep` must be a live handle, `label` NUL-terminated and `out` writable.
 */
enum FsStatus fs_build_prompt(const struct FsEpisode *ep, const char *label, char **out);

/*
 # Safety
 `ep` must come from this library or be null.
 */
void fs_episode_free(struct FsEpisode *ep);

/*
 Loads a model checkpoint directory written by `fewshot train`.

 # Safety
 `dir` must be NUL-terminated and `out` writable.
 */
enum FsStatus fs_model_load(const char *dir, struct FsModel **out);

/*
 # Safety
 `model` must be a live handle and `out_labels` writable.
 */
enum FsStatus fs_model_num_labels(const struct FsModel *model, uintptr_t *out_labels);

/*
 Name of label `index`.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum FsStatus fs_model_label(const struct FsModel *model, uintptr_t index, char **out);

/*
 Writes the predicted label index of each of the `n` texts into `out_labels[0..n]`.

 # Safety
 `texts` must point to `n` NUL-terminated strings and `out_labels` to `n` writable slots.
 */
enum FsStatus fs_model_predict(const struct FsModel *model,
                               const char *const *texts,
                               uintptr_t n,
                               uintptr_t *out_labels);

/*
 Accuracy of the model on the episode's evaluation pool.

 # Safety
 Handles must be live and `out_accuracy` writable.
 */
enum FsStatus fs_model_evaluate(const struct FsModel *model,
                                const struct FsEpisode *ep,
                                double *out_accuracy);

/*
 # Safety
 `model` must come from this library or be null.
 */
void fs_model_free(struct FsModel *model);

/*
 Mean cross-entropy of row-major `rows × cols` logits against `labels[0..rows]`.

 # Safety
 `logits` must hold `rows*cols` values, `labels` `rows` values, and `out_loss` be writable.
 */
enum FsStatus fs_ce_loss(const double *logits,
                         uintptr_t rows,
                         uintptr_t cols,
                         const uintptr_t *labels,
                         double *out_loss);

/*
 Mean KL(softmax(teacher/t) ‖ softmax(student/t)) over `rows` row-major rows.

 # Safety
 Both matrices must hold `rows*cols` values and `out_loss` be writable.
 */
enum FsStatus fs_kd_loss(const double *student,
                         const double *teacher,
                         uintptr_t rows,
                         uintptr_t cols,
                         double t,
                         double *out_loss);

/*
 `ce + lambda * mlm`.

 # Safety
 `out_loss` must be writable.
 */
enum FsStatus fs_joint_loss(double ce, double mlm, double lambda, double *out_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEWSHOT_H */
