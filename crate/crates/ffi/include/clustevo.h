#ifndef CLUSTEVO_H
#define CLUSTEVO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Series selector for handle accessors.
 */
#define CLUSTEVO_SERIES_X 0

#define CLUSTEVO_SERIES_Y 1

typedef enum ClustevoStatus {
  CLUSTEVO_STATUS_OK = 0,
  CLUSTEVO_STATUS_NULL_POINTER = 1,
  CLUSTEVO_STATUS_INVALID_ARGUMENT = 2,
  CLUSTEVO_STATUS_CONFIG_ERROR = 3,
  CLUSTEVO_STATUS_DATA_ERROR = 4,
  CLUSTEVO_STATUS_COMPUTATION_ERROR = 5,
  CLUSTEVO_STATUS_BUFFER_TOO_SMALL = 6,
  CLUSTEVO_STATUS_PANIC = 7,
} ClustevoStatus;

typedef struct ClustevoConfig ClustevoConfig;

typedef struct ClustevoDualRun ClustevoDualRun;

typedef struct ClustevoPanel ClustevoPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message.
 *
 * # Safety
 * `buf` must have room for `len` bytes or be null; `needed` must be valid.
 */
enum ClustevoStatus clustevo_last_error(char *buf, size_t len, size_t *needed);

/**
 * Optimal univariate k-means. Writes `n` labels in `1..=k` and the WCSS.
 *
 * # Safety
 * `values` must hold `n` doubles and `labels_out` room for `n` values.
 */
enum ClustevoStatus clustevo_ckmeans_1d(const double *values,
                                        size_t n,
                                        size_t k,
                                        uint32_t *labels_out,
                                        double *wcss_out);

/**
 * Exponential smoothing of raw cluster counts with integer rounding.
 *
 * # Safety
 * `raw` must hold `n` doubles; both outputs need room for `n` values.
 */
enum ClustevoStatus clustevo_smooth_k(const double *raw,
                                      size_t n,
                                      double alpha,
                                      double *smoothed_out,
                                      uint32_t *k_hat_out);

/**
 * Shift minimizing the L1 gap between `kx(t)` and `ky(t + offset)`.
 * A positive offset means `ky` trails `kx`.
 *
 * # Safety
 * `kx` and `ky` must hold `n` doubles; the outputs must be valid.
 */
enum ClustevoStatus clustevo_series_evolution_offset(const double *kx,
                                                     const double *ky,
                                                     size_t n,
                                                     int64_t scan_min,
                                                     int64_t scan_max,
                                                     bool normalized,
                                                     int64_t *offset_out,
                                                     double *objective_out);

/**
 * Lag minimizing the mean Frobenius difference between two sequences of
 * `t_len` row-major `n x n` matrices stored back to back.
 *
 * # Safety
 * `mx` and `my` must each hold `t_len * n * n` doubles; the outputs must be valid.
 */
enum ClustevoStatus clustevo_consistency_offset(const double *mx,
                                                const double *my,
                                                size_t t_len,
                                                size_t n,
                                                int64_t scan_min,
                                                int64_t scan_max,
                                                int64_t *offset_out,
                                                double *objective_out);

/**
 * Default configuration; set at least the input path before loading data.
 *
 * # Safety
 * `out_cfg` must be valid for writes.
 */
enum ClustevoStatus clustevo_config_new(struct ClustevoConfig **out_cfg);

/**
 * Parses a TOML configuration. A relative input path is kept as given.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out_cfg` must be valid for writes.
 */
enum ClustevoStatus clustevo_config_from_toml(const char *toml, struct ClustevoConfig **out_cfg);

/**
 * # Safety
 * `cfg` must come from this library; `path` must be NUL-terminated.
 */
enum ClustevoStatus clustevo_config_set_input(struct ClustevoConfig *cfg, const char *path);

/**
 * Lowest entity count on the filter date for the anomaly stage.
 *
 * # Safety
 * `cfg` must come from this library.
 */
enum ClustevoStatus clustevo_config_set_threshold(struct ClustevoConfig *cfg, double threshold);

/**
 * # Safety
 * `cfg` must come from this library or be null.
 */
void clustevo_config_free(struct ClustevoConfig *cfg);

/**
 * Loads one series of the configured CSV.
 *
 * # Safety
 * `cfg` must come from this library; `out_panel` must be valid for writes.
 */
enum ClustevoStatus clustevo_panel_load(const struct ClustevoConfig *cfg,
                                        uint32_t series,
                                        struct ClustevoPanel **out_panel);

/**
 * # Safety
 * `panel` must come from this library; outputs must be valid.
 */
enum ClustevoStatus clustevo_panel_shape(const struct ClustevoPanel *panel,
                                         size_t *n_entities,
                                         size_t *n_dates);

/**
 * Copies the preprocessed counts, row-major entities by dates.
 *
 * # Safety
 * `values_out` must have room for `len` doubles.
 */
enum ClustevoStatus clustevo_panel_values(const struct ClustevoPanel *panel,
                                          double *values_out,
                                          size_t len);

/**
 * Copies an entity name; see [`clustevo_last_error`] for the buffer protocol.
 *
 * # Safety
 * `buf` must have room for `len` bytes or be null; `needed` must be valid.
 */
enum ClustevoStatus clustevo_panel_entity(const struct ClustevoPanel *panel,
                                          size_t index,
                                          char *buf,
                                          size_t len,
                                          size_t *needed);

/**
 * # Safety
 * `panel` must come from this library or be null.
 */
void clustevo_panel_free(struct ClustevoPanel *panel);

/**
 * Runs both series, the offset grid and the anomaly stage in memory.
 *
 * # Safety
 * `cfg` must come from this library; `out_run` must be valid for writes.
 */
enum ClustevoStatus clustevo_dual_run(const struct ClustevoConfig *cfg,
                                      struct ClustevoDualRun **out_run);

/**
 * # Safety
 * `run` must come from this library; outputs must be valid.
 */
enum ClustevoStatus clustevo_dual_shape(const struct ClustevoDualRun *run,
                                        size_t *n_entities,
                                        size_t *n_dates);

/**
 * Smoothed cluster counts of one series, one per date.
 *
 * # Safety
 * `k_out` must have room for `len` values.
 */
enum ClustevoStatus clustevo_dual_k_hat(const struct ClustevoDualRun *run,
                                        uint32_t series,
                                        uint32_t *k_out,
                                        size_t len);

/**
 * Cluster labels of one series on one date.
 *
 * # Safety
 * `labels_out` must have room for `len` values.
 */
enum ClustevoStatus clustevo_dual_labels(const struct ClustevoDualRun *run,
                                         uint32_t series,
                                         size_t date_index,
                                         uint32_t *labels_out,
                                         size_t len);

/**
 * Series evolution offset of the first start date.
 *
 * # Safety
 * `run` must come from this library; `offset_out` must be valid.
 */
enum ClustevoStatus clustevo_dual_series_offset(const struct ClustevoDualRun *run,
                                                int64_t *offset_out);

/**
 * Consistency offset of the first start date for a matrix kind tag
 * (1 affinity, 2 adjacency, `0x100 | m` Gaussian with sharpness `m`).
 *
 * # Safety
 * `run` must come from this library; `offset_out` must be valid.
 */
enum ClustevoStatus clustevo_dual_consistency_offset(const struct ClustevoDualRun *run,
                                                     uint32_t kind_tag,
                                                     int64_t *offset_out);

/**
 * Lag used by the anomaly stage.
 *
 * # Safety
 * `run` must come from this library; `tau_out` must be valid.
 */
enum ClustevoStatus clustevo_dual_anomaly_lag(const struct ClustevoDualRun *run, int64_t *tau_out);

/**
 * # Safety
 * `run` must come from this library or be null.
 */
void clustevo_dual_free(struct ClustevoDualRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLUSTEVO_H */
