#ifndef VOLNET_H
#define VOLNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VolnetProtocol {
  VOLNET_PROTOCOL_RECURSIVE = 0,
  VOLNET_PROTOCOL_ROLLING_ORIGIN = 1,
} VolnetProtocol;

typedef enum VolnetStatus {
  VOLNET_STATUS_OK = 0,
  VOLNET_STATUS_NULL_POINTER = 1,
  VOLNET_STATUS_INVALID_UTF8 = 2,
  VOLNET_STATUS_IO = 3,
  VOLNET_STATUS_INVALID_INPUT = 4,
  VOLNET_STATUS_NUMERICAL = 5,
  VOLNET_STATUS_PANEL_TOO_SHORT = 6,
  VOLNET_STATUS_BUFFER_TOO_SMALL = 7,
  VOLNET_STATUS_PANIC = 8,
} VolnetStatus;

/**
 * Spillover graph, full and sparsified.
 */
typedef struct VolnetGraph VolnetGraph;

/**
 * Trained forecaster.
 */
typedef struct VolnetModel VolnetModel;

/**
 * Realized-volatility panel.
 */
typedef struct VolnetPanel VolnetPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Owned by the library.
 */
const char *volnet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *volnet_version(void);

/**
 * Loads a wide CSV panel (`date` column then one column per index; empty
 * cells are inactive days). `variance != 0` means cells hold realized
 * variance rather than its square root.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum VolnetStatus volnet_panel_load_csv(const char *path,
                                        int32_t variance,
                                        struct VolnetPanel **out);

/**
 * # Safety
 * `panel` must come from `volnet_panel_load_csv` or be null.
 */
void volnet_panel_free(struct VolnetPanel *panel);

/**
 * # Safety
 * `panel` must be a live handle; `rows` and `indices` writable.
 */
enum VolnetStatus volnet_panel_shape(const struct VolnetPanel *panel,
                                     size_t *rows,
                                     size_t *indices);

/**
 * Whole-sample spillover graph: VAR(`p`), generalized decomposition at
 * `horizon`, then the top `keep` fraction of off-diagonal edges.
 *
 * # Safety
 * `panel` must be a live handle and `out` writable.
 */
enum VolnetStatus volnet_spillover(const struct VolnetPanel *panel,
                                   size_t p,
                                   size_t horizon,
                                   double keep,
                                   struct VolnetGraph **out);

/**
 * # Safety
 * `graph` must come from `volnet_spillover` or be null.
 */
void volnet_graph_free(struct VolnetGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle.
 */
size_t volnet_graph_nodes(const struct VolnetGraph *graph);

/**
 * Copies the N × N adjacency row-major into `buf`. `sparse != 0` selects
 * the sparsified matrix.
 *
 * # Safety
 * `graph` must be a live handle and `buf` valid for `len` doubles.
 */
enum VolnetStatus volnet_graph_adjacency(const struct VolnetGraph *graph,
                                         int32_t sparse,
                                         double *buf,
                                         size_t len);

/**
 * Net spillover per index of the full graph.
 *
 * # Safety
 * `graph` must be a live handle and `buf` valid for `len` doubles.
 */
enum VolnetStatus volnet_graph_net(const struct VolnetGraph *graph, double *buf, size_t len);

/**
 * Loads a `model.json` written by `volnet train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum VolnetStatus volnet_model_load(const char *path, struct VolnetModel **out);

/**
 * # Safety
 * `model` must come from `volnet_model_load` or be null.
 */
void volnet_model_free(struct VolnetModel *model);

/**
 * Iterated forecasts over the model's test dates of `panel`, reduced to
 * one MAFE per index (original scale).
 *
 * # Safety
 * Handles must be live and `buf` valid for `len` doubles.
 */
enum VolnetStatus volnet_model_mafe(const struct VolnetModel *model,
                                    const struct VolnetPanel *panel,
                                    enum VolnetProtocol protocol,
                                    double *buf,
                                    size_t len);

/**
 * Diebold–Mariano test on two forecast-error series of length `len`.
 * Writes the statistic and the one-sided p-value (small favours model 1).
 *
 * # Safety
 * `e0` and `e1` must be valid for `len` doubles; outputs writable.
 */
enum VolnetStatus volnet_dm_test(const double *e0,
                                 const double *e1,
                                 size_t len,
                                 size_t horizon,
                                 double *statistic,
                                 double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLNET_H */
