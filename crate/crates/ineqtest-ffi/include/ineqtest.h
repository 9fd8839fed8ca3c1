#ifndef INEQTEST_H
#define INEQTEST_H

/* Generated by cbindgen from the ineqtest-ffi sources; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Success.
 */
#define IT_OK 0

/*
 A pointer, length, or value argument was unusable.
 */
#define IT_ERR_INVALID_ARG 1

/*
 The configuration rejects this combination of settings.
 */
#define IT_ERR_CONFIG 2

/*
 The variance estimate is degenerate; the statistic is undefined.
 */
#define IT_ERR_DEGENERATE 3

/*
 A required pointer was null.
 */
#define IT_ERR_NULLPTR 4

/*
 A string argument was not valid UTF-8.
 */
#define IT_ERR_UTF8 5

/*
 An internal panic was caught at the boundary.
 */
#define IT_ERR_PANIC 6

/*
 Opaque test configuration handle.
 */
typedef struct ItConfig ItConfig;

/*
 Opaque sample handle: covariates plus one or more response columns.
 */
typedef struct ItDataset ItDataset;

/*
 Opaque result handle for a completed test run.
 */
typedef struct ItReport ItReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Last error message for the calling thread, or null if the most recent
 call succeeded. The pointer is valid until the next library call on the
 same thread; do not free it.
 */
const char *it_last_error(void);

/*
 Builds a dataset from flat arrays: `x` is row-major `n * d`, `y` is
 row-major `n * n_outcomes`. The arrays are copied.

 # Safety
 `x` must point to `n * d` doubles and `y` to `n * n_outcomes` doubles.
 */
int it_dataset_new(const double *x,
                   size_t n,
                   size_t d,
                   const double *y,
                   size_t n_outcomes,
                   struct ItDataset **out);

/*
 Reads a dataset from a CSV file with headers `x1..xd` and `y1..yJ`.
 Rows with missing or non-numeric cells are an error here (the line
 numbers are listed in the message): the C interface never silently
 drops data.

 # Safety
 `path` must be a NUL-terminated string.
 */
int it_dataset_from_csv(const char *path, struct ItDataset **out);

/*
 Number of observations.
 */
size_t it_dataset_n(const struct ItDataset *dataset);

/*
 Number of response columns.
 */
size_t it_dataset_outcomes(const struct ItDataset *dataset);

/*
 Frees a dataset handle. Null is ignored.
 */
void it_dataset_free(struct ItDataset *dataset);

/*
 Creates a configuration with the given evaluation domain, written as
 one `lo:hi` pair per axis, comma-separated (for example `"0.05:0.95"`).
 All other settings start at their defaults: p = 1, inequality mode,
 5% level, quartic kernel, bandwidth rule scale 1.

 # Safety
 `domain` must be a NUL-terminated string.
 */
int it_config_new(const char *domain, struct ItConfig **out);

/*
 Sets the penalty exponent (p >= 1; validated when the test runs).
 */
int it_config_set_p(struct ItConfig *config, double p);

/*
 Selects `"inequality"` (one-sided) or `"equality"` (two-sided) testing.

 # Safety
 `mode` must be a NUL-terminated string.
 */
int it_config_set_mode(struct ItConfig *config, const char *mode);

/*
 Sets the test level (must land in (0, 1); validated when the test runs).
 */
int it_config_set_alpha(struct ItConfig *config, double alpha);

/*
 Uses an absolute bandwidth instead of the sample-size rule.
 */
int it_config_set_bandwidth(struct ItConfig *config, double h);

/*
 Uses the bandwidth rule `c_h * sd(X) * n^(-1/5)` with the given scale.
 */
int it_config_set_bandwidth_scale(struct ItConfig *config, double c_h);

/*
 Selects the smoothing kernel by name: `"quartic2u"`, `"uniform"`, or
 `"triangular"`.

 # Safety
 `name` must be a NUL-terminated string.
 */
int it_config_set_kernel(struct ItConfig *config, const char *name);

/*
 Selects the weight scheme: `"uniform"` or `"inverse-se"`, optionally
 suffixed with `"+rescale"` to normalize the plug-in variance to one.

 # Safety
 `scheme` must be a NUL-terminated string.
 */
int it_config_set_weights(struct ItConfig *config, const char *scheme);

/*
 Sets the evaluation grid resolution per axis (same count on each axis).
 */
int it_config_set_grid(struct ItConfig *config, size_t per_axis);

/*
 Frees a configuration handle. Null is ignored.
 */
void it_config_free(struct ItConfig *config);

/*
 Runs the test and hands back a report handle.

 Configuration is validated here, not in the setters: an out-of-range
 level, bandwidth, grid, or similar surfaces as `IT_ERR_CONFIG` from
 this call, with the detail available from `it_last_error`.
 */
int it_run_test(const struct ItDataset *dataset,
                const struct ItConfig *config,
                struct ItReport **out);

/*
 The studentized statistic. NaN if the handle is null.
 */
double it_report_statistic(const struct ItReport *report);

/*
 The one-sided p-value. NaN if the handle is null.
 */
double it_report_p_value(const struct ItReport *report);

/*
 1 if the test rejects at the configured level, 0 otherwise (or if the
 handle is null).
 */
int it_report_reject(const struct ItReport *report);

/*
 Serializes the full report (statistic, functionals, diagnostics, and
 the resolved configuration) as a JSON string. The caller owns the
 returned string and must release it with [`it_string_free`].
 */
int it_report_to_json(const struct ItReport *report, char **out);

/*
 Frees a string produced by this library. Null is ignored.

 # Safety
 `s` must have been returned by a function of this library.
 */
void it_string_free(char *s);

/*
 Frees a report handle. Null is ignored.
 */
void it_report_free(struct ItReport *report);

/*
 Library version as a static string; do not free.
 */
const char *it_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INEQTEST_H */
