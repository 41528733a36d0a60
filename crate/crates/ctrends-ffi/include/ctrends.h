/* C API for the ctrends library. */

#ifndef CTRENDS_H
#define CTRENDS_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every function. */
#define CTRENDS_OK 0
#define CTRENDS_ERR_NULL_POINTER 1
#define CTRENDS_ERR_INVALID_ARGUMENT 2
#define CTRENDS_ERR_COMPUTATION 3
#define CTRENDS_ERR_NO_DECISION 4
#define CTRENDS_ERR_PANIC 5

/* Opaque handle to a coordinate time series. */
typedef struct CtSeries CtSeries;

/* Opaque handle to a critical-value table store. */
typedef struct CtStore CtStore;

/* Result of a single hypothesis test. */
typedef struct CtTestResult {
  double statistic;
  double critical_value;
  double p_lower;
  double p_upper;
  /* 1 if the null is rejected at the requested level, else 0. */
  int reject;
  int h_l;
  int h_r;
} CtTestResult;

/*
 * Returns the error message for the last failing call on this thread.
 * The pointer is valid until the next failing call on the same thread.
 */
const char *ctrends_last_error(void);

/* Builds a series from a row-major t-by-p array of coordinates. */
int ctrends_series_new(const double *values, size_t t, size_t p, CtSeries **out);

void ctrends_series_free(CtSeries *series);

/*
 * Opens a table store. `dir` may be NULL to use the CTRENDS_TABLE_DIR
 * environment variable (tables are simulated on demand when absent).
 */
int ctrends_store_new(const char *dir, CtStore **out);

void ctrends_store_free(CtStore *store);

/*
 * Runs a variance-ratio test. `test`: 0 = VR(2,1), 1 = VR(2,0), 2 = VR(1,0),
 * 3 = inverse VR. `det`: 0 = none, 1 = intercept, 2 = trend. `k` = 0 keeps
 * the default projection rank d0+2.
 */
int ctrends_vr_test(const CtSeries *series, const CtStore *store, int test,
                    size_t d0, size_t k, int det, double alpha,
                    CtTestResult *out);

/*
 * Estimates the number of common stochastic trends. `method`: 0 = top-down
 * sequence of VR(2,1) tests, 1 = bottom-up sequence of inverse VR tests,
 * 2 = combined up-down procedure, 3 = eigenvalue-ratio estimator,
 * 4 = stationary-subspace eigenvalue estimator. `d_max` = 0 selects
 * min(p - 1, 8).
 */
int ctrends_estimate_dim(const CtSeries *series, const CtStore *store,
                         int method, int det, size_t d_max, double alpha,
                         size_t *out);

#ifdef __cplusplus
}
#endif

#endif /* CTRENDS_H */
