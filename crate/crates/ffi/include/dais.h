#ifndef DAIS_H
#define DAIS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DaisStatus {
  DAIS_STATUS_OK = 0,
  DAIS_STATUS_NULL_POINTER = 1,
  DAIS_STATUS_INVALID_ARGUMENT = 2,
  DAIS_STATUS_NUMERICAL = 3,
  DAIS_STATUS_IO = 4,
  DAIS_STATUS_PANIC = 5,
} DaisStatus;

typedef enum DaisMethod {
  DAIS_METHOD_VI = 0,
  DAIS_METHOD_IWVI = 1,
  DAIS_METHOD_DAIS = 2,
  DAIS_METHOD_MSC = 3,
} DaisMethod;

/* Opaque target density. */
typedef struct DaisTarget DaisTarget;

/* Opaque trained model. */
typedef struct DaisModel DaisModel;

/* Training settings; fill with dais_train_options_default. */
typedef struct DaisTrainOptions {
  DaisMethod method;
  size_t n_particles;
  size_t k;
  size_t n_chains;
  double lr;
  size_t iterations;
  uint64_t seed;
  /* Nonzero for a scalar mass cI instead of a diagonal. */
  int32_t scalar_mass;
} DaisTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif

/* Copies the calling thread's last error message into buf (NUL terminated,
 * truncated to len). Returns the full message length. */
size_t dais_last_error_message(char *buf, size_t len);

/* f(z) = exp(log_z) * N(z; mean, diag(std^2)). */
DaisStatus dais_target_gaussian(const double *mean,
                                const double *std,
                                size_t d,
                                double log_z,
                                DaisTarget **out);

/* Equal mixture of N(0, 0.25^2 I) and N(1, 0.25^2 I) in d dimensions. */
DaisStatus dais_target_bimodal(size_t d, DaisTarget **out);

/* GP regression posterior over d random grid points with lengthscale rho. */
DaisStatus dais_target_gp(double rho, size_t d, uint64_t seed, DaisTarget **out);

/* Logistic regression posterior from a dataset schema file (TOML). */
DaisStatus dais_target_logreg(const char *schema_path, DaisTarget **out);

void dais_target_free(DaisTarget *t);

DaisStatus dais_target_dim(const DaisTarget *t, size_t *out);

/* Unnormalized log density and, when grad is non-null, its gradient. */
DaisStatus dais_target_log_density(const DaisTarget *t,
                                   const double *z,
                                   size_t d,
                                   double *out,
                                   double *grad);

DaisStatus dais_train_options_default(DaisTrainOptions *out);

/* Trains from q = N(init_mean, I); init_mean may be null for zeros. */
DaisStatus dais_train(const DaisTarget *t,
                      const DaisTrainOptions *opts,
                      const double *init_mean,
                      DaisModel **out);

void dais_model_free(DaisModel *m);

/* Mean and standard deviation of the learned q (q0 for DAIS). */
DaisStatus dais_model_q(const DaisModel *m, double *mean, double *std, size_t d);

DaisStatus dais_model_final_objective(const DaisModel *m, double *out);

/* Average of n_batches bound estimates with n_particles each. */
DaisStatus dais_model_bound(const DaisModel *m,
                            const DaisTarget *t,
                            size_t n_particles,
                            size_t n_batches,
                            uint64_t seed,
                            double *out);

/* Single-particle AIS gap with perfect transitions and K equal steps. */
DaisStatus dais_perfect_gap(const double *q0_mean,
                            const double *q0_std,
                            const double *f_mean,
                            const double *f_std,
                            size_t d,
                            double log_z,
                            size_t k,
                            double *out);

/* KL(f || q0) / 2 + KL(q0 || f) / 2 for two diagonal Gaussians. */
DaisStatus dais_symmetrized_kl(const double *q0_mean,
                               const double *q0_std,
                               const double *f_mean,
                               const double *f_std,
                               size_t d,
                               double *out);

#ifdef __cplusplus
}  /* extern "C" */
#endif

#endif  /* DAIS_H */
