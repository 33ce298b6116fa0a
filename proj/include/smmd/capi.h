#ifndef SMMD_CAPI_H
#define SMMD_CAPI_H

/* C interface to the kernel-discrepancy library. All objects are opaque
 * handles created and destroyed here; every call returns a status code and
 * the last error message is kept per thread. Numeric results and run outputs
 * are returned as JSON/CSV text or written to files, so the surface stays
 * stable across language boundaries.
 *
 * Status codes double as process exit codes for the CLI:
 *   0 ok, 2 malformed input, 3 numerical failure, 4 internal error.
 */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  SMMD_OK = 0,
  SMMD_ERR_INPUT = 2,
  SMMD_ERR_NUMERIC = 3,
  SMMD_ERR_INTERNAL = 4
} smmd_status;

typedef struct smmd_matrix_s smmd_matrix;
typedef struct smmd_kernel_s smmd_kernel;
typedef struct smmd_net_s smmd_net;

/* Last error message for the calling thread (empty string if none). The
 * pointer stays valid until the next failing call on the same thread. */
const char* smmd_last_error(void);

/* Frees any char* returned through an out-parameter. */
void smmd_string_free(char* text);

/* ---- matrices (row-major, samples as rows) ---- */
smmd_status smmd_matrix_create(const double* row_major, size_t rows, size_t cols,
                               smmd_matrix** out);
smmd_status smmd_matrix_read_csv(const char* path, smmd_matrix** out);
size_t smmd_matrix_rows(const smmd_matrix* m);
size_t smmd_matrix_cols(const smmd_matrix* m);
smmd_status smmd_matrix_get(const smmd_matrix* m, size_t row, size_t col, double* out);
void smmd_matrix_free(smmd_matrix* m);

/* ---- kernels (JSON descriptions, see docs/formats.md) ---- */
smmd_status smmd_kernel_parse(const char* json, smmd_kernel** out);
smmd_status smmd_kernel_to_json(const smmd_kernel* k, char** json_out);
smmd_status smmd_kernel_eval(const smmd_kernel* k, const double* x, const double* y,
                             size_t dim, double* out);
void smmd_kernel_free(smmd_kernel* k);

/* ---- critic networks ---- */
smmd_status smmd_net_parse(const char* json, smmd_net** out);
smmd_status smmd_net_to_json(const smmd_net* n, char** json_out);
smmd_status smmd_net_forward(const smmd_net* n, const double* x, size_t in_dim,
                             double* out, size_t out_dim);
void smmd_net_free(smmd_net* n);

/* ---- estimators ----
 * options JSON: {"method": "mmd2_unbiased" | "mmd2_biased" | "mmd2_block" |
 *                "smmd" | "gcmmd" | "gcmmd_lowrank" | "lipmmd" |
 *                "wasserstein1d",
 *                "lambda": 1.0, "blocks": 2, "support_size": 64,
 *                "chol_tol": 1e-8, "max_rank": 128, "z_points": 64}
 * mu may be NULL; it then defaults to the x batch (truncated to
 * support_size for the support-system methods). */
smmd_status smmd_estimate(const smmd_kernel* k, const smmd_matrix* x,
                          const smmd_matrix* y, const smmd_matrix* mu,
                          const char* options_json, char** result_json);

/* ---- figure/data verbs (specs documented in docs/formats.md) ---- */
smmd_status smmd_dirac_field(const char* spec_json, const char* out_csv_path,
                             const char* trajectories_csv_path /* nullable */);
smmd_status smmd_isolines(const char* spec_json, const char* out_csv_path);
smmd_status smmd_critic_field(const char* spec_json, const char* out_csv_path);
smmd_status smmd_train(const char* config_json, const char* out_dir);

/* Runs the built-in oracle/invariant battery. Returns SMMD_OK with
 * *failures_out == 0 when everything passes; name_filter selects checks by
 * substring (NULL runs all fast checks; include_slow adds the long ones). */
smmd_status smmd_selftest(const char* name_filter, int verbose, int include_slow,
                          int* failures_out);

#ifdef __cplusplus
}
#endif

#endif /* SMMD_CAPI_H */
