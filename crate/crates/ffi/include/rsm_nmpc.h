#ifndef RSM_NMPC_H
#define RSM_NMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every call.
typedef enum RsmStatus {
  RSM_STATUS_OK = 0,
  RSM_STATUS_NULL_POINTER = 1,
  RSM_STATUS_INVALID_ARGUMENT = 2,
  // Newton, Riccati or inversion failure, or a singular matrix.
  RSM_STATUS_NUMERICAL = 3,
  // The QP solver reported an error.
  RSM_STATUS_QP = 4,
  RSM_STATUS_IO = 5,
  RSM_STATUS_PARSE = 6,
  // The simulation has no samples left.
  RSM_STATUS_FINISHED = 7,
  RSM_STATUS_PANIC = 99,
} RsmStatus;

// NMPC current controller with its MTPA table.
typedef struct RsmController RsmController;

// Disturbance-augmented EKF with the tabulated measurement map.
typedef struct RsmEstimator RsmEstimator;

// Closed-loop simulation.
typedef struct RsmSimulation RsmSimulation;

// Output of one controller sample.
typedef struct RsmControlOutput {
  double u_d;
  double u_q;
  uint32_t qp_iters;
  double step_norm;
  // Non-zero when the QP failed and the previous command was held.
  uint32_t degraded;
} RsmControlOutput;

// One logged sample, mirroring the CSV columns.
typedef struct RsmLogRow {
  double t;
  double i_d;
  double i_q;
  double psi_hat_d;
  double psi_hat_q;
  double v_e_d;
  double v_e_q;
  double u_ref_d;
  double u_ref_q;
  double u_applied_d;
  double u_applied_q;
  double m_bar;
  double m_m;
  double omega;
  uint32_t qp_iters;
  double step_time;
} RsmLogRow;

// Message of the last failed call on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *rsm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rsm_version(void);

// Flux linkage of the grey-box map at current `i[2]`.
//
// `params` points to 8 coefficients in the order
// `c0_d, c1_d, c2_d, sigma_d, c0_q, c1_q, c2_q, sigma_q`, or is null for the
// reference set.
//
// # Safety
// `i` and `psi_out` must point to 2 doubles; `params` to 8 or be null.
enum RsmStatus rsm_flux_eval(const double *params, const double *i, double *psi_out);

// Electromagnetic torque for current `i[2]` and flux `psi[2]`.
//
// # Safety
// `i`, `psi` must point to 2 doubles and `torque_out` to one.
enum RsmStatus rsm_torque(const double *i, const double *psi, uint32_t np, double *torque_out);

// Highest mechanical speed at which the operating point `(i, psi)` is
// reachable within the voltage disk.
//
// # Safety
// `i`, `psi` must point to 2 doubles and `omega_out` to one.
enum RsmStatus rsm_omega_limit(const double *i,
                               const double *psi,
                               double udc,
                               double rs,
                               uint32_t np,
                               double *omega_out);

// Build a controller from config text (null for defaults).
//
// # Safety
// `config` must be null or a NUL-terminated string; `out` must be valid.
enum RsmStatus rsm_controller_new(const char *config, struct RsmController **out);

// One real-time iteration: flux estimate `psi_e[2]`, disturbance `v_e[2]`,
// electrical speed and torque command in, voltage command out.
//
// # Safety
// `ctl` must come from [`rsm_controller_new`]; vectors point to 2 doubles.
enum RsmStatus rsm_controller_step(struct RsmController *ctl,
                                   const double *psi_e,
                                   const double *v_e,
                                   double omega_e,
                                   double m_bar,
                                   struct RsmControlOutput *out);

// # Safety
// `ctl` must be null or come from [`rsm_controller_new`] and not be used
// afterwards.
void rsm_controller_free(struct RsmController *ctl);

// Build an estimator from config text (null for defaults).
//
// # Safety
// `config` must be null or a NUL-terminated string; `out` must be valid.
enum RsmStatus rsm_estimator_new(const char *config, struct RsmEstimator **out);

// Measurement update with a current sample `i_meas[2]`.
//
// # Safety
// `est` must come from [`rsm_estimator_new`]; `i_meas` points to 2 doubles.
enum RsmStatus rsm_estimator_update(struct RsmEstimator *est, const double *i_meas);

// Time update over `ts` with the applied voltage `u[2]`.
//
// # Safety
// `est` must come from [`rsm_estimator_new`]; `u` points to 2 doubles.
enum RsmStatus rsm_estimator_predict(struct RsmEstimator *est,
                                     const double *u,
                                     double omega_e,
                                     double ts);

// Current flux estimate and disturbance estimate (either may be null).
//
// # Safety
// `est` must come from [`rsm_estimator_new`]; non-null outputs point to 2
// doubles.
enum RsmStatus rsm_estimator_state(const struct RsmEstimator *est, double *psi_out, double *v_out);

// # Safety
// `est` must be null or come from [`rsm_estimator_new`] and not be used
// afterwards.
void rsm_estimator_free(struct RsmEstimator *est);

// Build a simulation from config text (null for defaults).
//
// # Safety
// `config` must be null or a NUL-terminated string; `out` must be valid.
enum RsmStatus rsm_simulation_new(const char *config, struct RsmSimulation **out);

// Advance one sample; returns [`RsmStatus::Finished`] once the scenario is
// over. `row_out` may be null.
//
// # Safety
// `sim` must come from [`rsm_simulation_new`].
enum RsmStatus rsm_simulation_step(struct RsmSimulation *sim, struct RsmLogRow *row_out);

// Run the remaining samples. `invariants_ok` (nullable) receives 1 when all
// run-time invariants held.
//
// # Safety
// `sim` must come from [`rsm_simulation_new`].
enum RsmStatus rsm_simulation_run(struct RsmSimulation *sim, uint32_t *invariants_ok);

// Number of samples logged so far.
//
// # Safety
// `sim` must come from [`rsm_simulation_new`].
enum RsmStatus rsm_simulation_len(const struct RsmSimulation *sim, size_t *len_out);

// Write the log collected so far as CSV.
//
// # Safety
// `sim` must come from [`rsm_simulation_new`]; `path` must be a
// NUL-terminated string.
enum RsmStatus rsm_simulation_write_csv(const struct RsmSimulation *sim, const char *path);

// # Safety
// `sim` must be null or come from [`rsm_simulation_new`] and not be used
// afterwards.
void rsm_simulation_free(struct RsmSimulation *sim);

#endif  /* RSM_NMPC_H */
