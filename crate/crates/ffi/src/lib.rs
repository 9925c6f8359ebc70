//! C ABI over `rsm-nmpc`.
//!
//! Every entry point returns an [`RsmStatus`]; on failure a description is
//! available from [`rsm_last_error_message`] on the same thread. Objects are
//! opaque handles created by `*_new` and released by the matching `*_free`.
//! Panics never cross the boundary; they are reported as [`RsmStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rsm_nmpc::estimator::{EkfState, Mat4};
use rsm_nmpc::flux_model::{FluxGrid, FluxMap, GreyBoxParams};
use rsm_nmpc::machine::{self, MachineParams};
use rsm_nmpc::mtpa::{self, MtpaLut};
use rsm_nmpc::nmpc::{NmpcController, OcpConfig};
use rsm_nmpc::sim::{LogRow, SimConfig, Simulation};
use rsm_nmpc::{Error, Mat2, Vec2};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Newton, Riccati or inversion failure, or a singular matrix.
    Numerical = 3,
    /// The QP solver reported an error.
    Qp = 4,
    Io = 5,
    Parse = 6,
    /// The simulation has no samples left.
    Finished = 7,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> RsmStatus {
    match err {
        Error::InvalidParameter(_) | Error::Domain(_) | Error::InfeasibleTorque { .. } => {
            RsmStatus::InvalidArgument
        }
        Error::NoConvergence { .. }
        | Error::SingularJacobian(_)
        | Error::NoPositiveRoot
        | Error::SingularInnovation => RsmStatus::Numerical,
        Error::Qp(_) => RsmStatus::Qp,
        Error::Io(_) | Error::Csv(_) => RsmStatus::Io,
        Error::Parse { .. } => RsmStatus::Parse,
    }
}

/// Failure inside a call: a status plus message.
struct Failure(RsmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RsmStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RsmStatus::Panic
        }
    }
}

unsafe fn read2(p: *const f64, what: &str) -> Result<Vec2, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(Vec2::new(*p, *p.add(1)))
}

unsafe fn write2(p: *mut f64, v: Vec2, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    *p = v[0];
    *p.add(1) = v[1];
    Ok(())
}

/// Parse optional config text; null means defaults.
unsafe fn config_from(text: *const c_char) -> Result<SimConfig, Failure> {
    if text.is_null() {
        return Ok(SimConfig::default());
    }
    let s = CStr::from_ptr(text)
        .to_str()
        .map_err(|_| Failure(RsmStatus::InvalidArgument, "config is not UTF-8".into()))?;
    Ok(SimConfig::parse(s)?)
}

unsafe fn params_from(p: *const f64) -> Result<GreyBoxParams, Failure> {
    if p.is_null() {
        return Ok(GreyBoxParams::REFERENCE);
    }
    let mut a = [0.0; 8];
    a.copy_from_slice(std::slice::from_raw_parts(p, 8));
    let params = GreyBoxParams::from_array(a);
    params.validate()?;
    Ok(params)
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rsm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Flux linkage of the grey-box map at current `i[2]`.
///
/// `params` points to 8 coefficients in the order
/// `c0_d, c1_d, c2_d, sigma_d, c0_q, c1_q, c2_q, sigma_q`, or is null for the
/// reference set.
///
/// # Safety
/// `i` and `psi_out` must point to 2 doubles; `params` to 8 or be null.
#[no_mangle]
pub unsafe extern "C" fn rsm_flux_eval(params: *const f64, i: *const f64, psi_out: *mut f64) -> RsmStatus {
    guard(|| {
        let p = params_from(params)?;
        let i = read2(i, "i")?;
        write2(psi_out, p.flux(i), "psi_out")
    })
}

/// Electromagnetic torque for current `i[2]` and flux `psi[2]`.
///
/// # Safety
/// `i`, `psi` must point to 2 doubles and `torque_out` to one.
#[no_mangle]
pub unsafe extern "C" fn rsm_torque(i: *const f64, psi: *const f64, np: u32, torque_out: *mut f64) -> RsmStatus {
    guard(|| {
        let (i, psi) = (read2(i, "i")?, read2(psi, "psi")?);
        if torque_out.is_null() {
            return Err(null("torque_out"));
        }
        *torque_out = machine::torque(i, psi, np);
        Ok(())
    })
}

/// Highest mechanical speed at which the operating point `(i, psi)` is
/// reachable within the voltage disk.
///
/// # Safety
/// `i`, `psi` must point to 2 doubles and `omega_out` to one.
#[no_mangle]
pub unsafe extern "C" fn rsm_omega_limit(
    i: *const f64,
    psi: *const f64,
    udc: f64,
    rs: f64,
    np: u32,
    omega_out: *mut f64,
) -> RsmStatus {
    guard(|| {
        let (i, psi) = (read2(i, "i")?, read2(psi, "psi")?);
        if omega_out.is_null() {
            return Err(null("omega_out"));
        }
        *omega_out = mtpa::omega_limit(i, psi, udc, rs, np)?;
        Ok(())
    })
}

/// NMPC current controller with its MTPA table.
pub struct RsmController {
    ctl: NmpcController<GreyBoxParams>,
    lut: MtpaLut,
}

/// Output of one controller sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RsmControlOutput {
    pub u_d: f64,
    pub u_q: f64,
    pub qp_iters: u32,
    pub step_norm: f64,
    /// Non-zero when the QP failed and the previous command was held.
    pub degraded: u32,
}

/// Build a controller from config text (null for defaults).
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rsm_controller_new(config: *const c_char, out: *mut *mut RsmController) -> RsmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config_from(config)?;
        let m: &MachineParams = &cfg.machine;
        let n = &cfg.nmpc;
        let ocp = OcpConfig::with_weights(
            m,
            &cfg.model,
            n.n_nodes,
            n.horizon,
            n.ts,
            Mat2::identity() * n.w_psi,
            Mat2::identity() * n.w_u,
        )?;
        let lut = MtpaLut::build(&cfg.model, m.np, cfg.lut_m_max, cfg.lut_points, m.current_limit())?;
        *out = Box::into_raw(Box::new(RsmController {
            ctl: NmpcController::new(ocp, cfg.model),
            lut,
        }));
        Ok(())
    })
}

/// One real-time iteration: flux estimate `psi_e[2]`, disturbance `v_e[2]`,
/// electrical speed and torque command in, voltage command out.
///
/// # Safety
/// `ctl` must come from [`rsm_controller_new`]; vectors point to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_controller_step(
    ctl: *mut RsmController,
    psi_e: *const f64,
    v_e: *const f64,
    omega_e: f64,
    m_bar: f64,
    out: *mut RsmControlOutput,
) -> RsmStatus {
    guard(|| {
        let c = ctl.as_mut().ok_or_else(|| null("ctl"))?;
        let (psi_e, v_e) = (read2(psi_e, "psi_e")?, read2(v_e, "v_e")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = c.ctl.rti_step(psi_e, v_e, omega_e, m_bar, &c.lut)?;
        *out = RsmControlOutput {
            u_d: r.u0[0],
            u_q: r.u0[1],
            qp_iters: r.qp_iters as u32,
            step_norm: r.step_norm,
            degraded: u32::from(r.degraded),
        };
        Ok(())
    })
}

/// # Safety
/// `ctl` must be null or come from [`rsm_controller_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsm_controller_free(ctl: *mut RsmController) {
    if !ctl.is_null() {
        drop(Box::from_raw(ctl));
    }
}

/// Disturbance-augmented EKF with the tabulated measurement map.
pub struct RsmEstimator {
    ekf: EkfState,
    grid: FluxGrid,
    model: GreyBoxParams,
    rs: f64,
}

/// Build an estimator from config text (null for defaults).
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rsm_estimator_new(config: *const c_char, out: *mut *mut RsmEstimator) -> RsmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config_from(config)?;
        let mut q = Mat4::zeros();
        for (k, v) in [cfg.ekf.q_psi, cfg.ekf.q_psi, cfg.ekf.q_v, cfg.ekf.q_v].into_iter().enumerate() {
            q[(k, k)] = v;
        }
        let ekf = EkfState::new(Vec2::zeros(), Vec2::zeros(), q, q, Mat2::identity() * cfg.ekf.r_psi)?;
        let grid = FluxGrid::symmetric(&cfg.model, cfg.meas_grid_max, cfg.meas_grid_points)?;
        *out = Box::into_raw(Box::new(RsmEstimator {
            ekf,
            grid,
            model: cfg.model,
            rs: cfg.machine.rs,
        }));
        Ok(())
    })
}

/// Measurement update with a current sample `i_meas[2]`.
///
/// # Safety
/// `est` must come from [`rsm_estimator_new`]; `i_meas` points to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_estimator_update(est: *mut RsmEstimator, i_meas: *const f64) -> RsmStatus {
    guard(|| {
        let e = est.as_mut().ok_or_else(|| null("est"))?;
        let i = read2(i_meas, "i_meas")?;
        e.ekf.update(i, &e.grid)?;
        Ok(())
    })
}

/// Time update over `ts` with the applied voltage `u[2]`.
///
/// # Safety
/// `est` must come from [`rsm_estimator_new`]; `u` points to 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_estimator_predict(
    est: *mut RsmEstimator,
    u: *const f64,
    omega_e: f64,
    ts: f64,
) -> RsmStatus {
    guard(|| {
        let e = est.as_mut().ok_or_else(|| null("est"))?;
        let u = read2(u, "u")?;
        e.ekf.predict(u, omega_e, ts, &e.model, e.rs)?;
        Ok(())
    })
}

/// Current flux estimate and disturbance estimate (either may be null).
///
/// # Safety
/// `est` must come from [`rsm_estimator_new`]; non-null outputs point to 2
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn rsm_estimator_state(
    est: *const RsmEstimator,
    psi_out: *mut f64,
    v_out: *mut f64,
) -> RsmStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        if !psi_out.is_null() {
            write2(psi_out, e.ekf.psi_e, "psi_out")?;
        }
        if !v_out.is_null() {
            write2(v_out, e.ekf.v_e, "v_out")?;
        }
        Ok(())
    })
}

/// # Safety
/// `est` must be null or come from [`rsm_estimator_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsm_estimator_free(est: *mut RsmEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Closed-loop simulation.
pub struct RsmSimulation {
    sim: Simulation,
    rows: Vec<LogRow>,
}

/// One logged sample, mirroring the CSV columns.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RsmLogRow {
    pub t: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub psi_hat_d: f64,
    pub psi_hat_q: f64,
    pub v_e_d: f64,
    pub v_e_q: f64,
    pub u_ref_d: f64,
    pub u_ref_q: f64,
    pub u_applied_d: f64,
    pub u_applied_q: f64,
    pub m_bar: f64,
    pub m_m: f64,
    pub omega: f64,
    pub qp_iters: u32,
    pub step_time: f64,
}

impl From<&LogRow> for RsmLogRow {
    fn from(r: &LogRow) -> Self {
        RsmLogRow {
            t: r.t,
            i_d: r.i[0],
            i_q: r.i[1],
            psi_hat_d: r.psi_hat[0],
            psi_hat_q: r.psi_hat[1],
            v_e_d: r.v_e[0],
            v_e_q: r.v_e[1],
            u_ref_d: r.u_ref[0],
            u_ref_q: r.u_ref[1],
            u_applied_d: r.u_applied[0],
            u_applied_q: r.u_applied[1],
            m_bar: r.m_bar,
            m_m: r.m_m,
            omega: r.omega,
            qp_iters: r.qp_iters as u32,
            step_time: r.step_time,
        }
    }
}

/// Build a simulation from config text (null for defaults).
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rsm_simulation_new(config: *const c_char, out: *mut *mut RsmSimulation) -> RsmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = config_from(config)?;
        let sim = Simulation::new(&cfg)?;
        *out = Box::into_raw(Box::new(RsmSimulation { sim, rows: Vec::new() }));
        Ok(())
    })
}

/// Advance one sample; returns [`RsmStatus::Finished`] once the scenario is
/// over. `row_out` may be null.
///
/// # Safety
/// `sim` must come from [`rsm_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn rsm_simulation_step(sim: *mut RsmSimulation, row_out: *mut RsmLogRow) -> RsmStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        if s.sim.finished() {
            return Err(Failure(RsmStatus::Finished, "simulation finished".into()));
        }
        let row = s.sim.step()?;
        if let Some(out) = row_out.as_mut() {
            *out = RsmLogRow::from(&row);
        }
        s.rows.push(row);
        Ok(())
    })
}

/// Run the remaining samples. `invariants_ok` (nullable) receives 1 when all
/// run-time invariants held.
///
/// # Safety
/// `sim` must come from [`rsm_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn rsm_simulation_run(sim: *mut RsmSimulation, invariants_ok: *mut u32) -> RsmStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        while !s.sim.finished() {
            let row = s.sim.step()?;
            s.rows.push(row);
        }
        if let Some(ok) = invariants_ok.as_mut() {
            *ok = u32::from(s.sim.invariants().hold());
        }
        Ok(())
    })
}

/// Number of samples logged so far.
///
/// # Safety
/// `sim` must come from [`rsm_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn rsm_simulation_len(sim: *const RsmSimulation, len_out: *mut usize) -> RsmStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = len_out.as_mut().ok_or_else(|| null("len_out"))?;
        *out = s.rows.len();
        Ok(())
    })
}

/// Write the log collected so far as CSV.
///
/// # Safety
/// `sim` must come from [`rsm_simulation_new`]; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rsm_simulation_write_csv(sim: *const RsmSimulation, path: *const c_char) -> RsmStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(RsmStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let log = rsm_nmpc::sim::RunLog {
            ts: s.sim.ts(),
            rows: s.rows.clone(),
        };
        let file = std::fs::File::create(path).map_err(Error::from)?;
        log.write_csv(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or come from [`rsm_simulation_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsm_simulation_free(sim: *mut RsmSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
