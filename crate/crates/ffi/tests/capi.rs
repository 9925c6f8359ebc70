use std::ffi::{CStr, CString};
use std::ptr;

use rsm_nmpc::flux_model::{FluxMap, GreyBoxParams};
use rsm_nmpc::machine;
use rsm_nmpc_ffi::*;

fn last_error() -> String {
    let p = rsm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Short fixed-speed scenario, small enough to run in a unit test.
fn short_config(controller: &str) -> CString {
    CString::new(format!(
        "scenario.controller = {controller}\nscenario.duration = 0.02\nscenario.schedule = 0:0, 0.005:29\n"
    ))
    .unwrap()
}

#[test]
fn flux_matches_core() {
    let i = [12.0, -7.5];
    let mut psi = [0.0; 2];
    assert_eq!(unsafe { rsm_flux_eval(ptr::null(), i.as_ptr(), psi.as_mut_ptr()) }, RsmStatus::Ok);
    let want = GreyBoxParams::REFERENCE.flux(rsm_nmpc::Vec2::new(i[0], i[1]));
    assert_eq!(psi, [want[0], want[1]]);

    let params = GreyBoxParams::REFERENCE.to_array();
    let mut psi2 = [0.0; 2];
    assert_eq!(unsafe { rsm_flux_eval(params.as_ptr(), i.as_ptr(), psi2.as_mut_ptr()) }, RsmStatus::Ok);
    assert_eq!(psi, psi2);

    let mut m = 0.0;
    assert_eq!(unsafe { rsm_torque(i.as_ptr(), psi.as_ptr(), 2, &mut m) }, RsmStatus::Ok);
    assert_eq!(m, machine::torque(rsm_nmpc::Vec2::new(i[0], i[1]), want, 2));
}

#[test]
fn null_pointers_are_reported() {
    let i = [1.0, 1.0];
    let st = unsafe { rsm_flux_eval(ptr::null(), i.as_ptr(), ptr::null_mut()) };
    assert_eq!(st, RsmStatus::NullPointer);
    assert!(last_error().contains("psi_out"));

    assert_eq!(unsafe { rsm_controller_new(ptr::null(), ptr::null_mut()) }, RsmStatus::NullPointer);
    assert_eq!(unsafe { rsm_simulation_step(ptr::null_mut(), ptr::null_mut()) }, RsmStatus::NullPointer);
    // freeing null is a no-op
    unsafe {
        rsm_controller_free(ptr::null_mut());
        rsm_estimator_free(ptr::null_mut());
        rsm_simulation_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut sim = ptr::null_mut();
    let cfg = CString::new("scenario.duration = banana\n").unwrap();
    assert_eq!(unsafe { rsm_simulation_new(cfg.as_ptr(), &mut sim) }, RsmStatus::Parse);
    assert!(sim.is_null());
    assert!(last_error().contains("line 1"));

    let mut bad = GreyBoxParams::REFERENCE.to_array();
    bad[3] = -1.0;
    let mut psi = [0.0; 2];
    let i = [1.0, 1.0];
    let st = unsafe { rsm_flux_eval(bad.as_ptr(), i.as_ptr(), psi.as_mut_ptr()) };
    assert_eq!(st, RsmStatus::InvalidArgument);

    // zero current gives zero flux, so no speed root exists
    let z = [0.0; 2];
    let mut w = 0.0;
    let st = unsafe { rsm_omega_limit(z.as_ptr(), z.as_ptr(), 556.0, 0.4, 2, &mut w) };
    assert_ne!(st, RsmStatus::Ok);
}

#[test]
fn omega_limit_matches_core() {
    let m = machine::MachineParams::default();
    let (i, psi) = rsm_nmpc::mtpa::mtpa_point(58.0, &GreyBoxParams::REFERENCE, m.np, m.current_limit()).unwrap();
    let want = rsm_nmpc::mtpa::omega_limit(i, psi, m.udc, m.rs, m.np).unwrap();
    let mut w = 0.0;
    let st = unsafe { rsm_omega_limit([i[0], i[1]].as_ptr(), [psi[0], psi[1]].as_ptr(), m.udc, m.rs, m.np, &mut w) };
    assert_eq!(st, RsmStatus::Ok);
    assert_eq!(w, want);
}

#[test]
fn controller_and_estimator_round_trip() {
    let mut ctl = ptr::null_mut();
    let mut est = ptr::null_mut();
    unsafe {
        assert_eq!(rsm_controller_new(ptr::null(), &mut ctl), RsmStatus::Ok);
        assert_eq!(rsm_estimator_new(ptr::null(), &mut est), RsmStatus::Ok);
        let mut psi = [0.0; 2];
        let mut v = [0.0; 2];
        let mut out = RsmControlOutput::default();
        for _ in 0..40 {
            assert_eq!(rsm_estimator_state(est, psi.as_mut_ptr(), v.as_mut_ptr()), RsmStatus::Ok);
            assert_eq!(rsm_controller_step(ctl, psi.as_ptr(), v.as_ptr(), 314.0, 29.0, &mut out), RsmStatus::Ok);
            assert_eq!(out.degraded, 0);
            let u = [out.u_d, out.u_q];
            assert_eq!(rsm_estimator_predict(est, u.as_ptr(), 314.0, 2.5e-4), RsmStatus::Ok);
        }
        assert!(out.u_d.is_finite() && out.u_q.is_finite());
        assert!(psi[0].abs() + psi[1].abs() > 0.0);
        assert_eq!(rsm_estimator_update(est, [0.0, 0.0].as_ptr()), RsmStatus::Ok);
        rsm_controller_free(ctl);
        rsm_estimator_free(est);
    }
}

#[test]
fn simulation_steps_until_finished() {
    for controller in ["nmpc", "pi"] {
        let cfg = short_config(controller);
        let mut sim = ptr::null_mut();
        unsafe {
            assert_eq!(rsm_simulation_new(cfg.as_ptr(), &mut sim), RsmStatus::Ok);
            let mut row = RsmLogRow::default();
            assert_eq!(rsm_simulation_step(sim, &mut row), RsmStatus::Ok);
            assert_eq!(row.t, 0.0);
            let mut ok = 0;
            assert_eq!(rsm_simulation_run(sim, &mut ok), RsmStatus::Ok);
            assert_eq!(ok, 1);
            let mut n = 0usize;
            assert_eq!(rsm_simulation_len(sim, &mut n), RsmStatus::Ok);
            assert_eq!(n, 80);
            assert_eq!(rsm_simulation_step(sim, &mut row), RsmStatus::Finished);

            let path = std::env::temp_dir().join(format!("rsm_ffi_{controller}_{}.csv", std::process::id()));
            let cpath = CString::new(path.to_str().unwrap()).unwrap();
            assert_eq!(rsm_simulation_write_csv(sim, cpath.as_ptr()), RsmStatus::Ok);
            let log = rsm_nmpc::sim::RunLog::from_csv_reader(std::fs::File::open(&path).unwrap()).unwrap();
            assert_eq!(log.rows.len(), 80);
            std::fs::remove_file(&path).ok();
            rsm_simulation_free(sim);
        }
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(rsm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
