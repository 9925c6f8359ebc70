//! Gain-scheduled PI current controller with decoupling feedforward and
//! back-calculation anti-windup.

use std::f64::consts::PI;

use crate::flux_model::FluxMap;
use crate::machine::{project_disk, rotation_j, voltage_radius};
use crate::{Error, Result, Vec2};

pub const DEFAULT_OMEGA_C: f64 = 2.0 * PI * 200.0;
pub const DEFAULT_GAIN_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiConfig {
    /// Design bandwidth before scaling, rad/s.
    pub omega_c: f64,
    /// Factor applied to both gains.
    pub gain_scale: f64,
    /// Back-calculation coefficient, 1/s.
    pub aw_gain: f64,
}

impl Default for PiConfig {
    fn default() -> Self {
        PiConfig {
            omega_c: DEFAULT_OMEGA_C,
            gain_scale: DEFAULT_GAIN_SCALE,
            aw_gain: DEFAULT_GAIN_SCALE * DEFAULT_OMEGA_C,
        }
    }
}

impl PiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_c > 0.0) || !(self.gain_scale > 0.0) || !(self.aw_gain >= 0.0) {
            return Err(Error::invalid("PI bandwidth and scale must be positive"));
        }
        Ok(())
    }

    /// Effective closed-loop bandwidth after scaling.
    pub fn effective_bandwidth(&self) -> f64 {
        self.gain_scale * self.omega_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub kp: Vec2,
    pub ki: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiState {
    pub cfg: PiConfig,
    /// Integrator output, V.
    pub integ: Vec2,
}

impl PiState {
    pub fn new(cfg: PiConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PiState {
            cfg,
            integ: Vec2::zeros(),
        })
    }

    /// Pole-placement gains from the own-axis differential inductances at `i`.
    pub fn gains<M: FluxMap + ?Sized>(&self, i: Vec2, map: &M, rs: f64) -> PiGains {
        let l = map.jacobian(i);
        let w = self.cfg.effective_bandwidth();
        PiGains {
            kp: Vec2::new(l[(0, 0)], l[(1, 1)]) * w,
            ki: Vec2::repeat(rs * w),
        }
    }

    /// One controller sample; returns the disk-projected voltage command.
    #[allow(clippy::too_many_arguments)]
    pub fn step<M: FluxMap + ?Sized>(
        &mut self,
        i_meas: Vec2,
        i_ref: Vec2,
        omega_e: f64,
        ts: f64,
        rs: f64,
        udc: f64,
        map: &M,
    ) -> Vec2 {
        let gains = self.gains(i_meas, map, rs);
        let err = i_ref - i_meas;
        let feedforward = omega_e * rotation_j() * map.flux(i_ref);
        let u_raw = gains.kp.component_mul(&err) + self.integ + feedforward;
        let u = project_disk(u_raw, voltage_radius(udc));
        self.integ += ts * (gains.ki.component_mul(&err) + self.cfg.aw_gain * (u - u_raw));
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux_model::{invert_flux, GreyBoxParams, LinearFluxMap};
    use crate::integrator::{dae_step, StepInput};
    use crate::Mat2;
    use proptest::prelude::*;

    const TH: GreyBoxParams = GreyBoxParams::REFERENCE;
    const RS: f64 = 0.4;
    const UDC: f64 = 556.0;

    fn pi() -> PiState {
        PiState::new(PiConfig::default()).unwrap()
    }

    #[test]
    fn zero_error_gives_feedforward() {
        let mut st = pi();
        let i = Vec2::new(10.0, 20.0);
        let w = 200.0;
        let u = st.step(i, i, w, 2.5e-4, RS, UDC, &TH);
        assert!((u - w * rotation_j() * TH.flux(i)).amax() < 1e-12);
        assert_eq!(st.integ, Vec2::zeros());
    }

    #[test]
    fn saturated_output_sits_on_the_disk() {
        let mut st = pi();
        let u = st.step(Vec2::zeros(), Vec2::new(40.0, 40.0), 314.0, 2.5e-4, RS, UDC, &TH);
        assert!((u.norm() - voltage_radius(UDC)).abs() < 1e-9);
    }

    /// Closed loop on a constant-inductance plant at standstill.
    fn settle_time(ts: f64, plant_rs: f64, duration: f64) -> (f64, Vec2) {
        let map = LinearFluxMap::new(Mat2::new(0.08, 0.0, 0.0, 0.02));
        let mut st = pi();
        let i_ref = Vec2::new(2.0, 3.0);
        let mut psi = Vec2::zeros();
        let mut i = Vec2::zeros();
        let mut last_out = 0.0;
        let n = (duration / ts) as usize;
        for k in 0..n {
            let u = st.step(i, i_ref, 0.0, ts, RS, UDC, &map);
            psi = dae_step(
                &StepInput { psi0: psi, u, omega_k: 0.0, v: Vec2::zeros(), h: ts, rs: plant_rs },
                &map,
                Some(i),
            )
            .unwrap()
            .psi_next;
            i = invert_flux(psi, &map, i).unwrap();
            let rel = (i - i_ref).component_div(&i_ref).amax();
            if rel > 0.02 {
                last_out = (k + 1) as f64 * ts;
            }
        }
        (last_out, i - i_ref)
    }

    #[test]
    fn step_response_matches_first_order_design() {
        // Pole-zero cancellation leaves a first-order loop with bandwidth
        // ω_eff, which enters the 2% band after ln(50)/ω_eff.
        let expected = 50f64.ln() / PiConfig::default().effective_bandwidth();
        let (t_fine, _) = settle_time(1e-6, RS, 0.05);
        assert!((t_fine - expected).abs() <= 0.05 * expected, "{t_fine} vs {expected}");
        let (t_ctrl, _) = settle_time(2.5e-4, RS, 0.1);
        assert!((t_ctrl - expected).abs() <= 0.25 * expected, "{t_ctrl} vs {expected}");
    }

    #[test]
    fn integral_action_removes_offset() {
        // the mismatched resistance leaves a slow mode near rs/L
        let (_, err) = settle_time(2.5e-4, 1.25 * RS, 4.0);
        assert!(err.amax() < 1e-6, "{err}");
    }

    #[test]
    fn integrator_stays_bounded_under_saturation() {
        let mut st = pi();
        let mut max_integ: f64 = 0.0;
        let ts = 2.5e-4;
        let mut history = Vec::new();
        for _ in 0..(2.0 / ts) as usize {
            // measurement pinned far from the reference: permanent saturation
            let u = st.step(Vec2::zeros(), Vec2::new(40.0, 40.0), 314.0, ts, RS, UDC, &TH);
            assert!(u.norm() <= voltage_radius(UDC) * (1.0 + 1e-12));
            max_integ = max_integ.max(st.integ.amax());
            history.push(st.integ.amax());
        }
        assert!(max_integ.is_finite());
        let late = &history[history.len() / 2..];
        let spread = late.iter().cloned().fold(f64::MIN, f64::max) - late.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-6, "integrator still drifting: {spread}");
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PiState::new(PiConfig { omega_c: 0.0, ..PiConfig::default() }).is_err());
    }

    proptest! {
        #[test]
        fn output_in_disk(
            id in -60.0..60.0f64, iq in -60.0..60.0f64,
            rd in -40.0..40.0f64, rq in -40.0..40.0f64,
            w in -400.0..400.0f64,
            xd in -500.0..500.0f64, xq in -500.0..500.0f64,
        ) {
            let mut st = pi();
            st.integ = Vec2::new(xd, xq);
            let u = st.step(Vec2::new(id, iq), Vec2::new(rd, rq), w, 2.5e-4, RS, UDC, &TH);
            prop_assert!(u.norm() <= voltage_radius(UDC) * (1.0 + 1e-12));
        }
    }
}
