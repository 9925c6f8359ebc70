//! Extended Kalman filter on the flux state augmented with a constant voltage
//! disturbance, for offset-free tracking.

use nalgebra::{Matrix2x4, Matrix4, SMatrix};

use crate::flux_model::{FluxGrid, FluxMap};
use crate::integrator::{dae_step, StepInput};
use crate::{Error, Mat2, Result, Vec2};

pub type Mat4 = Matrix4<f64>;

pub const DEFAULT_Q_PSI: f64 = 1e-6;
pub const DEFAULT_Q_V: f64 = 1e-2;
pub const DEFAULT_R_PSI: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub psi_e: Vec2,
    pub v_e: Vec2,
    pub p: Mat4,
    pub q_proc: Mat4,
    pub r_meas: Mat2,
    /// Last collocation stage current, reused as a Newton warm start.
    i_stage: Option<Vec2>,
}

/// Observation matrix `[I 0]`.
pub fn observation_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// Augmented transition `[[A, V], [0, I]]`.
pub fn augmented_transition(a: &Mat2, v: &Mat2) -> Mat4 {
    let mut f = Mat4::identity();
    f.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    f.fixed_view_mut::<2, 2>(0, 2).copy_from(v);
    f
}

/// Rank of `[H; HF; HF²; HF³]`.
pub fn observability_rank(f: &Mat4, h: &Matrix2x4<f64>) -> usize {
    let mut o = SMatrix::<f64, 8, 4>::zeros();
    let mut hf = *h;
    for k in 0..4 {
        o.fixed_view_mut::<2, 4>(2 * k, 0).copy_from(&hf);
        hf *= f;
    }
    o.rank(1e-10 * o.amax().max(1.0))
}

fn symmetrize(p: &Mat4) -> Mat4 {
    0.5 * (p + p.transpose())
}

impl EkfState {
    pub fn new(psi_e: Vec2, v_e: Vec2, p: Mat4, q_proc: Mat4, r_meas: Mat2) -> Result<Self> {
        let st = EkfState {
            psi_e,
            v_e,
            p,
            q_proc,
            r_meas,
            i_stage: None,
        };
        if st.q_proc.iter().chain(st.r_meas.iter()).chain(st.p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariance"));
        }
        Ok(st)
    }

    /// Zero mean with default covariances and `P = Q_proc`.
    pub fn with_defaults() -> Self {
        let q = default_process_noise();
        EkfState {
            psi_e: Vec2::zeros(),
            v_e: Vec2::zeros(),
            p: q,
            q_proc: q,
            r_meas: Mat2::identity() * DEFAULT_R_PSI,
            i_stage: None,
        }
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        symmetrize(&self.p).symmetric_eigenvalues().min()
    }

    /// Propagate over `ts` with the disturbance held constant.
    pub fn predict<M: FluxMap + ?Sized>(
        &mut self,
        u_applied: Vec2,
        omega_e: f64,
        ts: f64,
        map: &M,
        rs: f64,
    ) -> Result<()> {
        if !(ts > 0.0) {
            return Err(Error::invalid("ts must be positive"));
        }
        let step = dae_step(
            &StepInput {
                psi0: self.psi_e,
                u: u_applied,
                omega_k: omega_e,
                v: self.v_e,
                h: ts,
                rs,
            },
            map,
            self.i_stage,
        )?;
        let f = augmented_transition(&step.a_sens, &step.v_sens);
        self.psi_e = step.psi_next;
        self.i_stage = Some(step.i_stage);
        self.p = symmetrize(&(f * self.p * f.transpose() + self.q_proc));
        Ok(())
    }

    /// Kalman update with a flux pseudo-measurement, Joseph form.
    pub fn update_flux(&mut self, psi_meas: Vec2) -> Result<()> {
        let h = observation_matrix();
        let s = h * self.p * h.transpose() + self.r_meas;
        let s_inv = s
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularInnovation)?;
        let k = self.p * h.transpose() * s_inv;
        let dx = k * (psi_meas - self.psi_e);
        self.psi_e += dx.fixed_rows::<2>(0);
        self.v_e += dx.fixed_rows::<2>(2);
        let ikh = Mat4::identity() - k * h;
        self.p = symmetrize(&(ikh * self.p * ikh.transpose() + k * self.r_meas * k.transpose()));
        Ok(())
    }

    /// Update from a current measurement mapped through the tabulated flux map.
    pub fn update(&mut self, i_meas: Vec2, meas_map: &FluxGrid) -> Result<()> {
        self.update_flux(meas_map.interpolate(i_meas))
    }
}

/// `blkdiag(1e-6·I, 1e-2·I)`.
pub fn default_process_noise() -> Mat4 {
    Mat4::from_diagonal(&nalgebra::Vector4::new(DEFAULT_Q_PSI, DEFAULT_Q_PSI, DEFAULT_Q_V, DEFAULT_Q_V))
}
