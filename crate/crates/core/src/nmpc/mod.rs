//! Real-time-iteration NMPC for flux tracking.
//!
//! Each sample performs one Gauss-Newton SQP step on the multiple-shooting
//! tracking problem: linearize around the stored trajectory (prepare), then
//! embed the current flux estimate, solve the condensed QP and take a full
//! step (feedback).

mod dare;
mod qp_data;

pub use dare::{compute_lqr_terminal, riccati_map, solve_dare, DARE_MAX_ITER, DARE_TOL};
pub use qp_data::{
    condense, dynamics_multipliers, linearize_and_build, CondensedQp, QpData, StageData,
    ROWS_PER_STAGE,
};

use nalgebra::DVector;

use crate::flux_model::FluxMap;
use crate::machine::{hexagon, voltage_radius, Hexagon, MachineParams};
use crate::mtpa::{MtpaLut, Reference};
use crate::qp_solver::{self, QpStatus};
use crate::{Error, Mat2, Result, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    pub n_nodes: usize,
    /// Prediction horizon `T_h`, s.
    pub horizon: f64,
    /// Controller sampling period, s.
    pub ts: f64,
    pub w_psi: Mat2,
    pub w_u: Mat2,
    pub w_n: Mat2,
    pub udc: f64,
    pub hexagon: Hexagon,
    /// Stator resistance of the prediction model.
    pub rs: f64,
}

pub const DEFAULT_N_NODES: usize = 2;
pub const DEFAULT_HORIZON: f64 = 3.2e-3;
pub const DEFAULT_TS: f64 = 0.25e-3;
pub const DEFAULT_W_PSI: f64 = 312.5;
pub const DEFAULT_W_U: f64 = 1e-4;

impl OcpConfig {
    /// Default weights with the terminal weight from the LQR problem at the
    /// origin.
    pub fn new<M: FluxMap + ?Sized>(params: &MachineParams, map: &M) -> Result<Self> {
        Self::with_weights(
            params,
            map,
            DEFAULT_N_NODES,
            DEFAULT_HORIZON,
            DEFAULT_TS,
            Mat2::identity() * DEFAULT_W_PSI,
            Mat2::identity() * DEFAULT_W_U,
        )
    }

    pub fn with_weights<M: FluxMap + ?Sized>(
        params: &MachineParams,
        map: &M,
        n_nodes: usize,
        horizon: f64,
        ts: f64,
        w_psi: Mat2,
        w_u: Mat2,
    ) -> Result<Self> {
        if n_nodes == 0 || !(horizon > 0.0) || !(ts > 0.0) {
            return Err(Error::invalid("horizon, node count and ts must be positive"));
        }
        params.validate()?;
        let h = horizon / n_nodes as f64;
        let w_n = compute_lqr_terminal(map, params.rs, h, &w_psi, &w_u)?;
        let cfg = OcpConfig {
            n_nodes,
            horizon,
            ts,
            w_psi,
            w_u,
            w_n,
            udc: params.udc,
            hexagon: hexagon(params.udc)?,
            rs: params.rs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let pd = |m: &Mat2| (m - m.transpose()).amax() <= 1e-12 * m.amax() && m.symmetric_eigenvalues().min() > 0.0;
        if !pd(&self.w_psi) || !pd(&self.w_u) || !pd(&self.w_n) {
            return Err(Error::invalid("weights must be symmetric positive definite"));
        }
        Ok(())
    }

    /// Shooting interval `T_h / N`.
    pub fn step(&self) -> f64 {
        self.horizon / self.n_nodes as f64
    }

    pub fn voltage_radius(&self) -> f64 {
        voltage_radius(self.udc)
    }
}

/// Primal-dual iterate carried between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RtiWorkspace {
    pub psi_traj: Vec<Vec2>,
    pub u_traj: Vec<Vec2>,
    /// Stage currents used to warm-start the collocation Newton solves.
    pub i_stage: Vec<Vec2>,
    /// Dynamics multipliers `λ₀ … λ_N`.
    pub lambda: Vec<Vec2>,
    /// Inequality multipliers, `ROWS_PER_STAGE` per stage, disk row first.
    pub mu: Vec<f64>,
    pub active_set: Vec<usize>,
}

impl RtiWorkspace {
    /// Constant trajectory at `(psi, u)` with zero multipliers.
    pub fn constant(n_nodes: usize, psi: Vec2, u: Vec2, i: Vec2) -> Self {
        RtiWorkspace {
            psi_traj: vec![psi; n_nodes + 1],
            u_traj: vec![u; n_nodes],
            i_stage: vec![i; n_nodes],
            lambda: vec![Vec2::zeros(); n_nodes + 1],
            mu: vec![0.0; ROWS_PER_STAGE * n_nodes],
            active_set: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.u_traj.len()
    }
}

/// Result of one feedback phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtiOutput {
    /// Commanded dq voltage.
    pub u0: Vec2,
    pub qp_iters: usize,
    /// Euclidean norm of the full primal step.
    pub step_norm: f64,
    pub status: QpStatus,
    /// Set when the QP failed and the previous command was held.
    pub degraded: bool,
}

#[derive(Debug, Clone)]
struct Prepared {
    qp: QpData,
    condensed: CondensedQp,
}

#[derive(Debug, Clone)]
pub struct NmpcController<M> {
    cfg: OcpConfig,
    map: M,
    ws: RtiWorkspace,
    prepared: Option<Prepared>,
    last_u: Vec2,
}

impl<M: FluxMap> NmpcController<M> {
    pub fn new(cfg: OcpConfig, map: M) -> Self {
        let ws = RtiWorkspace::constant(cfg.n_nodes, Vec2::zeros(), Vec2::zeros(), Vec2::zeros());
        NmpcController {
            cfg,
            map,
            ws,
            prepared: None,
            last_u: Vec2::zeros(),
        }
    }

    pub fn config(&self) -> &OcpConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &RtiWorkspace {
        &self.ws
    }

    pub fn set_workspace(&mut self, ws: RtiWorkspace) -> Result<()> {
        let n = self.cfg.n_nodes;
        if ws.u_traj.len() != n
            || ws.psi_traj.len() != n + 1
            || ws.i_stage.len() != n
            || ws.lambda.len() != n + 1
            || ws.mu.len() != ROWS_PER_STAGE * n
        {
            return Err(Error::invalid("workspace dimensions do not match the horizon"));
        }
        self.ws = ws;
        self.prepared = None;
        Ok(())
    }

    pub fn map(&self) -> &M {
        &self.map
    }

    /// Linearize and condense around the stored trajectory; everything that
    /// does not depend on the incoming flux estimate.
    pub fn prepare(&mut self, reference: &Reference, omega_e: f64, v_e: Vec2) -> Result<()> {
        let ws = &self.ws;
        let qp = linearize_and_build(
            ws,
            ws.psi_traj[0],
            v_e,
            omega_e,
            reference.psi_bar,
            reference.u_bar,
            &self.cfg,
            &self.map,
        )?;
        let condensed = condense(&qp);
        self.prepared = Some(Prepared { qp, condensed });
        Ok(())
    }

    /// Embed the flux estimate, solve the QP and take the full step.
    pub fn feedback(&mut self, psi_e: Vec2) -> Result<RtiOutput> {
        let Prepared { mut qp, condensed } = self
            .prepared
            .take()
            .ok_or(Error::invalid("feedback called without prepare"))?;
        let s0 = psi_e - self.ws.psi_traj[0];
        qp.s0 = s0;
        let dense = condensed.to_dense(s0);
        let sol = qp_solver::solve(&dense, Some(&self.ws.active_set))?;
        if sol.status != QpStatus::Solved {
            log::warn!("QP returned {:?}; holding previous command", sol.status);
            return Ok(RtiOutput {
                u0: self.last_u,
                qp_iters: sol.iterations,
                step_norm: 0.0,
                status: sol.status,
                degraded: true,
            });
        }
        let dpsi = condensed.expand(s0, &sol.z);
        let lambda = dynamics_multipliers(&qp, &dpsi);
        let n = self.cfg.n_nodes;
        let mut step_sq = sol.z.norm_squared();
        for (k, d) in dpsi.iter().enumerate() {
            self.ws.psi_traj[k] += d;
            step_sq += d.norm_squared();
        }
        for k in 0..n {
            self.ws.u_traj[k] += Vec2::new(sol.z[2 * k], sol.z[2 * k + 1]);
            self.ws.i_stage[k] = qp.stages[k].i_stage;
        }
        self.ws.lambda = lambda;
        self.ws.mu = sol.mu.iter().copied().collect();
        self.ws.active_set = sol.active_set;
        let u0 = self.ws.u_traj[0];
        self.last_u = u0;
        Ok(RtiOutput {
            u0,
            qp_iters: sol.iterations,
            step_norm: step_sq.sqrt(),
            status: QpStatus::Solved,
            degraded: false,
        })
    }

    /// One complete real-time iteration for a torque command.
    pub fn rti_step(
        &mut self,
        psi_e: Vec2,
        v_e: Vec2,
        omega_e: f64,
        m_bar: f64,
        lut: &MtpaLut,
    ) -> Result<RtiOutput> {
        let reference = lut.interpolate(m_bar, omega_e, self.cfg.rs);
        self.prepare(&reference, omega_e, v_e)?;
        self.feedback(psi_e)
    }
}

/// Stacked `Δu` as a vector, for tests and diagnostics.
pub fn stack_inputs(u: &[Vec2]) -> DVector<f64> {
    DVector::from_iterator(2 * u.len(), u.iter().flat_map(|v| [v[0], v[1]]))
}
