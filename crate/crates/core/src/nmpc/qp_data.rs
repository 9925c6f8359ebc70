use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use super::{OcpConfig, RtiWorkspace};
use crate::flux_model::FluxMap;
use crate::integrator::{dae_step, StepInput};
use crate::qp_solver::DenseQp;
use crate::{Mat2, Result, Vec2};

/// Inequality rows per stage: the linearized disk and six hexagon facets.
pub const ROWS_PER_STAGE: usize = 7;

/// Linearized dynamics, constraints and Gauss-Newton cost of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub a: Mat2,
    pub b: Mat2,
    /// Shooting gap `F(ψᵢ, uᵢ) − ψᵢ₊₁`.
    pub c: Vec2,
    /// Stage current at the linearization point, kept for warm starts.
    pub i_stage: Vec2,
    /// `D Δu ≤ e`; the state block of the constraints is zero.
    pub d: SMatrix<f64, ROWS_PER_STAGE, 2>,
    pub e: SVector<f64, ROWS_PER_STAGE>,
    pub q: Mat2,
    /// `R + 2μ_disk·I`.
    pub r: Mat2,
    pub q_vec: Vec2,
    pub r_vec: Vec2,
}

/// Structured QP in `(Δψ₀, Δu₀, …, Δψ_N)` around the workspace trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub stages: Vec<StageData>,
    pub q_n: Mat2,
    pub q_n_vec: Vec2,
    /// Initial-value embedding `Δψ₀ = s0`.
    pub s0: Vec2,
}

impl QpData {
    pub fn n_nodes(&self) -> usize {
        self.stages.len()
    }
}

/// Linearize the tracking problem at the workspace trajectory.
#[allow(clippy::too_many_arguments)]
pub fn linearize_and_build<M: FluxMap + ?Sized>(
    ws: &RtiWorkspace,
    psi_e: Vec2,
    v_e: Vec2,
    omega_e: f64,
    psi_bar: Vec2,
    u_bar: Vec2,
    cfg: &OcpConfig,
    map: &M,
) -> Result<QpData> {
    let n = cfg.n_nodes;
    let h = cfg.step();
    let r2 = cfg.voltage_radius().powi(2);
    let q = h * cfg.w_psi;
    let r = h * cfg.w_u;
    let mut stages = Vec::with_capacity(n);
    for k in 0..n {
        let psi = ws.psi_traj[k];
        let u = ws.u_traj[k];
        let step = dae_step(
            &StepInput {
                psi0: psi,
                u,
                omega_k: omega_e,
                v: v_e,
                h,
                rs: cfg.rs,
            },
            map,
            Some(ws.i_stage[k]),
        )?;
        let mut d = SMatrix::<f64, ROWS_PER_STAGE, 2>::zeros();
        let mut e = SVector::<f64, ROWS_PER_STAGE>::zeros();
        d[(0, 0)] = 2.0 * u[0];
        d[(0, 1)] = 2.0 * u[1];
        e[0] = r2 - u.norm_squared();
        d.fixed_view_mut::<6, 2>(1, 0).copy_from(&cfg.hexagon.c_hat);
        e.fixed_rows_mut::<6>(1)
            .copy_from(&(cfg.hexagon.c_vec - cfg.hexagon.c_hat * u));
        let mu_disk = ws.mu[k * ROWS_PER_STAGE].max(0.0);
        stages.push(StageData {
            a: step.a_sens,
            b: step.b_sens,
            c: step.psi_next - ws.psi_traj[k + 1],
            i_stage: step.i_stage,
            d,
            e,
            q,
            r: r + 2.0 * mu_disk * Mat2::identity(),
            q_vec: q * (psi - psi_bar),
            r_vec: r * (u - u_bar),
        });
    }
    Ok(QpData {
        stages,
        q_n: cfg.w_n,
        q_n_vec: cfg.w_n * (ws.psi_traj[n] - psi_bar),
        s0: psi_e - ws.psi_traj[0],
    })
}

/// Dense QP in the stacked input step `Δu`, with the gradient affine in `s0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    /// Gradient at `s0 = 0`.
    pub g0: DVector<f64>,
    /// `∂g/∂s0`.
    pub gx: DMatrix<f64>,
    pub g_mat: DMatrix<f64>,
    pub h_vec: DVector<f64>,
    /// `Δψᵢ = Xᵢ s0 + Yᵢ Δu + wᵢ`.
    pub x_maps: Vec<Mat2>,
    pub y_maps: Vec<DMatrix<f64>>,
    pub w_offsets: Vec<Vec2>,
}

impl CondensedQp {
    pub fn to_dense(&self, s0: Vec2) -> DenseQp {
        let g = &self.g0 + &self.gx * DVector::from_column_slice(s0.as_slice());
        let nu = self.g0.len();
        DenseQp {
            h_mat: self.h.clone(),
            g,
            g_mat: self.g_mat.clone(),
            h: self.h_vec.clone(),
            e_mat: DMatrix::zeros(0, nu),
            e: DVector::zeros(0),
        }
    }

    /// State steps `Δψ₀ … Δψ_N` for a given input step.
    pub fn expand(&self, s0: Vec2, du: &DVector<f64>) -> Vec<Vec2> {
        self.x_maps
            .iter()
            .zip(&self.y_maps)
            .zip(&self.w_offsets)
            .map(|((x, y), w)| {
                let yu = y * du;
                x * s0 + Vec2::new(yu[0], yu[1]) + w
            })
            .collect()
    }
}

/// Eliminate the states through the dynamics rows.
pub fn condense(qp: &QpData) -> CondensedQp {
    let n = qp.n_nodes();
    let nu = 2 * n;
    let mut x = Mat2::identity();
    let mut y = DMatrix::<f64>::zeros(2, nu);
    let mut w = Vec2::zeros();
    let mut h = DMatrix::<f64>::zeros(nu, nu);
    let mut g0 = DVector::<f64>::zeros(nu);
    let mut gx = DMatrix::<f64>::zeros(nu, 2);
    let mut x_maps = Vec::with_capacity(n + 1);
    let mut y_maps = Vec::with_capacity(n + 1);
    let mut w_offsets = Vec::with_capacity(n + 1);

    let mut add_state_cost = |q: &Mat2, q_vec: &Vec2, x: &Mat2, y: &DMatrix<f64>, w: &Vec2| {
        let q_dyn = DMatrix::from_column_slice(2, 2, q.as_slice());
        let yt_q = y.transpose() * &q_dyn;
        h += &yt_q * y;
        g0 += y.transpose() * DVector::from_column_slice((q * w + q_vec).as_slice());
        gx += yt_q * DMatrix::from_column_slice(2, 2, x.as_slice());
    };

    for (k, st) in qp.stages.iter().enumerate() {
        x_maps.push(x);
        y_maps.push(y.clone());
        w_offsets.push(w);
        add_state_cost(&st.q, &st.q_vec, &x, &y, &w);
        let a_dyn = DMatrix::from_column_slice(2, 2, st.a.as_slice());
        let mut y_next = &a_dyn * &y;
        let mut cols = y_next.columns_mut(2 * k, 2);
        cols += DMatrix::from_column_slice(2, 2, st.b.as_slice());
        x = st.a * x;
        w = st.a * w + st.c;
        y = y_next;
    }
    x_maps.push(x);
    y_maps.push(y.clone());
    w_offsets.push(w);
    add_state_cost(&qp.q_n, &qp.q_n_vec, &x, &y, &w);

    let mut g_mat = DMatrix::<f64>::zeros(ROWS_PER_STAGE * n, nu);
    let mut h_vec = DVector::<f64>::zeros(ROWS_PER_STAGE * n);
    for (k, st) in qp.stages.iter().enumerate() {
        let mut blk = h.view_mut((2 * k, 2 * k), (2, 2));
        blk += DMatrix::from_column_slice(2, 2, st.r.as_slice());
        g0[2 * k] += st.r_vec[0];
        g0[2 * k + 1] += st.r_vec[1];
        g_mat
            .view_mut((ROWS_PER_STAGE * k, 2 * k), (ROWS_PER_STAGE, 2))
            .copy_from(&st.d);
        h_vec
            .rows_mut(ROWS_PER_STAGE * k, ROWS_PER_STAGE)
            .copy_from(&st.e);
    }
    let h = 0.5 * (&h + h.transpose());
    CondensedQp {
        h,
        g0,
        gx,
        g_mat,
        h_vec,
        x_maps,
        y_maps,
        w_offsets,
    }
}

/// Dynamics multipliers `λ₀ … λ_N` from the stationarity conditions in the
/// state steps, for the convention `Δψᵢ₊₁ = AᵢΔψᵢ + BᵢΔuᵢ + cᵢ` with
/// multiplier `λᵢ₊₁` and `Δψ₀ = s0` with multiplier `λ₀`.
pub fn dynamics_multipliers(qp: &QpData, dpsi: &[Vec2]) -> Vec<Vec2> {
    let n = qp.n_nodes();
    let mut lambda = vec![Vec2::zeros(); n + 1];
    lambda[n] = qp.q_n * dpsi[n] + qp.q_n_vec;
    for k in (1..n).rev() {
        let st = &qp.stages[k];
        lambda[k] = st.q * dpsi[k] + st.q_vec + st.a.transpose() * lambda[k + 1];
    }
    let st = &qp.stages[0];
    lambda[0] = -(st.q * dpsi[0] + st.q_vec + st.a.transpose() * lambda[1]);
    lambda
}
