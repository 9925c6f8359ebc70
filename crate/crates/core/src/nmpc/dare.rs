use crate::flux_model::FluxMap;
use crate::integrator::{dae_step, StepInput};
use crate::{Error, Mat2, Result, Vec2};

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 10_000;

/// One Riccati map `Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`.
pub fn riccati_map(p: &Mat2, a: &Mat2, b: &Mat2, q: &Mat2, r: &Mat2) -> Result<Mat2> {
    let s = r + b.transpose() * p * b;
    let s_inv = s
        .try_inverse()
        .ok_or(Error::SingularJacobian("Riccati input weight"))?;
    let atpb = a.transpose() * p * b;
    let next = q + a.transpose() * p * a - atpb * s_inv * atpb.transpose();
    Ok(0.5 * (next + next.transpose()))
}

/// Fixed point of the discrete Riccati recursion, iterated from `P = Q`.
pub fn solve_dare(a: &Mat2, b: &Mat2, q: &Mat2, r: &Mat2) -> Result<Mat2> {
    let mut p = *q;
    for it in 0..DARE_MAX_ITER {
        let next = riccati_map(&p, a, b, q, r)?;
        let diff = (next - p).amax();
        if !diff.is_finite() {
            break;
        }
        p = next;
        if diff < DARE_TOL {
            return Ok(p);
        }
        if it + 1 == DARE_MAX_ITER {
            return Err(Error::NoConvergence {
                what: "discrete Riccati recursion",
                iterations: DARE_MAX_ITER,
                residual: diff,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "discrete Riccati recursion",
        iterations: DARE_MAX_ITER,
        residual: f64::INFINITY,
    })
}

/// Terminal weight from the LQR problem linearized at the origin
/// (`i = 0`, `ψ = 0`, `u = 0`, standstill) with the per-stage weights
/// `h·Wψψ`, `h·Wuu`.
pub fn compute_lqr_terminal<M: FluxMap + ?Sized>(
    map: &M,
    rs: f64,
    h: f64,
    w_psi: &Mat2,
    w_u: &Mat2,
) -> Result<Mat2> {
    let step = dae_step(
        &StepInput {
            psi0: Vec2::zeros(),
            u: Vec2::zeros(),
            omega_k: 0.0,
            v: Vec2::zeros(),
            h,
            rs,
        },
        map,
        Some(Vec2::zeros()),
    )?;
    solve_dare(&step.a_sens, &step.b_sens, &(h * w_psi), &(h * w_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux_model::GreyBoxParams;

    fn residual(p: &Mat2, a: &Mat2, b: &Mat2, q: &Mat2, r: &Mat2) -> f64 {
        (p - riccati_map(p, a, b, q, r).unwrap()).norm()
    }

    #[test]
    fn terminal_weight_solves_riccati_equation() {
        let th = GreyBoxParams::REFERENCE;
        let h = 1.6e-3;
        let w_psi = Mat2::identity() * 312.5;
        let w_u = Mat2::identity() * 1e-4;
        let p = compute_lqr_terminal(&th, 0.4, h, &w_psi, &w_u).unwrap();
        let step = dae_step(
            &StepInput {
                psi0: Vec2::zeros(),
                u: Vec2::zeros(),
                omega_k: 0.0,
                v: Vec2::zeros(),
                h,
                rs: 0.4,
            },
            &th,
            None,
        )
        .unwrap();
        let (q, r) = (h * w_psi, h * w_u);
        assert!(residual(&p, &step.a_sens, &step.b_sens, &q, &r) < 1e-8);
        // P ⪰ Q
        let eig = (p - q).symmetric_eigenvalues();
        assert!(eig.min() >= -1e-12, "{eig}");
        assert!(p.symmetric_eigenvalues().min() > 0.0);
        assert_eq!(p, p.transpose());
    }

    #[test]
    fn zero_input_reduces_to_lyapunov_series() {
        let a = Mat2::new(0.9, 0.2, -0.1, 0.7);
        let q = Mat2::new(2.0, 0.3, 0.3, 1.0);
        let p = solve_dare(&a, &Mat2::zeros(), &q, &Mat2::identity()).unwrap();
        let mut series = Mat2::zeros();
        let mut ak = Mat2::identity();
        for _ in 0..2000 {
            series += ak.transpose() * q * ak;
            ak *= a;
        }
        assert!((p - series).amax() < 1e-8, "{p} vs {series}");
    }

    #[test]
    fn scalar_case_matches_closed_form() {
        // Decoupled scalar DARE: p = q + a²p − a²p²b²/(r + b²p).
        let (a, b, q, r) = (1.1, 0.5, 1.0, 2.0);
        let p = solve_dare(
            &(Mat2::identity() * a),
            &(Mat2::identity() * b),
            &(Mat2::identity() * q),
            &(Mat2::identity() * r),
        )
        .unwrap();
        // b²p² + (r − a²r − qb²)p − qr = 0
        let (qa, qb, qc) = (b * b, r - a * a * r - q * b * b, -q * r);
        let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        assert!((p[(0, 0)] - root).abs() < 1e-9);
        assert!(p[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn unstabilizable_pair_fails() {
        let a = Mat2::identity() * 1.5;
        assert!(solve_dare(&a, &Mat2::zeros(), &Mat2::identity(), &Mat2::identity()).is_err());
    }
}
