//! One-stage Gauss-Legendre (implicit midpoint) collocation for the flux DAE
//! with sensitivities for linearization.

use nalgebra::{Matrix4, Vector4};

use crate::flux_model::{invert_flux, FluxMap};
use crate::machine::{mech_rhs, rotation_j, torque, wrap_angle, MachineParams, RotorState};
use crate::{Error, Mat2, Result, Vec2};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 30;

/// Inputs held constant over one collocation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    pub psi0: Vec2,
    pub u: Vec2,
    /// Electrical angular velocity, rad/s.
    pub omega_k: f64,
    /// Lumped voltage disturbance.
    pub v: Vec2,
    pub h: f64,
    pub rs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaeStepResult {
    pub psi_next: Vec2,
    pub psi_stage: Vec2,
    pub i_stage: Vec2,
    /// ∂ψ₊/∂ψ₀.
    pub a_sens: Mat2,
    /// ∂ψ₊/∂u.
    pub b_sens: Mat2,
    /// ∂ψ₊/∂v.
    pub v_sens: Mat2,
    pub newton_iters: usize,
}

fn residual<M: FluxMap + ?Sized>(inp: &StepInput, map: &M, psi_c: Vec2, i_c: Vec2) -> Vector4<f64> {
    let f = inp.u - inp.rs * i_c - inp.omega_k * rotation_j() * psi_c + inp.v;
    let r1 = psi_c - inp.psi0 - 0.5 * inp.h * f;
    let r2 = psi_c - map.flux(i_c);
    Vector4::new(r1[0], r1[1], r2[0], r2[1])
}

fn newton_matrix<M: FluxMap + ?Sized>(inp: &StepInput, map: &M, i_c: Vec2) -> Matrix4<f64> {
    let hh = 0.5 * inp.h;
    let mut k = Matrix4::zeros();
    k.fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&(Mat2::identity() + hh * inp.omega_k * rotation_j()));
    k.fixed_view_mut::<2, 2>(0, 2)
        .copy_from(&(hh * inp.rs * Mat2::identity()));
    k.fixed_view_mut::<2, 2>(2, 0).copy_from(&Mat2::identity());
    k.fixed_view_mut::<2, 2>(2, 2).copy_from(&(-map.jacobian(i_c)));
    k
}

/// Damped Newton on the stage equations; the step is halved while the
/// residual norm grows.
fn newton<M: FluxMap + ?Sized>(inp: &StepInput, map: &M, i0: Vec2) -> Result<(Vec2, Vec2, usize)> {
    let mut psi_c = inp.psi0;
    let mut i_c = i0;
    let mut res = residual(inp, map, psi_c, i_c);
    let mut iters = 0;
    while res.amax() >= NEWTON_TOL {
        if iters == NEWTON_MAX_ITER || !res.amax().is_finite() {
            return Err(Error::NoConvergence {
                what: "collocation Newton",
                iterations: iters,
                residual: res.amax(),
            });
        }
        let dz = newton_matrix(inp, map, i_c)
            .lu()
            .solve(&res)
            .ok_or(Error::SingularJacobian("collocation Newton matrix"))?;
        let norm = res.norm();
        let mut alpha = 1.0;
        loop {
            let psi_n = psi_c - alpha * dz.fixed_rows::<2>(0);
            let i_n = i_c - alpha * dz.fixed_rows::<2>(2);
            let res_n = residual(inp, map, psi_n, i_n);
            if res_n.norm() < norm || alpha < 1e-4 {
                psi_c = psi_n;
                i_c = i_n;
                res = res_n;
                break;
            }
            alpha *= 0.5;
        }
        iters += 1;
    }
    Ok((psi_c, i_c, iters))
}

/// Advance the flux by one GL2 step of length `h`.
///
/// `i_guess` warm-starts the stage current; without it the stage is seeded
/// from the inverse flux map at `psi0`.
pub fn dae_step<M: FluxMap + ?Sized>(
    inp: &StepInput,
    map: &M,
    i_guess: Option<Vec2>,
) -> Result<DaeStepResult> {
    if !(inp.h > 0.0) || !inp.h.is_finite() {
        return Err(Error::invalid("step size must be positive"));
    }
    let finite = |x: &Vec2| x.iter().all(|v| v.is_finite());
    if !finite(&inp.psi0)
        || !finite(&inp.u)
        || !finite(&inp.v)
        || !inp.omega_k.is_finite()
        || !inp.rs.is_finite()
    {
        return Err(Error::Domain("non-finite integrator input"));
    }

    let seed = || invert_flux(inp.psi0, map, Vec2::zeros()).unwrap_or_else(|_| Vec2::zeros());
    let (psi_c, i_c, iters) = match i_guess {
        // a stale warm start can sit where the map saturates; retry cold
        Some(i) => newton(inp, map, i).or_else(|_| newton(inp, map, seed()))?,
        None => newton(inp, map, seed())?,
    };

    // Implicit function theorem: dψc/dψ0 is the top-left block of K⁻¹ [I; 0],
    // and ∂R/∂u = (h/2)·∂R/∂ψ0.
    let k_inv = newton_matrix(inp, map, i_c)
        .try_inverse()
        .ok_or(Error::SingularJacobian("collocation Newton matrix"))?;
    let x: Mat2 = k_inv.fixed_view::<2, 2>(0, 0).into_owned();
    let a_sens = 2.0 * x - Mat2::identity();
    let b_sens = inp.h * x;

    Ok(DaeStepResult {
        psi_next: 2.0 * psi_c - inp.psi0,
        psi_stage: psi_c,
        i_stage: i_c,
        a_sens,
        b_sens,
        v_sens: b_sens,
        newton_iters: iters,
    })
}

/// Ground-truth plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub psi: Vec2,
    pub i: Vec2,
    pub rotor: RotorState,
    /// Electromagnetic torque at the last stage point.
    pub m_m: f64,
}

impl PlantState {
    /// Plant at rest electrically with the given mechanical speed.
    pub fn at_speed(omega_m: f64) -> Self {
        PlantState {
            psi: Vec2::zeros(),
            i: Vec2::zeros(),
            rotor: RotorState {
                omega_m,
                phi_k: 0.0,
            },
            m_m: 0.0,
        }
    }
}

/// Advance the plant by `h_sub`: flux by one GL2 step at the current speed,
/// mechanics by the explicit midpoint rule using the stage torque.
pub fn simulate_plant_substep<M: FluxMap + ?Sized>(
    state: &PlantState,
    u: Vec2,
    m_l: f64,
    h_sub: f64,
    params: &MachineParams,
    map: &M,
) -> Result<PlantState> {
    let np = f64::from(params.np);
    let omega_m = state.rotor.omega_m;
    let step = dae_step(
        &StepInput {
            psi0: state.psi,
            u,
            omega_k: np * omega_m,
            v: Vec2::zeros(),
            h: h_sub,
            rs: params.rs,
        },
        map,
        Some(state.i),
    )?;
    let m_mid = torque(step.i_stage, step.psi_stage, params.np);
    let omega_next = omega_m + h_sub * mech_rhs(m_mid, m_l, params.theta_inertia);
    let phi_next = wrap_angle(state.rotor.phi_k + h_sub * np * 0.5 * (omega_m + omega_next));
    let i_next = invert_flux(step.psi_next, map, 2.0 * step.i_stage - state.i)?;
    Ok(PlantState {
        psi: step.psi_next,
        i: i_next,
        rotor: RotorState {
            omega_m: omega_next,
            phi_k: phi_next,
        },
        m_m: m_mid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux_model::{GreyBoxParams, LinearFluxMap};
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    const RS: f64 = 0.4;

    fn lin_map() -> LinearFluxMap {
        LinearFluxMap::new(Mat2::new(0.06, 0.0, 0.0, 0.015))
    }

    /// exp(A) by scaling and squaring with a 20-term Taylor series.
    fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
        let norm = a.abs().max();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let b = a / 2f64.powi(s);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..20 {
            term = term * b / k as f64;
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    /// Exact solution of ψ' = Mψ + c after time t.
    fn exact_linear(m: Mat2, c: Vec2, psi0: Vec2, t: f64) -> Vec2 {
        let mut aug = Matrix3::zeros();
        aug.fixed_view_mut::<2, 2>(0, 0).copy_from(&(m * t));
        aug[(0, 2)] = c[0] * t;
        aug[(1, 2)] = c[1] * t;
        let e = expm3(&aug);
        let x = e * nalgebra::Vector3::new(psi0[0], psi0[1], 1.0);
        Vec2::new(x[0], x[1])
    }

    fn input(psi0: Vec2, u: Vec2, omega_k: f64, h: f64) -> StepInput {
        StepInput {
            psi0,
            u,
            omega_k,
            v: Vec2::zeros(),
            h,
            rs: RS,
        }
    }

    #[test]
    fn steady_pair_is_a_fixed_point() {
        let th = GreyBoxParams::REFERENCE;
        let i_star = Vec2::new(16.45, 31.98);
        let psi_star = th.flux(i_star);
        let w = 314.0;
        let u = RS * i_star + w * rotation_j() * psi_star;
        let r = dae_step(&input(psi_star, u, w, 1.6e-3), &th, None).unwrap();
        assert!((r.psi_next - psi_star).amax() < 1e-12);
        assert!((r.i_stage - i_star).amax() < 1e-8);
    }

    #[test]
    fn linear_system_converges_with_order_two() {
        let map = lin_map();
        let w = 314.0;
        let m = -RS * map.inductance.try_inverse().unwrap() - w * rotation_j();
        let u = Vec2::new(40.0, 150.0);
        let psi0 = Vec2::new(0.3, -0.1);
        let t_end = 3.2e-3;
        let exact = exact_linear(m, u, psi0, t_end);

        let mut errors = Vec::new();
        for k in 0..5 {
            let n = 2usize << k;
            let h = t_end / n as f64;
            let mut psi = psi0;
            for _ in 0..n {
                psi = dae_step(&input(psi, u, w, h), &map, None).unwrap().psi_next;
            }
            errors.push((psi - exact).norm());
        }
        for w in errors.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 2.0).abs() < 0.1, "slope {slope}, errors {errors:?}");
        }
    }

    #[test]
    fn linear_transition_matches_midpoint_formula() {
        let map = lin_map();
        let h = 1.6e-3;
        let w = 314.0;
        let m = -RS * map.inductance.try_inverse().unwrap() - w * rotation_j();
        let i2 = Mat2::identity();
        let expected = (i2 - 0.5 * h * m).try_inverse().unwrap() * (i2 + 0.5 * h * m);
        let b_expected = (i2 - 0.5 * h * m).try_inverse().unwrap() * h;
        let r = dae_step(&input(Vec2::new(0.4, 0.2), Vec2::new(10.0, 5.0), w, h), &map, None)
            .unwrap();
        assert!((r.a_sens - expected).amax() < 1e-10);
        assert!((r.b_sens - b_expected).amax() < 1e-12);
        assert_eq!(r.b_sens, r.v_sens);
    }

    fn fd_check(psi0: Vec2, u: Vec2, w: f64) {
        let th = GreyBoxParams::REFERENCE;
        let h = 1.6e-3;
        let base = input(psi0, u, w, h);
        let r = dae_step(&base, &th, None).unwrap();
        let run = |inp: StepInput| dae_step(&inp, &th, None).unwrap().psi_next;

        let mut a_fd = Mat2::zeros();
        let mut b_fd = Mat2::zeros();
        let mut v_fd = Mat2::zeros();
        let (dpsi, du) = (1e-5, 1e-2);
        for j in 0..2 {
            let mut e = Vec2::zeros();
            e[j] = 1.0;
            let col = (run(StepInput { psi0: psi0 + dpsi * e, ..base })
                - run(StepInput { psi0: psi0 - dpsi * e, ..base }))
                / (2.0 * dpsi);
            a_fd.set_column(j, &col);
            let col = (run(StepInput { u: u + du * e, ..base }) - run(StepInput { u: u - du * e, ..base }))
                / (2.0 * du);
            b_fd.set_column(j, &col);
            let col = (run(StepInput { v: du * e, ..base }) - run(StepInput { v: -du * e, ..base }))
                / (2.0 * du);
            v_fd.set_column(j, &col);
        }
        let rel = |s: Mat2, fd: Mat2| (s - fd).norm() / s.norm();
        assert!(rel(r.a_sens, a_fd) < 1e-5, "A {} vs {}", r.a_sens, a_fd);
        assert!(rel(r.b_sens, b_fd) < 1e-5, "B {} vs {}", r.b_sens, b_fd);
        assert!(rel(r.v_sens, v_fd) < 1e-5, "V {} vs {}", r.v_sens, v_fd);
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        fd_check(Vec2::new(0.8, 0.4), Vec2::new(-100.0, 250.0), 314.0);
        fd_check(Vec2::new(0.1, -0.05), Vec2::new(20.0, -10.0), 0.0);
        fd_check(Vec2::new(-0.9, 0.3), Vec2::new(0.0, 0.0), -200.0);
    }

    #[test]
    fn deterministic() {
        let th = GreyBoxParams::REFERENCE;
        let inp = input(Vec2::new(0.5, 0.3), Vec2::new(30.0, 200.0), 314.0, 1.6e-3);
        assert_eq!(dae_step(&inp, &th, None).unwrap(), dae_step(&inp, &th, None).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let th = GreyBoxParams::REFERENCE;
        let inp = input(Vec2::new(0.5, 0.3), Vec2::zeros(), 0.0, 0.0);
        assert!(dae_step(&inp, &th, None).is_err());
        let inp = input(Vec2::new(f64::NAN, 0.3), Vec2::zeros(), 0.0, 1e-3);
        assert!(matches!(dae_step(&inp, &th, None), Err(Error::Domain(_))));
    }

    #[test]
    fn warm_start_reduces_iterations() {
        let th = GreyBoxParams::REFERENCE;
        let inp = input(Vec2::new(0.8, 0.4), Vec2::new(-100.0, 250.0), 314.0, 1.6e-3);
        let cold = dae_step(&inp, &th, None).unwrap();
        let warm = dae_step(&inp, &th, Some(cold.i_stage)).unwrap();
        assert!(warm.newton_iters <= 1);
        assert!(cold.newton_iters <= 5);
    }

    #[test]
    fn plant_equilibrium_is_preserved() {
        let p = MachineParams::default();
        let th = GreyBoxParams::REFERENCE;
        let i = Vec2::new(16.45, 31.98);
        let psi = th.flux(i);
        let m = torque(i, psi, p.np);
        let omega_m = 157.0;
        let u = p.rs * i + 2.0 * omega_m * rotation_j() * psi;
        let mut s = PlantState {
            psi,
            i,
            rotor: RotorState { omega_m, phi_k: 0.0 },
            m_m: m,
        };
        for _ in 0..40 {
            s = simulate_plant_substep(&s, u, m, 62.5e-6, &p, &th).unwrap();
        }
        assert!((s.psi - psi).amax() < 1e-9);
        assert!((s.i - i).amax() < 1e-6);
        assert!((s.rotor.omega_m - omega_m).abs() < 1e-9);
    }

    #[test]
    fn zero_torque_keeps_speed() {
        let p = MachineParams::default();
        let th = GreyBoxParams::REFERENCE;
        let mut s = PlantState::at_speed(100.0);
        for _ in 0..100 {
            s = simulate_plant_substep(&s, Vec2::zeros(), 0.0, 62.5e-6, &p, &th).unwrap();
        }
        assert_eq!(s.rotor.omega_m, 100.0);
        let expected = wrap_angle(100.0 * 2.0 * 100.0 * 62.5e-6);
        assert!((s.rotor.phi_k - expected).abs() < 1e-9);
    }

    #[test]
    fn unforced_flux_decays() {
        // Frozen-ω linear regime: eigenvalues of M have negative real part.
        let map = lin_map();
        let w = 314.0;
        let m = -RS * map.inductance.try_inverse().unwrap() - w * rotation_j();
        assert!(m.complex_eigenvalues().iter().all(|l| l.re < 0.0));
        let mut psi = Vec2::new(0.01, 0.0);
        for _ in 0..200 {
            let next = dae_step(&input(psi, Vec2::zeros(), 0.0, 62.5e-6), &map, None)
                .unwrap()
                .psi_next;
            assert!(next.norm() < psi.norm());
            psi = next;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn stage_residual_below_tolerance(
            pd in -1.0..1.0f64, pq in -0.6..0.6f64,
            ud in -300.0..300.0f64, uq in -300.0..300.0f64,
            w in -350.0..350.0f64,
        ) {
            let th = GreyBoxParams::REFERENCE;
            let inp = input(Vec2::new(pd, pq), Vec2::new(ud, uq), w, 1.6e-3);
            let r = dae_step(&inp, &th, None).unwrap();
            prop_assert!(residual(&inp, &th, r.psi_stage, r.i_stage).amax() < NEWTON_TOL);
            let f = inp.u - RS * r.i_stage - w * rotation_j() * r.psi_stage;
            prop_assert!((r.psi_next - (inp.psi0 + inp.h * f)).amax() < 1e-9);
        }
    }
}
