//! Independent oracles shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::rngs::StdRng;
use rand::Rng;

use rsm_nmpc::nmpc::{QpData, ROWS_PER_STAGE};
use rsm_nmpc::qp_solver::DenseQp;
use rsm_nmpc::{Mat2, Vec2};

/// exp(A) by scaling and squaring with a 20-term Taylor series.
pub fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
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

/// Exact solution of `ψ' = Mψ + c` after time `t`, via the augmented
/// exponential `exp([[M, c], [0, 0]]·t)`.
pub fn exact_affine(m: Mat2, c: Vec2, psi0: Vec2, t: f64) -> Vec2 {
    let mut aug = Matrix3::zeros();
    aug.fixed_view_mut::<2, 2>(0, 0).copy_from(&m);
    aug.fixed_view_mut::<2, 1>(0, 2).copy_from(&c);
    let e = expm3(&(aug * t));
    e.fixed_view::<2, 2>(0, 0) * psi0 + e.fixed_view::<2, 1>(0, 2)
}

/// Random strictly convex QP with redundant (duplicated) inequality rows,
/// feasible by construction.
pub fn random_qp(rng: &mut StdRng) -> DenseQp {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(0..=12);
    let p = rng.random_range(0..=n.min(2)).min(n - 1);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h_mat = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut g_mat: DMatrix<f64> = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let mut dup_of = vec![None; m];
    for k in 1..m {
        if rng.random_bool(0.3) {
            let src = rng.random_range(0..k);
            let s = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.5..2.0) };
            let row = g_mat.row(src) * s;
            g_mat.set_row(k, &row);
            dup_of[k] = Some((src, s));
        }
    }
    let mut h = &g_mat * &z0;
    for k in 0..m {
        if dup_of[k].is_none() && rng.random_bool(0.7) {
            h[k] += g_mat.row(k).norm() * rng.random_range(0.0..1.0);
        }
    }
    for k in 0..m {
        if let Some((src, s)) = dup_of[k] {
            h[k] = h[src] * s;
        }
    }
    let e_mat = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    let e = &e_mat * &z0;
    DenseQp {
        h_mat,
        g,
        g_mat,
        h,
        e_mat,
        e,
    }
}

/// Minimizer found by trying every inequality subset as the active set and
/// keeping the primal and dual feasible KKT point.
pub fn enumeration_oracle(qp: &DenseQp) -> DVector<f64> {
    let n = qp.h_mat.nrows();
    let (m, p) = (qp.h.len(), qp.e.len());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        let q = idx.len() + p;
        if q > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + q, n + q);
        let mut rhs = DVector::zeros(n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h_mat);
        rhs.rows_mut(0, n).copy_from(&(-&qp.g));
        let rows = (0..p)
            .map(|r| (qp.e_mat.row(r).into_owned(), qp.e[r]))
            .chain(idx.iter().map(|&r| (qp.g_mat.row(r).into_owned(), qp.h[r])));
        for (c, (row, b)) in rows.enumerate() {
            kkt.view_mut((n + c, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + c), (n, 1)).copy_from(&row.transpose());
            rhs[n + c] = b;
        }
        if kkt.clone().svd(false, false).singular_values.min() < 1e-10 {
            continue;
        }
        let Some(x) = kkt.lu().solve(&rhs) else { continue };
        let z = x.rows(0, n).into_owned();
        // the multiplier block of this system is μ in Hz + g + Gᵀμ = 0
        let dual_ok = (0..idx.len()).all(|c| x[n + p + c] >= -1e-9);
        let primal_ok = (0..m).all(|r| (qp.g_mat.row(r) * &z)[0] - qp.h[r] <= 1e-9);
        if dual_ok && primal_ok {
            let obj = 0.5 * z.dot(&(&qp.h_mat * &z)) + qp.g.dot(&z);
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, z));
            }
        }
    }
    best.expect("feasible QP has an optimum").1
}

/// Solve the uncondensed equality-constrained KKT system in
/// `(Δψ₀, …, Δψ_N, Δu₀, …)` with the listed inequality rows held active.
pub fn full_space_kkt(qp: &QpData, active: &[usize]) -> (Vec<Vec2>, DVector<f64>) {
    let n = qp.stages.len();
    let nx = 2 * (n + 1);
    let nu = 2 * n;
    let nv = nx + nu;
    let dim = nv + nx + active.len();
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let put = |k: &mut DMatrix<f64>, r: usize, c: usize, m: &Mat2| {
        k.view_mut((r, c), (2, 2)).copy_from(m);
    };
    for (s, st) in qp.stages.iter().enumerate() {
        put(&mut k, 2 * s, 2 * s, &st.q);
        put(&mut k, nx + 2 * s, nx + 2 * s, &st.r);
        rhs.rows_mut(2 * s, 2).copy_from(&(-st.q_vec));
        rhs.rows_mut(nx + 2 * s, 2).copy_from(&(-st.r_vec));
    }
    put(&mut k, 2 * n, 2 * n, &qp.q_n);
    rhs.rows_mut(2 * n, 2).copy_from(&(-qp.q_n_vec));

    let i2 = Mat2::identity();
    let mut row = nv;
    let mut constraint = |k: &mut DMatrix<f64>, rhs: &mut DVector<f64>, blocks: &[(usize, Mat2)], b: Vec2| {
        for (col, m) in blocks {
            put(k, row, *col, m);
            put(k, *col, row, &m.transpose());
        }
        rhs.rows_mut(row, 2).copy_from(&b);
        row += 2;
    };
    constraint(&mut k, &mut rhs, &[(0, i2)], qp.s0);
    for (s, st) in qp.stages.iter().enumerate() {
        constraint(
            &mut k,
            &mut rhs,
            &[(2 * (s + 1), i2), (2 * s, -st.a), (nx + 2 * s, -st.b)],
            st.c,
        );
    }
    for (j, &a) in active.iter().enumerate() {
        let (s, local) = (a / ROWS_PER_STAGE, a % ROWS_PER_STAGE);
        let r = nv + nx + j;
        for c in 0..2 {
            k[(r, nx + 2 * s + c)] = qp.stages[s].d[(local, c)];
            k[(nx + 2 * s + c, r)] = qp.stages[s].d[(local, c)];
        }
        rhs[r] = qp.stages[s].e[local];
    }
    let x = k.lu().solve(&rhs).expect("nonsingular KKT");
    let dpsi = (0..=n).map(|s| Vec2::new(x[2 * s], x[2 * s + 1])).collect();
    (dpsi, x.rows(nx, nu).into_owned())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
