//! Dense strictly convex QP solver.
//!
//! ```text
//! minimize   ½ zᵀHz + gᵀz
//! subject to Gz ≤ h,  Ez = e
//! ```
//!
//! Implemented as the Goldfarb–Idnani dual active-set method: start at the
//! unconstrained minimizer, repeatedly add the most violated constraint and
//! drop active constraints whose multiplier would turn negative. Every iterate
//! is dual feasible, so no Phase-1 is needed and a linearly dependent
//! addition is resolved by dropping the blocking constraint with the smallest
//! multiplier ratio.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Total working-set additions and removals before giving up.
pub const MAX_WORKING_SET_CHANGES: usize = 100;

const FEAS_TOL: f64 = 1e-10;
const DEPENDENCY_TOL: f64 = 1e-10;
const ZERO_ROW: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub h_mat: DMatrix<f64>,
    pub g: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub h: DVector<f64>,
    pub e_mat: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl DenseQp {
    /// QP without constraints.
    pub fn unconstrained(h_mat: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        DenseQp {
            h_mat,
            g,
            g_mat: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
            e_mat: DMatrix::zeros(0, n),
            e: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.h_mat.shape() != (n, n) {
            return Err(Error::Qp(format!("H must be {n}x{n}")));
        }
        if self.g_mat.ncols() != n || self.g_mat.nrows() != self.h.len() {
            return Err(Error::Qp("inequality block dimensions differ".into()));
        }
        if self.e_mat.ncols() != n || self.e_mat.nrows() != self.e.len() {
            return Err(Error::Qp("equality block dimensions differ".into()));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        let finite_v = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.h_mat)
            || !finite(&self.g_mat)
            || !finite(&self.e_mat)
            || !finite_v(&self.g)
            || !finite_v(&self.h)
            || !finite_v(&self.e)
        {
            return Err(Error::Qp("non-finite QP data".into()));
        }
        Ok(())
    }

    /// Largest violation of `Gz ≤ h` (zero when feasible).
    pub fn inequality_violation(&self, z: &DVector<f64>) -> f64 {
        (&self.g_mat * z - &self.h).iter().fold(0.0, |a, &v| a.max(v))
    }

    /// Largest violation of `Ez = e`.
    pub fn equality_violation(&self, z: &DVector<f64>) -> f64 {
        (&self.e_mat * z - &self.e).amax()
    }

    /// `‖Hz + g + Gᵀμ + Eᵀλ‖∞`.
    pub fn stationarity(&self, sol: &QpSolution) -> f64 {
        (&self.h_mat * &sol.z + &self.g + self.g_mat.transpose() * &sol.mu + self.e_mat.transpose() * &sol.lambda)
            .amax()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h_mat * z)) + self.g.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Equality multipliers.
    pub lambda: DVector<f64>,
    /// Inequality multipliers, nonnegative.
    pub mu: DVector<f64>,
    /// Active inequality indices, ascending.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    /// Working-set additions plus removals.
    pub iterations: usize,
}

/// A constraint `aᵀz ≥ b` with unit-norm `a`.
struct Row {
    a: DVector<f64>,
    b: f64,
    /// Original row norm, negated when an equality row was flipped.
    scale: f64,
    equality: bool,
    /// Index in `G` or `E`.
    source: usize,
}

struct Solver<'a> {
    rows: Vec<Row>,
    h_inv: DMatrix<f64>,
    g: &'a DVector<f64>,
    z: DVector<f64>,
    /// Active row indices into `rows`, with their multipliers `u` (for `aᵀz ≥ b`).
    active: Vec<usize>,
    u: Vec<f64>,
    changes: usize,
}

fn regularized_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (h + h.transpose());
    let n = sym.nrows();
    let mut shift = 0.0;
    for _ in 0..8 {
        let m = &sym + DMatrix::identity(n, n) * shift;
        if let Some(ch) = m.cholesky() {
            return Ok(ch.inverse());
        }
        shift = if shift == 0.0 { 1e-9 } else { shift * 10.0 };
    }
    Err(Error::Qp("Hessian is not positive definite".into()))
}

impl<'a> Solver<'a> {
    fn new(qp: &'a DenseQp) -> Result<Self> {
        qp.validate()?;
        let h_inv = regularized_inverse(&qp.h_mat)?;
        let mut rows = Vec::with_capacity(qp.e.len() + qp.h.len());
        for k in 0..qp.e.len() {
            let a = qp.e_mat.row(k).transpose();
            let s = a.norm();
            rows.push(Row {
                b: if s > ZERO_ROW { qp.e[k] / s } else { qp.e[k] },
                a: if s > ZERO_ROW { a / s } else { a },
                scale: s,
                equality: true,
                source: k,
            });
        }
        for k in 0..qp.h.len() {
            let a = -qp.g_mat.row(k).transpose();
            let s = a.norm();
            rows.push(Row {
                b: if s > ZERO_ROW { -qp.h[k] / s } else { -qp.h[k] },
                a: if s > ZERO_ROW { a / s } else { a },
                scale: s,
                equality: false,
                source: k,
            });
        }
        let z = -(&h_inv * &qp.g);
        Ok(Solver {
            rows,
            h_inv,
            g: &qp.g,
            z,
            active: Vec::new(),
            u: Vec::new(),
            changes: 0,
        })
    }

    fn slack(&self, k: usize) -> f64 {
        self.rows[k].a.dot(&self.z) - self.rows[k].b
    }

    fn is_zero_row(&self, k: usize) -> bool {
        self.rows[k].scale.abs() <= ZERO_ROW
    }

    /// Active normals as columns.
    fn normals(&self) -> DMatrix<f64> {
        let n = self.z.len();
        let mut nm = DMatrix::zeros(n, self.active.len());
        for (c, &k) in self.active.iter().enumerate() {
            nm.set_column(c, &self.rows[k].a);
        }
        nm
    }

    /// Primal direction and multiplier change for moving onto constraint `p`.
    fn directions(&self, p: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let np = &self.rows[p].a;
        let hn = &self.h_inv * np;
        if self.active.is_empty() {
            return Ok((hn, DVector::zeros(0)));
        }
        let nm = self.normals();
        let hnm = &self.h_inv * &nm;
        let m = nm.transpose() * &hnm;
        let r = m
            .clone()
            .cholesky()
            .map(|c| c.solve(&(nm.transpose() * &hn)))
            .or_else(|| m.lu().solve(&(nm.transpose() * &hn)))
            .ok_or(Error::Qp("active set became dependent".into()))?;
        let z_dir = hn - hnm * &r;
        Ok((z_dir, r))
    }

    /// Equality-constrained minimizer on the current active set.
    fn solve_active(&self) -> Option<(DVector<f64>, Vec<f64>)> {
        if self.active.is_empty() {
            return Some((-(&self.h_inv * self.g), Vec::new()));
        }
        let nm = self.normals();
        let hnm = &self.h_inv * &nm;
        let b = DVector::from_iterator(self.active.len(), self.active.iter().map(|&k| self.rows[k].b));
        let rhs = b + hnm.transpose() * self.g;
        let m = nm.transpose() * &hnm;
        let u = m.cholesky()?.solve(&rhs);
        let z = hnm * &u - &self.h_inv * self.g;
        Some((z, u.iter().copied().collect()))
    }

    fn drop_at(&mut self, pos: usize) {
        self.active.remove(pos);
        self.u.remove(pos);
        self.changes += 1;
    }

    /// Add constraint `p`, dropping blockers as needed. Returns `false` when
    /// the constraint cannot be satisfied together with the active set.
    fn add_constraint(&mut self, p: usize) -> Result<bool> {
        let mut u_p = 0.0;
        loop {
            if self.changes >= MAX_WORKING_SET_CHANGES {
                return Ok(true);
            }
            let (z_dir, r) = self.directions(p)?;
            let np = &self.rows[p].a;
            let curvature = np.dot(&z_dir);
            let dependent = curvature <= DEPENDENCY_TOL * np.dot(&(&self.h_inv * np));
            let s = self.slack(p);

            // Partial step: first inequality multiplier hitting zero.
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (pos, &k) in self.active.iter().enumerate() {
                if self.rows[k].equality || r[pos] <= 0.0 {
                    continue;
                }
                let t = self.u[pos] / r[pos];
                if t < t1 || (t == t1 && block.is_some_and(|b: usize| k < self.active[b])) {
                    t1 = t;
                    block = Some(pos);
                }
            }

            let t2 = if dependent { f64::INFINITY } else { -s / curvature };
            if dependent && self.rows[p].equality && s.abs() <= FEAS_TOL {
                // Redundant equality, already satisfied on the active set.
                return Ok(true);
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(false);
            }

            if !dependent {
                self.z += t * &z_dir;
            }
            for (pos, ri) in r.iter().enumerate() {
                self.u[pos] -= t * ri;
            }
            u_p += t;

            if t == t2 {
                self.active.push(p);
                self.u.push(u_p);
                // equalities belong to every working set
                if !self.rows[p].equality {
                    self.changes += 1;
                }
                return Ok(true);
            }
            let pos = block.expect("finite partial step has a blocker");
            self.drop_at(pos);
        }
    }

    fn run(&mut self, warm: Option<&[usize]>) -> Result<QpStatus> {
        let n_rows = self.rows.len();
        for p in 0..n_rows {
            if !self.rows[p].equality {
                continue;
            }
            if self.is_zero_row(p) {
                if self.rows[p].b.abs() > FEAS_TOL {
                    return Ok(QpStatus::Infeasible);
                }
                continue;
            }
            if self.slack(p) > 0.0 {
                // approach the equality from above
                let row = &mut self.rows[p];
                row.a = -&row.a;
                row.b = -row.b;
                row.scale = -row.scale;
            }
            if !self.add_constraint(p)? {
                return Ok(QpStatus::Infeasible);
            }
        }
        let n_eq = self.active.len();

        if let Some(warm) = warm {
            self.apply_warm_start(warm, n_eq);
        }

        loop {
            if self.changes >= MAX_WORKING_SET_CHANGES {
                return Ok(QpStatus::MaxIter);
            }
            // Most violated inequality, smallest index on ties.
            let mut worst = None;
            let mut worst_s = -FEAS_TOL;
            for k in 0..n_rows {
                if self.rows[k].equality || self.active.contains(&k) {
                    continue;
                }
                if self.is_zero_row(k) {
                    if self.rows[k].b > FEAS_TOL {
                        return Ok(QpStatus::Infeasible);
                    }
                    continue;
                }
                let s = self.slack(k);
                if s < worst_s {
                    worst_s = s;
                    worst = Some(k);
                }
            }
            let Some(p) = worst else {
                return Ok(QpStatus::Solved);
            };
            if !self.add_constraint(p)? {
                return Ok(QpStatus::Infeasible);
            }
        }
    }

    /// Seed the working set with linearly independent warm rows, then drop
    /// negative multipliers until the iterate is dual feasible.
    fn apply_warm_start(&mut self, warm: &[usize], n_eq: usize) {
        let n_eq_rows = self.rows.iter().filter(|r| r.equality).count();
        let saved = (self.z.clone(), self.active.clone(), self.u.clone());
        let n = self.z.len();
        for &w in warm {
            let k = n_eq_rows + w;
            if k >= self.rows.len() || self.is_zero_row(k) || self.active.contains(&k) {
                continue;
            }
            if self.active.len() >= n {
                break;
            }
            let np = &self.rows[k].a;
            let hn = &self.h_inv * np;
            let residual_curv = if self.active.is_empty() {
                np.dot(&hn)
            } else {
                match self.directions(k) {
                    Ok((z_dir, _)) => np.dot(&z_dir),
                    Err(_) => continue,
                }
            };
            if residual_curv > DEPENDENCY_TOL * np.dot(&hn) {
                self.active.push(k);
                self.u.push(0.0);
            }
        }
        loop {
            let Some((z, u)) = self.solve_active() else {
                (self.z, self.active, self.u) = saved;
                return;
            };
            self.z = z;
            self.u = u;
            let mut most_negative = None;
            let mut val = 0.0;
            for pos in n_eq..self.active.len() {
                if self.u[pos] < val {
                    val = self.u[pos];
                    most_negative = Some(pos);
                }
            }
            match most_negative {
                Some(pos) => self.drop_at(pos),
                None => return,
            }
        }
    }

    fn polish(&mut self) {
        if let Some((z, u)) = self.solve_active() {
            if z.iter().all(|v| v.is_finite()) {
                self.z = z;
                self.u = u;
            }
        }
    }

    fn into_solution(mut self, qp: &DenseQp, status: QpStatus) -> QpSolution {
        if status == QpStatus::Solved {
            self.polish();
        }
        let mut lambda = DVector::zeros(qp.e.len());
        let mut mu = DVector::zeros(qp.h.len());
        let mut active_set = Vec::new();
        for (&k, &u) in self.active.iter().zip(&self.u) {
            let row = &self.rows[k];
            if row.equality {
                lambda[row.source] = -u / row.scale;
            } else {
                mu[row.source] = u.max(0.0) / row.scale;
                active_set.push(row.source);
            }
        }
        active_set.sort_unstable();
        QpSolution {
            z: self.z,
            lambda,
            mu,
            active_set,
            status,
            iterations: self.changes,
        }
    }
}

/// Solve `qp`, optionally seeding the working set with inequality indices
/// from a previous solution.
pub fn solve(qp: &DenseQp, warm_start: Option<&[usize]>) -> Result<QpSolution> {
    let mut s = Solver::new(qp)?;
    let status = s.run(warm_start)?;
    Ok(s.into_solution(qp, status))
}
