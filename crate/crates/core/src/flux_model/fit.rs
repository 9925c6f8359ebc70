//! Decoupled least-squares identification of the grey-box coefficients.
//!
//! Each axis is fitted independently with Levenberg-Marquardt on the
//! parameter vector `[c0, ln c1, ln c2, ln σ]`; the logarithms keep the
//! sign-constrained coefficients positive.

use nalgebra::{Matrix4, Vector4};

use super::{FluxGrid, GreyBoxParams};
use crate::{Error, Result};

const N_STARTS: usize = 8;
const MAX_ITER: usize = 1000;
const REL_FLOOR: f64 = 0.05;

/// Outcome of [`fit_flux_params`].
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: GreyBoxParams,
    /// Final sum of squared residuals, d- and q-axis.
    pub residual: [f64; 2],
    /// Worst relative error over cells with `|Ψ̂|` above 5 % of the axis maximum.
    pub worst_rel_error: f64,
    pub iterations: [usize; 2],
    /// Objective after every accepted step of the winning start, per axis.
    pub objective_history: [Vec<f64>; 2],
    /// Set when an axis carries no information (all-zero flux).
    pub degenerate: bool,
}

/// One axis worth of samples: own-axis current, cross-axis current, flux.
struct AxisData {
    own: Vec<f64>,
    cross: Vec<f64>,
    target: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct AxisParams {
    c0: f64,
    c1: f64,
    c2: f64,
    sigma: f64,
}

impl AxisParams {
    fn to_x(self) -> Vector4<f64> {
        Vector4::new(self.c0, self.c1.ln(), self.c2.ln(), self.sigma.ln())
    }
    fn from_x(x: &Vector4<f64>) -> Self {
        AxisParams {
            c0: x[0],
            c1: x[1].exp(),
            c2: x[2].exp(),
            sigma: x[3].exp(),
        }
    }
}

fn gauss(x: f64, sigma: f64) -> f64 {
    let r = x / sigma;
    (-0.5 * r * r).exp() / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt()
}

fn model(p: &AxisParams, own: f64, cross: f64) -> f64 {
    p.c0 * gauss(cross, p.sigma) * (p.c1 * own).atan() + p.c2 * own
}

impl AxisData {
    fn cost(&self, p: &AxisParams) -> f64 {
        0.5 * self
            .own
            .iter()
            .zip(&self.cross)
            .zip(&self.target)
            .map(|((&o, &c), &t)| (model(p, o, c) - t).powi(2))
            .sum::<f64>()
    }

    /// Normal equations `JᵀJ`, gradient `Jᵀr` and cost at `p`.
    fn normal_equations(&self, p: &AxisParams) -> (Matrix4<f64>, Vector4<f64>, f64) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        let mut cost = 0.0;
        for ((&o, &c), &t) in self.own.iter().zip(&self.cross).zip(&self.target) {
            let g = gauss(c, p.sigma);
            let at = (p.c1 * o).atan();
            let a = p.c1 * o;
            let r = p.c0 * g * at + p.c2 * o - t;
            let row = Vector4::new(
                g * at,
                p.c0 * g * a / (1.0 + a * a),
                p.c2 * o,
                p.c0 * at * g * ((c / p.sigma).powi(2) - 1.0),
            );
            jtj += row * row.transpose();
            jtr += row * r;
            cost += 0.5 * r * r;
        }
        (jtj, jtr, cost)
    }
}

struct LmOutcome {
    params: AxisParams,
    cost: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn levenberg_marquardt(data: &AxisData, start: AxisParams) -> Option<LmOutcome> {
    let scale: f64 = data.target.iter().map(|t| t * t).sum();
    let mut x = start.to_x();
    let mut p = start;
    let (mut jtj, mut jtr, mut cost) = data.normal_equations(&p);
    if !cost.is_finite() {
        return None;
    }
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        if cost <= 1e-32 * scale || jtr.amax() <= 1e-16 * scale.max(1e-300) {
            break;
        }
        let mut damped = jtj;
        for k in 0..4 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
            continue;
        };
        let step = -chol.solve(&jtr);
        let x_new = x + step;
        let p_new = AxisParams::from_x(&x_new);
        let cost_new = data.cost(&p_new);
        if cost_new.is_finite() && cost_new < cost {
            let decrease = cost - cost_new;
            x = x_new;
            p = p_new;
            (jtj, jtr, cost) = data.normal_equations(&p);
            history.push(cost);
            lambda = (lambda / 3.0).max(1e-15);
            if decrease <= 1e-15 * cost || step.amax() <= 1e-14 * (1.0 + x.amax()) {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e20 {
                break;
            }
        }
    }
    Some(LmOutcome {
        params: p,
        cost,
        iterations,
        history,
    })
}

fn sorted_unique(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = v.collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Heuristic starting points for one axis; `value(own, cross)` looks up the
/// grid sample at the given axis indices.
fn initial_guesses(
    own_axis: &[f64],
    cross_axis: &[f64],
    value: impl Fn(usize, usize) -> f64,
) -> Vec<AxisParams> {
    let n = own_axis.len();
    let c0_idx = cross_axis
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let cross0 = cross_axis[c0_idx];
    let x_max = own_axis[n - 1];

    // Leakage slope from the outermost samples on both ends.
    let slope_hi = (value(n - 1, c0_idx) - value(n - 2, c0_idx)) / (own_axis[n - 1] - own_axis[n - 2]);
    let slope_lo = (value(1, c0_idx) - value(0, c0_idx)) / (own_axis[1] - own_axis[0]);
    let span = value(n - 1, c0_idx).abs().max(value(0, c0_idx).abs()).max(1e-300);
    let c2 = (0.5 * (slope_hi + slope_lo)).max(1e-6 * span / x_max.abs().max(1e-300));

    let sat = value(n - 1, c0_idx) - c2 * x_max;

    // Small-signal slope around zero own current.
    let upper = own_axis.partition_point(|&o| o <= 0.0).clamp(1, n - 1);
    let slope0 = (value(upper, c0_idx) - value(upper - 1, c0_idx)) / (own_axis[upper] - own_axis[upper - 1]);

    // atan(c1 x)/c1 = sat / (slope0 - c2), decreasing in c1.
    let ratio = sat / (slope0 - c2);
    let c1 = if !(slope0 > c2) || ratio >= 0.999 * x_max {
        0.1 / x_max
    } else if ratio <= 0.0 {
        10.0 / x_max
    } else {
        let (mut lo, mut hi) = ((1e-4 / x_max).ln(), (1e4 / x_max).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = mid.exp();
            if (c * x_max).atan() / c > ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    };

    // Half-decay of the saturating amplitude along the cross axis.
    let amp0 = sat;
    let mut sigma0 = None;
    for k in c0_idx + 1..cross_axis.len() {
        let a_prev = (value(n - 1, k - 1) - c2 * x_max) / amp0;
        let a = (value(n - 1, k) - c2 * x_max) / amp0;
        if a <= 0.5 && a_prev > 0.5 {
            let t = (a_prev - 0.5) / (a_prev - a);
            let x_half = cross_axis[k - 1] + t * (cross_axis[k] - cross_axis[k - 1]) - cross0;
            sigma0 = Some(x_half.abs() / (2.0 * 2f64.ln()).sqrt());
            break;
        }
    }
    let cross_span = cross_axis
        .iter()
        .map(|c| c.abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    let sigma0 = sigma0
        .filter(|s| s.is_finite() && *s > 0.0)
        .unwrap_or(2.0 * cross_span / (2.0 * 2f64.ln()).sqrt());

    (0..N_STARTS)
        .map(|k| {
            let sigma = sigma0 * 2f64.powf((k as f64 - 3.5) / 2.0);
            let denom = gauss(cross0, sigma) * (c1 * x_max).atan();
            AxisParams {
                c0: if denom != 0.0 { sat / denom } else { 0.0 },
                c1,
                c2,
                sigma,
            }
        })
        .collect()
}

struct AxisFit {
    params: AxisParams,
    cost: f64,
    iterations: usize,
    history: Vec<f64>,
    degenerate: bool,
}

fn fit_axis(data: &AxisData, starts: Vec<AxisParams>) -> Result<AxisFit> {
    if data.target.iter().all(|&t| t == 0.0) {
        let p = starts[0];
        return Ok(AxisFit {
            params: AxisParams {
                c0: 0.0,
                c2: 0.0,
                ..p
            },
            cost: 0.0,
            iterations: 0,
            history: vec![0.0],
            degenerate: true,
        });
    }
    let best = starts
        .into_iter()
        .filter_map(|s| levenberg_marquardt(data, s))
        .filter(|o| o.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or(Error::SingularJacobian("fit_flux_params"))?;
    let (jtj, _, _) = data.normal_equations(&best.params);
    if jtj.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian("fit_flux_params"));
    }
    Ok(AxisFit {
        params: best.params,
        cost: best.cost,
        iterations: best.iterations,
        history: best.history,
        degenerate: false,
    })
}

fn worst_relative_error(data: &AxisData, p: &AxisParams) -> f64 {
    let max = data.target.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if max == 0.0 {
        return 0.0;
    }
    data.own
        .iter()
        .zip(&data.cross)
        .zip(&data.target)
        .filter(|(_, t)| t.abs() > REL_FLOOR * max)
        .map(|((&o, &c), &t)| ((model(p, o, c) - t) / t).abs())
        .fold(0.0, f64::max)
}

/// Fit both flux components of the grey-box model to `grid`.
///
/// Eight Levenberg-Marquardt starts per axis are launched from
/// data-driven guesses with log-spaced Gaussian widths; the lowest objective
/// wins.
pub fn fit_flux_params(grid: &FluxGrid) -> Result<FitReport> {
    let ids = sorted_unique(grid.id_points().iter().copied());
    let iqs = sorted_unique(grid.iq_points().iter().copied());
    for (name, axis) in [("id", &ids), ("iq", &iqs)] {
        if axis.len() < 8 {
            return Err(Error::invalid(format!("{name} axis needs at least 8 points")));
        }
        if !(axis[0] < 0.0 && axis[axis.len() - 1] > 0.0) {
            return Err(Error::invalid(format!("{name} axis must span both signs")));
        }
    }

    let mut d = AxisData {
        own: vec![],
        cross: vec![],
        target: vec![],
    };
    let mut q = AxisData {
        own: vec![],
        cross: vec![],
        target: vec![],
    };
    for (id, iq, pd, pq) in grid.samples() {
        d.own.push(id);
        d.cross.push(iq);
        d.target.push(pd);
        q.own.push(iq);
        q.cross.push(id);
        q.target.push(pq);
    }

    let psi_d = grid.psi_d();
    let psi_q = grid.psi_q();
    let d_fit = fit_axis(&d, initial_guesses(&ids, &iqs, |j, k| psi_d[(j, k)]))?;
    let q_fit = fit_axis(&q, initial_guesses(&iqs, &ids, |k, j| psi_q[(j, k)]))?;

    // The d-axis Gaussian width is sigma_q and vice versa.
    let params = GreyBoxParams {
        cd0: d_fit.params.c0,
        cd1: d_fit.params.c1,
        cd2: d_fit.params.c2,
        sigma_q: d_fit.params.sigma,
        cq0: q_fit.params.c0,
        cq1: q_fit.params.c1,
        cq2: q_fit.params.c2,
        sigma_d: q_fit.params.sigma,
    };
    let worst = worst_relative_error(&d, &d_fit.params).max(worst_relative_error(&q, &q_fit.params));
    Ok(FitReport {
        params,
        residual: [2.0 * d_fit.cost, 2.0 * q_fit.cost],
        worst_rel_error: worst,
        iterations: [d_fit.iterations, q_fit.iterations],
        objective_history: [d_fit.history, q_fit.history],
        degenerate: d_fit.degenerate || q_fit.degenerate,
    })
}
