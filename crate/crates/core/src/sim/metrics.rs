use crate::machine::Hexagon;
use crate::mtpa::MtpaLut;
use crate::sim::config::Scenario;
use crate::sim::log::RunLog;
use crate::Vec2;

/// Facet slack above which a command counts as outside the hexagon, V.
pub const HEXAGON_TOL: f64 = 1e-8;
/// Relative distance to the disk below which a command counts as saturated.
pub const SATURATION_TOL: f64 = 1e-6;
/// Settling band relative to the step size.
pub const SETTLING_BAND: f64 = 0.02;
/// Absolute floor of the settling band, A, so that zero-size steps do not
/// count as unsettled on measurement noise.
pub const SETTLING_FLOOR: f64 = 0.1;
/// Trailing share of each step window used for steady-state figures.
pub const STEADY_FRACTION: f64 = 0.2;

/// Constant-torque window of a schedule and its current reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRef {
    pub t_start: f64,
    pub t_end: f64,
    pub m_bar: f64,
    pub i_ref: Vec2,
}

pub fn step_references(scenario: &Scenario, lut: &MtpaLut) -> Vec<StepRef> {
    let sched = &scenario.torque_schedule;
    sched
        .iter()
        .enumerate()
        .map(|(k, &(t, m))| StepRef {
            t_start: t,
            t_end: sched.get(k + 1).map_or(scenario.duration, |s| s.0),
            m_bar: m,
            i_ref: lut.interpolate(m, 0.0, 0.0).i_bar,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: StepRef,
    /// Time after the step until the current stays within 2% of the step
    /// size (at least [`SETTLING_FLOOR`]); `None` if it is outside the band at
    /// the end of the window.
    pub settling_time: Option<f64>,
    /// Mean ‖i − i_ref‖ over the trailing window, A.
    pub steady_state_error: f64,
    pub hexagon_violations: usize,
    pub max_u_ref: f64,
    /// Share of samples with ‖u_ref‖ on the disk bound.
    pub saturated_fraction: f64,
    /// Mean `iᵀu_applied` over the trailing window, W (up to the Clarke factor).
    pub mean_power: f64,
    pub mean_step_time: f64,
    pub max_step_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
    pub hexagon_violations: usize,
    pub max_u_ref: f64,
    pub mean_step_time: f64,
    pub max_step_time: f64,
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn metrics(log: &RunLog, refs: &[StepRef], hexagon: &Hexagon) -> RunMetrics {
    let radius = hexagon.c_vec[0];
    let violates = |u: Vec2| hexagon.max_violation(u) > HEXAGON_TOL;
    let steps = refs
        .iter()
        .map(|step| {
            let rows: Vec<_> = log
                .rows
                .iter()
                .filter(|r| r.t >= step.t_start && r.t < step.t_end)
                .collect();
            let Some(first) = rows.first() else {
                return StepMetrics {
                    step: *step,
                    settling_time: Some(0.0),
                    steady_state_error: 0.0,
                    hexagon_violations: 0,
                    max_u_ref: 0.0,
                    saturated_fraction: 0.0,
                    mean_power: 0.0,
                    mean_step_time: 0.0,
                    max_step_time: 0.0,
                };
            };
            let band = (SETTLING_BAND * (step.i_ref - first.i).norm()).max(SETTLING_FLOOR);
            let outside = rows.iter().rposition(|r| (r.i - step.i_ref).norm() > band);
            let settling_time = match outside {
                None => Some(0.0),
                Some(k) if k + 1 == rows.len() => None,
                Some(k) => Some(rows[k + 1].t - step.t_start),
            };
            let n_tail = ((rows.len() as f64 * STEADY_FRACTION).ceil() as usize).max(1);
            let tail = &rows[rows.len() - n_tail..];
            StepMetrics {
                step: *step,
                settling_time,
                steady_state_error: mean(tail.iter().map(|r| (r.i - step.i_ref).norm())),
                hexagon_violations: rows.iter().filter(|r| violates(r.u_ref)).count(),
                max_u_ref: rows.iter().map(|r| r.u_ref.norm()).fold(0.0, f64::max),
                saturated_fraction: rows
                    .iter()
                    .filter(|r| r.u_ref.norm() >= radius * (1.0 - SATURATION_TOL))
                    .count() as f64
                    / rows.len() as f64,
                mean_power: mean(tail.iter().map(|r| r.i.dot(&r.u_applied))),
                mean_step_time: mean(rows.iter().map(|r| r.step_time)),
                max_step_time: rows.iter().map(|r| r.step_time).fold(0.0, f64::max),
            }
        })
        .collect();
    RunMetrics {
        steps,
        hexagon_violations: log.rows.iter().filter(|r| violates(r.u_ref)).count(),
        max_u_ref: log.rows.iter().map(|r| r.u_ref.norm()).fold(0.0, f64::max),
        mean_step_time: mean(log.rows.iter().map(|r| r.step_time)),
        max_step_time: log.rows.iter().map(|r| r.step_time).fold(0.0, f64::max),
    }
}
