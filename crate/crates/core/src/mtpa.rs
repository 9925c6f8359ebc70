//! Maximum-torque-per-ampere references and the voltage-limited speed.

use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};
use std::path::Path;

use crate::flux_model::FluxMap;
use crate::machine::{rotation_j, torque, voltage_radius};
use crate::{Error, Result, Vec2};

const ANGLE_TOL: f64 = 1e-10;
const MAGNITUDE_TOL: f64 = 1e-10;

/// Golden-section maximization of `f` on `[a, b]`.
fn golden_max(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn polar(r: f64, angle: f64) -> Vec2 {
    Vec2::new(r * angle.cos(), r * angle.sin())
}

/// Largest torque reachable with `‖i‖ = r` in the first quadrant, and the
/// current that achieves it.
fn best_on_circle<M: FluxMap + ?Sized>(r: f64, map: &M, np: u32) -> (f64, Vec2) {
    let m_at = |a: f64| {
        let i = polar(r, a);
        torque(i, map.flux(i), np)
    };
    let a = golden_max(0.0, FRAC_PI_2, ANGLE_TOL, m_at);
    let i = polar(r, a);
    (m_at(a), i)
}

/// Minimum-magnitude current producing `m_ref`, with its flux.
///
/// Positive torque is sought with `id, iq ≥ 0`; negative torque mirrors the
/// q component.
pub fn mtpa_point<M: FluxMap + ?Sized>(
    m_ref: f64,
    map: &M,
    np: u32,
    i_limit: f64,
) -> Result<(Vec2, Vec2)> {
    if !m_ref.is_finite() || !(i_limit > 0.0) {
        return Err(Error::invalid("torque must be finite and current limit positive"));
    }
    if m_ref == 0.0 {
        return Ok((Vec2::zeros(), map.flux(Vec2::zeros())));
    }
    let target = m_ref.abs();
    let (m_top, _) = best_on_circle(i_limit, map, np);
    if m_top < target {
        return Err(Error::InfeasibleTorque {
            requested: m_ref,
            limit: m_top,
        });
    }
    let (mut lo, mut hi) = (0.0, i_limit);
    while hi - lo > MAGNITUDE_TOL * i_limit.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if best_on_circle(mid, map, np).0 >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (_, mut i) = best_on_circle(hi, map, np);
    if m_ref < 0.0 {
        i[1] = -i[1];
    }
    Ok((i, map.flux(i)))
}

/// Largest torque attainable within the current limit.
pub fn max_torque<M: FluxMap + ?Sized>(map: &M, np: u32, i_limit: f64) -> f64 {
    best_on_circle(i_limit, map, np).0
}

/// Steady-state operating point for a torque command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub i_bar: Vec2,
    pub psi_bar: Vec2,
    pub u_bar: Vec2,
    /// Set when the command was outside the table and got clamped.
    pub clamped: bool,
}

/// Torque-indexed table of MTPA current and flux references.
#[derive(Debug, Clone, PartialEq)]
pub struct MtpaLut {
    torque_grid: Vec<f64>,
    i_ref: Vec<Vec2>,
    psi_ref: Vec<Vec2>,
}

pub const DEFAULT_LUT_POINTS: usize = 121;

impl MtpaLut {
    pub fn new(torque_grid: Vec<f64>, i_ref: Vec<Vec2>, psi_ref: Vec<Vec2>) -> Result<Self> {
        if torque_grid.len() < 2 {
            return Err(Error::invalid("LUT needs at least 2 nodes"));
        }
        if i_ref.len() != torque_grid.len() || psi_ref.len() != torque_grid.len() {
            return Err(Error::invalid("LUT columns differ in length"));
        }
        if !torque_grid.iter().all(|m| m.is_finite()) || !torque_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("LUT torque grid must be strictly increasing"));
        }
        Ok(MtpaLut {
            torque_grid,
            i_ref,
            psi_ref,
        })
    }

    /// Tabulate `n_points` evenly spaced torques on `[-m_max, m_max]`.
    pub fn build<M: FluxMap + ?Sized>(
        map: &M,
        np: u32,
        m_max: f64,
        n_points: usize,
        i_limit: f64,
    ) -> Result<Self> {
        if n_points < 11 {
            return Err(Error::invalid("LUT needs at least 11 nodes"));
        }
        if !(m_max > 0.0) {
            return Err(Error::invalid("m_max must be positive"));
        }
        let mut grid = Vec::with_capacity(n_points);
        let mut i_ref = Vec::with_capacity(n_points);
        let mut psi_ref = Vec::with_capacity(n_points);
        for k in 0..n_points {
            let m = -m_max + 2.0 * m_max * k as f64 / (n_points - 1) as f64;
            // keep the centre node exactly at zero
            let m = if 2 * k + 1 == n_points { 0.0 } else { m };
            let (i, psi) = mtpa_point(m, map, np, i_limit)?;
            grid.push(m);
            i_ref.push(i);
            psi_ref.push(psi);
        }
        Self::new(grid, i_ref, psi_ref)
    }

    pub fn torque_grid(&self) -> &[f64] {
        &self.torque_grid
    }

    pub fn i_ref(&self) -> &[Vec2] {
        &self.i_ref
    }

    pub fn psi_ref(&self) -> &[Vec2] {
        &self.psi_ref
    }

    pub fn m_range(&self) -> (f64, f64) {
        (self.torque_grid[0], self.torque_grid[self.torque_grid.len() - 1])
    }

    /// Linear interpolation in torque plus the steady voltage
    /// `rs·i + ωe·J·ψ`.
    pub fn interpolate(&self, m_bar: f64, omega_e: f64, rs: f64) -> Reference {
        let (lo, hi) = self.m_range();
        let clamped = !(lo..=hi).contains(&m_bar);
        let m = if m_bar.is_nan() { 0.0 } else { m_bar.clamp(lo, hi) };
        let n = self.torque_grid.len();
        let k = self
            .torque_grid
            .partition_point(|&g| g <= m)
            .saturating_sub(1)
            .min(n - 2);
        let t = (m - self.torque_grid[k]) / (self.torque_grid[k + 1] - self.torque_grid[k]);
        let (i_bar, psi_bar) = if t == 0.0 {
            (self.i_ref[k], self.psi_ref[k])
        } else if t == 1.0 {
            (self.i_ref[k + 1], self.psi_ref[k + 1])
        } else {
            (
                self.i_ref[k] * (1.0 - t) + self.i_ref[k + 1] * t,
                self.psi_ref[k] * (1.0 - t) + self.psi_ref[k + 1] * t,
            )
        };
        Reference {
            i_bar,
            psi_bar,
            u_bar: rs * i_bar + omega_e * rotation_j() * psi_bar,
            clamped,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "id", "iq", "psid", "psiq"])?;
        for ((m, i), p) in self.torque_grid.iter().zip(&self.i_ref).zip(&self.psi_ref) {
            w.write_record(&[
                format!("{m:?}"),
                format!("{:?}", i[0]),
                format!("{:?}", i[1]),
                format!("{:?}", p[0]),
                format!("{:?}", p[1]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["m", "id", "iq", "psid", "psiq"];
        if headers.len() != 5 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `m,id,iq,psid,psiq`".into(),
            });
        }
        let (mut grid, mut i_ref, mut psi_ref) = (Vec::new(), Vec::new(), Vec::new());
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Parse {
                    line: n + 2,
                    msg: "expected 5 fields".into(),
                });
            }
            let mut v = [0.0; 5];
            for (slot, field) in v.iter_mut().zip(rec.iter()) {
                *slot = field.parse().map_err(|_| Error::Parse {
                    line: n + 2,
                    msg: format!("bad number `{field}`"),
                })?;
            }
            grid.push(v[0]);
            i_ref.push(Vec2::new(v[1], v[2]));
            psi_ref.push(Vec2::new(v[3], v[4]));
        }
        Self::new(grid, i_ref, psi_ref)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

/// Mechanical speed at which the steady voltage for `(i_ref, psi_ref)` reaches
/// the modulation disk: positive root of `‖rs·i + ω·J·ψ‖ = udc/√3`, divided by
/// the pole-pair count.
pub fn omega_limit(i_ref: Vec2, psi_ref: Vec2, udc: f64, rs: f64, np: u32) -> Result<f64> {
    let r = voltage_radius(udc);
    let a = psi_ref.norm_squared();
    let b = 2.0 * rs * i_ref.dot(&(rotation_j() * psi_ref));
    let c = rs * rs * i_ref.norm_squared() - r * r;
    if !(a > 0.0) || !(c < 0.0) || np == 0 {
        return Err(Error::NoPositiveRoot);
    }
    // c < 0 guarantees one root of each sign; use the cancellation-free form.
    let disc = (b * b - 4.0 * a * c).sqrt();
    let omega_e = if b >= 0.0 {
        -2.0 * c / (b + disc)
    } else {
        (disc - b) / (2.0 * a)
    };
    Ok(omega_e / f64::from(np))
}
