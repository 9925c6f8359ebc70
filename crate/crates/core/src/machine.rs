//! Machine equations, frame transforms and the averaged two-level inverter.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix2x3, Matrix3, SMatrix, SVector, Vector3};

use crate::{Error, Mat2, Result, Vec2};

/// The skew matrix `J = [[0, -1], [1, 0]]`.
pub fn rotation_j() -> Mat2 {
    Mat2::new(0.0, -1.0, 1.0, 0.0)
}

/// Radius `udc/√3` of the largest disk realisable with space-vector modulation.
pub fn voltage_radius(udc: f64) -> f64 {
    udc / 3f64.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineParams {
    /// Stator resistance, Ω.
    pub rs: f64,
    /// Pole pairs.
    pub np: u32,
    /// Total moment of inertia, kg·m².
    pub theta_inertia: f64,
    /// DC-link voltage, V.
    pub udc: f64,
    /// Clarke factor, 2/3 (amplitude invariant) or √(2/3).
    pub kappa: f64,
    /// Rated current, A.
    pub i_max: f64,
    /// Maximum voltage, V.
    pub u_max: f64,
    /// Nominal mechanical speed, rad/s.
    pub omega_nom: f64,
    /// Nominal torque, Nm.
    pub m_nom: f64,
}

impl Default for MachineParams {
    fn default() -> Self {
        MachineParams {
            rs: 0.4,
            np: 2,
            theta_inertia: 0.1,
            udc: 556.0,
            kappa: 2.0 / 3.0,
            i_max: 29.7,
            u_max: 556.0,
            omega_nom: 157.07,
            m_nom: 61.0,
        }
    }
}

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rs > 0.0) {
            return Err(Error::invalid("rs must be positive"));
        }
        if self.np < 1 {
            return Err(Error::invalid("np must be at least 1"));
        }
        if !(self.theta_inertia > 0.0) {
            return Err(Error::invalid("inertia must be positive"));
        }
        if !(self.udc > 0.0) {
            return Err(Error::invalid("udc must be positive"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid("kappa must be positive"));
        }
        Ok(())
    }

    /// Bound on the dq current magnitude used for reference generation.
    ///
    /// `i_max` is a rated (RMS) value; with the amplitude-invariant Clarke
    /// transform the dq magnitude equals the phase peak, `√2·i_max`.
    pub fn current_limit(&self) -> f64 {
        self.i_max / FRAC_1_SQRT_2
    }

    pub fn voltage_radius(&self) -> f64 {
        voltage_radius(self.udc)
    }
}

/// Mechanical rotor state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotorState {
    /// Mechanical angular velocity, rad/s.
    pub omega_m: f64,
    /// Electrical rotor angle, rad, in `[-π, π)`.
    pub phi_k: f64,
}

/// Wrap an angle to `[-π, π)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Electromagnetic torque `3/2 · np · iᵀ J ψ`.
pub fn torque(i: Vec2, psi: Vec2, np: u32) -> f64 {
    1.5 * f64::from(np) * (i[1] * psi[0] - i[0] * psi[1])
}

/// Flux derivative `u - rs·i - ωk·J·ψ + v`.
pub fn stator_rhs(psi: Vec2, i: Vec2, u: Vec2, omega_k: f64, v: Vec2, rs: f64) -> Vec2 {
    u - rs * i - omega_k * Vec2::new(-psi[1], psi[0]) + v
}

/// Mechanical acceleration `(m_m - m_l)/Θ`.
pub fn mech_rhs(m_m: f64, m_l: f64, theta_inertia: f64) -> f64 {
    (m_m - m_l) / theta_inertia
}

/// Average αβ voltage of one of the eight inverter switching states.
pub fn clarke_voltage(s_abc: [bool; 3], udc: f64, kappa: f64) -> Vec2 {
    let m1 = Matrix2x3::new(0.5, 0.0, -0.5, 0.0, 3f64.sqrt() / 2.0, 0.0);
    let m2 = Matrix3::new(1.0, -1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.0, 1.0);
    let s = Vector3::from_iterator(s_abc.iter().map(|&b| f64::from(u8::from(b))));
    kappa * udc * (m1 * m2 * s)
}

/// All eight switching vectors in binary order `000, 001, …, 111` (a is the MSB).
pub fn switching_states() -> [[bool; 3]; 8] {
    std::array::from_fn(|k| [k & 4 != 0, k & 2 != 0, k & 1 != 0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParkDirection {
    /// αβ → dq.
    Forward,
    /// dq → αβ.
    Inverse,
}

pub fn park(u: Vec2, phi_k: f64, direction: ParkDirection) -> Vec2 {
    let (s, c) = phi_k.sin_cos();
    match direction {
        ParkDirection::Forward => Vec2::new(c * u[0] + s * u[1], -s * u[0] + c * u[1]),
        ParkDirection::Inverse => Vec2::new(c * u[0] - s * u[1], s * u[0] + c * u[1]),
    }
}

/// Radial projection onto the closed disk of the given radius.
pub fn project_disk(u: Vec2, radius: f64) -> Vec2 {
    let n = u.norm();
    if n <= radius {
        u
    } else {
        u * (radius / n)
    }
}

/// Averaged two-level inverter: disk projection plus an optional one-sample
/// transport delay.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vsi {
    pub delay_enabled: bool,
    buffer: Vec2,
}

impl Vsi {
    pub fn new(delay_enabled: bool) -> Self {
        Vsi {
            delay_enabled,
            buffer: Vec2::zeros(),
        }
    }

    /// Voltage applied over the coming sample for the commanded `u_ref` (dq).
    pub fn apply(&mut self, u_ref: Vec2, udc: f64) -> Vec2 {
        let projected = project_disk(u_ref, voltage_radius(udc));
        if self.delay_enabled {
            std::mem::replace(&mut self.buffer, projected)
        } else {
            projected
        }
    }
}

/// Outer hexagon `Ĉ u ≤ ĉ` around the modulation disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hexagon {
    /// Unit outward facet normals, one per row.
    pub c_hat: SMatrix<f64, 6, 2>,
    /// Facet distances from the origin.
    pub c_vec: SVector<f64, 6>,
}

impl Hexagon {
    /// Largest facet violation `max(Ĉu - ĉ)`.
    pub fn max_violation(&self, u: Vec2) -> f64 {
        (self.c_hat * u - self.c_vec).max()
    }

    pub fn vertices(&self) -> [Vec2; 6] {
        let r = self.c_vec[0] / (PI / 6.0).cos();
        std::array::from_fn(|k| {
            let a = PI / 6.0 + k as f64 * PI / 3.0;
            Vec2::new(r * a.cos(), r * a.sin())
        })
    }
}

/// Regular hexagon with inradius `udc/√3` and facet normals at 0°, 60°, …, 300°.
pub fn hexagon(udc: f64) -> Result<Hexagon> {
    if !(udc > 0.0) {
        return Err(Error::invalid("udc must be positive"));
    }
    let mut c_hat = SMatrix::<f64, 6, 2>::zeros();
    for k in 0..6 {
        let a = k as f64 * PI / 3.0;
        c_hat[(k, 0)] = a.cos();
        c_hat[(k, 1)] = a.sin();
    }
    Ok(Hexagon {
        c_hat,
        c_vec: SVector::<f64, 6>::repeat(voltage_radius(udc)),
    })
}
