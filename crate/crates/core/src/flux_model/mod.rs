//! Grey-box flux-linkage maps.
//!
//! Each flux component is a saturating `atan` of its own-axis current whose
//! amplitude decays as a Gaussian of the cross-axis current, plus a linear
//! leakage term:
//!
//! ```text
//! Ψd(id, iq) = cd0 / sqrt(2π σq²) · exp(-γ(iq, σq)) · atan(cd1 id) + cd2 id
//! Ψq(id, iq) = cq0 / sqrt(2π σd²) · exp(-γ(id, σd)) · atan(cq1 iq) + cq2 iq
//! γ(x, y)    = ½ (x / y)²
//! ```
//!
//! Note the cross-over: the Gaussian width that shapes `Ψd` is `sigma_q` and
//! vice versa, so the d-axis fit owns `(cd0, cd1, cd2, sigma_q)`.

mod fit;
mod grid;

pub use fit::{fit_flux_params, FitReport};
pub use grid::FluxGrid;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Mat2, Result, Vec2};

/// A differentiable current-to-flux map `i ↦ Ψ(i)`.
pub trait FluxMap {
    fn flux(&self, i: Vec2) -> Vec2;

    /// Differential inductance `∂Ψ/∂i`.
    fn jacobian(&self, i: Vec2) -> Mat2;
}

impl<M: FluxMap + ?Sized> FluxMap for &M {
    fn flux(&self, i: Vec2) -> Vec2 {
        (**self).flux(i)
    }
    fn jacobian(&self, i: Vec2) -> Mat2 {
        (**self).jacobian(i)
    }
}

/// Coefficients of the grey-box flux maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreyBoxParams {
    pub cd0: f64,
    pub cd1: f64,
    pub cd2: f64,
    pub sigma_d: f64,
    pub cq0: f64,
    pub cq1: f64,
    pub cq2: f64,
    pub sigma_q: f64,
}

impl GreyBoxParams {
    /// Synthetic parameter set used throughout the repository as ground truth.
    ///
    /// Chosen so that the MTPA point at 58 Nm sits at i ≈ (16.45, 31.98) A with
    /// Ψ ≈ (0.819, 0.417) Wb, and the Jacobian determinant stays positive on
    /// `[-60, 60]²` A so the map is invertible over the whole operating range.
    pub const REFERENCE: GreyBoxParams = GreyBoxParams {
        cd0: 270.58,
        cd1: 0.1,
        cd2: 0.003,
        sigma_d: 120.0,
        cq0: 86.72,
        cq1: 0.05,
        cq2: 0.004,
        sigma_q: 140.0,
    };

    pub const KEYS: [&'static str; 8] = [
        "c0_d", "c1_d", "c2_d", "sigma_d", "c0_q", "c1_q", "c2_q", "sigma_q",
    ];

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cd0: f64,
        cd1: f64,
        cd2: f64,
        sigma_d: f64,
        cq0: f64,
        cq1: f64,
        cq2: f64,
        sigma_q: f64,
    ) -> Result<Self> {
        let p = GreyBoxParams {
            cd0,
            cd1,
            cd2,
            sigma_d,
            cq0,
            cq1,
            cq2,
            sigma_q,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_array();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("flux parameters must be finite"));
        }
        if self.sigma_d <= 0.0 || self.sigma_q <= 0.0 {
            return Err(Error::invalid("sigma_d and sigma_q must be positive"));
        }
        if self.cd1 <= 0.0 || self.cq1 <= 0.0 || self.cd2 <= 0.0 || self.cq2 <= 0.0 {
            return Err(Error::invalid("c1 and c2 coefficients must be positive"));
        }
        Ok(())
    }

    /// Parameters in [`Self::KEYS`] order.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.cd0,
            self.cd1,
            self.cd2,
            self.sigma_d,
            self.cq0,
            self.cq1,
            self.cq2,
            self.sigma_q,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        GreyBoxParams {
            cd0: a[0],
            cd1: a[1],
            cd2: a[2],
            sigma_d: a[3],
            cq0: a[4],
            cq1: a[5],
            cq2: a[6],
            sigma_q: a[7],
        }
    }

    /// Serialize as `key = value` lines.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        text.parse()
    }
}

impl fmt::Display for GreyBoxParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in Self::KEYS.iter().zip(self.to_array()) {
            writeln!(f, "{k} = {v:?}")?;
        }
        Ok(())
    }
}

impl FromStr for GreyBoxParams {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut vals = [None; 8];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let slot = Self::KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::Parse {
                    line: n + 1,
                    msg: format!("unknown key `{key}`"),
                })?;
            let v: f64 = value.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("bad number `{}`", value.trim()),
            })?;
            vals[slot] = Some(v);
        }
        let mut out = [0.0; 8];
        for (k, (slot, v)) in Self::KEYS.iter().zip(out.iter_mut().zip(vals)) {
            *slot = v.ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key `{k}`"),
            })?;
        }
        let p = GreyBoxParams::from_array(out);
        p.validate()?;
        Ok(p)
    }
}

/// `γ(x, y) = ½ (x/y)²`.
pub fn gamma(x: f64, y: f64) -> Result<f64> {
    if y == 0.0 {
        return Err(Error::Domain("gamma: zero denominator"));
    }
    let r = x / y;
    Ok(0.5 * r * r)
}

/// Normalised Gaussian weight `exp(-γ(x, σ)) / sqrt(2πσ²)` and its
/// derivative with respect to `x`.
#[inline]
fn gauss(x: f64, sigma: f64) -> (f64, f64) {
    let r = x / sigma;
    let g = (-0.5 * r * r).exp() / (2.0 * PI * sigma * sigma).sqrt();
    (g, -g * x / (sigma * sigma))
}

impl FluxMap for GreyBoxParams {
    fn flux(&self, i: Vec2) -> Vec2 {
        let (id, iq) = (i[0], i[1]);
        let (gq, _) = gauss(iq, self.sigma_q);
        let (gd, _) = gauss(id, self.sigma_d);
        Vec2::new(
            self.cd0 * gq * (self.cd1 * id).atan() + self.cd2 * id,
            self.cq0 * gd * (self.cq1 * iq).atan() + self.cq2 * iq,
        )
    }

    fn jacobian(&self, i: Vec2) -> Mat2 {
        let (id, iq) = (i[0], i[1]);
        let (gq, dgq) = gauss(iq, self.sigma_q);
        let (gd, dgd) = gauss(id, self.sigma_d);
        let ad = self.cd1 * id;
        let aq = self.cq1 * iq;
        let dd = self.cd0 * gq * self.cd1 / (1.0 + ad * ad) + self.cd2;
        let dq = self.cd0 * dgq * ad.atan();
        let qd = self.cq0 * dgd * aq.atan();
        let qq = self.cq0 * gd * self.cq1 / (1.0 + aq * aq) + self.cq2;
        Mat2::new(dd, dq, qd, qq)
    }
}

/// `Ψ(i; θ)`.
pub fn eval_flux(i: Vec2, theta: &GreyBoxParams) -> Vec2 {
    theta.flux(i)
}

/// `∂Ψ/∂i` at `i`.
pub fn flux_jacobian(i: Vec2, theta: &GreyBoxParams) -> Mat2 {
    theta.jacobian(i)
}

const INVERT_TOL: f64 = 1e-10;
const INVERT_MAX_ITER: usize = 50;

/// Solve `Ψ(i) = psi` for `i` by damped Newton iteration.
///
/// The step is halved while the residual grows.
pub fn invert_flux<M: FluxMap + ?Sized>(psi: Vec2, map: &M, i_guess: Vec2) -> Result<Vec2> {
    if !psi.iter().chain(i_guess.iter()).all(|v| v.is_finite()) {
        return Err(Error::Domain("invert_flux: non-finite input"));
    }
    let mut i = i_guess;
    let mut res = map.flux(i) - psi;
    let mut norm = res.amax();
    for _ in 0..INVERT_MAX_ITER {
        if norm < INVERT_TOL {
            return Ok(i);
        }
        let jac = map.jacobian(i);
        let step = jac
            .lu()
            .solve(&res)
            .ok_or(Error::SingularJacobian("invert_flux"))?;
        let mut alpha = 1.0;
        loop {
            let cand = i - alpha * step;
            let cand_res = map.flux(cand) - psi;
            let cand_norm = cand_res.amax();
            if cand_norm < norm || alpha < 1e-6 {
                i = cand;
                res = cand_res;
                norm = cand_norm;
                break;
            }
            alpha *= 0.5;
        }
    }
    if norm < INVERT_TOL {
        return Ok(i);
    }
    Err(Error::NoConvergence {
        what: "invert_flux",
        iterations: INVERT_MAX_ITER,
        residual: norm,
    })
}

/// Constant-inductance map `Ψ(i) = L i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFluxMap {
    pub inductance: Mat2,
}

impl LinearFluxMap {
    pub fn new(inductance: Mat2) -> Self {
        LinearFluxMap { inductance }
    }
}

impl FluxMap for LinearFluxMap {
    fn flux(&self, i: Vec2) -> Vec2 {
        self.inductance * i
    }
    fn jacobian(&self, _i: Vec2) -> Mat2 {
        self.inductance
    }
}

/// Another map with its flux uniformly scaled, for plant/model mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledFluxMap<M> {
    pub inner: M,
    pub scale: f64,
}

impl<M: FluxMap> FluxMap for ScaledFluxMap<M> {
    fn flux(&self, i: Vec2) -> Vec2 {
        self.inner.flux(i) * self.scale
    }
    fn jacobian(&self, i: Vec2) -> Mat2 {
        self.inner.jacobian(i) * self.scale
    }
}
