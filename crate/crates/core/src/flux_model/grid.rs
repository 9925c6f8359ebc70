use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::FluxMap;
use crate::{Error, Result, Vec2};

/// Tabulated flux samples on a rectangular current grid.
///
/// `psi_d[(j, k)]` and `psi_q[(j, k)]` belong to the current pair
/// `(id_points[j], iq_points[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxGrid {
    id_points: Vec<f64>,
    iq_points: Vec<f64>,
    psi_d: DMatrix<f64>,
    psi_q: DMatrix<f64>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

/// `n` evenly spaced points on `[-max, max]`.
pub(crate) fn symmetric_axis(max: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| -max + 2.0 * max * k as f64 / (n - 1) as f64)
        .collect()
}

impl FluxGrid {
    pub fn new(
        id_points: Vec<f64>,
        iq_points: Vec<f64>,
        psi_d: DMatrix<f64>,
        psi_q: DMatrix<f64>,
    ) -> Result<Self> {
        if id_points.len() < 2 || iq_points.len() < 2 {
            return Err(Error::invalid("flux grid needs at least 2 points per axis"));
        }
        if !strictly_increasing(&id_points) || !strictly_increasing(&iq_points) {
            return Err(Error::invalid("grid axes must be strictly increasing"));
        }
        let shape = (id_points.len(), iq_points.len());
        if psi_d.shape() != shape || psi_q.shape() != shape {
            return Err(Error::invalid(format!(
                "flux matrices must be {}x{}",
                shape.0, shape.1
            )));
        }
        Ok(FluxGrid {
            id_points,
            iq_points,
            psi_d,
            psi_q,
        })
    }

    /// Sample `map` on the tensor grid `id_points × iq_points`.
    pub fn from_map<M: FluxMap + ?Sized>(
        map: &M,
        id_points: Vec<f64>,
        iq_points: Vec<f64>,
    ) -> Result<Self> {
        let (n, m) = (id_points.len(), iq_points.len());
        let mut psi_d = DMatrix::zeros(n, m);
        let mut psi_q = DMatrix::zeros(n, m);
        for (j, &id) in id_points.iter().enumerate() {
            for (k, &iq) in iq_points.iter().enumerate() {
                let psi = map.flux(Vec2::new(id, iq));
                psi_d[(j, k)] = psi[0];
                psi_q[(j, k)] = psi[1];
            }
        }
        Self::new(id_points, iq_points, psi_d, psi_q)
    }

    /// Square grid of `n × n` points on `[-max, max]²`.
    pub fn symmetric<M: FluxMap + ?Sized>(map: &M, max: f64, n: usize) -> Result<Self> {
        let axis = symmetric_axis(max, n);
        Self::from_map(map, axis.clone(), axis)
    }

    /// Multiply every sample by `1 + rel·ξ` with `ξ ~ N(0, 1)`.
    pub fn with_multiplicative_noise(&self, rel: f64, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = self.clone();
        for v in out.psi_d.iter_mut().chain(out.psi_q.iter_mut()) {
            *v *= 1.0 + rel * normal.sample(&mut rng);
        }
        out
    }

    pub fn id_points(&self) -> &[f64] {
        &self.id_points
    }

    pub fn iq_points(&self) -> &[f64] {
        &self.iq_points
    }

    pub fn psi_d(&self) -> &DMatrix<f64> {
        &self.psi_d
    }

    pub fn psi_q(&self) -> &DMatrix<f64> {
        &self.psi_q
    }

    /// Iterate `(id, iq, psi_d, psi_q)` in row-major order (id outer).
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        self.id_points.iter().enumerate().flat_map(move |(j, &id)| {
            self.iq_points
                .iter()
                .enumerate()
                .map(move |(k, &iq)| (id, iq, self.psi_d[(j, k)], self.psi_q[(j, k)]))
        })
    }

    /// Bilinear interpolation, extrapolating linearly from the border cells.
    pub fn interpolate(&self, i: Vec2) -> Vec2 {
        let (j, tj) = locate(&self.id_points, i[0]);
        let (k, tk) = locate(&self.iq_points, i[1]);
        let blend = |m: &DMatrix<f64>| {
            let a = m[(j, k)] * (1.0 - tk) + m[(j, k + 1)] * tk;
            let b = m[(j + 1, k)] * (1.0 - tk) + m[(j + 1, k + 1)] * tk;
            a * (1.0 - tj) + b * tj
        };
        Vec2::new(blend(&self.psi_d), blend(&self.psi_q))
    }

    /// Read the `id,iq,psid,psiq` CSV format.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["id", "iq", "psid", "psiq"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `id,iq,psid,psiq`".into(),
            });
        }
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; 4];
            for (slot, field) in vals.iter_mut().zip(rec.iter()) {
                *slot = field.parse().map_err(|_| Error::Parse {
                    line: n + 2,
                    msg: format!("bad number `{field}`"),
                })?;
            }
            if rec.len() != 4 {
                return Err(Error::Parse {
                    line: n + 2,
                    msg: "expected 4 fields".into(),
                });
            }
            rows.push(vals);
        }
        let mut ids: Vec<f64> = Vec::new();
        let mut iqs: Vec<f64> = Vec::new();
        for r in &rows {
            if !ids.contains(&r[0]) {
                ids.push(r[0]);
            }
            if !iqs.contains(&r[1]) {
                iqs.push(r[1]);
            }
        }
        ids.sort_by(f64::total_cmp);
        iqs.sort_by(f64::total_cmp);
        if ids.len() * iqs.len() != rows.len() {
            return Err(Error::invalid(format!(
                "{} rows do not form a {}x{} grid",
                rows.len(),
                ids.len(),
                iqs.len()
            )));
        }
        let mut psi_d = DMatrix::from_element(ids.len(), iqs.len(), f64::NAN);
        let mut psi_q = psi_d.clone();
        for r in &rows {
            let j = ids.iter().position(|&x| x == r[0]).unwrap_or(0);
            let k = iqs.iter().position(|&x| x == r[1]).unwrap_or(0);
            psi_d[(j, k)] = r[2];
            psi_q[(j, k)] = r[3];
        }
        if psi_d.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("duplicate grid points"));
        }
        Self::new(ids, iqs, psi_d, psi_q)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "iq", "psid", "psiq"])?;
        for (id, iq, pd, pq) in self.samples() {
            w.write_record(&[
                format!("{id:?}"),
                format!("{iq:?}"),
                format!("{pd:?}"),
                format!("{pq:?}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cell index and fractional position of `x` on the axis; `t` falls outside
/// `[0, 1]` when `x` lies beyond the grid.
fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    let upper = axis.partition_point(|&a| a <= x);
    let j = upper.saturating_sub(1).min(n - 2);
    let t = (x - axis[j]) / (axis[j + 1] - axis[j]);
    (j, t)
}
