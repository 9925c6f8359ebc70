use std::io::{Read, Write};

use crate::{Error, Result, Vec2};

pub const HEADER: [&str; 16] = [
    "t",
    "i_d",
    "i_q",
    "psi_hat_d",
    "psi_hat_q",
    "v_e_d",
    "v_e_q",
    "u_ref_d",
    "u_ref_q",
    "u_applied_d",
    "u_applied_q",
    "m_bar",
    "m_m",
    "omega",
    "qp_iters",
    "step_time",
];

/// One controller sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Plant current (noise free), A.
    pub i: Vec2,
    pub psi_hat: Vec2,
    pub v_e: Vec2,
    pub u_ref: Vec2,
    pub u_applied: Vec2,
    pub m_bar: f64,
    pub m_m: f64,
    /// Mechanical speed, rad/s.
    pub omega: f64,
    pub qp_iters: usize,
    /// Controller wall time, s (zero unless timing was requested).
    pub step_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub ts: f64,
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER)?;
        for r in &self.rows {
            w.write_record(&[
                format!("{:?}", r.t),
                format!("{:?}", r.i[0]),
                format!("{:?}", r.i[1]),
                format!("{:?}", r.psi_hat[0]),
                format!("{:?}", r.psi_hat[1]),
                format!("{:?}", r.v_e[0]),
                format!("{:?}", r.v_e[1]),
                format!("{:?}", r.u_ref[0]),
                format!("{:?}", r.u_ref[1]),
                format!("{:?}", r.u_applied[0]),
                format!("{:?}", r.u_applied[1]),
                format!("{:?}", r.m_bar),
                format!("{:?}", r.m_m),
                format!("{:?}", r.omega),
                r.qp_iters.to_string(),
                format!("{:?}", r.step_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV log; the sample period is taken from the first two rows.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(HEADER.iter().copied()) {
            return Err(Error::Parse {
                line: 1,
                msg: "unexpected log header".into(),
            });
        }
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let f = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: n + 2,
                        msg: format!("bad field {}", HEADER[k]),
                    })
            };
            rows.push(LogRow {
                t: f(0)?,
                i: Vec2::new(f(1)?, f(2)?),
                psi_hat: Vec2::new(f(3)?, f(4)?),
                v_e: Vec2::new(f(5)?, f(6)?),
                u_ref: Vec2::new(f(7)?, f(8)?),
                u_applied: Vec2::new(f(9)?, f(10)?),
                m_bar: f(11)?,
                m_m: f(12)?,
                omega: f(13)?,
                qp_iters: f(14)? as usize,
                step_time: f(15)?,
            });
        }
        let ts = if rows.len() > 1 { rows[1].t - rows[0].t } else { 0.0 };
        Ok(RunLog { ts, rows })
    }
}
