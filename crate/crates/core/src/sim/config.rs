//! Plain-text configuration: one `section.key = value` assignment per line,
//! `#` starts a comment. Unset keys keep their defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::baseline_pi::PiConfig;
use crate::estimator::{DEFAULT_Q_PSI, DEFAULT_Q_V, DEFAULT_R_PSI};
use crate::flux_model::GreyBoxParams;
use crate::machine::MachineParams;
use crate::mtpa::DEFAULT_LUT_POINTS;
use crate::nmpc::{DEFAULT_HORIZON, DEFAULT_N_NODES, DEFAULT_TS, DEFAULT_W_PSI, DEFAULT_W_U};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Nmpc,
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedMode {
    /// The load machine holds the speed exactly.
    FixedOmega,
    /// The load machine runs a stiff speed PI acting on the shaft.
    LoadPi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub controller: ControllerKind,
    pub speed_mode: SpeedMode,
    /// Mechanical speed reference, rad/s.
    pub omega_ref: f64,
    /// `(start time, torque)` pairs, strictly increasing in time.
    pub torque_schedule: Vec<(f64, f64)>,
    pub duration: f64,
    /// Plant resistance relative to the controller model.
    pub rs_scale: f64,
    /// Plant flux map relative to the controller model.
    pub map_scale: f64,
    /// Standard deviation of the current measurement noise, A.
    pub current_noise: f64,
    /// Standard deviation of the electrical speed noise, rad/s.
    pub omega_noise: f64,
    pub vsi_delay: bool,
    pub seed: u64,
    /// Record wall-clock controller time per sample (breaks bit-exact logs).
    pub timing: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            controller: ControllerKind::Nmpc,
            speed_mode: SpeedMode::FixedOmega,
            omega_ref: 157.0,
            torque_schedule: default_schedule(),
            duration: 2.0,
            rs_scale: 1.25,
            map_scale: 1.0,
            current_noise: 0.05,
            omega_noise: 0.0,
            vsi_delay: false,
            seed: 1,
            timing: false,
        }
    }
}

/// Steps every 0.25 s; the third step (0.75 s) is the near-limit +58 Nm one.
pub fn default_schedule() -> Vec<(f64, f64)> {
    vec![
        (0.0, 0.0),
        (0.25, 29.0),
        (0.5, 0.0),
        (0.75, 58.0),
        (1.0, 29.0),
        (1.25, -58.0),
        (1.5, 0.0),
        (1.75, 29.0),
    ]
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if self.torque_schedule.is_empty() {
            return Err(Error::invalid("torque schedule is empty"));
        }
        let times_ok = self.torque_schedule.windows(2).all(|w| w[0].0 < w[1].0)
            && self
                .torque_schedule
                .iter()
                .all(|&(t, m)| t.is_finite() && m.is_finite() && (0.0..self.duration).contains(&t));
        if !times_ok {
            return Err(Error::invalid(
                "schedule times must be strictly increasing and inside the run",
            ));
        }
        if !(self.rs_scale > 0.0) || !(self.map_scale > 0.0) {
            return Err(Error::invalid("plant scales must be positive"));
        }
        if !(self.current_noise >= 0.0) || !(self.omega_noise >= 0.0) {
            return Err(Error::invalid("noise levels must be nonnegative"));
        }
        if !self.omega_ref.is_finite() {
            return Err(Error::invalid("omega_ref must be finite"));
        }
        Ok(())
    }

    /// Torque command at time `t` (zero before the first entry).
    pub fn torque_at(&self, t: f64) -> f64 {
        self.torque_schedule
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map_or(0.0, |&(_, m)| m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSettings {
    pub n_nodes: usize,
    pub horizon: f64,
    pub ts: f64,
    pub w_psi: f64,
    pub w_u: f64,
}

impl Default for NmpcSettings {
    fn default() -> Self {
        NmpcSettings {
            n_nodes: DEFAULT_N_NODES,
            horizon: DEFAULT_HORIZON,
            ts: DEFAULT_TS,
            w_psi: DEFAULT_W_PSI,
            w_u: DEFAULT_W_U,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfSettings {
    pub q_psi: f64,
    pub q_v: f64,
    pub r_psi: f64,
}

impl Default for EkfSettings {
    fn default() -> Self {
        EkfSettings {
            q_psi: DEFAULT_Q_PSI,
            q_v: DEFAULT_Q_V,
            r_psi: DEFAULT_R_PSI,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub machine: MachineParams,
    /// Controller-side flux model.
    pub model: GreyBoxParams,
    pub nmpc: NmpcSettings,
    pub ekf: EkfSettings,
    pub pi: PiConfig,
    pub lut_points: usize,
    pub lut_m_max: f64,
    /// Half-width and node count of the tabulated measurement map.
    pub meas_grid_max: f64,
    pub meas_grid_points: usize,
    pub substeps: usize,
    /// Gains of the load machine speed loop.
    pub load_kp: f64,
    pub load_ki: f64,
    pub scenario: Scenario,
}

impl Default for SimConfig {
    fn default() -> Self {
        let machine = MachineParams::default();
        SimConfig {
            machine,
            model: GreyBoxParams::REFERENCE,
            nmpc: NmpcSettings::default(),
            ekf: EkfSettings::default(),
            pi: PiConfig::default(),
            lut_points: DEFAULT_LUT_POINTS,
            lut_m_max: machine.m_nom,
            meas_grid_max: 45.0,
            meas_grid_points: 91,
            substeps: 4,
            load_kp: 10.0,
            load_ki: 250.0,
            scenario: Scenario::default(),
        }
    }
}

fn parse_num<T: FromStr>(value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value `{value}`"),
    })
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse {
            line,
            msg: format!("bad boolean `{value}`"),
        }),
    }
}

/// `t:m, t:m, …`
fn parse_schedule(value: &str, line: usize) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (t, m) = entry.split_once(':').ok_or_else(|| Error::Parse {
                line,
                msg: format!("schedule entry `{entry}` is not `time:torque`"),
            })?;
            Ok((parse_num(t.trim(), line)?, parse_num(m.trim(), line)?))
        })
        .collect()
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut lut_m_max_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: "expected `section.key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let (section, name) = key.split_once('.').ok_or_else(|| Error::Parse {
                line,
                msg: format!("key `{key}` has no section"),
            })?;
            let m = &mut cfg.machine;
            let s = &mut cfg.scenario;
            match (section, name) {
                ("machine", "rs") => m.rs = parse_num(value, line)?,
                ("machine", "np") => m.np = parse_num(value, line)?,
                ("machine", "inertia") => m.theta_inertia = parse_num(value, line)?,
                ("machine", "udc") => m.udc = parse_num(value, line)?,
                ("machine", "kappa") => m.kappa = parse_num(value, line)?,
                ("machine", "i_max") => m.i_max = parse_num(value, line)?,
                ("machine", "u_max") => m.u_max = parse_num(value, line)?,
                ("machine", "omega_nom") => m.omega_nom = parse_num(value, line)?,
                ("machine", "m_nom") => m.m_nom = parse_num(value, line)?,
                ("flux", "params_file") => {
                    let text = std::fs::read_to_string(value)?;
                    cfg.model = GreyBoxParams::from_text(&text)?;
                }
                ("flux", k) => {
                    let idx = GreyBoxParams::KEYS
                        .iter()
                        .position(|x| *x == k)
                        .ok_or_else(|| Error::Parse {
                            line,
                            msg: format!("unknown key `{key}`"),
                        })?;
                    let mut arr = cfg.model.to_array();
                    arr[idx] = parse_num(value, line)?;
                    cfg.model = GreyBoxParams::from_array(arr);
                }
                ("nmpc", "n_nodes") => cfg.nmpc.n_nodes = parse_num(value, line)?,
                ("nmpc", "horizon") => cfg.nmpc.horizon = parse_num(value, line)?,
                ("nmpc", "ts") => cfg.nmpc.ts = parse_num(value, line)?,
                ("nmpc", "w_psi") => cfg.nmpc.w_psi = parse_num(value, line)?,
                ("nmpc", "w_u") => cfg.nmpc.w_u = parse_num(value, line)?,
                ("ekf", "q_psi") => cfg.ekf.q_psi = parse_num(value, line)?,
                ("ekf", "q_v") => cfg.ekf.q_v = parse_num(value, line)?,
                ("ekf", "r_psi") => cfg.ekf.r_psi = parse_num(value, line)?,
                ("pi", "omega_c") => cfg.pi.omega_c = parse_num(value, line)?,
                ("pi", "gain_scale") => cfg.pi.gain_scale = parse_num(value, line)?,
                ("pi", "aw_gain") => cfg.pi.aw_gain = parse_num(value, line)?,
                ("lut", "points") => cfg.lut_points = parse_num(value, line)?,
                ("lut", "m_max") => {
                    cfg.lut_m_max = parse_num(value, line)?;
                    lut_m_max_set = true;
                }
                ("plant", "substeps") => cfg.substeps = parse_num(value, line)?,
                ("plant", "grid_max") => cfg.meas_grid_max = parse_num(value, line)?,
                ("plant", "grid_points") => cfg.meas_grid_points = parse_num(value, line)?,
                ("plant", "load_kp") => cfg.load_kp = parse_num(value, line)?,
                ("plant", "load_ki") => cfg.load_ki = parse_num(value, line)?,
                ("scenario", "controller") => {
                    s.controller = match value {
                        "nmpc" => ControllerKind::Nmpc,
                        "pi" => ControllerKind::Pi,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("unknown controller `{value}`"),
                            })
                        }
                    }
                }
                ("scenario", "speed_mode") => {
                    s.speed_mode = match value {
                        "fixed-omega" => SpeedMode::FixedOmega,
                        "load-pi" => SpeedMode::LoadPi,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("unknown speed mode `{value}`"),
                            })
                        }
                    }
                }
                ("scenario", "omega_ref") => s.omega_ref = parse_num(value, line)?,
                ("scenario", "duration") => s.duration = parse_num(value, line)?,
                ("scenario", "schedule") => s.torque_schedule = parse_schedule(value, line)?,
                ("scenario", "rs_scale") => s.rs_scale = parse_num(value, line)?,
                ("scenario", "map_scale") => s.map_scale = parse_num(value, line)?,
                ("scenario", "current_noise") => s.current_noise = parse_num(value, line)?,
                ("scenario", "omega_noise") => s.omega_noise = parse_num(value, line)?,
                ("scenario", "vsi_delay") => s.vsi_delay = parse_bool(value, line)?,
                ("scenario", "seed") => s.seed = parse_num(value, line)?,
                ("scenario", "timing") => s.timing = parse_bool(value, line)?,
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        if !lut_m_max_set {
            cfg.lut_m_max = cfg.machine.m_nom;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.machine.validate()?;
        self.model.validate()?;
        self.pi.validate()?;
        self.scenario.validate()?;
        if self.substeps == 0 {
            return Err(Error::invalid("plant.substeps must be at least 1"));
        }
        if self.meas_grid_points < 2 || !(self.meas_grid_max > 0.0) {
            return Err(Error::invalid("measurement grid needs 2+ points and a positive range"));
        }
        if !(self.ekf.q_psi >= 0.0) || !(self.ekf.q_v >= 0.0) || !(self.ekf.r_psi > 0.0) {
            return Err(Error::invalid("EKF covariances must be nonnegative, r_psi positive"));
        }
        if !(self.lut_m_max > 0.0) {
            return Err(Error::invalid("lut.m_max must be positive"));
        }
        Ok(())
    }

    /// Render as config text that parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.machine;
        let s = &self.scenario;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("machine.rs", format!("{:?}", m.rs));
        put("machine.np", m.np.to_string());
        put("machine.inertia", format!("{:?}", m.theta_inertia));
        put("machine.udc", format!("{:?}", m.udc));
        put("machine.kappa", format!("{:?}", m.kappa));
        put("machine.i_max", format!("{:?}", m.i_max));
        put("machine.u_max", format!("{:?}", m.u_max));
        put("machine.omega_nom", format!("{:?}", m.omega_nom));
        put("machine.m_nom", format!("{:?}", m.m_nom));
        for (k, v) in GreyBoxParams::KEYS.iter().zip(self.model.to_array()) {
            put(&format!("flux.{k}"), format!("{v:?}"));
        }
        put("nmpc.n_nodes", self.nmpc.n_nodes.to_string());
        put("nmpc.horizon", format!("{:?}", self.nmpc.horizon));
        put("nmpc.ts", format!("{:?}", self.nmpc.ts));
        put("nmpc.w_psi", format!("{:?}", self.nmpc.w_psi));
        put("nmpc.w_u", format!("{:?}", self.nmpc.w_u));
        put("ekf.q_psi", format!("{:?}", self.ekf.q_psi));
        put("ekf.q_v", format!("{:?}", self.ekf.q_v));
        put("ekf.r_psi", format!("{:?}", self.ekf.r_psi));
        put("pi.omega_c", format!("{:?}", self.pi.omega_c));
        put("pi.gain_scale", format!("{:?}", self.pi.gain_scale));
        put("pi.aw_gain", format!("{:?}", self.pi.aw_gain));
        put("lut.points", self.lut_points.to_string());
        put("lut.m_max", format!("{:?}", self.lut_m_max));
        put("plant.substeps", self.substeps.to_string());
        put("plant.grid_max", format!("{:?}", self.meas_grid_max));
        put("plant.grid_points", self.meas_grid_points.to_string());
        put("plant.load_kp", format!("{:?}", self.load_kp));
        put("plant.load_ki", format!("{:?}", self.load_ki));
        put(
            "scenario.controller",
            match s.controller {
                ControllerKind::Nmpc => "nmpc",
                ControllerKind::Pi => "pi",
            }
            .into(),
        );
        put(
            "scenario.speed_mode",
            match s.speed_mode {
                SpeedMode::FixedOmega => "fixed-omega",
                SpeedMode::LoadPi => "load-pi",
            }
            .into(),
        );
        put("scenario.omega_ref", format!("{:?}", s.omega_ref));
        put("scenario.duration", format!("{:?}", s.duration));
        let sched: Vec<String> = s
            .torque_schedule
            .iter()
            .map(|(t, m)| format!("{t:?}:{m:?}"))
            .collect();
        put("scenario.schedule", sched.join(", "));
        put("scenario.rs_scale", format!("{:?}", s.rs_scale));
        put("scenario.map_scale", format!("{:?}", s.map_scale));
        put("scenario.current_noise", format!("{:?}", s.current_noise));
        put("scenario.omega_noise", format!("{:?}", s.omega_noise));
        put("scenario.vsi_delay", s.vsi_delay.to_string());
        put("scenario.seed", s.seed.to_string());
        put("scenario.timing", s.timing.to_string());
        out
    }
}
