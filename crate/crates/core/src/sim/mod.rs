//! Closed-loop simulation: averaged inverter and ground-truth plant at
//! substep resolution, estimator and controller at the sampling rate.

mod config;
mod log;
mod metrics;

pub use config::{
    default_schedule, ControllerKind, EkfSettings, NmpcSettings, Scenario, SimConfig, SpeedMode,
};
pub use log::{LogRow, RunLog, HEADER};
pub use metrics::{
    metrics, step_references, RunMetrics, StepMetrics, StepRef, HEXAGON_TOL, SATURATION_TOL,
    SETTLING_BAND, STEADY_FRACTION,
};

use std::time::Instant;

use nalgebra::Vector4;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::baseline_pi::PiState;
use crate::estimator::{EkfState, Mat4};
use crate::flux_model::{FluxGrid, GreyBoxParams, ScaledFluxMap};
use crate::integrator::{simulate_plant_substep, PlantState};
use crate::machine::{torque, voltage_radius, MachineParams, Vsi};
use crate::mtpa::MtpaLut;
use crate::nmpc::{NmpcController, OcpConfig, RtiWorkspace};
use crate::{Error, Mat2, Result, Vec2};

enum Controller {
    Nmpc(Box<NmpcController<GreyBoxParams>>),
    Pi(PiState),
}

/// Run-time checks whose failure makes the CLI exit non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunInvariants {
    /// Smallest EKF covariance eigenvalue seen after any update or prediction.
    pub min_cov_eigenvalue: f64,
    pub hexagon_violations: usize,
    /// Samples at which the QP failed and the last command was held.
    pub degraded_steps: usize,
    pub samples: usize,
    pub expected_samples: usize,
}

impl RunInvariants {
    pub const MIN_EIGENVALUE: f64 = -1e-12;

    pub fn hold(&self) -> bool {
        self.min_cov_eigenvalue >= Self::MIN_EIGENVALUE
            && self.hexagon_violations == 0
            && self.samples == self.expected_samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: RunLog,
    pub invariants: RunInvariants,
}

/// Wall time of the two controller phases for the last sample, s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub prepare: f64,
    pub feedback: f64,
}

pub struct Simulation {
    cfg: SimConfig,
    plant_params: MachineParams,
    plant_map: ScaledFluxMap<GreyBoxParams>,
    meas_grid: FluxGrid,
    lut: MtpaLut,
    ekf: EkfState,
    controller: Controller,
    vsi: Vsi,
    plant: PlantState,
    load_integ: f64,
    rng: StdRng,
    current_noise: Option<Normal<f64>>,
    omega_noise: Option<Normal<f64>>,
    k: usize,
    n_samples: usize,
    invariants: RunInvariants,
    phase_times: PhaseTimes,
}

fn noise(sigma: f64) -> Result<Option<Normal<f64>>> {
    if sigma > 0.0 {
        Normal::new(0.0, sigma)
            .map(Some)
            .map_err(|_| Error::invalid("bad noise level"))
    } else {
        Ok(None)
    }
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let sc = &cfg.scenario;
        let m = &cfg.machine;
        let plant_params = MachineParams {
            rs: m.rs * sc.rs_scale,
            ..*m
        };
        let plant_map = ScaledFluxMap {
            inner: cfg.model,
            scale: sc.map_scale,
        };
        let meas_grid = FluxGrid::symmetric(&plant_map, cfg.meas_grid_max, cfg.meas_grid_points)?;
        let lut = MtpaLut::build(&cfg.model, m.np, cfg.lut_m_max, cfg.lut_points, m.current_limit())?;
        let q = Mat4::from_diagonal(&Vector4::new(
            cfg.ekf.q_psi,
            cfg.ekf.q_psi,
            cfg.ekf.q_v,
            cfg.ekf.q_v,
        ));
        let ekf = EkfState::new(Vec2::zeros(), Vec2::zeros(), q, q, Mat2::identity() * cfg.ekf.r_psi)?;
        let controller = match sc.controller {
            ControllerKind::Nmpc => {
                let n = &cfg.nmpc;
                let ocp = OcpConfig::with_weights(
                    m,
                    &cfg.model,
                    n.n_nodes,
                    n.horizon,
                    n.ts,
                    Mat2::identity() * n.w_psi,
                    Mat2::identity() * n.w_u,
                )?;
                Controller::Nmpc(Box::new(NmpcController::new(ocp, cfg.model)))
            }
            ControllerKind::Pi => Controller::Pi(PiState::new(cfg.pi)?),
        };
        let n_samples = (sc.duration / cfg.nmpc.ts).round() as usize;
        Ok(Simulation {
            plant_params,
            plant_map,
            meas_grid,
            lut,
            ekf,
            controller,
            vsi: Vsi::new(sc.vsi_delay),
            plant: PlantState::at_speed(sc.omega_ref),
            load_integ: 0.0,
            rng: StdRng::seed_from_u64(sc.seed),
            current_noise: noise(sc.current_noise)?,
            omega_noise: noise(sc.omega_noise)?,
            k: 0,
            n_samples,
            invariants: RunInvariants {
                min_cov_eigenvalue: f64::INFINITY,
                hexagon_violations: 0,
                degraded_steps: 0,
                samples: 0,
                expected_samples: n_samples,
            },
            phase_times: PhaseTimes::default(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn lut(&self) -> &MtpaLut {
        &self.lut
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn ekf(&self) -> &EkfState {
        &self.ekf
    }

    /// Primal-dual iterate of the NMPC controller, if that is the one running.
    pub fn nmpc_workspace(&self) -> Option<&RtiWorkspace> {
        match &self.controller {
            Controller::Nmpc(ctl) => Some(ctl.workspace()),
            Controller::Pi(_) => None,
        }
    }

    pub fn invariants(&self) -> &RunInvariants {
        &self.invariants
    }

    pub fn phase_times(&self) -> PhaseTimes {
        self.phase_times
    }

    pub fn finished(&self) -> bool {
        self.k >= self.n_samples
    }

    pub fn sample_index(&self) -> usize {
        self.k
    }

    pub fn ts(&self) -> f64 {
        self.cfg.nmpc.ts
    }

    /// Advance one controller sample and return its log row.
    pub fn step(&mut self) -> Result<LogRow> {
        if self.finished() {
            return Err(Error::invalid("simulation already finished"));
        }
        let ts = self.ts();
        let t = self.k as f64 * ts;
        let sc = &self.cfg.scenario;
        let m = &self.cfg.machine;
        let np = f64::from(m.np);

        let mut i_meas = self.plant.i;
        if let Some(d) = &self.current_noise {
            i_meas += Vec2::new(d.sample(&mut self.rng), d.sample(&mut self.rng));
        }
        let mut omega_e = np * self.plant.rotor.omega_m;
        if let Some(d) = &self.omega_noise {
            omega_e += d.sample(&mut self.rng);
        }

        self.ekf.update(i_meas, &self.meas_grid)?;
        track_covariance(&self.ekf, &mut self.invariants);

        let m_bar = sc.torque_at(t);
        let timing = sc.timing;
        let start = timing.then(Instant::now);
        let (u_ref, qp_iters) = match &mut self.controller {
            Controller::Nmpc(ctl) => {
                let reference = self.lut.interpolate(m_bar, omega_e, m.rs);
                ctl.prepare(&reference, omega_e, self.ekf.v_e)?;
                let mid = timing.then(Instant::now);
                let out = ctl.feedback(self.ekf.psi_e)?;
                if let (Some(s), Some(mid)) = (start, mid) {
                    self.phase_times = PhaseTimes {
                        prepare: (mid - s).as_secs_f64(),
                        feedback: mid.elapsed().as_secs_f64(),
                    };
                }
                if out.degraded {
                    self.invariants.degraded_steps += 1;
                }
                (out.u0, out.qp_iters)
            }
            Controller::Pi(pi) => {
                let i_ref = self.lut.interpolate(m_bar, omega_e, m.rs).i_bar;
                let u = pi.step(i_meas, i_ref, omega_e, ts, m.rs, m.udc, &self.cfg.model);
                if let Some(s) = start {
                    self.phase_times = PhaseTimes {
                        prepare: 0.0,
                        feedback: s.elapsed().as_secs_f64(),
                    };
                }
                (u, 0)
            }
        };
        let step_time = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        if u_ref.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("controller produced a non-finite voltage"));
        }
        let hex_violation = match &self.controller {
            Controller::Nmpc(ctl) => ctl.config().hexagon.max_violation(u_ref),
            Controller::Pi(_) => u_ref.norm() - voltage_radius(m.udc),
        };
        if hex_violation > HEXAGON_TOL {
            self.invariants.hexagon_violations += 1;
        }
        let u_applied = self.vsi.apply(u_ref, m.udc);

        let row = LogRow {
            t,
            i: self.plant.i,
            psi_hat: self.ekf.psi_e,
            v_e: self.ekf.v_e,
            u_ref,
            u_applied,
            m_bar,
            m_m: torque(self.plant.i, self.plant.psi, m.np),
            omega: self.plant.rotor.omega_m,
            qp_iters,
            step_time,
        };

        self.ekf.predict(u_applied, omega_e, ts, &self.cfg.model, m.rs)?;
        track_covariance(&self.ekf, &mut self.invariants);

        let h_sub = ts / self.cfg.substeps as f64;
        for _ in 0..self.cfg.substeps {
            let omega_err = self.plant.rotor.omega_m - sc.omega_ref;
            let m_l = match sc.speed_mode {
                // the clamp below makes the load torque irrelevant
                SpeedMode::FixedOmega => self.plant.m_m,
                SpeedMode::LoadPi => self.cfg.load_kp * omega_err + self.load_integ,
            };
            let mut next =
                simulate_plant_substep(&self.plant, u_applied, m_l, h_sub, &self.plant_params, &self.plant_map)?;
            match sc.speed_mode {
                SpeedMode::FixedOmega => next.rotor.omega_m = sc.omega_ref,
                SpeedMode::LoadPi => self.load_integ += h_sub * self.cfg.load_ki * omega_err,
            }
            self.plant = next;
        }
        self.k += 1;
        self.invariants.samples = self.k;
        Ok(row)
    }

    /// Run to the end of the scenario.
    pub fn run(mut self) -> Result<RunOutput> {
        let mut rows = Vec::with_capacity(self.n_samples);
        while !self.finished() {
            rows.push(self.step()?);
        }
        Ok(RunOutput {
            log: RunLog { ts: self.ts(), rows },
            invariants: self.invariants,
        })
    }
}

fn track_covariance(ekf: &EkfState, inv: &mut RunInvariants) {
    inv.min_cov_eigenvalue = inv.min_cov_eigenvalue.min(ekf.min_covariance_eigenvalue());
}

/// Build and run the scenario in `cfg`.
pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    Simulation::new(cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(controller: ControllerKind) -> SimConfig {
        SimConfig {
            scenario: Scenario {
                controller,
                duration: 0.1,
                torque_schedule: vec![(0.0, 0.0), (0.02, 29.0)],
                ..Scenario::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_torque_holds_equilibrium() {
        for controller in [ControllerKind::Nmpc, ControllerKind::Pi] {
            let mut cfg = short(controller);
            cfg.scenario.torque_schedule = vec![(0.0, 0.0)];
            cfg.scenario.current_noise = 0.0;
            let out = run(&cfg).unwrap();
            assert_eq!(out.log.rows.len(), 400);
            assert!(out.log.rows.iter().all(|r| r.i.norm() < 1e-6), "{controller:?}");
            assert!(out.invariants.hold());
        }
    }

    #[test]
    fn cadence_is_exact() {
        let out = run(&short(ControllerKind::Nmpc)).unwrap();
        for (k, r) in out.log.rows.iter().enumerate() {
            assert_eq!(r.t, k as f64 * 0.25e-3);
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let cfg = short(ControllerKind::Nmpc);
        let mut a = Vec::new();
        let mut b = Vec::new();
        run(&cfg).unwrap().log.write_csv(&mut a).unwrap();
        run(&cfg).unwrap().log.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.scenario.seed += 1;
        let mut c = Vec::new();
        run(&other).unwrap().log.write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn positive_torque_draws_positive_power() {
        for controller in [ControllerKind::Nmpc, ControllerKind::Pi] {
            let cfg = short(controller);
            let out = run(&cfg).unwrap();
            let sim = Simulation::new(&cfg).unwrap();
            let refs = step_references(&cfg.scenario, sim.lut());
            let hex = crate::machine::hexagon(cfg.machine.udc).unwrap();
            let m = metrics(&out.log, &refs, &hex);
            assert!(m.steps[1].mean_power > 0.0, "{controller:?}");
        }
    }

    #[test]
    fn load_machine_holds_speed() {
        let mut cfg = short(ControllerKind::Nmpc);
        cfg.scenario.speed_mode = SpeedMode::LoadPi;
        let out = run(&cfg).unwrap();
        let last = out.log.rows.last().unwrap();
        assert!((last.omega - cfg.scenario.omega_ref).abs() < 1.0, "{}", last.omega);
        assert!(out.log.rows.iter().any(|r| r.omega != cfg.scenario.omega_ref));
    }
}
