use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rsm_nmpc::flux_model::{fit_flux_params, FluxGrid, GreyBoxParams};
use rsm_nmpc::machine::hexagon;
use rsm_nmpc::mtpa::{mtpa_point, omega_limit, MtpaLut};
use rsm_nmpc::sim::{metrics, step_references, ControllerKind, SimConfig, Simulation};

#[derive(Parser)]
#[command(name = "rsm-nmpc", version, about = "Flux-based NMPC for reluctance synchronous machines")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit grey-box flux parameters to a gridded flux CSV.
    Fit {
        grid: PathBuf,
        /// Write the fitted parameters here (`key = value` lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the MTPA table and report the voltage-limited speed bound.
    Mtpa {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Torque at which to evaluate the speed bound, Nm.
        #[arg(long, default_value_t = 58.0, allow_negative_numbers = true)]
        torque: f64,
    },
    /// Run a closed-loop scenario.
    Sim {
        /// Config file; defaults apply when omitted.
        scenario: Option<PathBuf>,
        /// Write the run log as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the controller (`nmpc` or `pi`).
        #[arg(long)]
        controller: Option<String>,
    },
    /// Time the controller phases over a scenario.
    Bench {
        scenario: Option<PathBuf>,
        /// Repetitions of the scenario.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Write a synthetic flux grid from the grey-box model.
    Grid {
        out: PathBuf,
        #[arg(long, default_value_t = 31)]
        points: usize,
        /// Current range `±max` on both axes, A.
        #[arg(long, default_value_t = 30.0)]
        max: f64,
        /// Relative multiplicative noise level.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the default configuration.
    Config,
}

fn load_config(path: Option<&PathBuf>) -> rsm_nmpc::Result<SimConfig> {
    match path {
        Some(p) => SimConfig::read(p),
        None => Ok(SimConfig::default()),
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "unsettled".to_string(), |v| format!("{:.2} ms", v * 1e3))
}

fn run(cli: Cli) -> rsm_nmpc::Result<bool> {
    match cli.cmd {
        Cmd::Fit { grid, out } => {
            let grid = FluxGrid::read_csv(&grid)?;
            let report = fit_flux_params(&grid)?;
            println!("{}", report.params);
            println!("worst-case relative error: {:.4}%", 100.0 * report.worst_rel_error);
            println!("residual norm (d, q): {:.3e}, {:.3e}", report.residual[0], report.residual[1]);
            if report.degenerate {
                println!("warning: a cross-over scale hit its bound");
            }
            if let Some(p) = out {
                std::fs::write(p, report.params.to_text())?;
            }
            Ok(true)
        }
        Cmd::Mtpa { config, out, torque } => {
            let cfg = load_config(config.as_ref())?;
            let m = &cfg.machine;
            let lut = MtpaLut::build(&cfg.model, m.np, cfg.lut_m_max, cfg.lut_points, m.current_limit())?;
            if let Some(p) = out {
                lut.write_csv(BufWriter::new(File::create(p)?))?;
            }
            let (i, psi) = mtpa_point(torque, &cfg.model, m.np, m.current_limit())?;
            println!("torque {torque} Nm: i = ({:.3}, {:.3}) A, psi = ({:.4}, {:.4}) Wb", i[0], i[1], psi[0], psi[1]);
            match omega_limit(i, psi, m.udc, m.rs, m.np) {
                Ok(w) => println!("speed bound: {w:.2} rad/s"),
                Err(e) => println!("speed bound: {e}"),
            }
            Ok(true)
        }
        Cmd::Sim { scenario, out, controller } => {
            let mut cfg = load_config(scenario.as_ref())?;
            match controller.as_deref() {
                None => {}
                Some("nmpc") => cfg.scenario.controller = ControllerKind::Nmpc,
                Some("pi") => cfg.scenario.controller = ControllerKind::Pi,
                Some(other) => {
                    return Err(rsm_nmpc::Error::Parse {
                        line: 0,
                        msg: format!("unknown controller `{other}`"),
                    })
                }
            }
            let sim = Simulation::new(&cfg)?;
            let refs = step_references(&cfg.scenario, sim.lut());
            let output = sim.run()?;
            if let Some(p) = out {
                output.log.write_csv(BufWriter::new(File::create(p)?))?;
            }
            let summary = metrics(&output.log, &refs, &hexagon(cfg.machine.udc)?);
            let stdout = io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "{:>8} {:>8} {:>12} {:>12} {:>10} {:>10}", "t0 [s]", "m [Nm]", "settle", "ss err [A]", "max|u|", "sat frac")?;
            for s in &summary.steps {
                writeln!(
                    w,
                    "{:>8.3} {:>8.1} {:>12} {:>12.4} {:>10.2} {:>10.3}",
                    s.step.t_start,
                    s.step.m_bar,
                    fmt_opt(s.settling_time),
                    s.steady_state_error,
                    s.max_u_ref,
                    s.saturated_fraction
                )?;
            }
            let inv = output.invariants;
            writeln!(
                w,
                "hexagon violations: {}, min covariance eigenvalue: {:.3e}, degraded steps: {}, samples: {}/{}",
                inv.hexagon_violations, inv.min_cov_eigenvalue, inv.degraded_steps, inv.samples, inv.expected_samples
            )?;
            writeln!(w, "invariants {}", if inv.hold() { "hold" } else { "VIOLATED" })?;
            Ok(inv.hold())
        }
        Cmd::Bench { scenario, repeat } => {
            let mut cfg = load_config(scenario.as_ref())?;
            cfg.scenario.timing = true;
            cfg.scenario.controller = ControllerKind::Nmpc;
            let mut prep = Vec::new();
            let mut feed = Vec::new();
            let mut total = Vec::new();
            let mut ok = true;
            for _ in 0..repeat.max(1) {
                let mut sim = Simulation::new(&cfg)?;
                while !sim.finished() {
                    let row = sim.step()?;
                    let ph = sim.phase_times();
                    prep.push(ph.prepare);
                    feed.push(ph.feedback);
                    total.push(row.step_time);
                }
                ok &= sim.invariants().hold();
            }
            println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "phase", "mean", "p50", "p90", "p99", "max");
            for (name, v) in [("prepare", &mut prep), ("feedback", &mut feed), ("total", &mut total)] {
                v.sort_by(f64::total_cmp);
                let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                println!(
                    "{:>10} {:>8.1}us {:>8.1}us {:>8.1}us {:>8.1}us {:>8.1}us",
                    name,
                    mean * 1e6,
                    percentile(v, 0.5) * 1e6,
                    percentile(v, 0.9) * 1e6,
                    percentile(v, 0.99) * 1e6,
                    v.last().copied().unwrap_or(0.0) * 1e6
                );
            }
            Ok(ok)
        }
        Cmd::Grid { out, points, max, noise, seed } => {
            let grid = FluxGrid::symmetric(&GreyBoxParams::REFERENCE, max, points)?;
            let grid = if noise > 0.0 { grid.with_multiplicative_noise(noise, seed) } else { grid };
            grid.write_csv(BufWriter::new(File::create(out)?))?;
            Ok(true)
        }
        Cmd::Config => {
            print!("{}", SimConfig::default().to_text());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        // stdout closed early, e.g. piped into `head`
        Err(rsm_nmpc::Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
