use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use magvine::experiments::{
    autopilot_script, calibrate, parse_range, run_bend_table, run_force_sweep, run_maze,
    run_retraction_matrix, run_suspension, AutopilotConfig, BendConfig, Calibration,
    CalibrationTargets, ExperimentError, ForceSweepConfig, MazeConfig, RetractionConfig, RunDir,
    SuspensionConfig,
};
use magvine::scenario::{free_space, load_scenario, Scenario, ScriptEntry};
use magvine_teleop::{serve_blocking, ServeConfig, ServeError, DEFAULT_PORT};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "magvine",
    version,
    about = "Magnetically steered vine robot experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory; defaults to `runs/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
}

/// A parsed sweep flag.
#[derive(Debug, Clone)]
struct Sweep(Vec<f64>);

fn range(text: &str) -> Result<Sweep, String> {
    parse_range(text).map(Sweep).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Fit drag, EPM moment scale and restoration coefficient.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Tip pushing force against pressure and EPM height.
    ForceSweep {
        #[command(flatten)]
        common: Common,
        /// Pa, `start:step:stop` or a comma list.
        #[arg(long, value_parser = range)]
        pressures: Option<Sweep>,
        /// m
        #[arg(long, value_parser = range)]
        heights: Option<Sweep>,
        /// Horizontal EPM offset ahead of the tip, m.
        #[arg(long, allow_hyphen_values = true)]
        offset: Option<f64>,
        /// Search for the offset with the largest axial force instead.
        #[arg(long, conflicts_with = "offset")]
        best_offset: bool,
    },
    /// Bending radius under a circular EPM trajectory.
    BendTable {
        #[command(flatten)]
        common: Common,
        /// m
        #[arg(long, value_parser = range)]
        lengths: Option<Sweep>,
        /// Pa
        #[arg(long, value_parser = range)]
        pressures: Option<Sweep>,
        /// EPM height, m.
        #[arg(long)]
        height: Option<f64>,
        /// Skip the over-bend after each sweep.
        #[arg(long)]
        no_overbend: bool,
    },
    /// Growth through a lumen with the tip held off the wall.
    Suspension {
        #[command(flatten)]
        common: Common,
        /// m/s
        #[arg(long, value_parser = range)]
        speeds: Option<Sweep>,
        /// EPM height above the lumen centerline, m.
        #[arg(long)]
        epm_height: Option<f64>,
        /// m
        #[arg(long)]
        travel: Option<f64>,
    },
    /// Retraction outcomes with and without pressure and EPM.
    Retraction {
        #[command(flatten)]
        common: Common,
        /// EPM height above the tip, m.
        #[arg(long)]
        separation: Option<f64>,
        /// Inflated pressure, Pa.
        #[arg(long)]
        pressure: Option<f64>,
        /// m/s
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Replay a command script through the maze.
    Maze {
        #[command(flatten)]
        common: Common,
        /// JSON array of script entries replacing the scenario's script.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Synthesize a script with the tip-following autopilot.
        #[arg(long, conflicts_with = "script")]
        autopilot: bool,
        /// Target label; the first target by default.
        #[arg(long)]
        target: Option<String>,
    },
    /// Serve a live session over TCP.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Record protocol traffic to this file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write the session trace here on shutdown.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
}

/// Constants the run used, whether calibrated or not.
#[derive(Serialize)]
struct Constants {
    source: Option<String>,
    drag: f64,
    moment_scale: f64,
    restoration_coeff: f64,
}

#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    experiment: &'a str,
    scenario: Option<String>,
    calibration: Option<String>,
    seed: u64,
    config: &'a T,
}

#[derive(Serialize)]
struct CalibrationRow {
    target: &'static str,
    length: Option<f64>,
    pressure: f64,
    value: f64,
    residual: f64,
}

#[derive(Serialize)]
struct ForceRow {
    pressure: f64,
    height: f64,
    offset: f64,
    growing_force: f64,
    magnetic_force: f64,
    push: f64,
    error: Option<String>,
}

enum Failure {
    Experiment(ExperimentError),
    Serve(ServeError),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::Experiment(e)
    }
}

impl From<magvine::scenario::ScenarioError> for Failure {
    fn from(e: magvine::scenario::ScenarioError) -> Self {
        Failure::Experiment(e.into())
    }
}

impl Failure {
    fn report(&self) -> (String, u8) {
        match self {
            Failure::Experiment(e) => (e.to_string(), e.exit_code() as u8),
            Failure::Serve(e @ ServeError::Sim(_)) => (e.to_string(), 3),
            Failure::Serve(e) => (e.to_string(), 2),
        }
    }
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

struct Setup {
    scenario: Scenario,
    out: RunDir,
}

/// Load the scenario (or `fallback`), apply the calibration and create the
/// run directory.
fn setup(c: &Common, name: &str, fallback: Option<Scenario>) -> Result<Setup, Failure> {
    let mut scenario = match (&c.scenario, fallback) {
        (Some(p), _) => load_scenario(p)?,
        (None, Some(s)) => s,
        (None, None) => {
            return Err(ExperimentError::Invalid(format!("{name} needs --scenario")).into());
        }
    };
    if let Some(p) = &c.calibration {
        Calibration::load(p)?.apply(&mut scenario);
    }
    let constants = Constants {
        source: display(&c.calibration),
        drag: scenario.vine.params.drag,
        moment_scale: scenario.epm.moment_scale,
        restoration_coeff: scenario.vine.params.restoration_coeff,
    };
    let out = RunDir::create(
        c.out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(name)),
    )?;
    out.calibration(&constants)?;
    Ok(Setup { scenario, out })
}

fn write_config<T: Serialize>(s: &Setup, c: &Common, name: &str, cfg: &T) -> Result<(), Failure> {
    s.out.config(&RunConfig {
        experiment: name,
        scenario: display(&c.scenario),
        calibration: display(&c.calibration),
        seed: c.seed,
        config: cfg,
    })?;
    Ok(())
}

fn repeats(c: &Common, default: usize) -> Result<usize, Failure> {
    match c.repeats {
        Some(0) => Err(ExperimentError::Invalid("--repeats must be at least 1".into()).into()),
        Some(n) => Ok(n),
        None => Ok(default),
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Calibrate { common } => {
            let s = setup(&common, "calibrate", Some(free_space(0.1, 10e3)))?;
            let targets = CalibrationTargets::default();
            let bend = BendConfig::default();
            let sc = &s.scenario;
            let cal = calibrate(
                &targets,
                &sc.vine.params,
                sc.epm.spec.moment_magnitude(),
                &sc.limits,
                &bend,
            )?;
            write_config(&s, &common, "calibrate", &targets)?;
            // The fit replaces the constants the run started from.
            s.out.calibration(&cal)?;
            let r = &cal.residuals;
            let mut rows = vec![CalibrationRow {
                target: "growing_fraction",
                length: None,
                pressure: targets.fraction_pressure,
                value: targets.growing_fraction,
                residual: r.growing_fraction,
            }];
            rows.extend(
                targets
                    .bend
                    .iter()
                    .zip(&r.bend)
                    .map(|(t, res)| CalibrationRow {
                        target: "bend_radius",
                        length: Some(t.length),
                        pressure: t.pressure,
                        value: t.radius,
                        residual: *res,
                    }),
            );
            s.out.results(&rows)?;
            println!(
                "drag {:.6} N, moment scale {:.6}, restoration coefficient {:.6e}{}",
                cal.drag,
                cal.moment_scale,
                cal.restoration_coeff,
                if cal.restoration_at_bound {
                    " (at bound)"
                } else {
                    ""
                }
            );
            println!(
                "growing fraction residual {:+.3e}, bend rms {:.3} mm",
                r.growing_fraction,
                r.bend_rms * 1e3
            );
            println!("wrote {}", s.out.path().display());
        }
        Command::ForceSweep {
            common,
            pressures,
            heights,
            offset,
            best_offset,
        } => {
            let s = setup(&common, "force-sweep", Some(free_space(0.1, 10e3)))?;
            let mut cfg = ForceSweepConfig::default();
            if let Some(p) = pressures {
                cfg.pressures = p.0;
            }
            if let Some(h) = heights {
                cfg.heights = h.0;
            }
            if best_offset {
                cfg.offset = None;
            } else if offset.is_some() {
                cfg.offset = offset;
            }
            write_config(&s, &common, "force-sweep", &cfg)?;
            let sc = &s.scenario;
            let cells = run_force_sweep(&cfg, &sc.vine.params, sc.epm_moment(), &sc.limits)?;
            let rows: Vec<ForceRow> = cells
                .iter()
                .map(|c| ForceRow {
                    pressure: c.pressure,
                    height: c.height,
                    offset: c.offset,
                    growing_force: c.growing_force,
                    magnetic_force: c.magnetic_force,
                    push: c.push,
                    error: c.error.clone(),
                })
                .collect();
            s.out.results(&rows)?;
            println!(
                "{:>10} {:>8} {:>10} {:>10}",
                "P [Pa]", "d [mm]", "push [N]", "growing"
            );
            for r in &rows {
                match &r.error {
                    Some(e) => println!("{:>10.0} {:>8.1} {e}", r.pressure, r.height * 1e3),
                    None => println!(
                        "{:>10.0} {:>8.1} {:>10.4} {:>9.1}%",
                        r.pressure,
                        r.height * 1e3,
                        r.push,
                        100.0 * r.growing_force / r.push
                    ),
                }
            }
        }
        Command::BendTable {
            common,
            lengths,
            pressures,
            height,
            no_overbend,
        } => {
            let s = setup(&common, "bend-table", Some(free_space(0.1, 10e3)))?;
            let mut cfg = BendConfig::default();
            if let Some(l) = lengths {
                cfg.lengths = l.0;
            }
            if let Some(p) = pressures {
                cfg.pressures = p.0;
            }
            if let Some(h) = height {
                cfg.height = h;
            }
            if no_overbend {
                cfg.overbend = None;
            }
            cfg.repeats = repeats(&common, cfg.repeats)?;
            write_config(&s, &common, "bend-table", &cfg)?;
            let (rows, runs) = run_bend_table(&s.scenario, &cfg, common.seed)?;
            for r in &runs {
                let name = format!(
                    "l{:.0}mm_p{:.0}kPa_seed{}",
                    r.length * 1e3,
                    r.pressure * 1e-3,
                    r.seed
                );
                s.out.trace(&name, &r.trace)?;
            }
            s.out.results(&rows)?;
            println!(
                "{:>8} {:>8} {:>16} {:>8}",
                "l [mm]", "P [kPa]", "radius [mm]", "buckled"
            );
            for r in &rows {
                println!(
                    "{:>8.0} {:>8.0} {:>9.1} ± {:<4.1} {:>8}",
                    r.length * 1e3,
                    r.pressure * 1e-3,
                    r.mean_radius * 1e3,
                    r.std_radius * 1e3,
                    r.buckled
                );
            }
        }
        Command::Suspension {
            common,
            speeds,
            epm_height,
            travel,
        } => {
            let s = setup(&common, "suspension", None)?;
            let mut cfg = SuspensionConfig::default();
            if let Some(v) = speeds {
                cfg.speeds = v.0;
            }
            if let Some(h) = epm_height {
                cfg.epm_height = h;
            }
            if let Some(t) = travel {
                cfg.travel = t;
            }
            cfg.repeats = repeats(&common, cfg.repeats)?;
            write_config(&s, &common, "suspension", &cfg)?;
            let (_, runs) = run_suspension(&s.scenario, &cfg, common.seed)?;
            for r in &runs {
                s.out.trace(
                    &format!("v{:.1}mm_s_seed{}", r.speed * 1e3, r.seed),
                    &r.trace,
                )?;
            }
            s.out.results(&runs)?;
            println!(
                "{:>10} {:>6} {:>16} {:>9} {:>8}",
                "v [mm/s]", "seed", "gap [mm]", "min [mm]", "contact"
            );
            for r in &runs {
                println!(
                    "{:>10.1} {:>6} {:>9.2} ± {:<4.2} {:>9.2} {:>8}",
                    r.speed * 1e3,
                    r.seed,
                    r.mean_gap * 1e3,
                    r.std_gap * 1e3,
                    r.min_gap * 1e3,
                    r.contact_ticks
                );
            }
        }
        Command::Retraction {
            common,
            separation,
            pressure,
            speed,
        } => {
            let s = setup(&common, "retraction", None)?;
            let mut cfg = RetractionConfig::default();
            if let Some(v) = separation {
                cfg.epm_separation = v;
            }
            if let Some(p) = pressure {
                cfg.inflated_pressure = p;
            }
            if let Some(v) = speed {
                cfg.retract_speed = v;
            }
            let n = repeats(&common, 1)?;
            write_config(&s, &common, "retraction", &cfg)?;
            let seeds: Vec<u64> = (0..n as u64).map(|k| common.seed.wrapping_add(k)).collect();
            let results = run_retraction_matrix(&s.scenario, &cfg, &seeds)?;
            for (row, trace) in &results {
                s.out
                    .trace(&format!("case{}_seed{}", row.case, row.seed), trace)?;
            }
            let rows: Vec<_> = results.into_iter().map(|(r, _)| r).collect();
            s.out.results(&rows)?;
            println!(
                "{:>5} {:>6} {:>22} {:>7}",
                "case", "seed", "outcome", "stalls"
            );
            for r in &rows {
                let outcome = serde_json::to_value(r.outcome)
                    .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
                println!(
                    "{:>5} {:>6} {:>22} {:>7}",
                    r.case.to_string(),
                    r.seed,
                    outcome.as_str().unwrap_or("?"),
                    r.stalls
                );
            }
        }
        Command::Maze {
            common,
            script,
            autopilot,
            target,
        } => {
            let mut s = setup(&common, "maze", None)?;
            s.scenario.seed = common.seed;
            let script = match (&script, autopilot) {
                (Some(p), _) => {
                    let text =
                        std::fs::read_to_string(p).map_err(|source| ExperimentError::Io {
                            path: p.display().to_string(),
                            source,
                        })?;
                    let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
                        .map_err(|e| ExperimentError::Invalid(format!("{}: {e}", p.display())))?;
                    Some(entries)
                }
                (None, true) => Some(autopilot_script(&s.scenario, &AutopilotConfig::default())?),
                (None, false) => None,
            };
            let cfg = MazeConfig {
                target,
                script,
                ..MazeConfig::default()
            };
            write_config(&s, &common, "maze", &cfg)?;
            let (report, trace) = run_maze(&s.scenario, &cfg)?;
            s.out.trace(&format!("seed{}", common.seed), &trace)?;
            s.out.results(std::slice::from_ref(&report))?;
            println!(
                "{} in {:.2} s, {} contacts, distance to target {:.1} mm",
                if report.completed {
                    "completed"
                } else {
                    "incomplete"
                },
                report.elapsed,
                report.contacts,
                report.final_distance * 1e3
            );
        }
        Command::Serve {
            scenario,
            calibration,
            host,
            port,
            speed,
            record,
            trace_out,
        } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(p) = &calibration {
                Calibration::load(p)?.apply(&mut sc);
            }
            let cfg = ServeConfig {
                addr: SocketAddr::new(host, port),
                speed,
                name: scenario
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned()),
                record,
                trace_out,
            };
            serve_blocking(sc, cfg).map_err(Failure::Serve)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (msg, code) = f.report();
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
