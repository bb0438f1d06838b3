//! Acceptance run: one pass/fail line per criterion, non-zero exit on any
//! failure. Registered with `harness = false`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gradient_fd, loglog_slope, max_rel, random_unit, MU0};
use magvine::actuation::{solve_epm_pose, EpmPose, WorkspaceLimits, WrenchTarget};
use magvine::experiments::{
    force_cell, run_bend_table, run_force_sweep, run_maze, run_retraction_case, run_suspension,
    BendConfig, ForceSweepConfig, MazeConfig, RetractionCase, RetractionConfig, RetractionOutcome,
    SuspensionConfig,
};
use magvine::magnetics::{dipole_field, dipole_gradient, wrench_on_ipm, DipoleSource};
use magvine::scenario::SimCommand;
use magvine::sim::Simulation;
use magvine::trace::trace_to_string;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPM: f64 = 952.9;
const IPM: f64 = 2.462;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut fd_err, mut asym): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let src = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        );
        let m = random_unit(&mut rng) * rng.random_range(0.1..1000.0);
        let at = src + random_unit(&mut rng) * rng.random_range(0.03..0.5);
        let g = dipole_gradient(&DipoleSource::new(src, m), &at).map_err(|e| e.to_string())?;
        fd_err = fd_err.max(max_rel(&gradient_fd(&src, &m, &at, 1e-6), &g));
        let scale = g.norm();
        asym = asym
            .max((g - g.transpose()).amax() / scale)
            .max(g.trace().abs() / scale);
    }
    let unit = DipoleSource::new(Vector3::zeros(), Vector3::z());
    let b = dipole_field(&unit, &Vector3::new(0.0, 0.0, 0.1)).map_err(|e| e.to_string())?;
    let b_err = (b.z / 2e-4 - 1.0).abs();
    let f = wrench_on_ipm(
        &unit,
        &DipoleSource::new(Vector3::new(0.0, 0.0, 0.1), Vector3::z()),
    )
    .map_err(|e| e.to_string())?
    .force;
    let f_err = (f.z.abs() / 6e-3 - 1.0).abs();
    let elapsed = start.elapsed();
    check(
        fd_err < 1e-6
            && asym < 1e-12
            && b_err < 1e-9
            && f_err < 1e-9
            && elapsed < Duration::from_secs(5),
        format!(
            "fd rel err {fd_err:.2e}, symmetry/trace {asym:.2e}, on-axis field {b_err:.2e}, \
             coaxial force {f_err:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let ds: Vec<f64> = (0..=40).map(|k| 0.1 + 0.005 * k as f64).collect();
    let (mut taus, mut forces) = (Vec::new(), Vec::new());
    let axis = Vector3::new(0.6, -0.3, 0.74).normalize();
    for d in &ds {
        let w = wrench_on_ipm(
            &DipoleSource::new(
                Vector3::zeros(),
                Vector3::new(0.2, 0.1, 1.0).normalize() * EPM,
            ),
            &DipoleSource::new(axis * *d, Vector3::new(1.0, 0.5, -0.2).normalize() * IPM),
        )
        .map_err(|e| e.to_string())?;
        taus.push(w.torque.norm());
        forces.push(w.force.norm());
    }
    let st = loglog_slope(&ds, &taus);
    let sf = loglog_slope(&ds, &forces);
    check(
        (st + 3.0).abs() < 1e-3 && (sf + 4.0).abs() < 1e-3,
        format!("torque slope {st:.6}, force slope {sf:.6}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let limits = WorkspaceLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let ipm = DipoleSource::new(Vector3::zeros(), random_unit(&mut rng) * IPM);
        let dir = loop {
            let d = random_unit(&mut rng);
            if d.z > 0.2 {
                break d;
            }
        };
        let truth = EpmPose::new(dir * rng.random_range(0.06..0.25), random_unit(&mut rng));
        let w = wrench_on_ipm(&truth.dipole(EPM), &ipm).map_err(|e| e.to_string())?;
        let target = WrenchTarget {
            force: w.force,
            torque: w.torque,
            force_weight: 1.0,
            torque_weight: 1.0,
        };
        let guess = EpmPose::new(
            truth.position + random_unit(&mut rng) * rng.random_range(0.0..0.02),
            (truth.moment_dir + random_unit(&mut rng) * 0.3).normalize(),
        );
        let (pose, report) =
            solve_epm_pose(&target, &ipm, &limits, &guess, EPM).map_err(|e| e.to_string())?;
        let got = wrench_on_ipm(&pose.dipole(EPM), &ipm).map_err(|e| e.to_string())?;
        let r = target.residual(&got);
        if !report.feasible || !limits.admits(&pose.position, &ipm.position) {
            return Err(format!("pose {i}: {report:?}"));
        }
        worst = worst.max(r);
    }
    // Targets beyond what the EPM can exert at the standoff.
    let b_max = MU0 * EPM / (2.0 * std::f64::consts::PI * limits.min_standoff.powi(3));
    let f_max = 3.0 * MU0 * EPM * IPM / (2.0 * std::f64::consts::PI * limits.min_standoff.powi(4));
    let ipm = DipoleSource::new(Vector3::zeros(), Vector3::x() * IPM);
    let guess = EpmPose::new(Vector3::new(0.02, 0.0, 0.1), Vector3::z());
    let mut flagged = 0;
    let infeasible = [
        WrenchTarget {
            force: Vector3::zeros(),
            torque: Vector3::y() * IPM * b_max * 2.0,
            force_weight: 0.0,
            torque_weight: 1.0,
        },
        WrenchTarget {
            force: Vector3::x() * 1.5 * f_max,
            torque: Vector3::zeros(),
            force_weight: 1.0,
            torque_weight: 0.0,
        },
    ];
    for target in &infeasible {
        let (pose, report) =
            solve_epm_pose(target, &ipm, &limits, &guess, EPM).map_err(|e| e.to_string())?;
        if !report.feasible && limits.admits(&pose.position, &ipm.position) {
            flagged += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-8 && flagged == infeasible.len() && elapsed < Duration::from_secs(30),
        format!(
            "worst residual {worst:.2e}, infeasible flagged {flagged}/{}, {:.2} s",
            infeasible.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let sc = common::calibrated("freespace");
    let p = &sc.vine.params;
    let cell = force_cell(p, sc.epm_moment(), &sc.limits, 30e3, 0.1, Some(0.085))
        .map_err(|e| e.to_string())?;
    let fraction = cell.growing_fraction();
    let cfg = ForceSweepConfig {
        heights: (0..=40).map(|k| 0.08 + 0.005 * k as f64).collect(),
        ..ForceSweepConfig::default()
    };
    let cells = run_force_sweep(&cfg, p, sc.epm_moment(), &sc.limits).map_err(|e| e.to_string())?;
    let decreasing = cells
        .chunks(cfg.heights.len())
        .all(|row| row.windows(2).all(|w| w[1].push < w[0].push));
    let mut plateau: f64 = 0.0;
    for pressure in &cfg.pressures {
        let far = force_cell(p, sc.epm_moment(), &sc.limits, *pressure, 50.0, Some(0.0))
            .map_err(|e| e.to_string())?;
        let ideal = (0.5 * pressure * p.area() - p.drag).max(0.0);
        plateau = plateau.max((far.push - ideal).abs());
    }
    check(
        (fraction - 0.79).abs() <= 0.05 && decreasing && plateau < 1e-9,
        format!(
            "growing fraction {fraction:.4}, strictly decreasing {decreasing}, \
             plateau error {plateau:.2e} N"
        ),
    )
}

/// Bend table rows shared by criteria 5 and 6.
fn bend_rows() -> Result<Vec<magvine::experiments::BendRow>, String> {
    let sc = common::calibrated("freespace");
    run_bend_table(&sc, &BendConfig::default(), 0)
        .map(|(rows, _)| rows)
        .map_err(|e| e.to_string())
}

fn criterion_5(rows: &[magvine::experiments::BendRow]) -> Outcome {
    let radii: Vec<f64> = rows.iter().map(|r| r.mean_radius).collect();
    let n = radii.len() as f64;
    let mean = radii.iter().sum::<f64>() / n;
    let std = (radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let cv = std / mean;
    let in_band = radii.iter().all(|r| (0.055..=0.080).contains(r));
    let worst_std = rows.iter().map(|r| r.std_radius).fold(0.0, f64::max);
    let (lo, hi) = radii
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    check(
        rows.len() == 9 && in_band && cv < 0.15 && worst_std < 0.002 && rows[0].repeats == 5,
        format!(
            "radii {:.1}..{:.1} mm, cv {:.1} %, worst repeat std {:.2} mm",
            lo * 1e3,
            hi * 1e3,
            cv * 100.0,
            worst_std * 1e3
        ),
    )
}

fn criterion_6(rows: &[magvine::experiments::BendRow]) -> Outcome {
    let at30: Vec<_> = rows.iter().filter(|r| r.pressure == 30e3).collect();
    let clean = at30.iter().all(|r| !r.buckled);
    let overbent = at30.iter().all(|r| r.overbend_buckled == Some(true));
    check(
        !at30.is_empty() && clean && overbent,
        format!(
            "30 kPa sweeps without buckling {clean} ({} lengths), over-bend buckles {overbent}",
            at30.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let sc = common::calibrated("tube90");
    let cfg = SuspensionConfig::default();
    let (_, runs) = run_suspension(&sc, &cfg, 1).map_err(|e| e.to_string())?;
    let clear = runs.iter().all(|r| r.min_gap > 0.0);
    let banded = runs.iter().all(|r| (0.005..=0.020).contains(&r.mean_gap));
    let min_gap = runs.iter().map(|r| r.min_gap).fold(f64::INFINITY, f64::min);
    let means: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.1}", r.mean_gap * 1e3))
        .collect();
    check(
        runs.len() == 10 && clear && banded,
        format!(
            "{} runs, min gap {:.2} mm, mean gaps [{}] mm",
            runs.len(),
            min_gap * 1e3,
            means.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let sc = common::calibrated("retraction");
    let cfg = RetractionConfig::default();
    let mut wrong = Vec::new();
    for seed in 0..10 {
        for case in RetractionCase::ALL {
            let (row, _) = run_retraction_case(&sc, case, &cfg, seed).map_err(|e| e.to_string())?;
            let expect = match case {
                RetractionCase::A | RetractionCase::B => RetractionOutcome::Buckled,
                RetractionCase::C => RetractionOutcome::Success,
                RetractionCase::D => RetractionOutcome::SuccessWithStalls,
            };
            if row.outcome != expect {
                wrong.push(format!("{case}/{seed}: {}", row.outcome));
            }
        }
    }
    for separation in [0.061, 0.065, 0.07, 0.1] {
        let far = RetractionConfig {
            epm_separation: separation,
            ..cfg.clone()
        };
        let (row, _) =
            run_retraction_case(&sc, RetractionCase::C, &far, 0).map_err(|e| e.to_string())?;
        if row.outcome != RetractionOutcome::Buckled {
            wrong.push(format!("C at {} mm: {}", separation * 1e3, row.outcome));
        }
    }
    check(
        wrong.is_empty(),
        if wrong.is_empty() {
            "A, B buckled; C success; D success-with-stalls over 10 seeds; \
             C buckles at 61, 65, 70, 100 mm"
                .into()
        } else {
            format!("unexpected outcomes: {}", wrong.join("; "))
        },
    )
}

fn criterion_9() -> Outcome {
    let sc = common::calibrated("maze");
    let trace = |sc: magvine::scenario::Scenario| -> Result<String, String> {
        run_maze(&sc, &MazeConfig::default())
            .map(|(_, rows)| trace_to_string(&rows))
            .map_err(|e| e.to_string())
    };
    let a = trace(sc.clone())?;
    let b = std::thread::scope(|s| s.spawn(|| trace(sc.clone())).join().unwrap())?;
    let identical = a == b;

    let mut sim = Simulation::new(common::fixture("tube90")).map_err(|e| e.to_string())?;
    let mut drift: f64 = 0.0;
    let grow = SimCommand {
        grow_rate: 0.004,
        ..SimCommand::default()
    };
    for _ in 0..500 {
        let before = sim.state.length;
        sim.step(&grow).map_err(|e| e.to_string())?;
        let after = sim.state.length;
        let laid = sim.sim.laid_length(before);
        let mut s = 0.0;
        while s <= laid {
            let (Some(p), Some(q)) = (sim.sim.laid_point(before, s), sim.sim.laid_point(after, s))
            else {
                return Err(format!("laid point at {s} m vanished"));
            };
            drift = drift.max((p - q).norm());
            s += 1e-3;
        }
    }
    check(
        identical && drift < 1e-9,
        format!(
            "maze traces byte-identical {identical} ({} bytes), max laid drift {drift:.2e} m",
            a.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(msg) => println!("criterion {n}: PASS {msg} [{secs:.2} s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n}: FAIL {msg} [{secs:.2} s]");
            }
        }
    };
    let cal = common::calibration();
    println!(
        "calibration: drag {:.4} N, moment scale {:.4}, restoration coefficient {:.3e}, bend rms {:.2} mm",
        cal.drag,
        cal.moment_scale,
        cal.restoration_coeff,
        cal.residuals.bend_rms * 1e3
    );
    report(1, &criterion_1);
    report(2, &criterion_2);
    report(3, &criterion_3);
    report(4, &criterion_4);
    let start = Instant::now();
    let rows = bend_rows();
    println!(
        "bend table: 9 conditions x 5 repeats shared by criteria 5 and 6 [{:.2} s]",
        start.elapsed().as_secs_f64()
    );
    report(5, &|| criterion_5(rows.as_ref().map_err(Clone::clone)?));
    report(6, &|| criterion_6(rows.as_ref().map_err(Clone::clone)?));
    report(7, &criterion_7);
    report(8, &criterion_8);
    report(9, &criterion_9);
    if failed == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
