//! Bending radius after a circular EPM sweep, and the over-bend that
//! drives the body past its collapse moment.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{mean_std, ExperimentError};
use crate::actuation::{circular_epm_trajectory, EpmPose};
use crate::mechanics::{self, BalanceOptions, BasePose, VineParams, VineState};
use crate::scenario::{EpmCommand, Scenario, SimCommand};
use crate::sim::Simulation;
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendConfig {
    /// m
    pub lengths: Vec<f64>,
    /// Pa
    pub pressures: Vec<f64>,
    /// EPM height above the vine plane, m.
    pub height: f64,
    /// rad
    pub end_angle: f64,
    /// rad per tick along the circle
    pub angular_step: f64,
    /// EPM speed along the circle, m/s; sets the tick duration.
    pub epm_speed: f64,
    /// Ticks at the final pose over which the measured tip is averaged.
    pub hold_ticks: usize,
    pub repeats: usize,
    pub overbend: Option<OverbendConfig>,
}

/// After the sweep the EPM moves in a straight line to `target` while its
/// moment turns a further `extra_rotation` about the vertical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverbendConfig {
    pub target: [f64; 3],
    pub extra_rotation: f64,
    pub steps: usize,
}

impl Default for OverbendConfig {
    fn default() -> Self {
        Self {
            target: [-0.05, 0.075, 0.08],
            extra_rotation: 120f64.to_radians(),
            steps: 60,
        }
    }
}

impl Default for BendConfig {
    fn default() -> Self {
        Self {
            lengths: vec![0.10, 0.15, 0.20],
            pressures: vec![10e3, 20e3, 30e3],
            height: 0.16,
            end_angle: 130f64.to_radians(),
            angular_step: 0.5f64.to_radians(),
            epm_speed: 0.004,
            hold_ticks: 100,
            repeats: 5,
            overbend: Some(OverbendConfig::default()),
        }
    }
}

impl BendConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.into()));
        if self.lengths.is_empty() || self.pressures.is_empty() {
            return bad("bend table needs lengths and pressures");
        }
        if self.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad("lengths must be positive");
        }
        if self.pressures.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return bad("pressures must be non-negative");
        }
        if !(self.height > 0.0 && self.end_angle > 0.0 && self.end_angle < 2.0 * PI) {
            return bad("height and end angle must be positive");
        }
        if !(self.angular_step > 0.0 && self.epm_speed > 0.0) {
            return bad("angular step and EPM speed must be positive");
        }
        if self.repeats == 0 || self.hold_ticks == 0 {
            return bad("repeats and hold ticks must be at least 1");
        }
        if let Some(o) = &self.overbend {
            if o.steps == 0 || o.target.iter().any(|v| !v.is_finite()) {
                return bad("over-bend needs a finite target and at least one step");
            }
        }
        Ok(())
    }

    fn trajectory(&self, base: &BasePose, length: f64) -> Result<Vec<EpmPose>, ExperimentError> {
        Ok(circular_epm_trajectory(
            base,
            length,
            self.height,
            (0.0, self.end_angle),
            self.angular_step,
        )?)
    }

    fn overbend_poses(&self, base: &BasePose, from: &EpmPose) -> Vec<EpmPose> {
        let Some(o) = &self.overbend else {
            return Vec::new();
        };
        let target = base.position + Vector3::from(o.target);
        (1..=o.steps)
            .map(|k| {
                let u = k as f64 / o.steps as f64;
                let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), o.extra_rotation * u);
                EpmPose::new(from.position.lerp(&target, u), rot * from.moment_dir)
            })
            .collect()
    }
}

/// Noise-free result of one condition from the mechanics alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendModel {
    pub theta: f64,
    /// m
    pub radius: f64,
    pub buckled: bool,
    pub saturated: bool,
    pub overbend_buckled: bool,
}

/// Follow the equilibrium along the sweep for a vine in the horizontal
/// plane, starting straight along +x.
pub fn bend_table_model(
    params: &VineParams,
    epm_moment: f64,
    length: f64,
    pressure: f64,
    cfg: &BendConfig,
) -> Result<BendModel, ExperimentError> {
    let base = BasePose::default();
    let mut state = VineState::straight(base, length, pressure);
    let mut signed = 0.0;
    let mut out = BendModel {
        theta: 0.0,
        radius: f64::INFINITY,
        buckled: false,
        saturated: false,
        overbend_buckled: false,
    };
    let traj = cfg.trajectory(&base, length)?;
    let mut follow =
        |pose: &EpmPose, signed: &mut f64| -> Result<mechanics::Equilibrium, ExperimentError> {
            let opts = BalanceOptions {
                gravity: false,
                planar: true,
                warm_start: Some(*signed),
            };
            let eq = mechanics::equilibrium_with(&pose.dipole(epm_moment), &state, params, &opts)?;
            *signed = if eq.bend_azimuth.cos() < 0.0 {
                -eq.theta
            } else {
                eq.theta
            };
            state.deflection = eq.theta;
            state.bend_azimuth = eq.bend_azimuth;
            Ok(eq)
        };
    for pose in &traj {
        let eq = follow(pose, &mut signed)?;
        out.buckled |= eq.buckled;
        out.saturated = eq.saturated;
        out.theta = eq.theta;
    }
    out.radius = if out.theta > 0.0 {
        length / out.theta
    } else {
        f64::INFINITY
    };
    if let Some(last) = traj.last() {
        for pose in cfg.overbend_poses(&base, last) {
            out.overbend_buckled |= follow(&pose, &mut signed)?.buckled;
        }
    }
    Ok(out)
}

/// Radius of the arc leaving `base` tangentially and passing through `tip`.
fn radius_through(base: &BasePose, tip: &Vector3<f64>) -> f64 {
    let c = tip - base.position;
    let lateral = (c - base.tangent * c.dot(&base.tangent)).norm();
    if lateral > 0.0 {
        c.norm_squared() / (2.0 * lateral)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BendRun {
    pub length: f64,
    pub pressure: f64,
    pub seed: u64,
    /// From the averaged localization samples at the final pose, m.
    pub radius: f64,
    /// `l / theta` of the simulated arc, m.
    pub model_radius: f64,
    pub buckled: bool,
    pub overbend_buckled: Option<bool>,
    pub trace: Vec<TraceRecord>,
}

/// Run one condition through the simulator.
pub fn run_bend_condition(
    scenario: &Scenario,
    length: f64,
    pressure: f64,
    cfg: &BendConfig,
    seed: u64,
) -> Result<BendRun, ExperimentError> {
    cfg.validate()?;
    let mut sc = scenario.clone();
    let base = sc.vine.origin;
    let traj = cfg.trajectory(&base, length)?;
    sc.vine.length = length;
    sc.vine.constrained_length = 0.0;
    sc.vine.pressure = pressure;
    sc.epm.pose = traj.first().copied();
    sc.seed = seed;
    sc.script.clear();
    let mut sim = Simulation::new(sc)?;
    let dt_move = length * cfg.angular_step / cfg.epm_speed;
    let pose_cmd = |pose: &EpmPose| SimCommand {
        epm: EpmCommand::Pose { pose: *pose },
        ..SimCommand::default()
    };
    for pose in &traj[1..] {
        let (next, _) = sim.sim.step(&sim.state, &pose_cmd(pose), dt_move)?;
        sim.state = next;
        sim.history
            .push(sim.state.trace_record(sim.sim.epm_moment()));
    }
    let mut sum = Vector3::zeros();
    for _ in 0..cfg.hold_ticks {
        sim.step(&SimCommand::default())?;
        sum += sim.state.tip_measured.position;
    }
    let buckled = sim.state.buckled;
    let theta = sim.state.deflection;
    let radius = radius_through(&base, &(sum / cfg.hold_ticks as f64));
    let overbend_buckled = match (&cfg.overbend, traj.last()) {
        (Some(_), Some(last)) => {
            for pose in cfg.overbend_poses(&base, last) {
                sim.step(&pose_cmd(&pose))?;
            }
            Some(sim.state.buckled)
        }
        _ => None,
    };
    Ok(BendRun {
        length,
        pressure,
        seed,
        radius,
        model_radius: if theta > 0.0 {
            length / theta
        } else {
            f64::INFINITY
        },
        buckled,
        overbend_buckled,
        trace: sim.history,
    })
}

/// One line of the bend table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendRow {
    pub length: f64,
    pub pressure: f64,
    pub mean_radius: f64,
    pub std_radius: f64,
    pub model_radius: f64,
    /// Buckled during the sweep in any repeat.
    pub buckled: bool,
    /// Buckled during the over-bend in every repeat.
    pub overbend_buckled: Option<bool>,
    pub repeats: usize,
}

/// Every condition of the grid, `cfg.repeats` times each with seeds
/// `seed, seed + 1, ...`. Rows are ordered by length then pressure.
pub fn run_bend_table(
    scenario: &Scenario,
    cfg: &BendConfig,
    seed: u64,
) -> Result<(Vec<BendRow>, Vec<BendRun>), ExperimentError> {
    cfg.validate()?;
    let mut lengths = cfg.lengths.clone();
    lengths.sort_by(f64::total_cmp);
    let mut pressures = cfg.pressures.clone();
    pressures.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &l in &lengths {
        for &p in &pressures {
            let mut radii = Vec::new();
            let mut buckled = false;
            let mut over = cfg.overbend.as_ref().map(|_| true);
            let mut model_radius = f64::NAN;
            for r in 0..cfg.repeats {
                let run = run_bend_condition(scenario, l, p, cfg, seed.wrapping_add(r as u64))?;
                radii.push(run.radius);
                buckled |= run.buckled;
                if let (Some(o), Some(b)) = (over.as_mut(), run.overbend_buckled) {
                    *o &= b;
                }
                model_radius = run.model_radius;
                runs.push(run);
            }
            let (mean_radius, std_radius) = mean_std(&radii);
            rows.push(BendRow {
                length: l,
                pressure: p,
                mean_radius,
                std_radius,
                model_radius,
                buckled,
                overbend_buckled: over,
                repeats: cfg.repeats,
            });
        }
    }
    Ok((rows, runs))
}
