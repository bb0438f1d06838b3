//! Growth through a tube with the tip held off the wall by the EPM.
//!
//! The EPM path is planned ahead of the run: for a series of vine lengths
//! the desired configuration lifts the tip from the tube floor onto the
//! tube axis, and the solver finds the EPM pose at fixed height that holds
//! it there. During the run the EPM follows that path as the vine grows.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{mean_std, ExperimentError};
use crate::actuation::{suspension_setpoint, EpmPose};
use crate::mechanics::VineState;
use crate::scenario::{EpmCommand, Scenario, SimCommand};
use crate::sim::{Simulation, Simulator};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuspensionConfig {
    /// Growth and EPM speeds, m/s.
    pub speeds: Vec<f64>,
    /// m
    pub epm_height: f64,
    pub repeats: usize,
    /// Vine length between planned EPM poses, m.
    pub plan_spacing: f64,
    /// Length grown during the run, m.
    pub travel: f64,
}

impl Default for SuspensionConfig {
    fn default() -> Self {
        Self {
            speeds: vec![0.003, 0.004],
            epm_height: 0.16,
            repeats: 5,
            plan_spacing: 0.002,
            travel: 0.40,
        }
    }
}

impl SuspensionConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.speeds.is_empty() || self.speeds.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(ExperimentError::Invalid(
                "speeds must be non-negative".into(),
            ));
        }
        if !(self.epm_height > 0.0 && self.plan_spacing > 0.0 && self.travel >= 0.0)
            || self.repeats == 0
        {
            return Err(ExperimentError::Invalid(
                "height and plan spacing must be positive and repeats at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Planned EPM poses against total vine length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionPlan {
    pub lengths: Vec<f64>,
    pub poses: Vec<EpmPose>,
    /// Solver residual per pose.
    pub residuals: Vec<f64>,
}

impl SuspensionPlan {
    /// Pose at `length`, interpolated linearly and held past either end.
    pub fn pose_at(&self, length: f64) -> EpmPose {
        let i = self.lengths.partition_point(|l| *l <= length);
        if i == 0 {
            return self.poses[0];
        }
        if i == self.lengths.len() {
            return self.poses[i - 1];
        }
        let (l0, l1) = (self.lengths[i - 1], self.lengths[i]);
        let u = (length - l0) / (l1 - l0);
        let (a, b) = (&self.poses[i - 1], &self.poses[i]);
        EpmPose::new(
            a.position.lerp(&b.position, u),
            a.moment_dir.lerp(&b.moment_dir, u),
        )
    }
}

/// Free segment that leaves the laid body on the tube floor and points its
/// tip at the tube axis a little ahead.
pub fn desired_state(
    sim: &Simulator,
    length: f64,
    pressure: f64,
) -> Result<VineState, ExperimentError> {
    let env = sim.environment();
    let base = sim.free_base(length);
    let laid = sim.laid_length(length);
    let free = length - laid;
    let (i, _) = env.lumen_at(&base.position).ok_or_else(|| {
        ExperimentError::Invalid("suspension needs the vine inside a lumen".into())
    })?;
    let lumen = &env.lumens[i];
    let centerline = lumen.path();
    let (s, _) = centerline.nearest_horizontal(&base.position);
    let aim = centerline.point_at(s + free);
    let chord = Vector3::new(aim.x, aim.y, lumen.height) - base.position;
    let (t, n, b) = base.frame();
    let along = chord.dot(&t);
    let across = chord - t * along;
    let (theta, azimuth) = if across.norm() < 1e-12 {
        (0.0, 0.0)
    } else {
        // A chord at angle a to the tangent belongs to an arc bent by 2a.
        (
            2.0 * across.norm().atan2(along),
            across.dot(&b).atan2(across.dot(&n)),
        )
    };
    Ok(VineState {
        base,
        constrained_length: laid,
        unconstrained_length: free,
        pressure,
        deflection: theta,
        bend_azimuth: azimuth,
        tip_roll: 0.0,
    })
}

/// Plan the EPM path from `start` to `start + travel` of vine length.
pub fn plan_suspension(
    scenario: &Scenario,
    cfg: &SuspensionConfig,
    start: f64,
) -> Result<SuspensionPlan, ExperimentError> {
    cfg.validate()?;
    let sim = Simulator::new(scenario.clone())?;
    let n = (cfg.travel / cfg.plan_spacing).ceil().max(1.0) as usize;
    let mut plan = SuspensionPlan {
        lengths: Vec::with_capacity(n + 1),
        poses: Vec::with_capacity(n + 1),
        residuals: Vec::with_capacity(n + 1),
    };
    let mut guess: Option<EpmPose> = None;
    for k in 0..=n {
        let length = start + cfg.travel * k as f64 / n as f64;
        let state = desired_state(&sim, length, scenario.vine.pressure)?;
        let (pose, report) = suspension_setpoint(
            &state,
            sim.params(),
            cfg.epm_height,
            sim.epm_moment(),
            &scenario.limits,
            guess.as_ref(),
        )?;
        guess = Some(pose);
        plan.lengths.push(length);
        plan.poses.push(pose);
        plan.residuals.push(report.residual);
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionRun {
    pub speed: f64,
    pub seed: u64,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub min_gap: f64,
    /// Ticks with the tip touching the wall.
    pub contact_ticks: usize,
    pub ticks: usize,
    /// Mean absolute EPM minus IPM offsets, m, and heading difference, rad.
    pub deviation_x: f64,
    pub deviation_y: f64,
    pub deviation_yaw: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}

/// Grow along the planned path at each speed, `cfg.repeats` times with
/// seeds `seed, seed + 1, ...`.
pub fn run_suspension(
    scenario: &Scenario,
    cfg: &SuspensionConfig,
    seed: u64,
) -> Result<(SuspensionPlan, Vec<SuspensionRun>), ExperimentError> {
    cfg.validate()?;
    let start = scenario.vine.length;
    let plan = plan_suspension(scenario, cfg, start)?;
    let mut runs = Vec::new();
    for &speed in &cfg.speeds {
        for r in 0..cfg.repeats {
            let mut sc = scenario.clone();
            sc.seed = seed.wrapping_add(r as u64);
            sc.script.clear();
            sc.epm.pose = Some(plan.pose_at(start));
            let mut sim = Simulation::new(sc)?;
            let dt = sim.sim.dt();
            let ticks = if speed > 0.0 {
                (cfg.travel / (speed * dt)).round() as usize
            } else {
                // A static hold as long as the slowest nonzero run would last.
                let slowest = cfg
                    .speeds
                    .iter()
                    .copied()
                    .filter(|v| *v > 0.0)
                    .fold(f64::INFINITY, f64::min);
                if slowest.is_finite() {
                    (cfg.travel / (slowest * dt)).round() as usize
                } else {
                    1000
                }
            };
            let mut gaps = Vec::with_capacity(ticks);
            let (mut dx, mut dy, mut dyaw) = (0.0, 0.0, 0.0);
            let mut contact_ticks = 0;
            for k in 1..=ticks {
                let planned = start + speed * dt * k as f64;
                sim.step(&SimCommand {
                    epm: EpmCommand::Pose {
                        pose: plan.pose_at(planned),
                    },
                    grow_rate: speed,
                    ..SimCommand::default()
                })?;
                let s = &sim.state;
                gaps.push(s.wall_gap);
                contact_ticks += usize::from(s.contact);
                if let Some(e) = &s.epm {
                    let tip = s.tip_measured;
                    dx += (e.position.x - tip.position.x).abs();
                    dy += (e.position.y - tip.position.y).abs();
                    let heading = |v: &Vector3<f64>| v.y.atan2(v.x);
                    // The EPM moment runs antiparallel to a suspended tip.
                    dyaw += wrap(heading(&(-e.moment_dir)) - heading(&tip.tangent)).abs();
                }
            }
            let n = ticks.max(1) as f64;
            let (mean_gap, std_gap) = mean_std(&gaps);
            runs.push(SuspensionRun {
                speed,
                seed: seed.wrapping_add(r as u64),
                mean_gap,
                std_gap,
                min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
                contact_ticks,
                ticks,
                deviation_x: dx / n,
                deviation_y: dy / n,
                deviation_yaw: dyaw / n,
                trace: sim.history,
            });
        }
    }
    Ok((plan, runs))
}
