//! Scripted navigation of a maze to its target.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::actuation::EpmPose;
use crate::scenario::{EpmCommand, Scenario, ScriptEntry, SimCommand};
use crate::sim::{SimEvent, Simulation};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeConfig {
    /// Label of the target to reach; the first target when absent.
    pub target: Option<String>,
    /// Replaces the scenario's script when present.
    pub script: Option<Vec<ScriptEntry>>,
    /// Extra time after the last script entry, s.
    pub settle: f64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            target: None,
            script: None,
            settle: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeReport {
    pub completed: bool,
    /// Simulated time at completion, or at the end of the script, s.
    pub elapsed: f64,
    /// Times the tip came into contact with a wall.
    pub contacts: usize,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub buckled: bool,
    pub final_length: f64,
}

pub fn run_maze(
    scenario: &Scenario,
    cfg: &MazeConfig,
) -> Result<(MazeReport, Vec<TraceRecord>), ExperimentError> {
    if !(cfg.settle >= 0.0 && cfg.settle.is_finite()) {
        return Err(ExperimentError::Invalid(
            "settle time must be non-negative".into(),
        ));
    }
    let mut sc = scenario.clone();
    if let Some(script) = &cfg.script {
        sc.script = script.clone();
        sc.validate()?;
    }
    let target =
        match &cfg.target {
            Some(label) => sc
                .environment
                .targets
                .iter()
                .find(|t| &t.label == label)
                .ok_or_else(|| ExperimentError::Invalid(format!("no target labeled {label:?}")))?,
            None => sc.environment.targets.first().ok_or_else(|| {
                ExperimentError::Invalid("the maze scenario has no target".into())
            })?,
        }
        .clone();
    let goal = Vector3::from(target.position);
    let mut sim = Simulation::new(sc)?;
    let initial_distance = (sim.state.tip.position - goal).norm();
    let end = sim.sim.scenario().script_end() + cfg.settle;
    let mut contacts = 0;
    let mut completed = sim.state.targets_reached.contains(&target.label);
    while !completed && sim.state.t < end - 1e-9 {
        let cmd = sim
            .sim
            .scenario()
            .command_at(sim.state.t)
            .copied()
            .unwrap_or_default();
        for ev in sim.step(&cmd)? {
            match ev {
                SimEvent::ContactStarted => contacts += 1,
                SimEvent::TargetReached(l) if l == target.label => completed = true,
                _ => {}
            }
        }
    }
    let report = MazeReport {
        completed,
        elapsed: sim.state.t,
        contacts,
        initial_distance,
        final_distance: (sim.state.tip.position - goal).norm(),
        buckled: sim.state.buckled,
        final_length: sim.state.length,
    };
    Ok((report, sim.history))
}

/// Steering rule used to synthesize a reference script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutopilotConfig {
    /// m/s
    pub grow_rate: f64,
    /// EPM height above the tip, m.
    pub epm_height: f64,
    /// Distance along the lumen ahead of the tip to steer at, m.
    pub lookahead: f64,
    /// Time between recorded commands, s.
    pub interval: f64,
    /// Give up after this much simulated time, s.
    pub time_limit: f64,
}

impl Default for AutopilotConfig {
    fn default() -> Self {
        Self {
            grow_rate: 0.005,
            epm_height: 0.12,
            lookahead: 0.03,
            interval: 0.5,
            time_limit: 600.0,
        }
    }
}

/// Drive the maze with the EPM held over the measured tip, its moment set
/// against the heading toward a lumen point `lookahead` ahead, and return
/// the commands issued. The first target is the goal.
pub fn autopilot_script(
    scenario: &Scenario,
    cfg: &AutopilotConfig,
) -> Result<Vec<ScriptEntry>, ExperimentError> {
    if !(cfg.grow_rate > 0.0 && cfg.epm_height > 0.0 && cfg.lookahead > 0.0 && cfg.interval > 0.0) {
        return Err(ExperimentError::Invalid(
            "autopilot rates and distances must be positive".into(),
        ));
    }
    let mut sc = scenario.clone();
    sc.script.clear();
    let goal = sc
        .environment
        .targets
        .first()
        .ok_or_else(|| ExperimentError::Invalid("the maze scenario has no target".into()))?
        .label
        .clone();
    let (i, _) = sc
        .environment
        .lumen_at(&sc.vine.origin.position)
        .ok_or_else(|| ExperimentError::Invalid("the vine must start inside a lumen".into()))?;
    let path = sc.environment.lumens[i].path();
    let height = sc.environment.lumens[i].height;
    let mut sim = Simulation::new(sc)?;
    let every = ((cfg.interval / sim.sim.dt()).round() as u64).max(1);
    let mut script = Vec::new();
    let mut cmd = SimCommand::default();
    while !sim.state.targets_reached.contains(&goal) {
        if sim.state.t > cfg.time_limit {
            return Err(ExperimentError::Solver(format!(
                "autopilot did not reach {goal:?} within {} s",
                cfg.time_limit
            )));
        }
        if sim.state.tick % every == 0 {
            let tip = sim.state.tip_measured.position;
            let (s, _) = path.nearest_horizontal(&tip);
            let aim = path.point_at(s + cfg.lookahead);
            let heading = Vector3::new(aim.x - tip.x, aim.y - tip.y, 0.0);
            let heading = if heading.norm() > 1e-9 {
                heading.normalize()
            } else {
                path.tangent_at(s)
            };
            cmd = SimCommand {
                epm: EpmCommand::Pose {
                    pose: EpmPose::new(
                        Vector3::new(tip.x, tip.y, height + cfg.epm_height),
                        -heading,
                    ),
                },
                grow_rate: cfg.grow_rate,
                ..SimCommand::default()
            };
            script.push(ScriptEntry {
                t: sim.state.t,
                command: cmd,
            });
        }
        sim.step(&cmd)?;
    }
    script.push(ScriptEntry {
        t: sim.state.t,
        command: SimCommand::default(),
    });
    Ok(script)
}
