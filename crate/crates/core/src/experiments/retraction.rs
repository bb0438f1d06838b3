//! Retraction of a fully grown vine with and without inflation and with and
//! without the EPM held above the tip.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::actuation::EpmPose;
use crate::scenario::{EpmCommand, Scenario, SimCommand};
use crate::sim::Simulation;
use crate::trace::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetractionCase {
    /// Deflated, no EPM.
    A,
    /// Inflated, no EPM.
    B,
    /// Deflated, EPM above the tip.
    C,
    /// Inflated, EPM above the tip.
    D,
}

impl RetractionCase {
    pub const ALL: [RetractionCase; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn inflated(self) -> bool {
        matches!(self, Self::B | Self::D)
    }

    pub fn with_epm(self) -> bool {
        matches!(self, Self::C | Self::D)
    }
}

impl fmt::Display for RetractionCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetractionOutcome {
    Buckled,
    Success,
    SuccessWithStalls,
}

impl fmt::Display for RetractionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Buckled => "buckled",
            Self::Success => "success",
            Self::SuccessWithStalls => "success-with-stalls",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetractionConfig {
    /// Grown length before retraction, m.
    pub length: f64,
    /// Pa
    pub inflated_pressure: f64,
    /// EPM height above the tip, m.
    pub epm_separation: f64,
    /// m/s
    pub retract_speed: f64,
    /// Retraction ends at this length, m.
    pub final_length: f64,
}

impl Default for RetractionConfig {
    fn default() -> Self {
        Self {
            length: 0.32,
            inflated_pressure: 3e3,
            epm_separation: 0.06,
            retract_speed: 0.002,
            final_length: 0.0,
        }
    }
}

impl RetractionConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.length > 0.0 && self.final_length >= 0.0 && self.final_length < self.length) {
            return Err(ExperimentError::Invalid(
                "retraction needs 0 <= final length < length".into(),
            ));
        }
        if !(self.inflated_pressure >= 0.0 && self.epm_separation > 0.0 && self.retract_speed > 0.0)
        {
            return Err(ExperimentError::Invalid(
                "pressure, separation and speed must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetractionRow {
    pub case: RetractionCase,
    pub seed: u64,
    pub pressure: f64,
    /// m; NaN without EPM
    pub epm_separation: f64,
    pub outcome: RetractionOutcome,
    pub stalls: u64,
    /// Length retracted before the run ended, m.
    pub retracted: f64,
    /// Simulated duration, s.
    pub duration: f64,
}

fn epm_above(tip: &Vector3<f64>, tangent: &Vector3<f64>, separation: f64) -> EpmPose {
    // Antiparallel to the tip: directly above, the field then points along it.
    let m = Vector3::new(-tangent.x, -tangent.y, 0.0);
    let m = if m.norm() > 1e-9 { m } else { -Vector3::x() };
    EpmPose::new(tip + Vector3::z() * separation, m)
}

pub fn run_retraction_case(
    scenario: &Scenario,
    case: RetractionCase,
    cfg: &RetractionConfig,
    seed: u64,
) -> Result<(RetractionRow, Vec<TraceRecord>), ExperimentError> {
    cfg.validate()?;
    let mut sc = scenario.clone();
    let pressure = if case.inflated() {
        cfg.inflated_pressure
    } else {
        0.0
    };
    sc.vine.length = cfg.length;
    sc.vine.constrained_length = sc.vine.constrained_length.max(cfg.length);
    sc.vine.pressure = pressure;
    sc.seed = seed;
    sc.script.clear();
    sc.epm.pose = case.with_epm().then(|| {
        let o = &sc.vine.origin;
        epm_above(
            &(o.position + o.tangent * cfg.length),
            &o.tangent,
            cfg.epm_separation,
        )
    });
    let mut sim = Simulation::new(sc)?;
    let dt = sim.sim.dt();
    let nominal = ((cfg.length - cfg.final_length) / (cfg.retract_speed * dt)).ceil() as usize;
    let budget = 4 * nominal + 1000;
    let mut ticks = 0;
    while sim.state.length > cfg.final_length + 1e-12 && !sim.state.buckled {
        if ticks >= budget {
            return Err(ExperimentError::Solver(format!(
                "retraction {case} did not finish within {budget} ticks"
            )));
        }
        let epm = if case.with_epm() {
            let tip = sim.state.tip;
            EpmCommand::Pose {
                pose: epm_above(&tip.position, &tip.tangent, cfg.epm_separation),
            }
        } else {
            EpmCommand::Hold
        };
        let rate = -cfg
            .retract_speed
            .min((sim.state.length - cfg.final_length) / dt);
        sim.step(&SimCommand {
            epm,
            grow_rate: rate,
            ..SimCommand::default()
        })?;
        ticks += 1;
    }
    let outcome = if sim.state.buckled {
        RetractionOutcome::Buckled
    } else if sim.state.stall_count > 0 {
        RetractionOutcome::SuccessWithStalls
    } else {
        RetractionOutcome::Success
    };
    let row = RetractionRow {
        case,
        seed,
        pressure,
        epm_separation: if case.with_epm() {
            cfg.epm_separation
        } else {
            f64::NAN
        },
        outcome,
        stalls: sim.state.stall_count,
        retracted: cfg.length - sim.state.length,
        duration: sim.state.t,
    };
    Ok((row, sim.history))
}

/// All four cases for every seed, ordered by case then seed.
pub fn run_retraction_matrix(
    scenario: &Scenario,
    cfg: &RetractionConfig,
    seeds: &[u64],
) -> Result<Vec<(RetractionRow, Vec<TraceRecord>)>, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::Invalid(
            "at least one seed is required".into(),
        ));
    }
    let mut out = Vec::new();
    for case in RetractionCase::ALL {
        for &seed in seeds {
            out.push(run_retraction_case(scenario, case, cfg, seed)?);
        }
    }
    Ok(out)
}
