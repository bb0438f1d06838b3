//! Scenario documents: environment, vine, EPM, limits, noise and script.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{ActuationError, EpmPose, WorkspaceLimits};
use crate::environment::{Environment, EnvironmentError};
use crate::magnetics::MagnetSpec;
use crate::mechanics::{BasePose, MechanicsError, VineParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<EnvironmentError> for ScenarioError {
    fn from(e: EnvironmentError) -> Self {
        ScenarioError::Validation(e.to_string())
    }
}

impl From<MechanicsError> for ScenarioError {
    fn from(e: MechanicsError) -> Self {
        ScenarioError::Validation(e.to_string())
    }
}

impl From<ActuationError> for ScenarioError {
    fn from(e: ActuationError) -> Self {
        ScenarioError::Validation(e.to_string())
    }
}

/// Tether tension and tip engulfment during retraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TetherParams {
    /// Tension per unit retraction speed, N s/m.
    #[serde(default = "default_tension_rate")]
    pub tension_per_speed: f64,
    /// Speed-independent friction tension, N.
    #[serde(default = "default_tension_offset")]
    pub tension_offset: f64,
    /// Engulfment events per second while inflated with the EPM present.
    #[serde(default = "default_stall_rate")]
    pub stall_rate: f64,
}

fn default_tension_rate() -> f64 {
    1000.0
}
fn default_tension_offset() -> f64 {
    82.0
}
fn default_stall_rate() -> f64 {
    0.05
}

impl Default for TetherParams {
    fn default() -> Self {
        Self {
            tension_per_speed: default_tension_rate(),
            tension_offset: default_tension_offset(),
            stall_rate: default_stall_rate(),
        }
    }
}

impl TetherParams {
    /// Tension while retracting at `speed` (m/s, magnitude).
    pub fn tension(&self, speed: f64) -> f64 {
        self.tension_per_speed * speed.abs() + self.tension_offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VineSetup {
    #[serde(default)]
    pub params: VineParams,
    /// Where the body leaves the base, and its initial direction.
    pub origin: BasePose,
    /// Initial total length, m.
    pub length: f64,
    /// Length held straight by a proximal tube in free space, m.
    #[serde(default)]
    pub constrained_length: f64,
    /// Length of the free segment once the body runs along a lumen, m.
    #[serde(default = "default_free_length")]
    pub free_length: f64,
    /// Pa
    #[serde(default)]
    pub pressure: f64,
    #[serde(default)]
    pub tether: TetherParams,
}

fn default_free_length() -> f64 {
    0.06
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpmSetup {
    #[serde(default = "MagnetSpec::default_epm")]
    pub spec: MagnetSpec,
    /// Effective moment multiplier fitted by calibration.
    #[serde(default = "default_scale")]
    pub moment_scale: f64,
    /// Initial pose; absent means no EPM in the workspace.
    #[serde(default)]
    pub pose: Option<EpmPose>,
}

fn default_scale() -> f64 {
    1.0
}

impl Default for EpmSetup {
    fn default() -> Self {
        Self {
            spec: MagnetSpec::default_epm(),
            moment_scale: 1.0,
            pose: None,
        }
    }
}

/// Gaussian localization noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationNoise {
    /// m, per axis
    pub sigma_pos: f64,
    /// rad, per rotation-vector component
    pub sigma_ang: f64,
}

impl Default for LocalizationNoise {
    /// Two-sigma bounds of 2 mm and 3 degrees.
    fn default() -> Self {
        Self {
            sigma_pos: 1.0e-3,
            sigma_ang: 1.5f64.to_radians(),
        }
    }
}

/// What to do with the EPM on a tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EpmCommand {
    /// Keep the current pose.
    #[default]
    Hold,
    /// Take the EPM out of the workspace.
    Remove,
    Pose {
        pose: EpmPose,
    },
    /// Joystick sample, normalized to `[-1, 1]`.
    Twist {
        twist: [f64; 6],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCommand {
    #[serde(default)]
    pub epm: EpmCommand,
    /// Pa; absent keeps the current pressure.
    #[serde(default)]
    pub pressure_setpoint: Option<f64>,
    /// m/s, negative retracts.
    #[serde(default)]
    pub grow_rate: f64,
    /// N; absent derives it from the retraction speed.
    #[serde(default)]
    pub tether_tension: Option<f64>,
}

impl SimCommand {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if let Some(p) = self.pressure_setpoint {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(ScenarioError::Validation(format!(
                    "pressure setpoint must be non-negative, got {p}"
                )));
            }
        }
        if !self.grow_rate.is_finite() {
            return Err(ScenarioError::Validation("grow rate must be finite".into()));
        }
        if let Some(t) = self.tether_tension {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ScenarioError::Validation(format!(
                    "tether tension must be non-negative, got {t}"
                )));
            }
        }
        match &self.epm {
            EpmCommand::Pose { pose } => pose.validate()?,
            EpmCommand::Twist { twist } if twist.iter().any(|v| !(-1.0..=1.0).contains(v)) => {
                return Err(ScenarioError::Validation(
                    "EPM twist components must lie in [-1, 1]".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Command that takes effect at time `t` and holds until the next entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub t: f64,
    pub command: SimCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub environment: Environment,
    pub vine: VineSetup,
    #[serde(default)]
    pub epm: EpmSetup,
    #[serde(default)]
    pub limits: WorkspaceLimits,
    #[serde(default)]
    pub noise: LocalizationNoise,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    0.01
}

impl Scenario {
    /// Parse and validate a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario =
            serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Validation(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let v = &self.vine;
        v.params.validate()?;
        self.environment.validate(v.params.diameter)?;
        self.limits.validate()?;
        self.epm
            .spec
            .validate()
            .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        if !(self.epm.moment_scale > 0.0 && self.epm.moment_scale.is_finite()) {
            return bad(format!(
                "EPM moment scale must be positive, got {}",
                self.epm.moment_scale
            ));
        }
        if let Some(p) = &self.epm.pose {
            p.validate()?;
        }
        if (v.origin.tangent.norm() - 1.0).abs() > 1e-9
            || !v.origin.position.iter().all(|c| c.is_finite())
        {
            return bad("vine origin tangent must be a unit vector".into());
        }
        for (name, x) in [
            ("length", v.length),
            ("constrained_length", v.constrained_length),
            ("pressure", v.pressure),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!("vine.{name} must be non-negative, got {x}"));
            }
        }
        if !(v.free_length > 0.0 && v.free_length.is_finite()) {
            return bad(format!(
                "vine.free_length must be positive, got {}",
                v.free_length
            ));
        }
        let t = &v.tether;
        if !(t.tension_per_speed >= 0.0 && t.tension_offset >= 0.0 && t.stall_rate >= 0.0) {
            return bad("tether parameters must be non-negative".into());
        }
        if !(self.noise.sigma_pos >= 0.0 && self.noise.sigma_ang >= 0.0) {
            return bad("noise sigmas must be non-negative".into());
        }
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.script.iter().enumerate() {
            if !(e.t >= last && e.t.is_finite()) {
                return bad(format!("script entry {i} is out of time order"));
            }
            last = e.t;
            e.command.validate()?;
        }
        if !self.environment.lumens.is_empty()
            && self.environment.lumen_at(&v.origin.position).is_none()
        {
            return bad("vine origin lies outside every lumen".into());
        }
        Ok(())
    }

    /// Magnitude of the EPM dipole moment, A m^2.
    pub fn epm_moment(&self) -> f64 {
        self.epm.spec.moment_magnitude() * self.epm.moment_scale
    }

    /// Command in force at time `t`.
    pub fn command_at(&self, t: f64) -> Option<&SimCommand> {
        let idx = self.script.partition_point(|e| e.t <= t + 1e-12);
        idx.checked_sub(1).map(|i| &self.script[i].command)
    }

    pub fn script_end(&self) -> f64 {
        self.script.last().map_or(0.0, |e| e.t)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

/// Straight vine in empty space under the constraining plate.
pub fn free_space(length: f64, pressure: f64) -> Scenario {
    Scenario {
        environment: Environment {
            constraining_plate: true,
            ..Environment::default()
        },
        vine: VineSetup {
            params: VineParams::default(),
            origin: BasePose::new(Vector3::zeros(), Vector3::x()),
            length,
            constrained_length: 0.0,
            free_length: default_free_length(),
            pressure,
            tether: TetherParams::default(),
        },
        epm: EpmSetup::default(),
        limits: WorkspaceLimits::default(),
        noise: LocalizationNoise::default(),
        script: Vec::new(),
        seed: 0,
        dt: default_dt(),
    }
}
