//! Wire messages. Every message is one UTF-8 JSON object on its own line:
//! `{"kind": ..., "tick": ..., "seq": ..., "payload": {...}}`.

use magvine::actuation::WorkspaceLimits;
use magvine::environment::Environment;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 7741;
/// Longest line a client may send, bytes.
pub const MAX_LINE: usize = 64 * 1024;
/// Pa
pub const MAX_PRESSURE: f64 = 100e3;
/// m/s, either direction
pub const MAX_GROW_RATE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Parse(String),
    #[error("invalid payload: {0}")]
    Invalid(String),
    #[error("clients may not send {0:?} messages")]
    UnexpectedKind(Kind),
    #[error("client {holder} holds control")]
    NotCommander { holder: u64 },
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Parse(_) => "parse",
            Self::Invalid(_) => "invalid",
            Self::UnexpectedKind(_) => "unexpected_kind",
            Self::NotCommander { .. } => "not_commander",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    ScenarioInfo,
    Command,
    Telemetry,
    Event,
    Error,
    Bye,
}

/// Envelope of one line. The payload is decoded per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub kind: Kind,
    /// Session tick. Servers always set it; clients may omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u64>,
    /// Client sequence number on commands and on the replies to them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default)]
    pub payload: Value,
}

impl Message {
    pub fn new<T: Serialize>(kind: Kind, tick: Option<u64>, seq: Option<u64>, payload: &T) -> Self {
        Self {
            kind,
            tick,
            seq,
            payload: serde_json::to_value(payload).expect("payload types serialize"),
        }
    }

    /// One line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.len() > MAX_LINE {
            return Err(ProtocolError::Parse(format!(
                "line exceeds {MAX_LINE} bytes"
            )));
        }
        serde_json::from_str(line).map_err(|e| ProtocolError::Parse(e.to_string()))
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| ProtocolError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub protocol: u32,
    /// Identifier the service assigned to this connection.
    pub client_id: u64,
    /// Simulation ticks per simulated second.
    pub tick_rate: f64,
    /// Telemetry messages per simulated second.
    pub telemetry_rate: f64,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

/// Static scene description for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInfo {
    pub name: Option<String>,
    pub environment: Environment,
    pub limits: WorkspaceLimits,
    /// m
    pub vine_diameter: f64,
    /// m
    pub tip_radius: f64,
    /// A m²
    pub epm_moment: f64,
    /// s
    pub dt: f64,
}

/// Client command. Absent fields keep their last value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandPayload {
    /// Joystick sample: EPM linear then angular velocity, each in `[-1, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epm_twist: Option<[f64; 6]>,
    /// Pa
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_setpoint: Option<f64>,
    /// m/s, negative retracts
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grow_rate: Option<f64>,
}

impl CommandPayload {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if let Some(t) = &self.epm_twist {
            if t.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(ProtocolError::Invalid(
                    "epm_twist components must lie in [-1, 1]".into(),
                ));
            }
        }
        if let Some(p) = self.pressure_setpoint {
            if !(0.0..=MAX_PRESSURE).contains(&p) {
                return Err(ProtocolError::Invalid(format!(
                    "pressure_setpoint must lie in [0, {MAX_PRESSURE}] Pa, got {p}"
                )));
            }
        }
        if let Some(v) = self.grow_rate {
            if !(-MAX_GROW_RATE..=MAX_GROW_RATE).contains(&v) {
                return Err(ProtocolError::Invalid(format!(
                    "grow_rate must lie in [-{MAX_GROW_RATE}, {MAX_GROW_RATE}] m/s, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Later fields win.
    pub fn merge(&mut self, newer: &CommandPayload) {
        if newer.epm_twist.is_some() {
            self.epm_twist = newer.epm_twist;
        }
        if newer.pressure_setpoint.is_some() {
            self.pressure_setpoint = newer.pressure_setpoint;
        }
        if newer.grow_rate.is_some() {
            self.grow_rate = newer.grow_rate;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseState {
    pub position: [f64; 3],
    /// Unit vector.
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    /// s
    pub t: f64,
    /// m
    pub length: f64,
    /// Pa
    pub pressure: f64,
    /// Free-segment deflection, rad.
    pub theta: f64,
    pub bend_azimuth: f64,
    /// True tip pose; the direction is the tip tangent.
    pub tip: PoseState,
    /// Localization estimate.
    pub tip_measured: PoseState,
    /// EPM pose; the direction is the moment direction.
    pub epm: Option<PoseState>,
    pub contact: bool,
    /// m; `None` with no bounding geometry.
    pub wall_gap: Option<f64>,
    pub buckled: bool,
    pub stalled: bool,
    pub blocked: bool,
    pub out_of_bounds: bool,
    /// N
    pub growing_force: f64,
    pub magnetic_force: [f64; 3],
    pub magnetic_torque: [f64; 3],
    pub targets_reached: Vec<String>,
    /// Body centerline from the origin to the tip.
    pub body: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    /// The command with the envelope's `seq`, received while the session
    /// stood at tick `received`, took effect at the envelope's tick.
    /// `command` is what was applied.
    Ack {
        received: u64,
        command: CommandPayload,
    },
    ContactStarted,
    ContactEnded,
    Buckled,
    Stalled,
    TargetReached {
        label: String,
    },
    OutOfBounds,
    /// The commander left; ticking stops until a client connects.
    Paused,
    Resumed,
    ControlGranted {
        client_id: u64,
    },
    ControlReleased {
        client_id: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

impl From<&ProtocolError> for ErrorPayload {
    fn from(e: &ProtocolError) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bye {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// What a client may send.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello,
    Command { seq: u64, payload: CommandPayload },
    Bye,
}

/// Parse and validate one client line.
pub fn parse_client_line(line: &str) -> Result<ClientMessage, ProtocolError> {
    let msg = Message::parse(line)?;
    match msg.kind {
        Kind::Hello => Ok(ClientMessage::Hello),
        Kind::Bye => Ok(ClientMessage::Bye),
        Kind::Command => {
            let seq = msg
                .seq
                .ok_or_else(|| ProtocolError::Invalid("commands need a seq number".into()))?;
            let payload: CommandPayload = msg.decode()?;
            payload.validate()?;
            Ok(ClientMessage::Command { seq, payload })
        }
        k => Err(ProtocolError::UnexpectedKind(k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_parses() {
        let m = parse_client_line(r#"{"kind":"command","seq":3,"payload":{"grow_rate":0.003}}"#)
            .unwrap();
        assert_eq!(
            m,
            ClientMessage::Command {
                seq: 3,
                payload: CommandPayload {
                    grow_rate: Some(0.003),
                    ..CommandPayload::default()
                }
            }
        );
    }

    #[test]
    fn twist_out_of_range_is_invalid() {
        let e = parse_client_line(
            r#"{"kind":"command","seq":1,"payload":{"epm_twist":[1.5,0,0,0,0,0]}}"#,
        )
        .unwrap_err();
        assert_eq!(e.code(), "invalid");
    }

    #[test]
    fn server_kinds_are_refused_from_clients() {
        let e = parse_client_line(r#"{"kind":"telemetry","payload":{}}"#).unwrap_err();
        assert_eq!(e, ProtocolError::UnexpectedKind(Kind::Telemetry));
    }

    #[test]
    fn unknown_payload_fields_are_refused() {
        let e =
            parse_client_line(r#"{"kind":"command","seq":1,"payload":{"grow":1}}"#).unwrap_err();
        assert_eq!(e.code(), "invalid");
    }

    #[test]
    fn merge_keeps_absent_fields() {
        let mut a = CommandPayload {
            grow_rate: Some(0.01),
            pressure_setpoint: Some(1e3),
            ..CommandPayload::default()
        };
        a.merge(&CommandPayload {
            pressure_setpoint: Some(2e3),
            ..CommandPayload::default()
        });
        assert_eq!(a.grow_rate, Some(0.01));
        assert_eq!(a.pressure_setpoint, Some(2e3));
    }

    #[test]
    fn event_tag_is_flat() {
        let line = Message::new(
            Kind::Event,
            Some(4),
            None,
            &Event::TargetReached {
                label: "exit".into(),
            },
        )
        .to_line();
        assert_eq!(
            line,
            r#"{"kind":"event","tick":4,"payload":{"event":"target_reached","label":"exit"}}"#
        );
    }
}
