//! Session recordings and headless replay.
//!
//! A recording holds protocol lines, each prefixed by the receive time in
//! seconds since the recorder started and a tab. Replay needs only the ack
//! events in it: each carries the applied command and the tick it took
//! effect at, so the simulation can be rerun without the network.

use std::io::{self, Write};
use std::time::Instant;

use magvine::scenario::Scenario;
use magvine::sim::{SimError, Simulation};
use magvine::trace::TraceRecord;
use thiserror::Error;

use crate::protocol::{CommandPayload, Event, Kind, Message, ProtocolError};
use crate::session::sim_command;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("recording line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub struct Recorder<W: Write> {
    out: W,
    start: Instant,
}

impl<W: Write> Recorder<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            start: Instant::now(),
        }
    }

    pub fn line(&mut self, line: &str) -> io::Result<()> {
        let ts = self.start.elapsed().as_secs_f64();
        writeln!(self.out, "{ts:.6}\t{}", line.trim_end_matches(['\r', '\n']))
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Split a recording into `(timestamp, message)` pairs. Blank lines are
/// skipped.
pub fn parse_recording(text: &str) -> Result<Vec<(f64, Message)>, ReplayError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ReplayError::Format {
            line: i + 1,
            message,
        };
        let (ts, body) = raw
            .split_once('\t')
            .ok_or_else(|| bad("missing timestamp column".into()))?;
        let ts: f64 = ts
            .trim()
            .parse()
            .map_err(|e| bad(format!("timestamp: {e}")))?;
        if !ts.is_finite() {
            return Err(bad("timestamp must be finite".into()));
        }
        let msg = Message::parse(body).map_err(|e| bad(e.to_string()))?;
        out.push((ts, msg));
    }
    Ok(out)
}

/// Applied commands in a recording, in tick order.
pub fn acked_commands(
    messages: &[(f64, Message)],
) -> Result<Vec<(u64, CommandPayload)>, ReplayError> {
    let mut out = Vec::new();
    for (_, m) in messages {
        if m.kind != Kind::Event || m.payload.get("event").and_then(|e| e.as_str()) != Some("ack") {
            continue;
        }
        let Event::Ack { command, .. } = m.decode::<Event>()? else {
            unreachable!("tagged as ack");
        };
        let tick = m
            .tick
            .ok_or_else(|| ProtocolError::Invalid("ack without a tick".into()))?;
        out.push((tick, command));
    }
    out.sort_by_key(|(t, _)| *t);
    Ok(out)
}

/// Rerun a recorded session up to `until` ticks, or to the last tick the
/// recording mentions.
pub fn replay(
    scenario: Scenario,
    recording: &str,
    until: Option<u64>,
) -> Result<Vec<TraceRecord>, ReplayError> {
    let messages = parse_recording(recording)?;
    let acks = acked_commands(&messages)?;
    let end = until.unwrap_or_else(|| {
        messages
            .iter()
            .filter_map(|(_, m)| m.tick)
            .max()
            .unwrap_or(0)
    });
    let mut sim = Simulation::new(scenario)?;
    let mut command = CommandPayload::default();
    let mut next = acks.iter().peekable();
    while sim.state.tick < end {
        let k = sim.state.tick + 1;
        while let Some((_, c)) = next.next_if(|(t, _)| *t <= k) {
            command.merge(c);
        }
        sim.step(&sim_command(&command))?;
    }
    Ok(sim.history)
}
