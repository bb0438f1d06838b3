//! The authoritative simulation behind the service. No I/O and no clocks:
//! the server feeds it connections, lines and ticks, and delivers what it
//! returns.

use std::collections::{BTreeSet, VecDeque};

use magvine::scenario::{EpmCommand, Scenario, SimCommand};
use magvine::sim::{SimError, SimEvent, SimState, Simulation, TipPose};
use magvine::trace::TraceRecord;

use crate::protocol::{
    parse_client_line, ClientMessage, CommandPayload, ErrorPayload, Event, Hello, Kind, Message,
    PoseState, ProtocolError, ScenarioInfo, Telemetry, PROTOCOL_VERSION,
};

pub type ClientId = u64;

/// Simulated seconds between telemetry messages.
pub const TELEMETRY_PERIOD: f64 = 0.05;
/// Spacing of the body centerline in telemetry, m.
pub const BODY_SPACING: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    To(ClientId, Message),
    All(Message),
}

/// Effect of one received line.
#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Replies(Vec<Outgoing>),
    /// The client said goodbye and should be disconnected.
    Bye,
}

struct Pending {
    client: ClientId,
    seq: u64,
    received: u64,
    command: CommandPayload,
}

pub struct Session {
    sim: Simulation,
    name: Option<String>,
    speed: f64,
    command: CommandPayload,
    pending: VecDeque<Pending>,
    clients: BTreeSet<ClientId>,
    commander: Option<ClientId>,
    paused: bool,
    telemetry_every: u64,
}

fn pose_state(p: &TipPose) -> PoseState {
    PoseState {
        position: p.position.into(),
        direction: p.tangent.into(),
    }
}

fn event_for(e: &SimEvent) -> Event {
    match e {
        SimEvent::ContactStarted => Event::ContactStarted,
        SimEvent::ContactEnded => Event::ContactEnded,
        SimEvent::Buckled => Event::Buckled,
        SimEvent::Stalled => Event::Stalled,
        SimEvent::TargetReached(l) => Event::TargetReached { label: l.clone() },
        SimEvent::OutOfBounds => Event::OutOfBounds,
    }
}

/// Simulator command for a merged client command. A missing or zero twist
/// holds the EPM where it is.
pub fn sim_command(c: &CommandPayload) -> SimCommand {
    SimCommand {
        epm: match c.epm_twist {
            Some(t) if t.iter().any(|v| *v != 0.0) => EpmCommand::Twist { twist: t },
            _ => EpmCommand::Hold,
        },
        pressure_setpoint: c.pressure_setpoint,
        grow_rate: c.grow_rate.unwrap_or(0.0),
        tether_tension: None,
    }
}

impl Session {
    /// `speed` is only reported to clients; pacing is the server's job.
    pub fn new(scenario: Scenario, name: Option<String>, speed: f64) -> Result<Self, SimError> {
        let sim = Simulation::new(scenario)?;
        let dt = sim.sim.dt();
        Ok(Self {
            sim,
            name,
            speed,
            command: CommandPayload::default(),
            pending: VecDeque::new(),
            clients: BTreeSet::new(),
            commander: None,
            paused: false,
            telemetry_every: ((TELEMETRY_PERIOD / dt).round() as u64).max(1),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.sim.state
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.sim.history
    }

    pub fn tick(&self) -> u64 {
        self.sim.state.tick
    }

    pub fn dt(&self) -> f64 {
        self.sim.sim.dt()
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn commander(&self) -> Option<ClientId> {
        self.commander
    }

    pub fn clients(&self) -> usize {
        self.clients.len()
    }

    /// Ticks advance only with someone connected and no pause in force.
    pub fn running(&self) -> bool {
        !self.paused && !self.clients.is_empty()
    }

    fn at_tick(&self, kind: Kind, seq: Option<u64>, payload: &impl serde::Serialize) -> Message {
        Message::new(kind, Some(self.tick()), seq, payload)
    }

    pub fn scenario_info(&self) -> ScenarioInfo {
        let s = self.sim.sim.scenario();
        ScenarioInfo {
            name: self.name.clone(),
            environment: s.environment.clone(),
            limits: s.limits,
            vine_diameter: s.vine.params.diameter,
            tip_radius: s.vine.params.tip_radius(),
            epm_moment: self.sim.sim.epm_moment(),
            dt: s.dt,
        }
    }

    pub fn telemetry(&self) -> Telemetry {
        let s = &self.sim.state;
        Telemetry {
            t: s.t,
            length: s.length,
            pressure: s.pressure,
            theta: s.deflection,
            bend_azimuth: s.bend_azimuth,
            tip: pose_state(&s.tip),
            tip_measured: pose_state(&s.tip_measured),
            epm: s.epm.map(|e| PoseState {
                position: e.position.into(),
                direction: e.moment_dir.into(),
            }),
            contact: s.contact,
            wall_gap: s.wall_gap.is_finite().then_some(s.wall_gap),
            buckled: s.buckled,
            stalled: s.stalled,
            blocked: s.blocked,
            out_of_bounds: s.out_of_bounds,
            growing_force: s.growing_force,
            magnetic_force: s.magnetic.force.into(),
            magnetic_torque: s.magnetic.torque.into(),
            targets_reached: s.targets_reached.clone(),
            body: self
                .sim
                .sim
                .body_points(s, BODY_SPACING)
                .into_iter()
                .map(Into::into)
                .collect(),
        }
    }

    pub fn connect(&mut self, id: ClientId) -> Vec<Outgoing> {
        self.clients.insert(id);
        let dt = self.dt();
        let mut out = vec![
            Outgoing::To(
                id,
                self.at_tick(
                    Kind::Hello,
                    None,
                    &Hello {
                        protocol: PROTOCOL_VERSION,
                        client_id: id,
                        tick_rate: 1.0 / dt,
                        telemetry_rate: 1.0 / (dt * self.telemetry_every as f64),
                        speed: self.speed,
                    },
                ),
            ),
            Outgoing::To(
                id,
                self.at_tick(Kind::ScenarioInfo, None, &self.scenario_info()),
            ),
        ];
        if self.paused {
            self.paused = false;
            out.push(Outgoing::All(self.at_tick(
                Kind::Event,
                None,
                &Event::Resumed,
            )));
        }
        out
    }

    pub fn disconnect(&mut self, id: ClientId) -> Vec<Outgoing> {
        self.clients.remove(&id);
        self.pending.retain(|p| p.client != id);
        let mut out = Vec::new();
        if self.commander == Some(id) {
            self.commander = None;
            self.paused = true;
            out.push(Outgoing::All(self.at_tick(
                Kind::Event,
                None,
                &Event::ControlReleased { client_id: id },
            )));
            out.push(Outgoing::All(self.at_tick(
                Kind::Event,
                None,
                &Event::Paused,
            )));
        }
        out
    }

    fn error_to(&self, id: ClientId, seq: Option<u64>, e: &ProtocolError) -> Outgoing {
        Outgoing::To(id, self.at_tick(Kind::Error, seq, &ErrorPayload::from(e)))
    }

    /// Handle one line from a client. Accepted commands wait for the next
    /// tick; everything else is answered at once.
    pub fn receive(&mut self, id: ClientId, line: &str) -> Received {
        let msg = match parse_client_line(line) {
            Ok(m) => m,
            Err(e) => {
                let seq = Message::parse(line).ok().and_then(|m| m.seq);
                return Received::Replies(vec![self.error_to(id, seq, &e)]);
            }
        };
        match msg {
            ClientMessage::Hello => Received::Replies(Vec::new()),
            ClientMessage::Bye => Received::Bye,
            ClientMessage::Command { seq, payload } => {
                let mut out = Vec::new();
                match self.commander {
                    Some(holder) if holder != id => {
                        return Received::Replies(vec![self.error_to(
                            id,
                            Some(seq),
                            &ProtocolError::NotCommander { holder },
                        )]);
                    }
                    Some(_) => {}
                    None => {
                        self.commander = Some(id);
                        out.push(Outgoing::All(self.at_tick(
                            Kind::Event,
                            None,
                            &Event::ControlGranted { client_id: id },
                        )));
                    }
                }
                self.pending.push_back(Pending {
                    client: id,
                    seq,
                    received: self.tick(),
                    command: payload,
                });
                Received::Replies(out)
            }
        }
    }

    /// Advance one tick if running: apply queued commands, step, then ack
    /// each command with the tick it took effect at.
    pub fn step(&mut self) -> Result<Vec<Outgoing>, SimError> {
        if !self.running() {
            return Ok(Vec::new());
        }
        let applied: Vec<_> = self.pending.drain(..).collect();
        for p in &applied {
            self.command.merge(&p.command);
        }
        let events = self.sim.step(&sim_command(&self.command))?;
        let mut out = Vec::with_capacity(applied.len() + events.len() + 1);
        for p in applied {
            let ack = Event::Ack {
                received: p.received,
                command: p.command,
            };
            out.push(Outgoing::To(
                p.client,
                self.at_tick(Kind::Event, Some(p.seq), &ack),
            ));
        }
        for e in &events {
            out.push(Outgoing::All(self.at_tick(
                Kind::Event,
                None,
                &event_for(e),
            )));
        }
        if self.tick().is_multiple_of(self.telemetry_every) {
            out.push(Outgoing::All(self.at_tick(
                Kind::Telemetry,
                None,
                &self.telemetry(),
            )));
        }
        Ok(out)
    }
}
