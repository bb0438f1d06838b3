use std::net::SocketAddr;
use std::time::{Duration, Instant};

use magvine::trace::trace_to_string;
use magvine_teleop::protocol::{
    ErrorPayload, Event, Kind, Message, ScenarioInfo, Telemetry, MAX_LINE,
};
use magvine_teleop::{replay, start, ServeConfig, ServeError, ServerHandle};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::time::timeout;

mod common;
use common::{fixture, Pilot};

const WAIT: Duration = Duration::from_secs(10);

async fn serve(name: &str, speed: f64) -> ServerHandle {
    serve_with(name, speed, None).await
}

async fn serve_with(name: &str, speed: f64, record: Option<std::path::PathBuf>) -> ServerHandle {
    let cfg = ServeConfig {
        addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        speed,
        name: Some(name.into()),
        record,
        trace_out: None,
    };
    start(fixture(name), cfg).await.unwrap()
}

struct Client {
    lines: Lines<BufReader<OwnedReadHalf>>,
    wr: OwnedWriteHalf,
    seq: u64,
}

impl Client {
    /// Connects and consumes hello and scenario_info.
    async fn connect(addr: SocketAddr) -> (Self, ScenarioInfo) {
        let (rd, wr) = TcpStream::connect(addr).await.unwrap().into_split();
        let mut c = Self {
            lines: BufReader::new(rd).lines(),
            wr,
            seq: 0,
        };
        assert_eq!(c.next().await.kind, Kind::Hello);
        let info = c.next().await;
        assert_eq!(info.kind, Kind::ScenarioInfo);
        (c, info.decode().unwrap())
    }

    async fn next(&mut self) -> Message {
        let line = timeout(WAIT, self.lines.next_line())
            .await
            .expect("server went quiet")
            .unwrap()
            .expect("server closed the connection");
        Message::parse(&line).unwrap()
    }

    async fn next_of(&mut self, kind: Kind) -> Message {
        loop {
            let m = self.next().await;
            if m.kind == kind {
                return m;
            }
        }
    }

    async fn send_raw(&mut self, line: &str) {
        self.wr.write_all(line.as_bytes()).await.unwrap();
        self.wr.write_all(b"\n").await.unwrap();
    }

    async fn command(&mut self, payload: &str) -> u64 {
        self.seq += 1;
        let line = format!(
            r#"{{"kind":"command","seq":{},"payload":{payload}}}"#,
            self.seq
        );
        self.send_raw(&line).await;
        self.seq
    }
}

#[tokio::test]
async fn idle_telemetry_arrives_at_twenty_hertz() {
    let server = serve("tube90.scn", 1.0).await;
    let (mut c, _) = Client::connect(server.local_addr()).await;
    c.next_of(Kind::Telemetry).await;
    let t0 = Instant::now();
    let mut n = 0;
    while t0.elapsed() < Duration::from_secs(2) {
        c.next_of(Kind::Telemetry).await;
        n += 1;
    }
    let rate = n as f64 / t0.elapsed().as_secs_f64();
    assert!((18.0..=22.0).contains(&rate), "telemetry at {rate:.2} Hz");
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn observers_receive_identical_telemetry() {
    let server = serve("freespace.scn", 5.0).await;
    let (mut a, _) = Client::connect(server.local_addr()).await;
    let (mut b, _) = Client::connect(server.local_addr()).await;
    let (mut cmd, _) = Client::connect(server.local_addr()).await;
    cmd.command(r#"{"grow_rate":0.01,"epm_twist":[0.3,0,0,0,0,0.2]}"#)
        .await;
    let mut streams = [Vec::new(), Vec::new()];
    for (s, c) in streams.iter_mut().zip([&mut a, &mut b]) {
        while s.len() < 30 {
            let m = c.next_of(Kind::Telemetry).await;
            s.push((m.tick.unwrap(), m.payload));
        }
    }
    let mut common = 0;
    for (tick, p) in &streams[0] {
        if let Some((_, q)) = streams[1].iter().find(|(t, _)| t == tick) {
            assert_eq!(p, q, "tick {tick}");
            common += 1;
        }
    }
    assert!(common >= 20, "only {common} common ticks");
    assert!(streams[0].windows(2).all(|w| w[1].0 > w[0].0));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_lines_get_errors_and_the_connection_stays() {
    let server = serve("freespace.scn", 5.0).await;
    let (mut c, _) = Client::connect(server.local_addr()).await;
    c.send_raw("{not json").await;
    let e = c.next_of(Kind::Error).await;
    assert_eq!(e.decode::<ErrorPayload>().unwrap().code, "parse");
    c.send_raw(&"x".repeat(MAX_LINE + 10)).await;
    let e = c.next_of(Kind::Error).await;
    assert_eq!(e.decode::<ErrorPayload>().unwrap().code, "parse");
    let seq = c.command(r#"{"pressure_setpoint":15000}"#).await;
    loop {
        let m = c.next_of(Kind::Event).await;
        if m.seq == Some(seq) {
            assert!(matches!(m.decode::<Event>().unwrap(), Event::Ack { .. }));
            break;
        }
    }
    let t: Telemetry = c.next_of(Kind::Telemetry).await.decode().unwrap();
    assert_eq!(t.pressure, 15000.0);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn commander_disconnect_pauses_and_reconnect_resumes() {
    let server = serve("freespace.scn", 5.0).await;
    let (mut obs, _) = Client::connect(server.local_addr()).await;
    let (mut cmd, _) = Client::connect(server.local_addr()).await;
    cmd.command(r#"{"grow_rate":0.01}"#).await;
    cmd.next_of(Kind::Telemetry).await;
    let last_before = obs.next_of(Kind::Telemetry).await.tick.unwrap();
    drop(cmd);
    let paused_at = loop {
        let m = obs.next().await;
        if m.kind == Kind::Event && m.decode::<Event>().unwrap() == Event::Paused {
            break m.tick.unwrap();
        }
    };
    assert!(paused_at >= last_before);
    // Nothing ticks while paused.
    let quiet = timeout(Duration::from_millis(300), obs.lines.next_line()).await;
    assert!(quiet.is_err(), "got {quiet:?} while paused");
    let (_again, _) = Client::connect(server.local_addr()).await;
    let m = obs.next().await;
    assert_eq!(m.decode::<Event>().unwrap(), Event::Resumed);
    assert_eq!(m.tick, Some(paused_at));
    let t = obs.next_of(Kind::Telemetry).await.tick.unwrap();
    assert!(t > paused_at);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn second_bind_on_a_used_port_fails() {
    let server = serve("freespace.scn", 1.0).await;
    let cfg = ServeConfig {
        addr: server.local_addr(),
        ..ServeConfig::default()
    };
    let e = start(fixture("freespace.scn"), cfg)
        .await
        .err()
        .expect("bind must fail");
    assert!(matches!(e, ServeError::Bind { .. }), "{e}");
    server.shutdown().await.unwrap();
}

/// Drives the maze with the joystick pilot over TCP and checks every ack
/// for latency. Returns the trace the service reports on shutdown.
async fn pilot_maze(server: ServerHandle) -> (Vec<magvine::trace::TraceRecord>, u64) {
    let (mut c, info) = Client::connect(server.local_addr()).await;
    let pilot = Pilot::new(&info);
    let mut acks = 0;
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        assert!(Instant::now() < deadline, "maze not finished in time");
        let m = c.next().await;
        match m.kind {
            Kind::Telemetry => {
                let t: Telemetry = m.decode().unwrap();
                assert!(!t.buckled);
                if t.targets_reached.iter().any(|l| l == "exit") {
                    break;
                }
                let line = Message::new(Kind::Command, None, Some(c.seq + 1), &pilot.command(&t))
                    .to_line();
                c.seq += 1;
                c.send_raw(&line).await;
            }
            Kind::Event => {
                if let Event::Ack { received, .. } = m.decode::<Event>().unwrap() {
                    let tick = m.tick.unwrap();
                    assert!(tick - received <= 1, "latency {} ticks", tick - received);
                    acks += 1;
                }
            }
            Kind::Error => panic!("{:?}", m.payload),
            _ => {}
        }
    }
    drop(c);
    (server.shutdown().await.unwrap(), acks)
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_client_drives_the_maze_through_the_service() {
    let (trace, acks) = pilot_maze(serve("maze.scn", 50.0).await).await;
    assert!(acks > 100, "{acks} acks");
    let last = trace.last().unwrap();
    assert!(!last.buckled);
}

#[tokio::test(flavor = "multi_thread")]
async fn recording_replays_the_service_trace_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.rec");
    let (trace, _) = pilot_maze(serve_with("maze.scn", 50.0, Some(path.clone())).await).await;
    let recording = std::fs::read_to_string(&path).unwrap();
    let until = trace.len() as u64 - 1;
    let replayed = replay(fixture("maze.scn"), &recording, Some(until)).unwrap();
    assert_eq!(trace_to_string(&replayed), trace_to_string(&trace));
}
