//! TCP front end. One task owns the session and ticks it; each connection
//! gets a reader task feeding an ordered inbox and a writer task draining a
//! bounded outbox. The ticker never waits on a client: a full outbox drops
//! telemetry and disconnects the client on anything else.

use std::collections::BTreeMap;
use std::fs::File;
use std::future::Future;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use magvine::scenario::Scenario;
use magvine::sim::SimError;
use magvine::trace::{write_trace, TraceError, TraceRecord};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::protocol::{Bye, ErrorPayload, Kind, Message, ProtocolError, DEFAULT_PORT, MAX_LINE};
use crate::record::Recorder;
use crate::session::{ClientId, Outgoing, Received, Session};

/// Lines buffered per client before it counts as stalled.
const OUTBOX: usize = 256;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("speed must be positive, got {0}")]
    Speed(f64),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    /// Shown to clients in `scenario_info`.
    pub name: Option<String>,
    /// Write every received line and every non-telemetry line sent here.
    pub record: Option<PathBuf>,
    /// Write the session trace here on shutdown.
    pub trace_out: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            speed: 1.0,
            name: None,
            record: None,
            trace_out: None,
        }
    }
}

enum Inbox {
    Connect(ClientId, mpsc::Sender<Arc<str>>),
    Line(ClientId, String),
    /// A line that never reached the parser.
    Unreadable(ClientId, String),
    Disconnect(ClientId),
}

/// Running service.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    ticker: JoinHandle<Result<Vec<TraceRecord>, ServeError>>,
    acceptor: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop ticking, say goodbye to clients and return the session trace.
    pub async fn shutdown(mut self) -> Result<Vec<TraceRecord>, ServeError> {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        self.acceptor.abort();
        match self.ticker.await {
            Ok(r) => r,
            Err(e) => std::panic::resume_unwind(e.into_panic()),
        }
    }

    /// Serve until `signal` fires, then shut down. Returns early only when
    /// the ticker fails.
    pub async fn run_until(
        mut self,
        signal: impl Future<Output = ()>,
    ) -> Result<Vec<TraceRecord>, ServeError> {
        let ended = tokio::select! {
            _ = signal => None,
            r = &mut self.ticker => Some(r),
        };
        match ended {
            None => self.shutdown().await,
            Some(r) => {
                self.acceptor.abort();
                match r {
                    Ok(r) => r,
                    Err(e) => std::panic::resume_unwind(e.into_panic()),
                }
            }
        }
    }
}

/// Bind and start serving `scenario`.
pub async fn start(scenario: Scenario, cfg: ServeConfig) -> Result<ServerHandle, ServeError> {
    if !(cfg.speed > 0.0 && cfg.speed.is_finite()) {
        return Err(ServeError::Speed(cfg.speed));
    }
    let session = Session::new(scenario, cfg.name.clone(), cfg.speed)?;
    let recorder = match &cfg.record {
        Some(p) => Some(Recorder::new(BufWriter::new(File::create(p).map_err(
            |source| ServeError::Io {
                path: p.display().to_string(),
                source,
            },
        )?))),
        None => None,
    };
    let listener = TcpListener::bind(cfg.addr)
        .await
        .map_err(|source| ServeError::Bind {
            addr: cfg.addr,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: cfg.addr,
        source,
    })?;
    let (inbox_tx, inbox_rx) = mpsc::unbounded_channel();
    let (stop_tx, stop_rx) = oneshot::channel();
    let acceptor = tokio::spawn(accept_loop(listener, inbox_tx));
    let ticker = tokio::spawn(tick_loop(session, cfg, recorder, inbox_rx, stop_rx));
    Ok(ServerHandle {
        addr,
        stop: Some(stop_tx),
        ticker,
        acceptor,
    })
}

/// Serve until interrupted.
pub fn serve_blocking(scenario: Scenario, cfg: ServeConfig) -> Result<(), ServeError> {
    let rt = tokio::runtime::Runtime::new().map_err(|source| ServeError::Io {
        path: "runtime".into(),
        source,
    })?;
    rt.block_on(async move {
        let handle = start(scenario, cfg).await?;
        eprintln!("listening on {}", handle.local_addr());
        handle
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map(|_| ())
    })
}

async fn accept_loop(listener: TcpListener, inbox: mpsc::UnboundedSender<Inbox>) {
    let mut next_id: ClientId = 1;
    loop {
        let Ok((stream, _)) = listener.accept().await else {
            continue;
        };
        let _ = stream.set_nodelay(true);
        let id = next_id;
        next_id += 1;
        tokio::spawn(connection(id, stream, inbox.clone()));
    }
}

async fn connection(id: ClientId, stream: TcpStream, inbox: mpsc::UnboundedSender<Inbox>) {
    let (rd, mut wr) = stream.into_split();
    let (out_tx, mut out_rx) = mpsc::channel::<Arc<str>>(OUTBOX);
    if inbox.send(Inbox::Connect(id, out_tx)).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            if wr.write_all(line.as_bytes()).await.is_err() || wr.write_all(b"\n").await.is_err() {
                break;
            }
        }
        let _ = wr.shutdown().await;
    });
    let mut reader = BufReader::new(rd);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = match (&mut reader)
            .take(MAX_LINE as u64 + 1)
            .read_until(b'\n', &mut buf)
            .await
        {
            Ok(n) => n,
            Err(_) => break,
        };
        if n == 0 {
            break;
        }
        let msg = if buf.len() > MAX_LINE && buf.last() != Some(&b'\n') {
            // Skip the rest of the line.
            let mut rest = Vec::new();
            if reader.read_until(b'\n', &mut rest).await.is_err() {
                break;
            }
            Inbox::Unreadable(id, format!("line exceeds {MAX_LINE} bytes"))
        } else {
            match std::str::from_utf8(&buf) {
                Ok(s) if s.trim().is_empty() => continue,
                Ok(s) => Inbox::Line(id, s.trim_end_matches(['\r', '\n']).to_string()),
                Err(_) => Inbox::Unreadable(id, "line is not valid UTF-8".into()),
            }
        };
        if inbox.send(msg).is_err() {
            break;
        }
    }
    let _ = inbox.send(Inbox::Disconnect(id));
    let _ = writer.await;
}

struct Clients {
    out: BTreeMap<ClientId, mpsc::Sender<Arc<str>>>,
}

impl Clients {
    /// Deliver, dropping clients whose outbox is full for anything but
    /// telemetry. Returns the clients dropped.
    fn deliver(
        &mut self,
        msgs: Vec<Outgoing>,
        rec: &mut Option<Recorder<BufWriter<File>>>,
    ) -> Vec<ClientId> {
        let mut dropped = Vec::new();
        for m in msgs {
            let (target, msg) = match m {
                Outgoing::To(id, msg) => (Some(id), msg),
                Outgoing::All(msg) => (None, msg),
            };
            let line: Arc<str> = msg.to_line().into();
            if msg.kind != Kind::Telemetry {
                if let Some(r) = rec.as_mut() {
                    let _ = r.line(&line);
                }
            }
            let droppable = msg.kind == Kind::Telemetry;
            let mut send = |id: ClientId, tx: &mpsc::Sender<Arc<str>>| {
                if let Err(mpsc::error::TrySendError::Full(_)) = tx.try_send(line.clone()) {
                    if !droppable {
                        dropped.push(id);
                    }
                }
            };
            match target {
                Some(id) => {
                    if let Some(tx) = self.out.get(&id) {
                        send(id, tx);
                    }
                }
                None => {
                    for (id, tx) in &self.out {
                        send(*id, tx);
                    }
                }
            }
        }
        for id in &dropped {
            self.out.remove(id);
        }
        dropped
    }
}

async fn tick_loop(
    mut session: Session,
    cfg: ServeConfig,
    mut rec: Option<Recorder<BufWriter<File>>>,
    mut inbox: mpsc::UnboundedReceiver<Inbox>,
    mut stop: oneshot::Receiver<()>,
) -> Result<Vec<TraceRecord>, ServeError> {
    let mut clients = Clients {
        out: BTreeMap::new(),
    };
    let period = Duration::from_secs_f64(session.dt() / cfg.speed);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let result = loop {
        let out = tokio::select! {
            biased;
            _ = &mut stop => break Ok(()),
            msg = inbox.recv() => match msg {
                Some(Inbox::Connect(id, tx)) => {
                    clients.out.insert(id, tx);
                    session.connect(id)
                }
                Some(Inbox::Line(id, line)) => {
                    if let Some(r) = rec.as_mut() {
                        let _ = r.line(&line);
                    }
                    match session.receive(id, &line) {
                        Received::Replies(r) => r,
                        Received::Bye => {
                            let bye = Message::new(Kind::Bye, Some(session.tick()), None, &Bye::default());
                            clients.deliver(vec![Outgoing::To(id, bye)], &mut rec);
                            clients.out.remove(&id);
                            session.disconnect(id)
                        }
                    }
                }
                Some(Inbox::Unreadable(id, reason)) => {
                    let e = ProtocolError::Parse(reason);
                    vec![Outgoing::To(id, Message::new(Kind::Error, Some(session.tick()), None, &ErrorPayload::from(&e)))]
                }
                Some(Inbox::Disconnect(id)) => {
                    clients.out.remove(&id);
                    session.disconnect(id)
                }
                None => break Ok(()),
            },
            _ = interval.tick() => match session.step() {
                Ok(out) => out,
                Err(e) => break Err(ServeError::from(e)),
            },
        };
        let mut pending = out;
        loop {
            let dropped = clients.deliver(pending, &mut rec);
            if dropped.is_empty() {
                break;
            }
            pending = dropped
                .into_iter()
                .flat_map(|id| session.disconnect(id))
                .collect();
        }
    };
    let reason = match &result {
        Ok(()) => "shutdown".to_string(),
        Err(e) => e.to_string(),
    };
    let bye = Message::new(
        Kind::Bye,
        Some(session.tick()),
        None,
        &Bye {
            reason: Some(reason),
        },
    );
    clients.deliver(vec![Outgoing::All(bye)], &mut rec);
    drop(clients);
    if let Some(r) = rec.as_mut() {
        let _ = r.flush();
    }
    result?;
    let trace = session.trace().to_vec();
    if let Some(p) = &cfg.trace_out {
        let f = File::create(p).map_err(|source| ServeError::Io {
            path: p.display().to_string(),
            source,
        })?;
        write_trace(BufWriter::new(f), &trace)?;
    }
    Ok(trace)
}
