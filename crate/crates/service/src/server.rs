//! Websocket transport.
//!
//! One OS thread owns the [`Session`] and steps it. Connections post control
//! messages into a single-slot mailbox (the newest `p` wins) and receive
//! frames from a broadcast channel. Nothing else touches simulation state.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast;
use tokio_tungstenite::tungstenite::Message;

use eigenskin::pipeline::Precomputed;
use eigenskin::solver::SolverConfig;

use crate::protocol::{ClientMessage, ServerNotice};
use crate::session::{setup_for, Session};
use crate::{Result, ServiceError};

const BROADCAST_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One step every `h` seconds of wall clock.
    RealTime,
    /// One step per received `set_params`, as fast as they arrive. Used for
    /// scripted clients that need a deterministic pairing of inputs and frames.
    Lockstep,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub pacing: Pacing,
}

#[derive(Default)]
struct Inbox {
    p: Option<Vec<f64>>,
    f: Option<Vec<f64>>,
    reset: bool,
    stop: bool,
}

#[derive(Default)]
struct Mailbox {
    inbox: Mutex<Inbox>,
    wake: Condvar,
}

impl Mailbox {
    fn post(&self, msg: ClientMessage) {
        let mut inbox = self.inbox.lock().expect("mailbox poisoned");
        match msg {
            ClientMessage::SetParams { p } => inbox.p = Some(p),
            ClientMessage::SetForce { f } => inbox.f = Some(f),
            // a reset discards updates posted before it
            ClientMessage::Reset {} => {
                inbox.reset = true;
                inbox.p = None;
                inbox.f = None;
            }
        }
        self.wake.notify_all();
    }

    fn stop(&self) {
        self.inbox.lock().expect("mailbox poisoned").stop = true;
        self.wake.notify_all();
    }
}

pub struct RunningServer {
    addr: SocketAddr,
    mailbox: Arc<Mailbox>,
    sim_thread: Option<JoinHandle<()>>,
    accept_task: tokio::task::JoinHandle<()>,
    clients: Arc<AtomicUsize>,
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn connected_clients(&self) -> usize {
        self.clients.load(Ordering::SeqCst)
    }

    /// Runs until the accept loop ends (normally never).
    pub async fn wait(mut self) {
        let _ = (&mut self.accept_task).await;
        self.shutdown().await;
    }

    pub async fn shutdown(mut self) {
        self.accept_task.abort();
        self.mailbox.stop();
        if let Some(handle) = self.sim_thread.take() {
            let _ = tokio::task::spawn_blocking(move || handle.join()).await;
        }
    }
}

/// Binds, spawns the simulation thread and the accept loop, and returns.
pub async fn serve(pre: &Precomputed, config: SolverConfig, options: ServeOptions) -> Result<RunningServer> {
    let session = Session::new(pre, config)?;
    let setup = Message::Binary(setup_for(pre).encode().into());
    let (p_dim, dim) = (session.p_dim(), session.dim());
    let listener = TcpListener::bind(options.addr).await?;
    let addr = listener.local_addr()?;
    let mailbox = Arc::new(Mailbox::default());
    let (frames, _) = broadcast::channel(BROADCAST_CAPACITY);

    let sim_thread = {
        let mailbox = Arc::clone(&mailbox);
        let frames = frames.clone();
        std::thread::Builder::new()
            .name("simulation".into())
            .spawn(move || run_simulation(session, config.h, options.pacing, &mailbox, &frames))?
    };

    let clients = Arc::new(AtomicUsize::new(0));
    let accept_task = {
        let mailbox = Arc::clone(&mailbox);
        let clients = Arc::clone(&clients);
        tokio::spawn(async move {
            loop {
                let (stream, peer) = match listener.accept().await {
                    Ok(c) => c,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                let conn = Connection {
                    setup: setup.clone(),
                    frames: frames.subscribe(),
                    mailbox: Arc::clone(&mailbox),
                    p_dim,
                    dim,
                };
                let clients = Arc::clone(&clients);
                tokio::spawn(async move {
                    clients.fetch_add(1, Ordering::SeqCst);
                    if let Err(e) = conn.run(stream).await {
                        log::info!("client {peer} dropped: {e}");
                    }
                    clients.fetch_sub(1, Ordering::SeqCst);
                });
            }
        })
    };
    log::info!("serving on ws://{addr} ({:?} pacing)", options.pacing);
    Ok(RunningServer {
        addr,
        mailbox,
        sim_thread: Some(sim_thread),
        accept_task,
        clients,
    })
}

fn run_simulation(mut session: Session, h: f64, pacing: Pacing, mailbox: &Mailbox, frames: &broadcast::Sender<Message>) {
    let period = Duration::from_secs_f64(h);
    let mut deadline = Instant::now() + period;
    loop {
        let inbox = {
            let guard = mailbox.inbox.lock().expect("mailbox poisoned");
            let mut guard = match pacing {
                Pacing::RealTime => guard,
                Pacing::Lockstep => mailbox
                    .wake
                    .wait_while(guard, |i| !i.stop && i.p.is_none() && !i.reset && i.f.is_none())
                    .expect("mailbox poisoned"),
            };
            std::mem::take(&mut *guard)
        };
        if inbox.stop {
            return;
        }
        if inbox.reset {
            session.reset();
        }
        if let Some(f) = inbox.f {
            session.set_force(&f).expect("force length checked on receipt");
        }
        let stepping = match inbox.p {
            Some(p) => {
                session.set_params(p).expect("parameter length checked on receipt");
                true
            }
            None => pacing == Pacing::RealTime,
        };
        if !stepping {
            continue;
        }
        let tick = session.tick();
        if let Some(w) = tick.warning {
            let _ = frames.send(Message::Text(ServerNotice::Warning { message: w }.to_json().into()));
        }
        let _ = frames.send(Message::Binary(tick.frame.encode().into()));

        if pacing == Pacing::RealTime {
            let now = Instant::now();
            if now > deadline {
                log::warn!("step {} overran its deadline by {:?}", tick.frame.t, now - deadline);
                deadline = now;
            } else {
                let guard = mailbox.inbox.lock().expect("mailbox poisoned");
                let (guard, _) = mailbox
                    .wake
                    .wait_timeout_while(guard, deadline - now, |i| !i.stop)
                    .expect("mailbox poisoned");
                if guard.stop {
                    return;
                }
            }
            deadline += period;
        }
    }
}

struct Connection {
    setup: Message,
    frames: broadcast::Receiver<Message>,
    mailbox: Arc<Mailbox>,
    p_dim: usize,
    dim: usize,
}

impl Connection {
    async fn run(mut self, stream: TcpStream) -> Result<()> {
        let ws = tokio_tungstenite::accept_async(stream).await.map_err(ws_err)?;
        let (mut tx, mut rx) = ws.split();
        tx.send(self.setup.clone()).await.map_err(ws_err)?;
        loop {
            tokio::select! {
                incoming = rx.next() => {
                    let reply = match incoming {
                        Some(Ok(Message::Text(text))) => match ClientMessage::parse(&text, self.p_dim, self.dim) {
                            Ok(msg) => {
                                self.mailbox.post(msg);
                                None
                            }
                            Err(e) => Some(e.to_string()),
                        },
                        Some(Ok(Message::Binary(_))) => Some("binary client messages are not accepted".to_string()),
                        Some(Ok(Message::Close(_))) | None => return Ok(()),
                        Some(Ok(_)) => None,
                        Some(Err(e)) => return Err(ws_err(e)),
                    };
                    if let Some(message) = reply {
                        let notice = ServerNotice::Error { message }.to_json();
                        tx.send(Message::Text(notice.into())).await.map_err(ws_err)?;
                    }
                }
                outgoing = self.frames.recv() => match outgoing {
                    Ok(msg) => tx.send(msg).await.map_err(ws_err)?,
                    Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("slow client skipped {n} frames"),
                    Err(broadcast::error::RecvError::Closed) => return Ok(()),
                },
            }
        }
    }
}

fn ws_err(e: tokio_tungstenite::tungstenite::Error) -> ServiceError {
    ServiceError::Protocol(e.to_string())
}
