//! Websocket bridge between a live rollout and one steering console.
//!
//! The rollout runs on its own thread. The connection thread forwards
//! prompts into the episode's bounded prompt queue and drains an outbox that
//! holds the newest state message (older ones are dropped) plus an ordered
//! queue of events that are never dropped.

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use stagebc::doorworld::{EnvParams, WorldState};
use stagebc::policy::Checkpoint;
use stagebc::runtime::{
    prompt_channel, rollout_with, PromptHandle, RolloutConfig, RolloutHook, StageFeed, StageSourceSpec, StepRecord,
};
use stagebc::{Error, Stage};
use tungstenite::{Message, WebSocket};

use crate::bridge::{BridgeMessage, Snapshot, SCHEMA_VERSION};
use crate::exit::{CliError, CliResult};

const POLL: Duration = Duration::from_millis(2);
const EVENT_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub env: EnvParams,
    pub checkpoint: Checkpoint,
    pub seed: u64,
    /// Control steps per second; zero or less runs unpaced.
    pub rate_hz: f64,
    /// Stage fed while the operator has not prompted.
    pub base_source: StageSourceSpec,
    pub debug_latch: bool,
    pub rollout: RolloutConfig,
}

#[derive(Default)]
struct Outbox {
    state: Option<BridgeMessage>,
    events: VecDeque<BridgeMessage>,
}

impl Outbox {
    fn event(&mut self, m: BridgeMessage) {
        // Keep the pending state ahead of the event it precedes.
        if let Some(s) = self.state.take() {
            self.events.push_back(s);
        }
        if self.events.len() >= EVENT_CAP {
            self.events.pop_front();
        }
        self.events.push_back(m);
    }

    fn drain(&mut self) -> Vec<BridgeMessage> {
        let mut out: Vec<BridgeMessage> = self.events.drain(..).collect();
        out.extend(self.state.take());
        out
    }
}

#[derive(Default)]
struct Shared {
    outbox: Mutex<Outbox>,
    prompts: Mutex<Option<PromptHandle>>,
    /// Pending reset request with an optional new seed.
    reset: Mutex<Option<Option<u64>>>,
    controller: AtomicBool,
    stop: AtomicBool,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// A running bridge.
pub struct Server {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    /// Starts serving on an already bound listener.
    pub fn spawn(listener: TcpListener, cfg: ServeConfig) -> CliResult<Server> {
        cfg.env.validate()?;
        cfg.base_source.validate()?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shared = Arc::new(Shared::default());
        let cfg = Arc::new(cfg);
        let s1 = shared.clone();
        let c1 = cfg.clone();
        let robot = std::thread::spawn(move || robot_loop(&s1, &c1));
        let s2 = shared.clone();
        let acceptor = std::thread::spawn(move || accept_loop(listener, &s2));
        Ok(Server {
            addr,
            shared,
            threads: vec![robot, acceptor],
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Binds `addr`, announces the bound address on stdout and serves until the
/// process is killed.
pub fn serve_forever(addr: &str, cfg: ServeConfig) -> CliResult<()> {
    let listener = TcpListener::bind(addr).map_err(|e| CliError::Bridge(format!("cannot bind {addr}: {e}")))?;
    let server = Server::spawn(listener, cfg)?;
    println!("listening on ws://{}", server.addr());
    server.join();
    Ok(())
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                if shared.controller.swap(true, Ordering::SeqCst) {
                    workers.push(std::thread::spawn(move || reject(stream)));
                } else {
                    let s = shared.clone();
                    workers.push(std::thread::spawn(move || {
                        connection(stream, &s);
                        s.controller.store(false, Ordering::SeqCst);
                    }));
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(_) => std::thread::sleep(POLL),
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn reject(stream: TcpStream) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let msg = BridgeMessage::error(None, "controller already connected");
        let _ = ws.send(Message::text(msg.to_json()));
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

fn send(ws: &mut WebSocket<TcpStream>, m: &BridgeMessage) -> bool {
    ws.send(Message::text(m.to_json())).is_ok()
}

fn connection(stream: TcpStream, shared: &Shared) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return;
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(reply) = handle_text(&text, shared) {
                    if !send(&mut ws, &reply) {
                        return;
                    }
                }
            }
            Ok(Message::Close(_)) => return,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
        let out = lock(&shared.outbox).drain();
        for m in &out {
            if !send(&mut ws, m) {
                return;
            }
        }
    }
}

/// Applies one client message; returns an error reply when it is rejected.
fn handle_text(text: &str, shared: &Shared) -> Option<BridgeMessage> {
    let msg = match BridgeMessage::parse(text) {
        Ok(m) => m,
        Err(e) => return Some(BridgeMessage::error(None, format!("malformed message: {e}"))),
    };
    match msg {
        BridgeMessage::Prompt { stage } => {
            let Some(prompt) = stage.to_prompt() else {
                return Some(BridgeMessage::error(None, format!("invalid prompt stage {stage:?}")));
            };
            let guard = lock(&shared.prompts);
            let Some(handle) = guard.as_ref() else {
                return Some(BridgeMessage::error(None, "no episode running"));
            };
            match handle.send(prompt) {
                Ok(_) => None,
                Err(Error::Terminated { step }) => Some(BridgeMessage::error(Some(step), "episode terminated")),
                Err(e) => Some(BridgeMessage::error(None, e.to_string())),
            }
        }
        BridgeMessage::Reset { seed, .. } => {
            *lock(&shared.reset) = Some(seed);
            None
        }
        other => Some(BridgeMessage::error(
            None,
            format!("`{}` messages flow server to client only", type_name(&other)),
        )),
    }
}

fn type_name(m: &BridgeMessage) -> &'static str {
    match m {
        BridgeMessage::State { .. } => "state",
        BridgeMessage::StageFed { .. } => "stage_fed",
        BridgeMessage::Prompt { .. } => "prompt",
        BridgeMessage::Outcome { .. } => "outcome",
        BridgeMessage::Reset { .. } => "reset",
        BridgeMessage::Error { .. } => "error",
    }
}

struct Live<'a> {
    shared: &'a Shared,
    cfg: &'a ServeConfig,
    episode: u64,
    handle: PromptHandle,
    last_stage: Option<Stage>,
    period: Option<Duration>,
    next_tick: Instant,
}

impl RolloutHook for Live<'_> {
    fn keep_going(&mut self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
            && self.shared.controller.load(Ordering::SeqCst)
            && lock(&self.shared.reset).is_none()
    }

    fn after_step(&mut self, rec: &StepRecord, _next: &WorldState) {
        let acked = self.handle.try_acks().iter().any(|a| a.applied_at_step == Some(rec.t));
        let snapshot = Snapshot::new(&rec.state, &self.cfg.env, rec.stage_fed, self.cfg.debug_latch);
        {
            let mut out = lock(&self.shared.outbox);
            if acked || self.last_stage != Some(rec.stage_fed) {
                out.event(BridgeMessage::StageFed {
                    episode: self.episode,
                    step: rec.t,
                    stage: rec.stage_fed.number(),
                });
            }
            out.state = Some(BridgeMessage::State {
                episode: self.episode,
                step: rec.t,
                snapshot,
            });
        }
        self.last_stage = Some(rec.stage_fed);
        if let Some(p) = self.period {
            self.next_tick += p;
            let now = Instant::now();
            if self.next_tick > now {
                std::thread::sleep(self.next_tick - now);
            } else {
                self.next_tick = now;
            }
        }
    }
}

fn robot_loop(shared: &Shared, cfg: &ServeConfig) {
    let mut seed = cfg.seed;
    let mut episode = 0u64;
    let period = (cfg.rate_hz > 0.0).then(|| Duration::from_secs_f64(1.0 / cfg.rate_hz));
    'outer: loop {
        while !shared.controller.load(Ordering::SeqCst) {
            if shared.stop.load(Ordering::SeqCst) {
                return;
            }
            std::thread::sleep(POLL);
        }
        if let Some(s) = lock(&shared.reset).take() {
            seed = s.unwrap_or(seed);
        }
        let (handle, rx) = prompt_channel(64);
        *lock(&shared.prompts) = Some(handle.clone());
        lock(&shared.outbox).event(BridgeMessage::Reset {
            seed: Some(seed),
            episode: Some(episode),
            schema: Some(SCHEMA_VERSION),
        });
        let result = StageFeed::new(&cfg.base_source, seed).and_then(|feed| {
            let mut live = Live {
                shared,
                cfg,
                episode,
                handle,
                last_stage: None,
                period,
                next_tick: Instant::now(),
            };
            rollout_with(
                &cfg.env,
                &cfg.checkpoint,
                feed.with_prompts(rx),
                "prompt_channel",
                seed,
                &cfg.rollout,
                &mut live,
            )
        });
        {
            let mut out = lock(&shared.outbox);
            match &result {
                Ok(rec) => {
                    let last = rec.steps.last().map_or(Stage::S1, |s| s.stage_fed);
                    out.event(BridgeMessage::State {
                        episode,
                        step: rec.len(),
                        snapshot: Snapshot::new(&rec.final_state, &cfg.env, last, cfg.debug_latch),
                    });
                    out.event(BridgeMessage::outcome(episode, rec.len(), &rec.outcome));
                }
                Err(e) => out.event(BridgeMessage::error(None, e.to_string())),
            }
        }
        // Wait for a reset request, or a fresh controller.
        loop {
            if shared.stop.load(Ordering::SeqCst) {
                return;
            }
            if !shared.controller.load(Ordering::SeqCst) {
                lock(&shared.reset).take();
                *lock(&shared.outbox) = Outbox::default();
                episode += 1;
                continue 'outer;
            }
            if lock(&shared.reset).is_some() {
                episode += 1;
                continue 'outer;
            }
            std::thread::sleep(POLL);
        }
    }
}
