use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError, TrySendError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doorworld::{true_stage, EnvParams, WorldState};
use crate::error::{Error, Result};
use crate::par::derive_seed;
use crate::stage::Stage;

/// Where the fed stage comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSourceSpec {
    /// Privileged stage of the current world state. With `monotone`, the
    /// highest stage reached so far (believed progress).
    Oracle { monotone: bool },
    /// `(stage, start_step)` pairs; the latest started entry applies.
    FixedSequence { schedule: Vec<(Stage, usize)> },
    Constant { stage: Stage },
    /// Uniform random stage every step.
    Random { seed: u64 },
}

impl StageSourceSpec {
    pub fn oracle() -> Self {
        StageSourceSpec::Oracle { monotone: false }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StageSourceSpec::Oracle { monotone: false } => "oracle",
            StageSourceSpec::Oracle { monotone: true } => "oracle_monotone",
            StageSourceSpec::FixedSequence { .. } => "fixed_sequence",
            StageSourceSpec::Constant { .. } => "constant",
            StageSourceSpec::Random { .. } => "random",
        }
    }

    /// Parses `oracle`, `oracle-monotone`, `constant:S1`, `random:SEED` or
    /// `sequence:S1@0,S4@40,S5@90`.
    pub fn parse(text: &str) -> Result<StageSourceSpec> {
        let bad = || Error::Configuration(format!("unrecognized stage source `{text}`"));
        let (kind, arg) = text.split_once(':').map_or((text, None), |(k, a)| (k, Some(a)));
        let spec = match (kind, arg) {
            ("oracle", None) => StageSourceSpec::oracle(),
            ("oracle-monotone", None) => StageSourceSpec::Oracle { monotone: true },
            ("constant", Some(a)) => StageSourceSpec::Constant {
                stage: parse_stage(a).ok_or_else(bad)?,
            },
            ("random", Some(a)) => StageSourceSpec::Random {
                seed: a.parse().map_err(|_| bad())?,
            },
            ("sequence", Some(a)) => {
                let schedule = a
                    .split(',')
                    .map(|item| {
                        let (st, at) = item.split_once('@')?;
                        Some((parse_stage(st)?, at.trim().parse().ok()?))
                    })
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                StageSourceSpec::FixedSequence { schedule }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let StageSourceSpec::FixedSequence { schedule } = self {
            if schedule.is_empty() || schedule.windows(2).any(|w| w[0].1 >= w[1].1) {
                return Err(Error::Configuration(
                    "fixed sequence needs strictly increasing start steps".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `S3` or `3`.
pub fn parse_stage(s: &str) -> Option<Stage> {
    let s = s.trim();
    let digits = s.strip_prefix(['S', 's']).unwrap_or(s);
    Stage::from_number(digits.parse().ok()?).ok()
}

/// Operator input on the prompt channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prompt {
    /// Override the fed stage until the next prompt.
    Stage(Stage),
    /// Hand control back to the base source.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub ticket: u64,
    pub prompt: Prompt,
    /// Control step whose fed stage first reflects the prompt; `None` when a
    /// newer prompt in the same control period superseded it.
    pub applied_at_step: Option<usize>,
}

#[derive(Debug)]
struct Shared {
    terminated: AtomicBool,
    final_step: AtomicUsize,
}

/// Writer side of the prompt channel. Cheap to clone across threads.
#[derive(Debug, Clone)]
pub struct PromptHandle {
    tx: Sender<(u64, Prompt)>,
    acks: Receiver<Ack>,
    next: Arc<AtomicUsize>,
    shared: Arc<Shared>,
}

/// Reader side, owned by the rollout loop.
#[derive(Debug)]
pub struct PromptReceiver {
    rx: Receiver<(u64, Prompt)>,
    acks: Sender<Ack>,
    shared: Arc<Shared>,
}

/// Bounded, ordered prompt queue.
pub fn prompt_channel(capacity: usize) -> (PromptHandle, PromptReceiver) {
    let (tx, rx) = bounded(capacity.max(1));
    let (atx, arx) = bounded(capacity.max(1) * 4);
    let shared = Arc::new(Shared {
        terminated: AtomicBool::new(false),
        final_step: AtomicUsize::new(0),
    });
    (
        PromptHandle {
            tx,
            acks: arx,
            next: Arc::new(AtomicUsize::new(0)),
            shared: shared.clone(),
        },
        PromptReceiver {
            rx,
            acks: atx,
            shared,
        },
    )
}

impl PromptHandle {
    /// Queues a prompt and returns its ticket. Rejected once the episode
    /// has ended.
    pub fn send(&self, prompt: Prompt) -> Result<u64> {
        if self.shared.terminated.load(Ordering::SeqCst) {
            return Err(Error::Terminated {
                step: self.shared.final_step.load(Ordering::SeqCst),
            });
        }
        let ticket = self.next.fetch_add(1, Ordering::SeqCst) as u64;
        match self.tx.try_send((ticket, prompt)) {
            Ok(()) => Ok(ticket),
            Err(TrySendError::Full(_)) => Err(Error::Scheduler("prompt queue full".into())),
            Err(TrySendError::Disconnected(_)) => Err(Error::Terminated {
                step: self.shared.final_step.load(Ordering::SeqCst),
            }),
        }
    }

    /// Acknowledgments received so far.
    pub fn try_acks(&self) -> Vec<Ack> {
        self.acks.try_iter().collect()
    }

    /// Blocks until the acknowledgment for `ticket` arrives.
    pub fn wait_ack(&self, ticket: u64, timeout: std::time::Duration) -> Result<Ack> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.acks.recv_timeout(left) {
                Ok(a) if a.ticket == ticket => return Ok(a),
                Ok(_) => continue,
                Err(_) if self.is_terminated() => {
                    return Err(Error::Terminated {
                        step: self.shared.final_step.load(Ordering::SeqCst),
                    })
                }
                Err(_) => return Err(Error::Scheduler(format!("no acknowledgment for prompt {ticket}"))),
            }
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.shared.terminated.load(Ordering::SeqCst)
    }
}

impl PromptReceiver {
    /// Drains everything queued; the newest prompt wins.
    fn drain(&self, step: usize) -> Option<Prompt> {
        let mut batch = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(m) => batch.push(m),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
        let last = batch.len().checked_sub(1)?;
        for (i, (ticket, prompt)) in batch.iter().enumerate() {
            let _ = self.acks.try_send(Ack {
                ticket: *ticket,
                prompt: *prompt,
                applied_at_step: (i == last).then_some(step),
            });
        }
        Some(batch[last].1)
    }

    pub(crate) fn terminate(&self, step: usize) {
        self.shared.final_step.store(step, Ordering::SeqCst);
        self.shared.terminated.store(true, Ordering::SeqCst);
    }
}

/// Per-episode stage feed.
#[derive(Debug)]
pub struct StageFeed {
    base: Base,
    prompts: Option<PromptReceiver>,
    override_stage: Option<Stage>,
}

#[derive(Debug)]
enum Base {
    Oracle { monotone: bool, best: Stage },
    Fixed(Vec<(Stage, usize)>),
    Constant(Stage),
    Random(ChaCha8Rng),
}

impl StageFeed {
    /// `episode_seed` decorrelates random feeds across episodes.
    pub fn new(spec: &StageSourceSpec, episode_seed: u64) -> Result<StageFeed> {
        spec.validate()?;
        let base = match spec {
            StageSourceSpec::Oracle { monotone } => Base::Oracle {
                monotone: *monotone,
                best: Stage::S1,
            },
            StageSourceSpec::FixedSequence { schedule } => Base::Fixed(schedule.clone()),
            StageSourceSpec::Constant { stage } => Base::Constant(*stage),
            StageSourceSpec::Random { seed } => Base::Random(ChaCha8Rng::seed_from_u64(derive_seed(*seed, episode_seed))),
        };
        Ok(StageFeed {
            base,
            prompts: None,
            override_stage: None,
        })
    }

    /// Layers a prompt channel over the base source.
    pub fn with_prompts(mut self, rx: PromptReceiver) -> StageFeed {
        self.prompts = Some(rx);
        self
    }

    /// Stage fed at control step `step`, after applying queued prompts.
    pub fn stage(&mut self, step: usize, s: &WorldState, p: &EnvParams) -> Stage {
        if let Some(rx) = &self.prompts {
            match rx.drain(step) {
                Some(Prompt::Stage(st)) => self.override_stage = Some(st),
                Some(Prompt::Auto) => self.override_stage = None,
                None => {}
            }
        }
        let base = match &mut self.base {
            Base::Oracle { monotone, best } => {
                let now = true_stage(s, p);
                *best = (*best).max(now);
                if *monotone {
                    *best
                } else {
                    now
                }
            }
            Base::Fixed(schedule) => schedule
                .iter()
                .rev()
                .find(|(_, start)| *start <= step)
                .unwrap_or(&schedule[0])
                .0,
            Base::Constant(st) => *st,
            Base::Random(rng) => Stage::ALL[rng.random_range(0..Stage::COUNT)],
        };
        self.override_stage.unwrap_or(base)
    }

    pub(crate) fn finish(&self, step: usize) {
        if let Some(rx) = &self.prompts {
            rx.terminate(step);
        }
    }
}
