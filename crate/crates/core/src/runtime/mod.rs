//! Closed-loop inference: zero-latent chunk prediction, temporal
//! ensembling, rollouts and the stage sources that feed them.

mod ensemble;
mod source;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ensemble::EnsembleBuffer;
pub use source::{parse_stage, prompt_channel, Ack, Prompt, PromptHandle, PromptReceiver, StageFeed, StageSourceSpec};

use crate::doorworld::{self, Action, EnvParams, EpisodeOutcome, Observation, WorldState, ACTION_DIM};
use crate::error::{Error, Result};
use crate::policy::Checkpoint;
use crate::stage::Stage;

pub const DEFAULT_SMOOTHING: f64 = 0.1;
pub const DEFAULT_BUDGET: usize = 400;

/// Denormalized H×3 chunk for one observation window (oldest first), with
/// the latent fixed at zero.
pub fn infer_chunk(ckpt: &Checkpoint, window: &[Observation], stage: Option<Stage>) -> Result<Vec<[f64; ACTION_DIM]>> {
    let norm = &ckpt.norm;
    if norm.obs_mean.is_empty() || norm.act_mean.is_empty() {
        return Err(Error::Configuration("checkpoint has no normalization statistics".into()));
    }
    let cfg = ckpt.config();
    let normed: Vec<Vec<f64>> = window.iter().map(|o| norm.apply_obs(o)).collect();
    let onehot = stage.map(Stage::one_hot);
    let z = vec![0.0; cfg.dz];
    let flat = ckpt.weights.decode(&normed, onehot.as_ref().map(|v| &v[..]), &z)?;
    Ok(flat.chunks_exact(ACTION_DIM).map(|row| norm.invert_action(row)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub budget: usize,
    /// Temporal-ensemble smoothing coefficient.
    pub m: f64,
    pub randomize_init: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            budget: DEFAULT_BUDGET,
            m: DEFAULT_SMOOTHING,
            randomize_init: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub obs: Observation,
    pub stage_fed: Stage,
    /// Ensembled command before environment clamping.
    pub action: Action,
    /// State the action was applied to.
    pub state: WorldState,
}

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub version: u32,
    pub seed: u64,
    pub variant: String,
    pub source: String,
    pub env_hash: String,
    pub steps: Vec<StepRecord>,
    pub final_state: WorldState,
    pub outcome: EpisodeOutcome,
    pub duration_s: f64,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Every visited state, initial first and final last.
    pub fn states(&self) -> Vec<WorldState> {
        let mut v: Vec<WorldState> = self.steps.iter().map(|s| s.state.clone()).collect();
        v.push(self.final_state.clone());
        v
    }

    pub fn actions(&self) -> Vec<[f64; ACTION_DIM]> {
        self.steps.iter().map(|s| s.action.to_array()).collect()
    }

    pub fn fed_stages(&self) -> Vec<Stage> {
        self.steps.iter().map(|s| s.stage_fed).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<EpisodeRecord> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(s)?;
        if probe.version != RECORD_VERSION {
            return Err(Error::Version {
                kind: "episode record".into(),
                found: probe.version,
                expected: RECORD_VERSION,
            });
        }
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EpisodeRecord> {
        EpisodeRecord::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Observer for live or scripted rollouts. Both callbacks default to no-ops.
pub trait RolloutHook {
    /// Called before the stage query of step `t`; may perturb the world.
    fn before_step(&mut self, _t: usize, _state: &mut WorldState) {}
    /// Called after step `t` executed, with the resulting state.
    fn after_step(&mut self, _rec: &StepRecord, _next: &WorldState) {}
    /// Checked before every step; returning false ends the episode early.
    fn keep_going(&mut self) -> bool {
        true
    }
}

impl RolloutHook for () {}

/// Runs one episode with no hook.
pub fn rollout(
    p: &EnvParams,
    ckpt: &Checkpoint,
    feed: StageFeed,
    source_name: &str,
    seed: u64,
    cfg: &RolloutConfig,
) -> Result<EpisodeRecord> {
    rollout_with(p, ckpt, feed, source_name, seed, cfg, &mut ())
}

/// Runs one episode: query the stage, infer a chunk, ensemble, step. Stops
/// on success, when the budget runs out, or when the hook says so. The fed
/// stage reaches the network only for stage-conditioned variants.
pub fn rollout_with(
    p: &EnvParams,
    ckpt: &Checkpoint,
    mut feed: StageFeed,
    source_name: &str,
    seed: u64,
    cfg: &RolloutConfig,
    hook: &mut dyn RolloutHook,
) -> Result<EpisodeRecord> {
    p.validate()?;
    let pc = ckpt.config();
    let uses_stage = pc.variant.uses_stage();
    let mut buffer = EnsembleBuffer::new(pc.h, cfg.m)?;
    let (mut state, obs0) = doorworld::reset(seed, cfg.randomize_init, p);
    let mut window: VecDeque<Observation> = std::iter::repeat_n(obs0.clone(), pc.k).collect();
    let mut obs = obs0;
    let mut steps = Vec::new();
    let result = (|| {
        for t in 0..cfg.budget {
            if !hook.keep_going() {
                break;
            }
            hook.before_step(t, &mut state);
            let stage_fed = feed.stage(t, &state, p);
            let w: Vec<Observation> = window.iter().cloned().collect();
            let chunk = infer_chunk(ckpt, &w, uses_stage.then_some(stage_fed))?;
            buffer.push(t, chunk)?;
            let action = buffer.action(t)?;
            let (next, next_obs, info) = doorworld::step(&state, &action, p)?;
            let rec = StepRecord {
                t,
                obs: obs.clone(),
                stage_fed,
                action,
                state: state.clone(),
            };
            hook.after_step(&rec, &next);
            steps.push(rec);
            state = next;
            obs = next_obs;
            window.pop_front();
            window.push_back(obs.clone());
            if info.success {
                break;
            }
        }
        Ok::<(), Error>(())
    })();
    feed.finish(steps.len());
    result?;
    let mut states: Vec<WorldState> = steps.iter().map(|s| s.state.clone()).collect();
    states.push(state.clone());
    let outcome = doorworld::episode_outcome(&states, p)?;
    Ok(EpisodeRecord {
        version: RECORD_VERSION,
        seed,
        variant: pc.variant.name().to_string(),
        source: source_name.to_string(),
        env_hash: p.hash(),
        duration_s: outcome.duration_s,
        steps,
        final_state: state,
        outcome,
    })
}
