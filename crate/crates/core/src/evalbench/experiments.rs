use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{episode_tracking, funnel_table, FunnelRow, ReferenceTrajectory};
use crate::doorworld::{true_stage, EnvParams, WorldState};
use crate::error::{Error, Result};
use crate::par::{derive_seed, Exec};
use crate::policy::Checkpoint;
use crate::runtime::{
    prompt_channel, rollout, rollout_with, EpisodeRecord, Prompt, PromptHandle, RolloutConfig, RolloutHook, StageFeed,
    StageSourceSpec,
};
use crate::stage::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_eval: usize,
    /// Base of the held-out seed sequence.
    pub seed: u64,
    /// Half-width of the multiplicative spring/damping perturbation.
    pub perturb: f64,
    pub rollout: RolloutConfig,
    /// Seed of the random stage source in the ablation.
    pub random_stage_seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_eval: 100,
            seed: 0x00E7_A1_5EED,
            perturb: 0.3,
            rollout: RolloutConfig::default(),
            random_stage_seed: 17,
            exec: Exec::default(),
        }
    }
}

/// Episode seed and perturbed door dynamics of held-out trial `i`.
pub fn held_out_trial(p: &EnvParams, cfg: &EvalConfig, i: usize) -> (u64, EnvParams) {
    let seed = derive_seed(cfg.seed, i as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut f = || 1.0 + cfg.perturb * (2.0 * rng.random::<f64>() - 1.0);
    let (a, b, c) = (f(), f(), f());
    (seed, p.perturbed(a, b, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub label: String,
    pub variant: String,
    pub source: String,
    pub n: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    /// Mean completion time over successful episodes.
    pub mean_time_s: Option<f64>,
    /// Tracking errors averaged over all episodes.
    pub e_upper: Option<f64>,
    pub e_root: Option<f64>,
    pub funnel: Vec<FunnelRow>,
}

impl ModelRow {
    pub fn from_records(label: &str, records: &[EpisodeRecord], reference: &ReferenceTrajectory) -> Result<ModelRow> {
        let outcomes: Vec<_> = records.iter().map(|r| r.outcome.clone()).collect();
        let funnel = funnel_table(&outcomes)?;
        let succ: Vec<f64> = outcomes.iter().filter(|o| o.success).map(|o| o.duration_s).collect();
        let mut tracks = Vec::new();
        for r in records {
            if let Some(t) = episode_tracking(&r.actions(), reference)? {
                tracks.push(t);
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Ok(ModelRow {
            label: label.to_string(),
            variant: records[0].variant.clone(),
            source: records[0].source.clone(),
            n: records.len(),
            successes: succ.len(),
            success_rate: 100.0 * succ.len() as f64 / records.len() as f64,
            mean_time_s: mean(&succ),
            e_upper: mean(&tracks.iter().map(|t| t.0).collect::<Vec<_>>()),
            e_root: mean(&tracks.iter().map(|t| t.1).collect::<Vec<_>>()),
            funnel,
        })
    }

    pub fn rate(&self) -> f64 {
        self.success_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub rows: Vec<ModelRow>,
    pub config: EvalConfig,
    pub env_hash: String,
    pub demo_hash: String,
    pub checkpoint_hashes: Vec<String>,
    pub seeds: Vec<u64>,
}

impl ExperimentReport {
    pub fn row(&self, label: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs `ckpt` on every held-out trial with the given stage source.
pub fn evaluate(p: &EnvParams, ckpt: &Checkpoint, source: &StageSourceSpec, cfg: &EvalConfig) -> Result<Vec<EpisodeRecord>> {
    let trials: Vec<(u64, EnvParams)> = (0..cfg.n_eval).map(|i| held_out_trial(p, cfg, i)).collect();
    cfg.exec
        .map(&trials, |(seed, env)| {
            let feed = StageFeed::new(source, *seed)?;
            rollout(env, ckpt, feed, source.kind(), *seed, &cfg.rollout)
        })
        .into_iter()
        .collect()
}

fn common_demo_hash(models: &[&Checkpoint]) -> Result<String> {
    let first = models.first().ok_or_else(|| Error::contract("no models to evaluate"))?;
    let h = &first.provenance.demo_hash;
    for m in models {
        if &m.provenance.demo_hash != h {
            return Err(Error::Provenance(format!(
                "models trained on different demonstrations ({} vs {})",
                h, m.provenance.demo_hash
            )));
        }
    }
    Ok(h.clone())
}

fn checkpoint_hashes(models: &[&Checkpoint]) -> Result<Vec<String>> {
    models.iter().map(|m| m.hash()).collect()
}

/// Three-policy comparison on held-out dynamics, oracle stage feed.
pub fn run_comparison(
    p: &EnvParams,
    models: &[&Checkpoint],
    reference: &ReferenceTrajectory,
    cfg: &EvalConfig,
) -> Result<ExperimentReport> {
    let demo_hash = common_demo_hash(models)?;
    let source = StageSourceSpec::oracle();
    let mut rows = Vec::new();
    for m in models {
        let records = evaluate(p, m, &source, cfg)?;
        rows.push(ModelRow::from_records(m.config().variant.label(), &records, reference)?);
    }
    Ok(ExperimentReport {
        kind: "comparison".into(),
        rows,
        config: cfg.clone(),
        env_hash: p.hash(),
        demo_hash,
        checkpoint_hashes: checkpoint_hashes(models)?,
        seeds: (0..cfg.n_eval).map(|i| held_out_trial(p, cfg, i).0).collect(),
    })
}

pub const ABLATION_ORACLE: &str = "Stage oracle";
pub const ABLATION_CONSTANT: &str = "Stage constant S1";
pub const ABLATION_RANDOM: &str = "Stage random";

/// Stage-input ablation of a stage-conditioned model.
pub fn run_ablation(
    p: &EnvParams,
    ckpt: &Checkpoint,
    reference: &ReferenceTrajectory,
    cfg: &EvalConfig,
) -> Result<ExperimentReport> {
    if !ckpt.config().variant.uses_stage() {
        return Err(Error::contract("ablation needs a stage-conditioned model"));
    }
    let sources = [
        (ABLATION_ORACLE, StageSourceSpec::oracle()),
        (ABLATION_CONSTANT, StageSourceSpec::Constant { stage: Stage::S1 }),
        (
            ABLATION_RANDOM,
            StageSourceSpec::Random {
                seed: cfg.random_stage_seed,
            },
        ),
    ];
    let mut rows = Vec::new();
    for (label, src) in &sources {
        let records = evaluate(p, ckpt, src, cfg)?;
        rows.push(ModelRow::from_records(label, &records, reference)?);
    }
    Ok(ExperimentReport {
        kind: "ablation".into(),
        rows,
        config: cfg.clone(),
        env_hash: p.hash(),
        demo_hash: ckpt.provenance.demo_hash.clone(),
        checkpoint_hashes: vec![ckpt.hash()?],
        seeds: (0..cfg.n_eval).map(|i| held_out_trial(p, cfg, i).0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Latch permanently released, stages S1 → S4 → S5 on a fixed schedule.
    LatchDisabled,
    /// The latch is forced back on just after release.
    Recovery,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "latch_disabled" => Ok(Scenario::LatchDisabled),
            "recovery" => Ok(Scenario::Recovery),
            other => Err(Error::contract(format!("unknown guidance scenario `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::LatchDisabled => "latch_disabled",
            Scenario::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub n_seeds: usize,
    pub seed: u64,
    /// Schedule of the latch-disabled scenario.
    pub schedule: Vec<(Stage, usize)>,
    pub rollout: RolloutConfig,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            n_seeds: 50,
            seed: 0x0061_D5EED,
            schedule: vec![(Stage::S1, 0), (Stage::S4, 40), (Stage::S5, 90)],
            rollout: RolloutConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl GuidanceConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| derive_seed(self.seed, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRow {
    pub label: String,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Episodes in which the scenario's perturbation actually fired.
    pub triggered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceReport {
    pub scenario: Scenario,
    pub rows: Vec<GuidanceRow>,
    pub config: GuidanceConfig,
    pub env_hash: String,
    pub checkpoint_hash: String,
}

impl GuidanceReport {
    pub fn row(&self, label: &str) -> Option<&GuidanceRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const GUIDED: &str = "with S1 prompt";
pub const UNGUIDED: &str = "without prompt";
pub const SCHEDULED: &str = "S1>S4>S5 schedule";

/// Swings the door shut and relatches it right after it first releases and,
/// when prompting, plays a human operator: prompt S1, then prompt each oracle
/// stage as it changes.
pub struct RecoveryOperator {
    p: EnvParams,
    prompts: Option<PromptHandle>,
    pub injected_at: Option<usize>,
    last_sent: Option<Stage>,
}

impl RecoveryOperator {
    pub fn new(p: &EnvParams, prompts: Option<PromptHandle>) -> RecoveryOperator {
        RecoveryOperator {
            p: p.clone(),
            prompts,
            injected_at: None,
            last_sent: None,
        }
    }

    fn send(&mut self, st: Stage) {
        if self.last_sent != Some(st) {
            if let Some(h) = &self.prompts {
                // The queue is drained every step, so it cannot fill up here.
                let _ = h.send(Prompt::Stage(st));
            }
            self.last_sent = Some(st);
        }
    }
}

impl RolloutHook for RecoveryOperator {
    fn before_step(&mut self, t: usize, state: &mut WorldState) {
        let p = &self.p;
        match self.injected_at {
            None if !state.latch_engaged && state.door_angle < p.theta_open => {
                // The door swings back shut before the robot is through.
                state.door_angle = 0.0;
                state.base_x = state.base_x.min(p.door_x - p.body_front);
                let on_lever = state.hand_above_handle;
                state.force_relatch(p);
                if on_lever {
                    // The springing lever carries the hand back up with it.
                    state.hand_above_handle = true;
                    state.arm_left_h = state.arm_left_h.max(p.handle_height);
                }
                self.injected_at = Some(t);
                self.send(Stage::S1);
            }
            Some(_) if self.prompts.is_some() => {
                self.send(true_stage(state, p));
            }
            _ => {}
        }
    }
}

fn guided_episode(p: &EnvParams, ckpt: &Checkpoint, seed: u64, prompt: bool, rc: &RolloutConfig) -> Result<(EpisodeRecord, bool)> {
    let mut feed = StageFeed::new(&StageSourceSpec::Oracle { monotone: true }, seed)?;
    let handle = if prompt {
        let (h, rx) = prompt_channel(16);
        feed = feed.with_prompts(rx);
        Some(h)
    } else {
        None
    };
    let mut op = RecoveryOperator::new(p, handle);
    let name = if prompt { "prompt_channel" } else { "oracle_monotone" };
    let rec = rollout_with(p, ckpt, feed, name, seed, rc, &mut op)?;
    Ok((rec, op.injected_at.is_some()))
}

fn guidance_row(label: &str, results: &[(EpisodeRecord, bool)]) -> GuidanceRow {
    let successes = results.iter().filter(|(r, _)| r.outcome.success).count();
    GuidanceRow {
        label: label.to_string(),
        n: results.len(),
        successes,
        success_rate: 100.0 * successes as f64 / results.len().max(1) as f64,
        triggered: results.iter().filter(|(_, t)| *t).count(),
    }
}

/// Episodes of one guidance scenario. Recovery returns the prompted arm
/// first; episodes are paired by seed.
pub fn guidance_episodes(
    p: &EnvParams,
    ckpt: &Checkpoint,
    scenario: Scenario,
    cfg: &GuidanceConfig,
) -> Result<Vec<(String, Vec<(EpisodeRecord, bool)>)>> {
    let seeds = cfg.seeds();
    let collect = |v: Vec<Result<(EpisodeRecord, bool)>>| v.into_iter().collect::<Result<Vec<_>>>();
    match scenario {
        Scenario::LatchDisabled => {
            let env = EnvParams {
                latch_disabled: true,
                ..p.clone()
            };
            let src = StageSourceSpec::FixedSequence {
                schedule: cfg.schedule.clone(),
            };
            let runs = cfg.exec.map(&seeds, |&s| {
                let feed = StageFeed::new(&src, s)?;
                Ok((rollout(&env, ckpt, feed, src.kind(), s, &cfg.rollout)?, true))
            });
            Ok(vec![(SCHEDULED.to_string(), collect(runs)?)])
        }
        Scenario::Recovery => {
            let with = collect(cfg.exec.map(&seeds, |&s| guided_episode(p, ckpt, s, true, &cfg.rollout)))?;
            let without = collect(cfg.exec.map(&seeds, |&s| guided_episode(p, ckpt, s, false, &cfg.rollout)))?;
            Ok(vec![(GUIDED.to_string(), with), (UNGUIDED.to_string(), without)])
        }
    }
}

pub fn run_guidance(p: &EnvParams, ckpt: &Checkpoint, scenario: Scenario, cfg: &GuidanceConfig) -> Result<GuidanceReport> {
    if !ckpt.config().variant.uses_stage() {
        return Err(Error::contract("guidance needs a stage-conditioned model"));
    }
    let env_hash = match scenario {
        Scenario::LatchDisabled => EnvParams {
            latch_disabled: true,
            ..p.clone()
        }
        .hash(),
        Scenario::Recovery => p.hash(),
    };
    let rows = guidance_episodes(p, ckpt, scenario, cfg)?
        .iter()
        .map(|(label, res)| guidance_row(label, res))
        .collect();
    Ok(GuidanceReport {
        scenario,
        rows,
        config: cfg.clone(),
        env_hash,
        checkpoint_hash: ckpt.hash()?,
    })
}

/// True when a model's executed actions and visited states do not depend
/// on the stage schedule it is fed, across the given seeds and sources.
pub fn schedule_invariant(
    p: &EnvParams,
    ckpt: &Checkpoint,
    sources: &[StageSourceSpec],
    seeds: &[u64],
    rc: &RolloutConfig,
) -> Result<bool> {
    for &s in seeds {
        let mut first: Option<EpisodeRecord> = None;
        for src in sources {
            let rec = rollout(p, ckpt, StageFeed::new(src, s)?, src.kind(), s, rc)?;
            if let Some(f) = &first {
                if f.actions() != rec.actions() || f.states() != rec.states() {
                    return Ok(false);
                }
            } else {
                first = Some(rec);
            }
        }
    }
    Ok(true)
}
