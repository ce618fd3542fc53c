//! Scripted demonstrations: the expert controller, success-only collection,
//! stage annotation and the on-disk archive.

mod annotate;
mod expert;

pub use annotate::{annotate, AnnotateConfig, AnnotationMode, LabelSource, StageLabels};
pub use expert::{expert_action, ExpertConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::doorworld::{self, Action, EnvParams, Observation, WorldState, OBS_DIM};
use crate::error::{Error, Result};
use crate::par::{derive_seed, Exec};
use crate::stage::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    pub action: Action,
    /// Oracle stage of the state the action was taken in.
    pub stage: Stage,
}

impl Step {
    pub fn torque(&self) -> [f64; 2] {
        self.obs.torque
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub randomize_init: bool,
    pub env_hash: String,
    pub duration_s: f64,
    pub success: bool,
    /// No collision, no re-latch, and the handle was never lost once
    /// grasped (no failed attempts along the way).
    pub clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Re-simulates the recorded actions from the recorded seed.
    pub fn replay(&self, p: &EnvParams) -> Result<Vec<WorldState>> {
        let (mut s, _) = doorworld::reset(self.meta.seed, self.meta.randomize_init, p);
        let mut states = vec![s.clone()];
        for st in &self.steps {
            s = doorworld::step(&s, &st.action, p)?.0;
            states.push(s.clone());
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub n: usize,
    pub seed: u64,
    pub expert: ExpertConfig,
    pub max_steps: usize,
    pub randomize_init: bool,
}

/// Seed of the standard demonstration set.
pub const DEFAULT_DEMO_SEED: u64 = 7;

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            n: 200,
            seed: DEFAULT_DEMO_SEED,
            expert: ExpertConfig::default(),
            max_steps: 400,
            randomize_init: true,
        }
    }
}

/// One expert episode, stopped at success or the step budget.
pub fn expert_episode(seed: u64, cfg: &CollectConfig, p: &EnvParams) -> Result<Trajectory> {
    let (mut s, mut o) = doorworld::reset(seed, cfg.randomize_init, p);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut steps = Vec::new();
    let mut success = false;
    let mut clean = true;
    let mut high = Stage::S1;
    while steps.len() < cfg.max_steps {
        let stage = doorworld::true_stage(&s, p);
        let action = expert_action(&s, stage, p, &cfg.expert, &mut rng);
        let (ns, no, info) = doorworld::step(&s, &action, p)?;
        steps.push(Step { obs: o, action, stage });
        s = ns;
        o = no;
        clean &= !info.collision && !info.relatched && !(high >= Stage::S3 && info.stage < high);
        high = high.max(info.stage);
        if info.success {
            success = true;
            break;
        }
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            seed,
            randomize_init: cfg.randomize_init,
            env_hash: p.hash(),
            duration_s: steps.len() as f64 * p.dt,
            success,
            clean,
        },
        steps,
    })
}

/// Collects `cfg.n` clean successful demonstrations. Episode `i` uses a seed
/// derived from `(cfg.seed, i)`; the first `n` successes in index order are
/// kept, so the result does not depend on `exec`.
pub fn collect(cfg: &CollectConfig, p: &EnvParams, exec: Exec) -> Result<Vec<Trajectory>> {
    if cfg.n == 0 {
        return Err(Error::contract("collect needs n >= 1"));
    }
    p.validate()?;
    let budget = 10 * cfg.n;
    let mut kept = Vec::with_capacity(cfg.n);
    let mut attempts = 0;
    while kept.len() < cfg.n && attempts < budget {
        let batch = (cfg.n - kept.len()).max(8).min(budget - attempts);
        let start = attempts;
        let results = exec.map_range(batch, |j| expert_episode(derive_seed(cfg.seed, (start + j) as u64), cfg, p));
        attempts += batch;
        for r in results {
            let t = r?;
            if t.meta.success && t.meta.clean && kept.len() < cfg.n {
                kept.push(t);
            }
        }
    }
    if kept.len() < cfg.n {
        return Err(Error::CollectionFailure {
            successes: kept.len(),
            attempts,
        });
    }
    Ok(kept)
}

/// Collected demonstrations with their stage labels and generating config.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoArchive {
    pub env: EnvParams,
    pub collect: CollectConfig,
    pub trajectories: Vec<Trajectory>,
    pub labels: Vec<StageLabels>,
}

#[derive(Serialize, Deserialize)]
struct ArchiveHeader {
    env: EnvParams,
    env_hash: String,
    collect: CollectConfig,
    metas: Vec<TrajectoryMeta>,
    lengths: Vec<usize>,
    labels: Vec<(LabelSource, Vec<usize>)>,
}

const ARCHIVE_KIND: &[u8; 4] = b"DEMO";
const ARCHIVE_VERSION: u32 = 1;
const STEP_WIDTH: usize = OBS_DIM + 4;

impl DemoArchive {
    /// Annotates each trajectory, keeping oracle labels for any that the
    /// annotator cannot segment.
    pub fn build(env: EnvParams, collect: CollectConfig, trajectories: Vec<Trajectory>, ann: &AnnotateConfig) -> DemoArchive {
        let labels = trajectories
            .iter()
            .map(|t| annotate(t, ann, &env).unwrap_or_else(|_| StageLabels::oracle(t)))
            .collect();
        DemoArchive {
            env,
            collect,
            trajectories,
            labels,
        }
    }

    fn parts(&self) -> Result<(ArchiveHeader, Vec<f64>)> {
        let mut payload = Vec::new();
        for t in &self.trajectories {
            for s in &t.steps {
                payload.extend(s.obs.to_vec());
                payload.extend(s.action.to_array());
                payload.push(s.stage.number() as f64);
            }
        }
        let header = ArchiveHeader {
            env: self.env.clone(),
            env_hash: self.env.hash(),
            collect: self.collect.clone(),
            metas: self.trajectories.iter().map(|t| t.meta.clone()).collect(),
            lengths: self.trajectories.iter().map(Trajectory::len).collect(),
            labels: self.labels.iter().map(|l| (l.source, l.boundaries.clone())).collect(),
        };
        Ok((header, payload))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (h, payload) = self.parts()?;
        container::encode(ARCHIVE_KIND, ARCHIVE_VERSION, &h, &payload)
    }

    /// Content hash, recorded by datasets built from this archive.
    pub fn hash(&self) -> Result<String> {
        Ok(container::sha256_hex(&self.to_bytes()?))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DemoArchive> {
        let (h, payload): (ArchiveHeader, Vec<f64>) = container::decode(bytes, ARCHIVE_KIND, ARCHIVE_VERSION)?;
        let corrupt = |m: &str| Error::Corruption(format!("demo archive: {m}"));
        if h.env.hash() != h.env_hash {
            return Err(corrupt("environment hash does not match its parameters"));
        }
        if h.metas.len() != h.lengths.len() || h.labels.len() != h.lengths.len() {
            return Err(corrupt("inconsistent trajectory tables"));
        }
        if h.lengths.iter().sum::<usize>() * STEP_WIDTH != payload.len() {
            return Err(corrupt("step count does not match payload"));
        }
        let mut rows = payload.chunks_exact(STEP_WIDTH);
        let mut trajectories = Vec::with_capacity(h.lengths.len());
        let mut labels = Vec::with_capacity(h.lengths.len());
        for ((meta, &len), (source, bounds)) in h.metas.into_iter().zip(&h.lengths).zip(h.labels) {
            let mut steps = Vec::with_capacity(len);
            for row in rows.by_ref().take(len) {
                let stage = Stage::from_number(row[OBS_DIM + 3] as u8).map_err(|_| corrupt("bad stage"))?;
                steps.push(Step {
                    obs: Observation::from_slice(&row[..OBS_DIM])?,
                    action: Action::from_slice(&row[OBS_DIM..OBS_DIM + 3]),
                    stage,
                });
            }
            let traj = Trajectory { steps, meta };
            let l = match source {
                LabelSource::Oracle => StageLabels::oracle(&traj),
                _ => StageLabels::from_boundaries(len, &bounds, source).map_err(|_| corrupt("bad labels"))?,
            };
            labels.push(l);
            trajectories.push(traj);
        }
        Ok(DemoArchive {
            env: h.env,
            collect: h.collect,
            trajectories,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DemoArchive> {
        DemoArchive::from_bytes(&std::fs::read(path)?)
    }
}
