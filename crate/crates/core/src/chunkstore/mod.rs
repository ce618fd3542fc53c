//! Chunked supervised dataset: (observation window, stage, H-step action
//! chunk) samples with normalization statistics and a versioned file format.
//!
//! Chunk convention: the sample at step t pairs the window ending at t with
//! the H actions starting at t, for t in 0..T−H (so T−H samples per
//! trajectory).

mod norm;

pub use norm::NormStats;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::demogen::{DemoArchive, LabelSource, StageLabels, Trajectory};
use crate::doorworld::{Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::stage::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSample {
    /// Oldest first; the last entry is the observation at t.
    pub obs_window: Vec<Observation>,
    pub stage: Stage,
    pub target_chunk: Vec<[f64; ACTION_DIM]>,
}

impl ChunkSample {
    pub fn current(&self) -> &Observation {
        self.obs_window.last().expect("window is never empty")
    }
}

/// Chunks one trajectory under the given per-step stage labels.
pub fn chunk(traj: &Trajectory, stages: &[Stage], h: usize, k: usize) -> Result<Vec<ChunkSample>> {
    if h < 1 || k < 1 {
        return Err(Error::contract(format!("chunking needs H >= 1 and K >= 1, got H={h} K={k}")));
    }
    if stages.len() != traj.len() {
        return Err(Error::dim(format!("{} labels for {} steps", stages.len(), traj.len())));
    }
    let n = traj.len().saturating_sub(h);
    Ok((0..n)
        .map(|t| ChunkSample {
            obs_window: (0..k)
                .map(|j| traj.steps[(t + j + 1).saturating_sub(k)].obs.clone())
                .collect(),
            stage: stages[t],
            target_chunk: traj.steps[t..t + h].iter().map(|s| s.action.to_array()).collect(),
        })
        .collect())
}

/// Which labels feed the stage input during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelChoice {
    Archive,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub h: usize,
    pub k: usize,
    pub labels: LabelChoice,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            h: 25,
            k: 1,
            labels: LabelChoice::Archive,
            val_fraction: 0.1,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub demo_hash: String,
    pub env_hash: String,
    pub h: usize,
    pub k: usize,
    pub label_source: LabelSource,
    pub chunk_convention: String,
}

const CONVENTION: &str = "h_actions_from_t";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ChunkSample>,
    /// Source trajectory of each sample.
    pub traj_of: Vec<usize>,
    pub train_trajs: Vec<usize>,
    pub val_trajs: Vec<usize>,
    pub norm: NormStats,
    pub provenance: Provenance,
}

/// Shuffled split of trajectory indices into sorted (train, val) sets.
/// Validation gets at least one trajectory whenever `val_fraction > 0`, and
/// training always keeps at least one.
pub fn split_trajectories(n: usize, cfg: &DatasetConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::contract("a dataset needs at least two trajectories"));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Configuration(format!("val_fraction {} outside [0, 1)", cfg.val_fraction)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.split_seed));
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(usize::from(cfg.val_fraction > 0.0), n - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

impl Dataset {
    pub fn build(archive: &DemoArchive, cfg: &DatasetConfig) -> Result<Dataset> {
        let n = archive.trajectories.len();
        let (train_trajs, val_trajs) = split_trajectories(n, cfg)?;
        let mut samples = Vec::new();
        let mut traj_of = Vec::new();
        let mut source = None;
        for (i, (t, l)) in archive.trajectories.iter().zip(&archive.labels).enumerate() {
            let labels = match cfg.labels {
                LabelChoice::Archive => l.clone(),
                LabelChoice::Oracle => StageLabels::oracle(t),
            };
            source.get_or_insert(labels.source);
            let s = chunk(t, &labels.stages, cfg.h, cfg.k)?;
            traj_of.extend(std::iter::repeat_n(i, s.len()));
            samples.extend(s);
        }
        let mut in_train = vec![false; n];
        train_trajs.iter().for_each(|&i| in_train[i] = true);
        let train: Vec<&ChunkSample> = samples.iter().zip(&traj_of).filter(|(_, &i)| in_train[i]).map(|(s, _)| s).collect();
        let norm = NormStats::fit(train)?;
        Ok(Dataset {
            samples,
            traj_of,
            train_trajs,
            val_trajs,
            norm,
            provenance: Provenance {
                demo_hash: archive.hash()?,
                env_hash: archive.env.hash(),
                h: cfg.h,
                k: cfg.k,
                label_source: source.unwrap_or(LabelSource::Oracle),
                chunk_convention: CONVENTION.into(),
            },
        })
    }

    pub fn h(&self) -> usize {
        self.provenance.h
    }

    pub fn k(&self) -> usize {
        self.provenance.k
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn indices_of(&self, trajs: &[usize]) -> Vec<usize> {
        let mut keep = vec![false; self.traj_of.iter().max().map_or(0, |m| m + 1)];
        for &i in trajs {
            if let Some(slot) = keep.get_mut(i) {
                *slot = true;
            }
        }
        (0..self.len()).filter(|&j| keep[self.traj_of[j]]).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(&self.train_trajs)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        self.indices_of(&self.val_trajs)
    }

    /// Content hash of the serialized dataset.
    pub fn hash(&self) -> Result<String> {
        Ok(container::sha256_hex(&self.to_bytes()?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (h, k) = (self.h(), self.k());
        let mut payload = Vec::with_capacity(self.len() * (k * OBS_DIM + h * ACTION_DIM));
        for s in &self.samples {
            for o in &s.obs_window {
                payload.extend(o.to_vec());
            }
            for a in &s.target_chunk {
                payload.extend_from_slice(a);
            }
        }
        let header = Header {
            provenance: self.provenance.clone(),
            n: self.len(),
            obs_dim: OBS_DIM,
            action_dim: ACTION_DIM,
            norm: self.norm.clone(),
            stages: self.samples.iter().map(|s| s.stage.number()).collect(),
            traj_of: self.traj_of.clone(),
            train_trajs: self.train_trajs.clone(),
            val_trajs: self.val_trajs.clone(),
        };
        container::encode(KIND, VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let (hd, payload): (Header, Vec<f64>) = container::decode(bytes, KIND, VERSION)?;
        let corrupt = |m: &str| Error::Corruption(format!("dataset: {m}"));
        let (h, k) = (hd.provenance.h, hd.provenance.k);
        if hd.obs_dim != OBS_DIM || hd.action_dim != ACTION_DIM {
            return Err(corrupt("dimension mismatch"));
        }
        let width = k * OBS_DIM + h * ACTION_DIM;
        if h == 0 || k == 0 || hd.stages.len() != hd.n || hd.traj_of.len() != hd.n || payload.len() != hd.n * width {
            return Err(corrupt("table sizes disagree with payload"));
        }
        let mut samples = Vec::with_capacity(hd.n);
        for (row, &st) in payload.chunks_exact(width).zip(&hd.stages) {
            let (obs, acts) = row.split_at(k * OBS_DIM);
            samples.push(ChunkSample {
                obs_window: obs.chunks_exact(OBS_DIM).map(Observation::from_slice).collect::<Result<_>>()?,
                stage: Stage::from_number(st).map_err(|_| corrupt("bad stage"))?,
                target_chunk: acts.chunks_exact(ACTION_DIM).map(|a| [a[0], a[1], a[2]]).collect(),
            });
        }
        Ok(Dataset {
            samples,
            traj_of: hd.traj_of,
            train_trajs: hd.train_trajs,
            val_trajs: hd.val_trajs,
            norm: hd.norm,
            provenance: hd.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and checks the recorded horizon and window against the caller's.
    pub fn load_expecting(path: &Path, h: usize, k: usize) -> Result<Dataset> {
        let d = Dataset::load(path)?;
        d.check(h, k)?;
        Ok(d)
    }

    pub fn check(&self, h: usize, k: usize) -> Result<()> {
        if self.h() != h || self.k() != k {
            return Err(Error::Provenance(format!(
                "dataset was built with H={} K={}, requested H={h} K={k}",
                self.h(),
                self.k()
            )));
        }
        Ok(())
    }
}

const KIND: &[u8; 4] = b"DSET";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
    n: usize,
    obs_dim: usize,
    action_dim: usize,
    norm: NormStats,
    stages: Vec<u8>,
    traj_of: Vec<usize>,
    train_trajs: Vec<usize>,
    val_trajs: Vec<usize>,
}
