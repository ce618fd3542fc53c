use serde::{Deserialize, Serialize};

use super::ChunkSample;
use crate::doorworld::{Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};

/// Floor applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension mean and standard deviation of observations (at t) and of
/// every action row in the target chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
}

fn moments<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        n += 1;
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    let std = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl NormStats {
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a ChunkSample>) -> Result<NormStats> {
        let samples: Vec<&ChunkSample> = samples.into_iter().collect();
        if samples.is_empty() {
            return Err(Error::contract("normalization needs at least one sample"));
        }
        let obs: Vec<Vec<f64>> = samples.iter().map(|s| s.current().to_vec()).collect();
        let (obs_mean, obs_std) = moments(obs.iter().map(Vec::as_slice), OBS_DIM);
        let (act_mean, act_std) = moments(
            samples.iter().flat_map(|s| s.target_chunk.iter().map(|a| a.as_slice())),
            ACTION_DIM,
        );
        Ok(NormStats {
            obs_mean,
            obs_std,
            act_mean,
            act_std,
        })
    }

    pub fn apply_obs(&self, o: &Observation) -> Vec<f64> {
        let v = o.to_vec();
        v.iter().zip(&self.obs_mean).zip(&self.obs_std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert_obs(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.obs_mean).zip(&self.obs_std).map(|((x, m), s)| x * s + m).collect()
    }

    pub fn apply_action(&self, a: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|j| (a[j] - self.act_mean[j]) / self.act_std[j])
    }

    pub fn invert_action(&self, z: &[f64]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|j| z[j] * self.act_std[j] + self.act_mean[j])
    }
}
