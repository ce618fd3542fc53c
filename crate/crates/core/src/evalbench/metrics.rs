use serde::{Deserialize, Serialize};

use crate::chunkstore::{split_trajectories, DatasetConfig};
use crate::demogen::{DemoArchive, Trajectory};
use crate::doorworld::{EpisodeOutcome, ACTION_DIM};
use crate::error::{Error, Result};
use crate::stage::Stage;

/// Action dimensions driving the arms.
pub const UPPER_DIMS: [usize; 2] = [0, 1];
/// Action dimension holding the commanded base velocity.
pub const ROOT_DIM: usize = 2;

/// Mean expert action trace, averaged after resampling every demo to the
/// median demo length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub trace: Vec<[f64; ACTION_DIM]>,
}

impl ReferenceTrajectory {
    pub fn from_demos<'a>(demos: impl IntoIterator<Item = &'a Trajectory>) -> Result<ReferenceTrajectory> {
        let traces: Vec<Vec<[f64; ACTION_DIM]>> = demos
            .into_iter()
            .map(|d| d.steps.iter().map(|s| s.action.to_array()).collect())
            .collect();
        if traces.is_empty() {
            return Err(Error::contract("reference trajectory needs at least one demo"));
        }
        let mut lens: Vec<usize> = traces.iter().map(Vec::len).collect();
        lens.sort_unstable();
        let target = lens[lens.len() / 2].max(2);
        let mut sum = vec![[0.0; ACTION_DIM]; target];
        for tr in &traces {
            let r = resample(tr, target)?;
            for (acc, row) in sum.iter_mut().zip(&r) {
                for j in 0..ACTION_DIM {
                    acc[j] += row[j];
                }
            }
        }
        let n = traces.len() as f64;
        for row in &mut sum {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Ok(ReferenceTrajectory { trace: sum })
    }

    /// Mean over the training split that `cfg` produces for this archive.
    pub fn from_archive(archive: &DemoArchive, cfg: &DatasetConfig) -> Result<ReferenceTrajectory> {
        let (train, _) = split_trajectories(archive.trajectories.len(), cfg)?;
        ReferenceTrajectory::from_demos(train.iter().map(|&i| &archive.trajectories[i]))
    }

    pub fn native_len(&self) -> usize {
        self.trace.len()
    }
}

/// Linear-interpolation resampling that keeps both endpoints.
pub fn resample(trace: &[[f64; ACTION_DIM]], target_len: usize) -> Result<Vec<[f64; ACTION_DIM]>> {
    if target_len < 2 {
        return Err(Error::contract(format!("resample target length {target_len} < 2")));
    }
    match trace.len() {
        0 => return Err(Error::contract("cannot resample an empty trace")),
        1 => return Ok(vec![trace[0]; target_len]),
        n if n == target_len => return Ok(trace.to_vec()),
        _ => {}
    }
    let last = (trace.len() - 1) as f64;
    let span = (target_len - 1) as f64;
    Ok((0..target_len)
        .map(|i| {
            if i == target_len - 1 {
                return trace[trace.len() - 1];
            }
            let x = i as f64 * last / span;
            let lo = x.floor() as usize;
            let f = x - lo as f64;
            let (a, b) = (trace[lo], trace[(lo + 1).min(trace.len() - 1)]);
            std::array::from_fn(|j| a[j] + f * (b[j] - a[j]))
        })
        .collect())
}

pub fn time_normalize(reference: &ReferenceTrajectory, target_len: usize) -> Result<Vec<[f64; ACTION_DIM]>> {
    resample(&reference.trace, target_len)
}

/// (1/T) Σ_t |q_t − q*_t| for one scalar trace.
pub fn mean_abs_error(q: &[f64], q_ref: &[f64]) -> Result<f64> {
    if q.len() != q_ref.len() || q.is_empty() {
        return Err(Error::contract(format!(
            "tracking traces must be non-empty and equally long ({} vs {})",
            q.len(),
            q_ref.len()
        )));
    }
    Ok(q.iter().zip(q_ref).map(|(a, b)| (a - b).abs()).sum::<f64>() / q.len() as f64)
}

fn column(trace: &[[f64; ACTION_DIM]], j: usize) -> Vec<f64> {
    trace.iter().map(|r| r[j]).collect()
}

/// Upper-body tracking error, averaged over the arm dimensions. `reference`
/// must already be time-normalized to the episode length.
pub fn tracking_error_upper(episode: &[[f64; ACTION_DIM]], reference: &[[f64; ACTION_DIM]]) -> Result<f64> {
    let mut total = 0.0;
    for &j in &UPPER_DIMS {
        total += mean_abs_error(&column(episode, j), &column(reference, j))?;
    }
    Ok(total / UPPER_DIMS.len() as f64)
}

/// Root tracking error over the commanded base velocity.
pub fn tracking_error_root(episode: &[[f64; ACTION_DIM]], reference: &[[f64; ACTION_DIM]]) -> Result<f64> {
    mean_abs_error(&column(episode, ROOT_DIM), &column(reference, ROOT_DIM))
}

/// Both tracking errors against the reference resampled to the episode
/// length. `None` for episodes shorter than two steps.
pub fn episode_tracking(actions: &[[f64; ACTION_DIM]], reference: &ReferenceTrajectory) -> Result<Option<(f64, f64)>> {
    if actions.len() < 2 {
        return Ok(None);
    }
    let r = time_normalize(reference, actions.len())?;
    Ok(Some((tracking_error_upper(actions, &r)?, tracking_error_root(actions, &r)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelRow {
    pub stage: Stage,
    pub attempts: usize,
    pub successes: usize,
}

impl FunnelRow {
    pub fn fraction(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.successes as f64 / self.attempts as f64)
    }
}

/// Per-stage funnel: stage 1 is attempted by every episode, stage k by the
/// successes of stage k−1.
pub fn funnel_table(outcomes: &[EpisodeOutcome]) -> Result<Vec<FunnelRow>> {
    if outcomes.is_empty() {
        return Err(Error::contract("funnel table needs at least one episode"));
    }
    let mut rows = Vec::with_capacity(Stage::COUNT);
    let mut attempts = outcomes.len();
    for (k, stage) in Stage::ALL.iter().enumerate() {
        let successes = outcomes.iter().filter(|o| o.stages_passed() > k).count();
        rows.push(FunnelRow {
            stage: *stage,
            attempts,
            successes,
        });
        attempts = successes;
    }
    Ok(rows)
}
