use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::doorworld::EnvParams;
use crate::error::{Error, Result};
use crate::stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Oracle,
    Annotated,
    Human,
}

/// Per-step stage assignment with its four stage boundaries.
///
/// `boundaries[k]` is the first step labelled with stage k+2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLabels {
    pub stages: Vec<Stage>,
    pub boundaries: Vec<usize>,
    pub source: LabelSource,
}

impl StageLabels {
    /// Contiguous segmentation of `len` steps. With fewer than four
    /// boundaries the last stage reached extends to the end.
    pub fn from_boundaries(len: usize, boundaries: &[usize], source: LabelSource) -> Result<StageLabels> {
        if boundaries.len() > 4 {
            return Err(Error::contract("at most four stage boundaries"));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.iter().any(|&b| b >= len) {
            return Err(Error::contract(format!("boundaries {boundaries:?} not increasing within {len} steps")));
        }
        let stages = (0..len)
            .map(|t| Stage::ALL[boundaries.iter().filter(|&&b| b <= t).count()])
            .collect();
        Ok(StageLabels {
            stages,
            boundaries: boundaries.to_vec(),
            source,
        })
    }

    /// Labels straight from the recorded oracle stages.
    pub fn oracle(traj: &Trajectory) -> StageLabels {
        let stages: Vec<Stage> = traj.steps.iter().map(|s| s.stage).collect();
        let boundaries = Stage::ALL[1..]
            .iter()
            .filter_map(|&k| stages.iter().position(|&s| s >= k))
            .collect();
        StageLabels {
            stages,
            boundaries,
            source: LabelSource::Oracle,
        }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Fraction of steps on which two labelings agree.
    pub fn agreement(&self, other: &StageLabels) -> Result<f64> {
        if self.len() != other.len() || self.is_empty() {
            return Err(Error::dim(format!("label lengths {} and {}", self.len(), other.len())));
        }
        let same = self.stages.iter().zip(&other.stages).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    /// Torque spikes refined with visual and kinematic events.
    Kinematic,
    /// Joint positions and torques only.
    TorqueOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub spike_threshold: f64,
    pub mode: AnnotationMode,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            spike_threshold: 0.5,
            mode: AnnotationMode::Kinematic,
        }
    }
}

/// Post-hoc segmentation of a demonstration from its recorded signals.
///
/// Boundaries are searched in order, each strictly after the previous one:
/// approach onset, rising left-torque spike (handle contact), rising
/// right-torque spike (door contact), and the door opening.
pub fn annotate(traj: &Trajectory, cfg: &AnnotateConfig, p: &EnvParams) -> Result<StageLabels> {
    let obs: Vec<_> = traj.steps.iter().map(|s| &s.obs).collect();
    let n = obs.len();
    let thr = cfg.spike_threshold;
    let d_tau = |t: usize, j: usize| obs[t].torque[j] - obs[t - 1].torque[j];

    let approach: Box<dyn Fn(usize) -> bool> = match cfg.mode {
        AnnotationMode::Kinematic => Box::new(|t| (p.approach_near..=p.approach_far).contains(&obs[t].depth())),
        // The hand starts rising on the step the approach begins.
        AnnotationMode::TorqueOnly => Box::new(|t| t + 1 < n && obs[t + 1].proprio[0] > obs[t].proprio[0] + 1e-3),
    };
    let opened: Box<dyn Fn(usize) -> bool> = match cfg.mode {
        AnnotationMode::Kinematic => Box::new(|t| obs[t].door_angle() >= p.theta_open),
        // The right hand leaves the door as the arms start lowering.
        AnnotationMode::TorqueOnly => Box::new(|t| t + 1 < n && d_tau(t + 1, 1) < -thr),
    };
    let tests: [&dyn Fn(usize) -> bool; 4] = [
        &*approach,
        &|t| t > 0 && d_tau(t, 0) > thr,
        &|t| t > 0 && d_tau(t, 1) > thr,
        &*opened,
    ];

    let mut boundaries = Vec::with_capacity(4);
    let mut from = 1;
    for test in tests {
        match (from..n).find(|&t| test(t)) {
            Some(b) => {
                boundaries.push(b);
                from = b + 1;
            }
            None => {
                let partial = StageLabels::from_boundaries(n, &boundaries, LabelSource::Annotated)?;
                return Err(Error::AnnotationAmbiguous {
                    found: boundaries.len(),
                    partial: Box::new(partial),
                });
            }
        }
    }
    StageLabels::from_boundaries(n, &boundaries, LabelSource::Annotated)
}
