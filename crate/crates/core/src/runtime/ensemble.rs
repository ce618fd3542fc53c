use std::collections::VecDeque;

use crate::doorworld::{Action, ACTION_DIM};
use crate::error::{Error, Result};

/// Live predicted chunks, oldest first.
///
/// Every covering chunk contributes its prediction for the current step.
/// Weights follow the usual chunking convention: the i-th oldest covering
/// chunk gets exp(−m·i), so older predictions dominate and m = 0 averages.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBuffer {
    m: f64,
    h: usize,
    entries: VecDeque<(usize, Vec<[f64; ACTION_DIM]>)>,
}

impl EnsembleBuffer {
    pub fn new(h: usize, m: f64) -> Result<EnsembleBuffer> {
        if h == 0 || !(m >= 0.0 && m.is_finite()) {
            return Err(Error::Configuration(format!("ensemble needs H >= 1 and finite m >= 0 (H={h}, m={m})")));
        }
        Ok(EnsembleBuffer {
            m,
            h,
            entries: VecDeque::with_capacity(h),
        })
    }

    /// Adds the chunk predicted at step `birth` and drops chunks that can no
    /// longer cover it or any later step.
    pub fn push(&mut self, birth: usize, chunk: Vec<[f64; ACTION_DIM]>) -> Result<()> {
        if chunk.len() != self.h {
            return Err(Error::dim(format!("chunk of {} rows, buffer holds H={}", chunk.len(), self.h)));
        }
        if self.entries.back().is_some_and(|(b, _)| *b >= birth) {
            return Err(Error::Scheduler(format!("chunk born at {birth} is not newer than the last one")));
        }
        self.entries.push_back((birth, chunk));
        self.evict(birth);
        Ok(())
    }

    fn evict(&mut self, t: usize) {
        while self.entries.front().is_some_and(|(b, _)| b + self.h <= t) {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalized weights of the chunks covering `t`, with each chunk's
    /// prediction for that step.
    pub fn weights(&self, t: usize) -> Vec<(f64, [f64; ACTION_DIM])> {
        let covering: Vec<&[f64; ACTION_DIM]> = self
            .entries
            .iter()
            .filter(|(b, _)| *b <= t && t < b + self.h)
            .map(|(b, c)| &c[t - b])
            .collect();
        let raw: Vec<f64> = (0..covering.len()).map(|i| (-self.m * i as f64).exp()).collect();
        let sum: f64 = raw.iter().sum();
        raw.iter().zip(covering).map(|(w, a)| (w / sum, *a)).collect()
    }

    /// Ensembled action for step `t`.
    pub fn action(&self, t: usize) -> Result<Action> {
        let ws = self.weights(t);
        if ws.is_empty() {
            return Err(Error::Scheduler(format!("no live chunk covers step {t}")));
        }
        // Blend as offsets from the oldest prediction so agreeing chunks
        // reproduce it bit for bit.
        let mut out = ws[0].1;
        for (w, a) in &ws[1..] {
            for j in 0..ACTION_DIM {
                out[j] += w * (a[j] - ws[0].1[j]);
            }
        }
        Ok(Action::from_slice(&out))
    }
}
