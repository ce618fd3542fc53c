use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task stage of the door-opening episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// Search: walk until the handle is in the approach zone.
    S1,
    /// Approach: raise the left hand above the handle and dock.
    S2,
    /// Rotate: press the handle down past the unlatch angle.
    S3,
    /// Push: extend the right arm and walk the door open.
    S4,
    /// Stop: walk through, lower both arms, come to rest.
    S5,
}

impl Stage {
    pub const COUNT: usize = 5;
    pub const ALL: [Stage; 5] = [Stage::S1, Stage::S2, Stage::S3, Stage::S4, Stage::S5];

    /// Zero-based index.
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based stage number as shown to operators.
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_index(i: usize) -> Result<Stage> {
        Stage::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("stage index {i} out of range")))
    }

    pub fn from_number(n: u8) -> Result<Stage> {
        match n {
            1..=5 => Stage::from_index(n as usize - 1),
            _ => Err(Error::contract(format!("stage number {n} out of range 1..=5"))),
        }
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.index()] = 1.0;
        v
    }

    /// Inverse of [`Stage::one_hot`]; rejects anything that is not exactly one-hot.
    pub fn from_one_hot(v: &[f64]) -> Result<Stage> {
        if v.len() != Stage::COUNT {
            return Err(Error::contract(format!("stage one-hot has length {}, expected 5", v.len())));
        }
        if v.iter().any(|&x| x != 0.0 && x != 1.0) || v.iter().sum::<f64>() != 1.0 {
            return Err(Error::contract(format!("stage vector {v:?} is not one-hot")));
        }
        let i = v.iter().position(|&x| x == 1.0).expect("sum is one");
        Stage::from_index(i)
    }

    pub fn next(self) -> Option<Stage> {
        Stage::ALL.get(self.index() + 1).copied()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.number())
    }
}
