use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub hyper: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimState {
    pub fn new(hyper: AdamConfig) -> Self {
        OptimState {
            hyper,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
///
/// All gradients are validated before any parameter is touched, so a
/// divergence error leaves `params` and `state` unchanged.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "gradient shape {:?} does not match parameter `{name}` {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Divergence {
                param: name.clone(),
                context: format!("optimizer step {}", state.step + 1),
            });
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("validated above");
        let mo = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; g.len()],
            v: vec![0.0; g.len()],
        });
        for ((w, &gi), (m, v)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mo.m.iter_mut().zip(mo.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.5);
        let mut s = OptimState::new(AdamConfig::default());
        adam_step(&mut p, &single(0.0), &mut s).unwrap();
        assert_eq!(p["w"].item(), 1.5);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.25, 1e-3] {
            let mut p = single(0.0);
            let mut s = OptimState::new(AdamConfig::default());
            adam_step(&mut p, &single(g), &mut s).unwrap();
            let expected = -1e-4 * g.signum();
            assert!((p["w"].item() - expected).abs() < 1e-4 * 1e-4, "g={g}");
        }
    }

    #[test]
    fn step_counter_increments() {
        let mut p = single(0.0);
        let mut s = OptimState::new(AdamConfig::default());
        for i in 1..=5 {
            adam_step(&mut p, &single(0.1 * i as f64), &mut s).unwrap();
            assert_eq!(s.step_count(), i);
        }
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = single(0.3);
            let mut s = OptimState::new(AdamConfig::default());
            for i in 0..50 {
                adam_step(&mut p, &single(((i * 7) % 5) as f64 - 2.0), &mut s).unwrap();
            }
            p["w"].item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(1.0);
        let mut s = OptimState::new(AdamConfig::default());
        match adam_step(&mut p, &single(f64::NAN), &mut s) {
            Err(Error::Divergence { param, .. }) => assert_eq!(param, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p["w"].item(), 1.0);
        assert_eq!(s.step_count(), 0);
    }
}
