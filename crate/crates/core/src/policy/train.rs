use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_loss_graph, Batch, PolicyConfig, PolicyWeights};
use crate::chunkstore::{ChunkSample, Dataset};
use crate::error::{Error, Result};
use crate::numkit::{adam_step, AdamConfig, OptimState};
use crate::par::Exec;

/// Losses after an epoch. Epoch 0 is the untrained model, so it has no
/// training losses. Validation uses z = μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_total: Option<f64>,
    pub train_recon: Option<f64>,
    pub train_kl: Option<f64>,
    pub val_total: f64,
    pub val_recon: f64,
    pub val_kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Weights from the epoch with the lowest validation reconstruction.
    pub weights: PolicyWeights,
    pub best_epoch: usize,
    pub curves: Vec<EpochStats>,
}

const EVAL_BATCH: usize = 256;

fn evaluate(w: &PolicyWeights, ds: &Dataset, idx: &[usize]) -> Result<(f64, f64, f64)> {
    let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
    for part in idx.chunks(EVAL_BATCH) {
        let samples: Vec<&ChunkSample> = part.iter().map(|&i| &ds.samples[i]).collect();
        let b = Batch::from_samples(&w.config, &samples, &ds.norm)?;
        let noise = vec![0.0; b.n * w.config.dz];
        let (g, nodes) = build_loss_graph(w, &b, &noise, Exec::default())?;
        let m = b.n as f64;
        total += g.value(nodes.total).item() * m;
        recon += g.value(nodes.recon).item() * m;
        kl += g.value(nodes.kl).item() * m;
    }
    let n = idx.len() as f64;
    Ok((total / n, recon / n, kl / n))
}

/// Minibatch Adam on the CVAE loss. Deterministic given the dataset and
/// `config.seed`. Falls back to validating on the training split when the
/// dataset has no validation trajectories.
pub fn train(ds: &Dataset, config: &PolicyConfig) -> Result<TrainResult> {
    config.validate()?;
    ds.check(config.h, config.k)?;
    let mut w = PolicyWeights::init(config)?;
    let mut train_idx = ds.train_indices();
    let mut val_idx = ds.val_indices();
    if train_idx.is_empty() {
        return Err(Error::contract("no training samples"));
    }
    if val_idx.is_empty() {
        val_idx = train_idx.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_7A41);
    let mut opt = OptimState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let (vt, vr, vk) = evaluate(&w, ds, &val_idx)?;
    let mut curves = vec![EpochStats {
        epoch: 0,
        train_total: None,
        train_recon: None,
        train_kl: None,
        val_total: vt,
        val_recon: vr,
        val_kl: vk,
    }];
    let mut best = (vr, 0, w.params.clone());

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let (mut st, mut sr, mut sk) = (0.0, 0.0, 0.0);
        for (bi, part) in train_idx.chunks(config.batch_size).enumerate() {
            let samples: Vec<&ChunkSample> = part.iter().map(|&i| &ds.samples[i]).collect();
            let b = Batch::from_samples(config, &samples, &ds.norm)?;
            let noise: Vec<f64> = (0..b.n * config.dz).map(|_| rng.sample(StandardNormal)).collect();
            let (mut g, nodes) = build_loss_graph(&w, &b, &noise, Exec::default())?;
            let total = g.value(nodes.total).item();
            if !total.is_finite() {
                return Err(Error::Divergence {
                    param: "loss".into(),
                    context: format!("epoch {epoch} batch {bi}"),
                });
            }
            let m = b.n as f64;
            st += total * m;
            sr += g.value(nodes.recon).item() * m;
            sk += g.value(nodes.kl).item() * m;
            g.backward(nodes.total)?;
            adam_step(&mut w.params, &g.gradients(), &mut opt)?;
        }
        let n = train_idx.len() as f64;
        let (vt, vr, vk) = evaluate(&w, ds, &val_idx)?;
        curves.push(EpochStats {
            epoch,
            train_total: Some(st / n),
            train_recon: Some(sr / n),
            train_kl: Some(sk / n),
            val_total: vt,
            val_recon: vr,
            val_kl: vk,
        });
        if vr < best.0 {
            best = (vr, epoch, w.params.clone());
        }
    }
    Ok(TrainResult {
        weights: PolicyWeights {
            config: config.clone(),
            params: best.2,
        },
        best_epoch: best.1,
        curves,
    })
}
