//! The chunking policy: a CVAE whose decoder is a small transformer over
//! [latent, stage?, proprio, visual×K] tokens, in three variants.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use model::{build_loss_graph, Batch, LossNodes};
pub use train::{train, EpochStats, TrainResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::doorworld::{ACTION_DIM, PROPRIO_DIM, VISUAL_DIM};
use crate::error::{Error, Result};
use crate::numkit::{param_count, Params, Tensor};
use crate::stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Stage token added to the decoder input.
    StageConditioned,
    /// Current observation only.
    Plain,
    /// Last five observations, no stage.
    History5,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Plain, Variant::History5, Variant::StageConditioned];

    pub fn uses_stage(self) -> bool {
        self == Variant::StageConditioned
    }

    pub fn window(self) -> usize {
        if self == Variant::History5 {
            5
        } else {
            1
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::StageConditioned => "stage",
            Variant::Plain => "plain",
            Variant::History5 => "history5",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::StageConditioned => "StageACT",
            Variant::Plain => "ACT",
            Variant::History5 => "ACT-history-5",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "stage" | "stage_conditioned" => Ok(Variant::StageConditioned),
            "plain" => Ok(Variant::Plain),
            "history5" | "history" => Ok(Variant::History5),
            _ => Err(Error::Configuration(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub variant: Variant,
    pub h: usize,
    pub k: usize,
    pub dz: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Normalized inputs are clipped to ±this before embedding.
    pub input_clip: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            variant: Variant::StageConditioned,
            h: 25,
            k: 1,
            dz: 8,
            width: 64,
            layers: 2,
            heads: 4,
            ffn: 128,
            beta: 10.0,
            epochs: 12,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
            input_clip: 10.0,
        }
    }
}

impl PolicyConfig {
    pub fn for_variant(variant: Variant) -> PolicyConfig {
        PolicyConfig {
            variant,
            k: variant.window(),
            ..PolicyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.variant == Variant::History5 && self.k != 5 {
            return bad(format!("history5 needs K=5, got {}", self.k));
        }
        if [self.h, self.k, self.dz, self.width, self.layers, self.heads, self.ffn, self.batch_size]
            .contains(&0)
        {
            return bad("all policy dimensions must be positive".into());
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if !(self.lr > 0.0 && self.beta >= 0.0 && self.input_clip > 0.0) {
            return bad("lr, beta and input_clip must be positive".into());
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        2 + usize::from(self.variant.uses_stage()) + self.k
    }

    pub fn chunk_len(&self) -> usize {
        self.h * ACTION_DIM
    }
}

/// Encoder posterior over the latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// z = μ + exp(logvar/2) ⊙ noise.
pub fn reparameterize(lp: &LatentParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != lp.mu.len() || lp.logvar.len() != lp.mu.len() {
        return Err(Error::dim("reparameterize: latent and noise sizes differ"));
    }
    Ok(lp
        .mu
        .iter()
        .zip(&lp.logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// KL divergence from N(μ, diag exp(logvar)) to N(0, I).
pub fn kl_std_normal(lp: &LatentParams) -> f64 {
    0.5 * lp
        .mu
        .iter()
        .zip(&lp.logvar)
        .map(|(m, lv)| m * m + (lv.exp_m1() - lv))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Mean L1 reconstruction plus β-weighted KL.
pub fn loss(pred: &[f64], target: &[f64], lp: &LatentParams, beta: f64) -> Result<LossParts> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim(format!("loss: prediction {} vs target {}", pred.len(), target.len())));
    }
    let recon = pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64;
    let kl = kl_std_normal(lp);
    Ok(LossParts {
        total: recon + beta * kl,
        recon,
        kl,
    })
}

/// Trainable parameters together with the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    pub config: PolicyConfig,
    pub params: Params,
}

/// Width of the stage embedding block (weights plus bias).
pub fn stage_embed_size(width: usize) -> usize {
    Stage::COUNT * width + width
}

impl PolicyWeights {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: &PolicyConfig) -> Result<PolicyWeights> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::new();
        let (w, dz) = (config.width, config.dz);
        let linear = |params: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            let data = (0..fan_in * fan_out).map(|_| u.sample(rng)).collect();
            params.insert(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], data).expect("shape"));
            params.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        };
        let norm = |params: &mut Params, name: &str| {
            params.insert(format!("{name}.g"), Tensor::full(&[w], 1.0));
            params.insert(format!("{name}.b"), Tensor::zeros(&[w]));
        };

        linear(&mut params, "enc.l1", PROPRIO_DIM + config.chunk_len(), w, &mut rng);
        linear(&mut params, "enc.l2", w, w, &mut rng);
        linear(&mut params, "enc.out", w, 2 * dz, &mut rng);

        linear(&mut params, "emb.z", dz, w, &mut rng);
        if config.variant.uses_stage() {
            linear(&mut params, "emb.stage", Stage::COUNT, w, &mut rng);
        }
        linear(&mut params, "emb.proprio", PROPRIO_DIM, w, &mut rng);
        linear(&mut params, "emb.visual", VISUAL_DIM, w, &mut rng);
        let u = Uniform::new_inclusive(-0.02, 0.02).expect("finite bound");
        let pos = (0..config.k * w).map(|_| u.sample(&mut rng)).collect();
        params.insert("emb.pos".into(), Tensor::new(vec![config.k, w], pos)?);

        for l in 0..config.layers {
            let p = format!("blk{l}");
            norm(&mut params, &format!("{p}.ln1"));
            for m in ["q", "k", "v", "o"] {
                linear(&mut params, &format!("{p}.attn.{m}"), w, w, &mut rng);
            }
            norm(&mut params, &format!("{p}.ln2"));
            linear(&mut params, &format!("{p}.ffn1"), w, config.ffn, &mut rng);
            linear(&mut params, &format!("{p}.ffn2"), config.ffn, w, &mut rng);
        }
        norm(&mut params, "ln_f");
        linear(&mut params, "head", w, config.chunk_len(), &mut rng);
        Ok(PolicyWeights {
            config: config.clone(),
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params)
    }

    /// Posterior over z for one (proprio, normalized chunk) pair.
    pub fn encode(&self, proprio: &[f64], chunk: &[f64]) -> Result<LatentParams> {
        if proprio.len() != PROPRIO_DIM || chunk.len() != self.config.chunk_len() {
            return Err(Error::contract(format!(
                "encode: expected proprio {PROPRIO_DIM} and chunk {}, got {} and {}",
                self.config.chunk_len(),
                proprio.len(),
                chunk.len()
            )));
        }
        model::encode(self, proprio, chunk)
    }

    /// Normalized H×3 chunk, flattened row-major, for one observation window
    /// (each entry a normalized observation vector).
    pub fn decode(&self, window: &[Vec<f64>], stage_onehot: Option<&[f64]>, z: &[f64]) -> Result<Vec<f64>> {
        let batch = Batch::single(&self.config, window, stage_onehot)?;
        model::decode_batch(self, &batch, z)
    }
}
