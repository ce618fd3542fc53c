use std::collections::BTreeMap;

use super::{LatentParams, PolicyConfig, PolicyWeights};
use crate::chunkstore::{ChunkSample, NormStats};
use crate::doorworld::{OBS_DIM, PROPRIO_DIM, VISUAL_DIM};
use crate::error::{Error, Result};
use crate::numkit::{Graph, NodeId, Tensor};
use crate::par::Exec;
use crate::stage::Stage;

const LN_EPS: f64 = 1e-5;

/// Network-ready inputs for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    /// `[n, K, 16]`, normalized and clipped.
    pub visual: Vec<f64>,
    /// `[n, 2]`, normalized and clipped (current step).
    pub proprio: Vec<f64>,
    /// `[n, 5]` one-hot, present iff the variant takes a stage.
    pub stage: Option<Vec<f64>>,
    /// `[n, H·3]` normalized target chunks; empty at inference.
    pub target: Vec<f64>,
}

fn push_window(cfg: &PolicyConfig, window: &[Vec<f64>], visual: &mut Vec<f64>, proprio: &mut Vec<f64>) {
    let c = cfg.input_clip;
    for v in window {
        visual.extend(v[..VISUAL_DIM].iter().map(|x| x.clamp(-c, c)));
    }
    let cur = window.last().expect("non-empty window");
    proprio.extend(cur[VISUAL_DIM..VISUAL_DIM + PROPRIO_DIM].iter().map(|x| x.clamp(-c, c)));
}

impl Batch {
    pub fn from_samples(cfg: &PolicyConfig, samples: &[&ChunkSample], norm: &NormStats) -> Result<Batch> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::contract("empty batch"));
        }
        let mut visual = Vec::with_capacity(n * cfg.k * VISUAL_DIM);
        let mut proprio = Vec::with_capacity(n * PROPRIO_DIM);
        let mut stage = cfg.variant.uses_stage().then(|| Vec::with_capacity(n * Stage::COUNT));
        let mut target = Vec::with_capacity(n * cfg.chunk_len());
        for s in samples {
            if s.obs_window.len() != cfg.k || s.target_chunk.len() != cfg.h {
                return Err(Error::contract(format!(
                    "sample has window {} and chunk {}, policy expects K={} H={}",
                    s.obs_window.len(),
                    s.target_chunk.len(),
                    cfg.k,
                    cfg.h
                )));
            }
            let window: Vec<Vec<f64>> = s.obs_window.iter().map(|o| norm.apply_obs(o)).collect();
            push_window(cfg, &window, &mut visual, &mut proprio);
            if let Some(st) = stage.as_mut() {
                st.extend(s.stage.one_hot());
            }
            for a in &s.target_chunk {
                target.extend(norm.apply_action(a));
            }
        }
        Ok(Batch {
            n,
            visual,
            proprio,
            stage,
            target,
        })
    }

    /// One inference input. The stage must be given exactly when the
    /// variant uses it, as a strict one-hot vector.
    pub fn single(cfg: &PolicyConfig, window: &[Vec<f64>], stage_onehot: Option<&[f64]>) -> Result<Batch> {
        if window.len() != cfg.k || window.iter().any(|v| v.len() != OBS_DIM) {
            return Err(Error::contract(format!(
                "decode: window must hold {} observations of {OBS_DIM} values",
                cfg.k
            )));
        }
        let stage = match (cfg.variant.uses_stage(), stage_onehot) {
            (true, Some(v)) => Some(Stage::from_one_hot(v)?.one_hot().to_vec()),
            (true, None) => return Err(Error::contract("stage-conditioned decode needs a stage")),
            (false, Some(_)) => {
                return Err(Error::contract(format!("{} variant takes no stage input", cfg.variant.name())))
            }
            (false, None) => None,
        };
        let mut visual = Vec::new();
        let mut proprio = Vec::new();
        push_window(cfg, window, &mut visual, &mut proprio);
        Ok(Batch {
            n: 1,
            visual,
            proprio,
            stage,
            target: Vec::new(),
        })
    }

    /// Concatenates single-sample batches.
    pub fn stack(parts: &[Batch]) -> Result<Batch> {
        let first = parts.first().ok_or_else(|| Error::contract("empty batch"))?;
        let mut out = Batch {
            n: 0,
            visual: Vec::new(),
            proprio: Vec::new(),
            stage: first.stage.as_ref().map(|_| Vec::new()),
            target: Vec::new(),
        };
        for b in parts {
            out.n += b.n;
            out.visual.extend_from_slice(&b.visual);
            out.proprio.extend_from_slice(&b.proprio);
            match (out.stage.as_mut(), &b.stage) {
                (Some(s), Some(bs)) => s.extend_from_slice(bs),
                (None, None) => {}
                _ => return Err(Error::contract("mixed stage presence in batch")),
            }
            out.target.extend_from_slice(&b.target);
        }
        Ok(out)
    }
}

/// Graph builder that registers parameters on first use.
struct Net<'a> {
    g: Graph,
    w: &'a PolicyWeights,
    ids: BTreeMap<String, NodeId>,
}

impl<'a> Net<'a> {
    fn new(w: &'a PolicyWeights, exec: Exec) -> Self {
        Net {
            g: Graph::with_exec(exec),
            w,
            ids: BTreeMap::new(),
        }
    }

    fn p(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let t = self
            .w
            .params
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        let id = self.g.param(name, t)?;
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        Ok(self.g.input(Tensor::new(shape, data)?))
    }

    fn linear(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_broadcast(y, b)
    }

    fn norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let g = self.p(&format!("{name}.g"))?;
        let b = self.p(&format!("{name}.b"))?;
        self.g.layer_norm(x, g, b, LN_EPS)
    }

    /// `[n, dz]` latent → `[n, H·3]` chunk.
    fn decoder(&mut self, b: &Batch, z: NodeId) -> Result<NodeId> {
        let cfg = &self.w.config;
        let (n, wd, k, t) = (b.n, cfg.width, cfg.k, cfg.tokens());
        let mut tokens = Vec::with_capacity(t);
        let zt = self.linear("emb.z", z)?;
        tokens.push(self.g.reshape(zt, &[n, 1, wd])?);
        if let Some(st) = &b.stage {
            let s = self.input(vec![n, 5], st.clone())?;
            let e = self.linear("emb.stage", s)?;
            tokens.push(self.g.reshape(e, &[n, 1, wd])?);
        }
        let pr = self.input(vec![n, PROPRIO_DIM], b.proprio.clone())?;
        let e = self.linear("emb.proprio", pr)?;
        tokens.push(self.g.reshape(e, &[n, 1, wd])?);
        let vi = self.input(vec![n * k, VISUAL_DIM], b.visual.clone())?;
        let e = self.linear("emb.visual", vi)?;
        let e = self.g.reshape(e, &[n, k, wd])?;
        let pos = self.p("emb.pos")?;
        tokens.push(self.g.add_broadcast(e, pos)?);
        let mut x = self.g.concat(&tokens, 1)?;
        x = self.g.reshape(x, &[n * t, wd])?;

        for l in 0..cfg.layers {
            let h = self.norm(&format!("blk{l}.ln1"), x)?;
            let mut qkv = [h; 3];
            for (slot, m) in qkv.iter_mut().zip(["q", "k", "v"]) {
                let y = self.linear(&format!("blk{l}.attn.{m}"), h)?;
                *slot = self.g.reshape(y, &[n, t, wd])?;
            }
            let a = self.g.attention(qkv[0], qkv[1], qkv[2], cfg.heads)?;
            let a = self.g.reshape(a, &[n * t, wd])?;
            let a = self.linear(&format!("blk{l}.attn.o"), a)?;
            x = self.g.add(x, a)?;

            let h = self.norm(&format!("blk{l}.ln2"), x)?;
            let f = self.linear(&format!("blk{l}.ffn1"), h)?;
            let f = self.g.gelu(f);
            let f = self.linear(&format!("blk{l}.ffn2"), f)?;
            x = self.g.add(x, f)?;
        }
        let x = self.norm("ln_f", x)?;
        let x = self.g.reshape(x, &[n, t, wd])?;
        let zt = self.g.slice(x, 1, 0, 1)?;
        let zt = self.g.reshape(zt, &[n, wd])?;
        self.linear("head", zt)
    }

    fn encoder(&mut self, prop: NodeId, target: NodeId) -> Result<(NodeId, NodeId)> {
        let dz = self.w.config.dz;
        let x = self.g.concat(&[prop, target], 1)?;
        let h = self.linear("enc.l1", x)?;
        let h = self.g.gelu(h);
        let h = self.linear("enc.l2", h)?;
        let h = self.g.gelu(h);
        let out = self.linear("enc.out", h)?;
        let mu = self.g.slice(out, 1, 0, dz)?;
        let lv = self.g.slice(out, 1, dz, dz)?;
        Ok((mu, lv))
    }
}

/// Node handles of a training-loss graph.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
    pub pred: NodeId,
    pub mu: NodeId,
    pub logvar: NodeId,
}

/// Full CVAE loss graph. `noise` is the `[n, dz]` reparameterization draw;
/// KL is summed over latent dimensions and averaged over the batch.
pub fn build_loss_graph(w: &PolicyWeights, b: &Batch, noise: &[f64], exec: Exec) -> Result<(Graph, LossNodes)> {
    let cfg = &w.config;
    let (n, dz) = (b.n, cfg.dz);
    if noise.len() != n * dz || b.target.len() != n * cfg.chunk_len() {
        return Err(Error::dim("loss graph: noise or target size mismatch"));
    }
    let mut net = Net::new(w, exec);
    let prop = net.input(vec![n, PROPRIO_DIM], b.proprio.clone())?;
    let target = net.input(vec![n, cfg.chunk_len()], b.target.clone())?;
    let (mu, logvar) = net.encoder(prop, target)?;

    let g = &mut net.g;
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let eps = g.input(Tensor::new(vec![n, dz], noise.to_vec())?);
    let spread = g.mul(std, eps)?;
    let z = g.add(mu, spread)?;

    let pred = net.decoder(b, z)?;
    let g = &mut net.g;
    let recon = g.l1_mean(pred, target)?;
    let var = g.exp(logvar);
    let m2 = g.square(mu);
    let s = g.add(var, m2)?;
    let s = g.sub(s, logvar)?;
    let s = g.sum_all(s);
    let s = g.scale(s, 0.5 / n as f64);
    let kl = g.add_scalar(s, -0.5 * dz as f64);
    let weighted = g.scale(kl, cfg.beta);
    let total = g.add(recon, weighted)?;
    Ok((
        net.g,
        LossNodes {
            total,
            recon,
            kl,
            pred,
            mu,
            logvar,
        },
    ))
}

/// Decoder forward pass; `z` is `[n, dz]`. Returns `[n, H·3]` flattened.
pub(crate) fn decode_batch(w: &PolicyWeights, b: &Batch, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != b.n * w.config.dz {
        return Err(Error::dim(format!("decode: latent needs {} values", b.n * w.config.dz)));
    }
    if b.stage.is_some() != w.config.variant.uses_stage() {
        return Err(Error::contract("decode: stage input does not match the variant"));
    }
    let mut net = Net::new(w, Exec::Sequential);
    let zn = net.input(vec![b.n, w.config.dz], z.to_vec())?;
    let out = net.decoder(b, zn)?;
    Ok(net.g.value(out).data().to_vec())
}

pub(crate) fn encode(w: &PolicyWeights, proprio: &[f64], chunk: &[f64]) -> Result<LatentParams> {
    let mut net = Net::new(w, Exec::Sequential);
    let p = net.input(vec![1, PROPRIO_DIM], proprio.to_vec())?;
    let c = net.input(vec![1, w.config.chunk_len()], chunk.to_vec())?;
    let (mu, lv) = net.encoder(p, c)?;
    Ok(LatentParams {
        mu: net.g.value(mu).data().to_vec(),
        logvar: net.g.value(lv).data().to_vec(),
    })
}
