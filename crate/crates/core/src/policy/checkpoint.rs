use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyWeights};
use crate::chunkstore::{Dataset, NormStats, Provenance};
use crate::container;
use crate::error::{Error, Result};
use crate::numkit::{Params, Tensor};

/// Trained weights bundled with everything inference needs: the config that
/// shapes them, the dataset normalization, and where the data came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: PolicyWeights,
    pub norm: NormStats,
    pub dataset_hash: String,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: PolicyConfig,
    shapes: Vec<(String, Vec<usize>)>,
    norm: NormStats,
    dataset_hash: String,
    provenance: Provenance,
}

const KIND: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(weights: PolicyWeights, dataset: &Dataset) -> Result<Checkpoint> {
        Ok(Checkpoint {
            weights,
            norm: dataset.norm.clone(),
            dataset_hash: dataset.hash()?,
            provenance: dataset.provenance.clone(),
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.weights.config
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let shapes = self
            .weights
            .params
            .iter()
            .map(|(k, t)| (k.clone(), t.shape().to_vec()))
            .collect();
        let payload: Vec<f64> = self.weights.params.values().flat_map(|t| t.data().iter().copied()).collect();
        let header = Header {
            config: self.weights.config.clone(),
            shapes,
            norm: self.norm.clone(),
            dataset_hash: self.dataset_hash.clone(),
            provenance: self.provenance.clone(),
        };
        container::encode(KIND, VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let (h, payload): (Header, Vec<f64>) = container::decode(bytes, KIND, VERSION)?;
        let corrupt = |m: String| Error::Corruption(format!("checkpoint: {m}"));
        let reference = PolicyWeights::init(&h.config)?;
        let expected: Vec<(String, Vec<usize>)> = reference
            .params
            .iter()
            .map(|(k, t)| (k.clone(), t.shape().to_vec()))
            .collect();
        if expected != h.shapes {
            return Err(corrupt("parameter table does not match the embedded config".into()));
        }
        let total: usize = h.shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if total != payload.len() {
            return Err(corrupt(format!("{} values for {total} parameters", payload.len())));
        }
        let mut params = Params::new();
        let mut at = 0;
        for (name, shape) in h.shapes {
            let n: usize = shape.iter().product();
            params.insert(name, Tensor::new(shape, payload[at..at + n].to_vec())?);
            at += n;
        }
        Ok(Checkpoint {
            weights: PolicyWeights {
                config: h.config,
                params,
            },
            norm: h.norm,
            dataset_hash: h.dataset_hash,
            provenance: h.provenance,
        })
    }

    /// Content hash of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(container::sha256_hex(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
