//! Dense float64 tensors, a reverse-mode autodiff tape, and Adam.

mod adam;
mod graph;
pub mod kernels;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::par::Exec;

/// Named trainable tensors, ordered by name.
pub type Params = BTreeMap<String, Tensor>;

/// Plain matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::dim(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
    }
    let data = kernels::matmul(Exec::default(), a.data(), b.data(), sa[0], sa[1], sb[1]);
    Tensor::new(vec![sa[0], sb[1]], data)
}

/// Softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let id = g.input(x.clone());
    let out = g.softmax(id, axis)?;
    Ok(g.value(out).clone())
}

/// Total element count across a parameter set.
pub fn param_count(params: &Params) -> usize {
    params.values().map(Tensor::len).sum()
}
