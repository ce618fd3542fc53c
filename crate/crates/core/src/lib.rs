//! Stage-conditioned action-chunking imitation learning on a simulated
//! door-opening task.

pub mod container;
pub mod error;
pub mod par;
pub mod stage;

pub mod numkit;
pub mod doorworld;
pub mod demogen;
pub mod chunkstore;
pub mod policy;
pub mod runtime;
pub mod evalbench;

pub use error::{Error, Result};
pub use stage::Stage;
