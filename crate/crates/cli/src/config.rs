//! Run configuration and the manifests that tie artifacts to it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagebc::doorworld::EnvParams;

use crate::exit::CliResult;

/// Everything that determined one command's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tool_version: String,
    pub command: String,
    /// The command's parsed flags.
    pub args: serde_json::Value,
    pub env: EnvParams,
    pub inputs: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn of(path: &Path) -> CliResult<ArtifactRef> {
        Ok(ArtifactRef {
            path: path.to_path_buf(),
            sha256: stagebc::container::sha256_hex(&std::fs::read(path)?),
        })
    }
}

impl RunConfig {
    pub fn new(command: &str, args: &impl Serialize, env: &EnvParams, inputs: &[&Path]) -> CliResult<RunConfig> {
        Ok(RunConfig {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: serde_json::to_value(args)?,
            env: env.clone(),
            inputs: inputs.iter().map(|p| ArtifactRef::of(p)).collect::<CliResult<_>>()?,
        })
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        stagebc::container::sha256_hex(&serde_json::to_vec(self).expect("run config serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub output: ArtifactRef,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Writes `<artifact>.manifest.json` next to a binary artifact.
pub fn write_manifest(artifact: &Path, cfg: &RunConfig) -> CliResult<Manifest> {
    let m = Manifest {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        output: ArtifactRef::of(artifact)?,
    };
    std::fs::write(manifest_path(artifact), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

/// JSON artifact with its producing config embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub config: RunConfig,
    pub report: T,
}

pub fn write_envelope<T: Serialize>(path: &Path, cfg: &RunConfig, report: T) -> CliResult<()> {
    let env = Envelope {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        report,
    };
    std::fs::write(path, serde_json::to_string_pretty(&env)?)?;
    Ok(())
}
