//! Experiment runner for the `xlris` library: configuration, CSV/JSON
//! artifacts and reproducibility manifests.

pub mod config;
pub mod error;
pub mod experiments;
pub mod export;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{Experiment, ExperimentConfig, Profile};
pub use error::{SimError, SimResult};
pub use experiments::{run_experiment, Artifacts, RunInputs};

use export::{sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

/// What produced a set of artifacts, and their hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub version: String,
    pub seed: Option<u64>,
    /// SHA-256 of the canonical config JSON.
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// SHA-256 of a supplied codebook, when one was used instead of building.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_codebook_hash: Option<String>,
    /// Artifact file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(exp: Experiment, cfg: &ExperimentConfig, inputs: &RunInputs, artifacts: &Artifacts) -> SimResult<Self> {
        let input_codebook_hash = match &inputs.codebook {
            Some(cb) => Some(sha256_hex(
                cb.to_json().map_err(|e| SimError::Core { stage: "codebook json".into(), source: e })?.as_bytes(),
            )),
            None => None,
        };
        Ok(Self {
            experiment: exp,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: sha256_hex(cfg.to_canonical_json().as_bytes()),
            config: cfg.clone(),
            input_codebook_hash,
            artifacts: artifacts.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        })
    }
}

/// Runs `exp`, writes every artifact and `manifest.json` into `out_dir`.
pub fn run(exp: Experiment, cfg: &ExperimentConfig, inputs: &RunInputs, out_dir: &Path) -> SimResult<Manifest> {
    let artifacts = run_experiment(exp, cfg, inputs)?;
    let manifest = Manifest::new(exp, cfg, inputs, &artifacts)?;
    for (name, bytes) in &artifacts {
        write_atomic(&out_dir.join(name), bytes)?;
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Re-runs the experiment recorded in `manifest` and checks every artifact hash.
pub fn replay(manifest: &Manifest, inputs: &RunInputs) -> SimResult<Artifacts> {
    let artifacts = run_experiment(manifest.experiment, &manifest.config, inputs)?;
    let fresh = Manifest::new(manifest.experiment, &manifest.config, inputs, &artifacts)?;
    for (name, expected) in &manifest.artifacts {
        let actual = fresh.artifacts.get(name).cloned().unwrap_or_else(|| "missing".into());
        if &actual != expected {
            return Err(SimError::ReplayMismatch { artifact: name.clone(), expected: expected.clone(), actual });
        }
    }
    Ok(artifacts)
}
