//! Run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use itoedit::{Condition, EditParams, MetricsRecord, Position};

use crate::config::Config;

/// Upper bound on the per-pixel L1 of an encode/decode round trip of a
/// rendered scene, as measured on the default scene family.
pub const ROUNDTRIP_L1_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub run_seed: u64,
    pub mask_seeds: Vec<u64>,
    pub guidance_seed: u64,
}

impl SeedRecord {
    pub fn new(run_seed: u64, params: &EditParams) -> Self {
        Self {
            run_seed,
            mask_seeds: params.seeds.clone(),
            guidance_seed: params.guidance_seed,
        }
    }
}

/// What was edited and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    /// Input latent, relative to the run directory.
    pub input: String,
    pub source_class: usize,
    pub source_position: Position,
    pub target_class: usize,
    pub target_position: Position,
    pub cond_o: Condition,
    pub cond_edit: Condition,
    /// Binary edit mask supplied by the user, relative to the run directory.
    pub mask_override: Option<String>,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub method: String,
    #[serde(flatten)]
    pub record: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_unix_ms: u128,
    pub duration_s: f64,
    pub config: Config,
    pub params: Option<EditParams>,
    pub seeds: Option<SeedRecord>,
    pub case: Option<CaseRecord>,
    pub artifacts: BTreeMap<String, Artifact>,
    pub metrics: Vec<MetricsEntry>,
    pub guidance_skipped: Option<bool>,
    pub roundtrip_l1: Option<f64>,
    pub roundtrip_l1_bound: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: Config) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            duration_s: 0.0,
            config,
            params: None,
            seeds: None,
            case: None,
            artifacts: BTreeMap::new(),
            metrics: Vec::new(),
            guidance_skipped: None,
            roundtrip_l1: None,
            roundtrip_l1_bound: ROUNDTRIP_L1_BOUND,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    /// The manifest with its wall-clock fields zeroed.
    pub fn without_timing(&self) -> Self {
        Self {
            created_unix_ms: 0,
            duration_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
