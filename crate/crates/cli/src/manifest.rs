//! Run manifests: one JSON document per run, written atomically, naming every
//! artifact the run produced.

use std::path::{Path, PathBuf};

use anonyvid::nets::{ModelFamilySpec, WarmStartReport};
use anonyvid::trainer::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub skipped: bool,
    pub utility_probe_accuracy: Option<f64>,
    pub privacy_probe_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Content hash of the resolved config plus the dataset fingerprint.
    pub run_id: String,
    pub tool_version: String,
    pub config: TrainingConfig,
    pub ensemble_spec: ModelFamilySpec,
    pub dataset_fingerprint: String,
    pub calibration: CalibrationOutcome,
    pub warm_start: WarmStartReport,
    pub fuse_events: Vec<String>,
    pub restart_count: usize,
    /// Paths of every emitted artifact, relative to the manifest's directory.
    pub artifacts: Vec<String>,
}

/// Hex SHA-256 of arbitrary bytes; used for dataset fingerprints.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic run id from the resolved config and dataset fingerprint.
pub fn run_id(config: &TrainingConfig, dataset_fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(dataset_fingerprint.as_bytes());
    hex_string(&h.finalize())[..16].to_string()
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("manifest {}: {e}", path.display()))
    }
}

/// Resolve an output path against `ANONYVID_OUT_ROOT` when it is set and the
/// path is relative.
pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("ANONYVID_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}
