//! Run manifests: every command writes one JSON record describing what ran,
//! with what configuration and seeds, which files it produced (with content
//! hashes), and how long it took.
//!
//! Two hashes per artifact: `sha256` fingerprints the exact bytes on disk;
//! `det_sha256` fingerprints a time-normalized view (wall-clock columns
//! zeroed) so reruns with identical seeds can be compared byte-for-byte
//! while timings are free to vary. The manifest-level `det_hash` combines
//! the normalized hashes with the command and configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: &str = "attenmfg-manifest/1";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
    /// Hash of the artifact with wall-time fields normalized to zero.
    pub det_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    /// Snapshot of the configuration the command ran with.
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    pub artifacts: Vec<ArtifactRecord>,
    pub wall_ms: f64,
    /// Reproducibility fingerprint: command + config + seed + normalized
    /// artifact hashes. Identical args and seeds must reproduce it exactly.
    pub det_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, threads: usize) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            command: command.to_string(),
            config,
            seed,
            threads,
            artifacts: Vec::new(),
            wall_ms: 0.0,
            det_hash: String::new(),
        }
    }

    /// Records an artifact whose bytes are already time-free.
    pub fn push_artifact(&mut self, file: &str, bytes: &[u8]) {
        let hash = sha256_hex(bytes);
        self.artifacts.push(ArtifactRecord {
            file: file.to_string(),
            sha256: hash.clone(),
            det_sha256: hash,
        });
    }

    /// Records an artifact alongside a normalized rendering of the same
    /// content with its wall-time fields zeroed.
    pub fn push_timed_artifact(&mut self, file: &str, bytes: &[u8], normalized: &[u8]) {
        self.artifacts.push(ArtifactRecord {
            file: file.to_string(),
            sha256: sha256_hex(bytes),
            det_sha256: sha256_hex(normalized),
        });
    }

    /// Fills in the wall time and computes the reproducibility hash. Thread
    /// count is deliberately left out: results are bit-identical however the
    /// work is split, so the hash must be too.
    pub fn finalize(&mut self, wall_ms: f64) {
        self.wall_ms = wall_ms;
        let mut hasher = Sha256::new();
        hasher.update(self.command.as_bytes());
        hasher.update([0]);
        hasher.update(self.config.to_string().as_bytes());
        hasher.update(self.seed.to_le_bytes());
        for a in &self.artifacts {
            hasher.update(a.file.as_bytes());
            hasher.update([0]);
            hasher.update(a.det_sha256.as_bytes());
        }
        self.det_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes =
            serde_json::to_vec_pretty(self).expect("manifest serialization is infallible");
        bytes.push(b'\n');
        bytes
    }
}

/// Zeroes the named columns of a CSV rendering, preserving everything else;
/// used to strip wall times out of determinism comparisons.
pub fn normalize_csv_columns(csv: &str, columns: &[&str]) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let names: Vec<&str> = header.split(',').collect();
    let zeroed: Vec<bool> = names.iter().map(|n| columns.contains(n)).collect();
    let mut out = String::with_capacity(csv.len());
    out.push_str(header);
    out.push('\n');
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let row: Vec<&str> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if zeroed.get(i).copied().unwrap_or(false) { "0" } else { *c })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
