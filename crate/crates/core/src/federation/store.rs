use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::{Origin, Snapshot};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::numerics::{Dtype, ParamVector};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub round: usize,
    pub origin: Origin,
    pub client_id: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub file: String,
}

impl SnapshotRecord {
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            round: self.round,
            origin: self.origin,
            client_id: self.client_id,
            metrics: Metrics { accuracy: self.accuracy, f1: self.f1 },
            file: Some(self.file.clone()),
        }
    }
}

/// Per-client resume state that does not live in parameter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientCheckpoint {
    pub client_id: usize,
    pub step_count: u64,
    pub best: Option<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub config_hash: String,
    pub rounds_completed: usize,
    pub records: Vec<SnapshotRecord>,
    #[serde(default)]
    pub clients: Vec<ClientCheckpoint>,
}

/// Directory holding one run's snapshots and resume state.
///
/// ```text
/// manifest.json
/// snapshots/c{client}_r{round}_{local|global}.fpv
/// state/global.fpv, state/server_{m,v}.fpv
/// state/client{c}_{params,m,v}.fpv
/// ```
#[derive(Debug)]
pub struct SnapshotStore {
    dir: PathBuf,
    dtype: Dtype,
    pub manifest: StoreManifest,
}

impl SnapshotStore {
    /// Open `dir`, creating an empty store when no manifest exists. An
    /// existing manifest must carry the same config hash.
    pub fn open(dir: &Path, config_hash: &str, dtype: Dtype) -> Result<Self> {
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::create_dir_all(dir.join("state"))?;
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let m: StoreManifest = serde_json::from_slice(&fs::read(&path)?)?;
            if m.config_hash != config_hash {
                return Err(Error::InvalidConfig(format!(
                    "snapshot store {} belongs to config {}, not {config_hash}",
                    dir.display(),
                    m.config_hash
                )));
            }
            m
        } else {
            StoreManifest {
                config_hash: config_hash.to_string(),
                rounds_completed: 0,
                records: Vec::new(),
                clients: Vec::new(),
            }
        };
        Ok(Self { dir: dir.to_path_buf(), dtype, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot_file_name(snap: &Snapshot) -> String {
        let origin = match snap.origin {
            Origin::Local => "local",
            Origin::Global => "global",
        };
        format!("snapshots/c{}_r{}_{origin}.fpv", snap.client_id, snap.round)
    }

    /// Write a snapshot's parameters and return its record.
    pub fn put_snapshot(&self, snap: &Snapshot, params: &ParamVector) -> Result<SnapshotRecord> {
        let file = Self::snapshot_file_name(snap);
        params.write(&self.dir.join(&file), self.dtype)?;
        Ok(SnapshotRecord {
            round: snap.round,
            origin: snap.origin,
            client_id: snap.client_id,
            accuracy: snap.metrics.accuracy,
            f1: snap.metrics.f1,
            file,
        })
    }

    pub fn read_params(&self, file: &str) -> Result<ParamVector> {
        ParamVector::read(&self.dir.join(file))
    }

    /// Resume state is kept at full precision.
    pub fn put_state(&self, name: &str, values: &ParamVector) -> Result<()> {
        values.write(&self.state_path(name), Dtype::F64)
    }

    pub fn read_state(&self, name: &str) -> Result<ParamVector> {
        ParamVector::read(&self.state_path(name))
    }

    fn state_path(&self, name: &str) -> PathBuf {
        self.dir.join("state").join(format!("{name}.fpv"))
    }

    /// Atomically replace the manifest.
    pub fn commit(&self) -> Result<()> {
        let tmp = self.dir.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.manifest)?)?;
        fs::rename(&tmp, self.dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}
