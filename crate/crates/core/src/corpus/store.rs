//! Binary feature store plus the audited reader that enforces split
//! discipline during training stages.
//!
//! Feature file layout: magic "SAPTFEAT", u32 version=1, u32 T, u32 F, then
//! T*F little-endian f32 values, row-major.

use crate::corpus::manifest::ManifestRecord;
use crate::error::{Result, SaptError};
use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const FEATURE_MAGIC: &[u8; 8] = b"SAPTFEAT";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features(path: &Path, num_frames: usize, feat_dim: usize, data: &[f64]) -> Result<()> {
    if data.len() != num_frames * feat_dim {
        return Err(SaptError::Contract("write_features: data length mismatch".into()));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::with_capacity(16 + data.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(num_frames as u32).to_le_bytes());
    buf.extend_from_slice(&(feat_dim as u32).to_le_bytes());
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != FEATURE_MAGIC {
        return Err(SaptError::Format(format!("{}: not a SAPTFEAT file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(SaptError::Format(format!(
            "{}: unsupported feature version {version}",
            path.display()
        )));
    }
    let t = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fdim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let expected = 20 + t * fdim * 4;
    if bytes.len() != expected {
        return Err(SaptError::Format(format!(
            "{}: expected {expected} bytes for {t}x{fdim}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(t * fdim);
    for chunk in bytes[20..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Ok((t, fdim, data))
}

/// A feature matrix loaded for training or inference.
#[derive(Clone, Debug)]
pub struct LoadedUtterance {
    pub id: String,
    pub features: Vec<f64>,
    pub num_frames: usize,
    pub feat_dim: usize,
    /// Class index; None when the consumer is label-blind.
    pub label: Option<usize>,
}

/// Resolves manifest storage keys against the manifest directory.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, store_key: &str) -> PathBuf {
        self.root.join(store_key)
    }

    pub fn read(&self, record: &ManifestRecord, label: Option<usize>) -> Result<LoadedUtterance> {
        let (num_frames, feat_dim, features) = read_features(&self.path_for(&record.store))?;
        Ok(LoadedUtterance { id: record.id.clone(), features, num_frames, feat_dim, label })
    }
}

/// Wraps a store with an allow-list and an audit log. Training stages read
/// only through this; a read outside the allow-list is a hard error.
pub struct AuditedReader<'a> {
    store: &'a FeatureStore,
    allowed: Option<HashSet<String>>,
    log: Mutex<BTreeSet<String>>,
}

impl<'a> AuditedReader<'a> {
    pub fn new(store: &'a FeatureStore, allowed: Option<HashSet<String>>) -> Self {
        AuditedReader { store, allowed, log: Mutex::new(BTreeSet::new()) }
    }

    pub fn read(&self, record: &ManifestRecord, label: Option<usize>) -> Result<LoadedUtterance> {
        if let Some(allowed) = &self.allowed {
            if !allowed.contains(&record.id) {
                return Err(SaptError::SplitDiscipline(format!(
                    "attempted to read utterance '{}' (split {}) outside the allowed set",
                    record.id,
                    record.split.as_str()
                )));
            }
        }
        self.log.lock().unwrap().insert(record.id.clone());
        self.store.read(record, label)
    }

    /// Sorted ids touched so far.
    pub fn audit_log(&self) -> BTreeSet<String> {
        self.log.lock().unwrap().clone()
    }
}
