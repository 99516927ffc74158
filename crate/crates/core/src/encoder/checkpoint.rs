//! Checkpoint files: magic "SAPTCKPT", u32 version, u32 header length, JSON
//! header, then all parameters in canonical order as little-endian f64.
//!
//! A checkpoint's digest is the SHA-256 of its architecture JSON plus the
//! raw parameter bytes; it intentionally ignores lineage metadata so that a
//! zero-step stage reproduces its source digest exactly.

use super::{ArchConfig, ParamLayout};
use crate::error::{Result, SaptError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAPTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Theta0,
    Sapt,
    Finetuned,
}

impl StageTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageTag::Theta0 => "theta0",
            StageTag::Sapt => "sapt",
            StageTag::Finetuned => "finetuned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    arch: ArchConfig,
    stage: StageTag,
    seed: u64,
    steps: u64,
    source_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub stage: StageTag,
    pub seed: u64,
    pub steps: u64,
    /// Digest of the checkpoint this run started from; empty for theta0.
    pub source_digest: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        arch: ArchConfig,
        stage: StageTag,
        seed: u64,
        steps: u64,
        source_digest: String,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        let expected = ParamLayout::new(&arch).total;
        if params.len() != expected {
            return Err(SaptError::Contract(format!(
                "checkpoint: {} parameters, layout expects {expected}",
                params.len()
            )));
        }
        if stage == StageTag::Theta0 && !source_digest.is_empty() {
            return Err(SaptError::Contract(
                "theta0 checkpoint must have an empty source digest".into(),
            ));
        }
        if stage != StageTag::Theta0 && source_digest.is_empty() {
            return Err(SaptError::Contract(format!(
                "{} checkpoint requires a source digest",
                stage.as_str()
            )));
        }
        Ok(Checkpoint { arch, stage, seed, steps, source_digest, params })
    }

    /// SHA-256 over arch JSON + canonical parameter bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.arch).expect("arch serializes"));
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let header = CheckpointHeader {
            arch: self.arch,
            stage: self.stage,
            seed: self.seed,
            steps: self.steps,
            source_digest: self.source_digest.clone(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| SaptError::Format(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + header_json.len() + self.params.len() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_json);
        for v in &self.params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(SaptError::Format(format!("{}: not a SAPTCKPT file", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(SaptError::Format(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + hlen {
            return Err(SaptError::Format(format!("{}: truncated header", path.display())));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])
            .map_err(|e| SaptError::Format(format!("{}: bad header: {e}", path.display())))?;
        let body = &bytes[16 + hlen..];
        if body.len() % 8 != 0 {
            return Err(SaptError::Format(format!(
                "{}: parameter payload misaligned",
                path.display()
            )));
        }
        let params: Vec<f64> =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Checkpoint::new(
            header.arch,
            header.stage,
            header.seed,
            header.steps,
            header.source_digest,
            params,
        )
    }
}
