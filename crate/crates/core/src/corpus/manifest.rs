//! Manifest files: JSON Lines, one header line then one record per utterance.

use crate::error::{Result, SaptError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = SaptError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(SaptError::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestRole {
    Pretraining,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    /// Storage key of the feature file, relative to the manifest directory.
    pub store: String,
    pub label: String,
    pub domain: String,
    pub split: Split,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    role: ManifestRole,
    config_hash: String,
    format_version: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub role: ManifestRole,
    pub config_hash: String,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(
        role: ManifestRole,
        config_hash: String,
        records: Vec<ManifestRecord>,
    ) -> Result<Self> {
        let m = Manifest { role, config_hash, records };
        m.validate()?;
        Ok(m)
    }

    /// Splits must be disjoint by utterance id, and ids globally unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.id) {
                return Err(SaptError::Generation(format!(
                    "duplicate utterance id '{}' in manifest",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn ids_for_split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Sorted set of language ids present in the manifest.
    pub fn languages(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.label.clone()).collect()
    }

    /// Language id -> class index, in sorted-id order. This is the label
    /// contract shared by fine-tuning and evaluation.
    pub fn class_map(&self) -> BTreeMap<String, usize> {
        self.languages().into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = ManifestHeader {
            role: self.role,
            config_hash: self.config_hash.clone(),
            format_version: MANIFEST_FORMAT_VERSION,
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).map_err(|e| SaptError::Format(e.to_string()))?
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{}",
                serde_json::to_string(r).map_err(|e| SaptError::Format(e.to_string()))?
            )?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| SaptError::Format(format!("{}: empty manifest", path.display())))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| SaptError::Format(format!("{}: bad header: {e}", path.display())))?;
        if header.format_version != MANIFEST_FORMAT_VERSION {
            return Err(SaptError::Format(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                header.format_version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| SaptError::Format(format!("{}: bad record: {e}", path.display())))?;
            records.push(rec);
        }
        Manifest::new(header.role, header.config_hash, records)
    }
}
