//! Benchmark construction: a pretraining corpus of seen languages in one
//! domain and a target corpus of all languages in a shifted domain.

use crate::corpus::manifest::{Manifest, ManifestRecord, ManifestRole, Split};
use crate::corpus::store::write_features;
use crate::corpus::{make_language_spec, render_utterance, DomainSpec, LanguageSpec};
use crate::error::{Result, SaptError};
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Unit,
    Lognormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub id: String,
    pub noise_sigma: f64,
    pub channel: ChannelKind,
    /// Log-std of the per-dimension gains when channel = "lognormal".
    #[serde(default)]
    pub channel_sigma: f64,
    pub rate: f64,
}

impl DomainConfig {
    fn materialize(&self, feat_dim: usize, seed: u64) -> Result<DomainSpec> {
        let channel_gain = match self.channel {
            ChannelKind::Unit => vec![1.0; feat_dim],
            ChannelKind::Lognormal => {
                let mut rng = rng_from_seed(derive_seed(seed, "channel", &[]));
                (0..feat_dim)
                    .map(|_| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        (n * self.channel_sigma).exp()
                    })
                    .collect()
            }
        };
        let spec = DomainSpec {
            id: self.id.clone(),
            noise_sigma: self.noise_sigma,
            channel_gain,
            rate: self.rate,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub num_seen: usize,
    pub num_unseen: usize,
    pub phones_per_language: usize,
    pub feat_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Utterances per seen language in the pretraining corpus.
    pub pretrain_per_language: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub pretrain_domain: DomainConfig,
    pub target_domain: DomainConfig,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_seen == 0 {
            return Err(SaptError::Config("benchmark: num_seen must be >= 1".into()));
        }
        if self.phones_per_language < 2 || self.feat_dim < 2 {
            return Err(SaptError::Config("benchmark: phones and feat_dim must be >= 2".into()));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(SaptError::Config("benchmark: invalid frame range".into()));
        }
        Ok(())
    }

    /// Digest of the canonical JSON serialization of this config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("benchmark config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn num_languages(&self) -> usize {
        self.num_seen + self.num_unseen
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedBenchmark {
    pub pretrain: Manifest,
    pub target: Manifest,
    pub languages: Vec<LanguageSpec>,
    pub pretrain_domain: DomainSpec,
    pub target_domain: DomainSpec,
}

/// Build both manifests and, when `feature_dir` is given, render every
/// utterance into the feature store. Storage keys are relative paths under
/// "features/". Deterministic for a fixed config.
pub fn build_benchmark(
    cfg: &BenchmarkConfig,
    feature_dir: Option<&Path>,
) -> Result<GeneratedBenchmark> {
    cfg.validate()?;
    let hash = cfg.config_hash();

    let mut languages = Vec::with_capacity(cfg.num_languages());
    for i in 0..cfg.num_languages() {
        let group = if i < cfg.num_seen { "seen" } else { "unseen" };
        let id = format!("lang{i:02}");
        let lang_seed = derive_seed(cfg.seed, "language", &[i as u64]);
        languages.push(make_language_spec(
            &id,
            lang_seed,
            cfg.phones_per_language,
            cfg.feat_dim,
            group,
        )?);
    }

    let pretrain_domain =
        cfg.pretrain_domain.materialize(cfg.feat_dim, derive_seed(cfg.seed, "dom-pre", &[]))?;
    let target_domain =
        cfg.target_domain.materialize(cfg.feat_dim, derive_seed(cfg.seed, "dom-tgt", &[]))?;

    let render_one = |lang: &LanguageSpec,
                      domain: &DomainSpec,
                      split: Split,
                      id: String,
                      utt_seed: u64|
     -> Result<ManifestRecord> {
        let mut len_rng = rng_from_seed(derive_seed(utt_seed, "length", &[]));
        let frames = len_rng.gen_range(cfg.min_frames..=cfg.max_frames);
        let utt = render_utterance(
            lang,
            domain,
            frames,
            derive_seed(utt_seed, "render", &[]),
            &id,
            split,
        )?;
        let store_key = format!("features/{id}.feat");
        if let Some(dir) = feature_dir {
            write_features(&dir.join(&store_key), utt.num_frames, utt.feat_dim, &utt.features)?;
        }
        Ok(ManifestRecord {
            id,
            store: store_key,
            label: lang.id.clone(),
            domain: domain.id.clone(),
            split,
            group: lang.group.clone(),
        })
    };

    let mut pre_records = Vec::new();
    for (li, lang) in languages.iter().take(cfg.num_seen).enumerate() {
        for j in 0..cfg.pretrain_per_language {
            let id = format!("d0_{}_{j:04}", lang.id);
            let utt_seed = derive_seed(cfg.seed, "d0-utt", &[li as u64, j as u64]);
            pre_records.push(render_one(lang, &pretrain_domain, Split::Train, id, utt_seed)?);
        }
    }

    let mut tgt_records = Vec::new();
    for (li, lang) in languages.iter().enumerate() {
        for (split, count, code) in [
            (Split::Train, cfg.target_train, 0u64),
            (Split::Dev, cfg.target_dev, 1),
            (Split::Test, cfg.target_test, 2),
        ] {
            for j in 0..count {
                let id = format!("dt_{}_{}_{j:04}", lang.id, split.as_str());
                let utt_seed = derive_seed(cfg.seed, "dt-utt", &[li as u64, code, j as u64]);
                tgt_records.push(render_one(lang, &target_domain, split, id, utt_seed)?);
            }
        }
    }

    Ok(GeneratedBenchmark {
        pretrain: Manifest::new(ManifestRole::Pretraining, hash.clone(), pre_records)?,
        target: Manifest::new(ManifestRole::Target, hash, tgt_records)?,
        languages,
        pretrain_domain,
        target_domain,
    })
}
