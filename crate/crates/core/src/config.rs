//! Experiment configuration: one TOML file drives corpus generation, all
//! three training stages, the few-shot grid, and reporting. Unknown keys are
//! rejected; every stage default can be overridden; all randomness derives
//! from the single global seed.

use crate::corpus::{BenchmarkConfig, ChannelKind, DomainConfig};
use crate::encoder::ArchConfig;
use crate::error::{Result, SaptError};
use crate::fewshot::ProtocolConfig;
use crate::objective::ContrastiveConfig;
use crate::pipeline::{AdamHyper, FreezePolicy, Stage, TrainConfig};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub phones_per_language: usize,
    pub feat_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub pretrain_per_language: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub pretrain_domain: DomainConfig,
    pub target_domain: DomainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub frame_stack: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub proj_dim: usize,
}

/// Per-stage overrides; unset fields fall back to the stage's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub mask_prob: Option<f64>,
    pub mask_span: Option<usize>,
    pub num_distractors: Option<usize>,
    pub temperature: Option<f64>,
    pub freeze_policy: Option<FreezePolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewshotSection {
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub full_data_seeds: Vec<u64>,
    pub workers: usize,
}

impl Default for FewshotSection {
    fn default() -> Self {
        FewshotSection {
            k_grid: vec![1, 2, 4, 8, 16, 32, 64],
            seeds: vec![1, 2, 3, 4, 5],
            full_data_seeds: vec![1, 2, 3, 4, 5],
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub global_seed: u64,
    pub benchmark: BenchmarkSection,
    pub arch: ArchSection,
    #[serde(default)]
    pub pretrain: StageSection,
    #[serde(default)]
    pub sapt: StageSection,
    #[serde(default)]
    pub finetune: StageSection,
    #[serde(default)]
    pub fewshot: FewshotSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs/default"),
            global_seed: 17,
            benchmark: BenchmarkSection {
                num_seen: 5,
                num_unseen: 3,
                phones_per_language: 6,
                feat_dim: 16,
                min_frames: 32,
                max_frames: 64,
                pretrain_per_language: 200,
                // the largest default K (64) must fit in the train split
                target_train: 80,
                target_dev: 10,
                target_test: 20,
                pretrain_domain: DomainConfig {
                    id: "studio".into(),
                    noise_sigma: 0.2,
                    channel: ChannelKind::Unit,
                    channel_sigma: 0.0,
                    rate: 1.0,
                },
                target_domain: DomainConfig {
                    id: "field".into(),
                    noise_sigma: 0.3,
                    channel: ChannelKind::Lognormal,
                    channel_sigma: 1.2,
                    rate: 1.5,
                },
            },
            arch: ArchSection {
                frame_stack: 2,
                model_dim: 32,
                num_layers: 2,
                num_heads: 4,
                ffn_dim: 64,
                proj_dim: 16,
            },
            pretrain: StageSection::default(),
            sapt: StageSection::default(),
            finetune: StageSection::default(),
            fewshot: FewshotSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| SaptError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark_config().validate()?;
        self.arch_config().validate()?;
        for stage in [Stage::Pretrain, Stage::Sapt, Stage::Finetune] {
            self.train_config(stage)?.validate()?;
        }
        self.protocol_config()?.validate()?;
        if self.fewshot.full_data_seeds.is_empty() {
            return Err(SaptError::Config("fewshot: full_data_seeds must be non-empty".into()));
        }
        let max_k = self.fewshot.k_grid.iter().max().copied().unwrap_or(0);
        if max_k > self.benchmark.target_train {
            return Err(SaptError::Config(format!(
                "fewshot: K={max_k} exceeds target_train={}",
                self.benchmark.target_train
            )));
        }
        Ok(())
    }

    /// Digest over the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        let b = &self.benchmark;
        BenchmarkConfig {
            seed: derive_seed(self.global_seed, "benchmark", &[]),
            num_seen: b.num_seen,
            num_unseen: b.num_unseen,
            phones_per_language: b.phones_per_language,
            feat_dim: b.feat_dim,
            min_frames: b.min_frames,
            max_frames: b.max_frames,
            pretrain_per_language: b.pretrain_per_language,
            target_train: b.target_train,
            target_dev: b.target_dev,
            target_test: b.target_test,
            pretrain_domain: b.pretrain_domain.clone(),
            target_domain: b.target_domain.clone(),
        }
    }

    pub fn num_languages(&self) -> usize {
        self.benchmark.num_seen + self.benchmark.num_unseen
    }

    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            feat_dim: self.benchmark.feat_dim,
            frame_stack: self.arch.frame_stack,
            model_dim: self.arch.model_dim,
            num_layers: self.arch.num_layers,
            num_heads: self.arch.num_heads,
            ffn_dim: self.arch.ffn_dim,
            num_classes: self.num_languages(),
            proj_dim: self.arch.proj_dim,
        }
    }

    /// Resolve one stage's section against its defaults. Stage seeds derive
    /// from the global seed and the stage name.
    pub fn train_config(&self, stage: Stage) -> Result<TrainConfig> {
        let (section, steps, lr) = match stage {
            Stage::Pretrain => (&self.pretrain, 5000, 1e-3),
            Stage::Sapt => (&self.sapt, 300, 1e-4),
            Stage::Finetune => (&self.finetune, 100, 5e-4),
        };
        if stage != Stage::Finetune && section.freeze_policy.is_some() {
            return Err(SaptError::Config(format!(
                "{}: freeze_policy applies to fine-tuning only",
                stage.as_str()
            )));
        }
        let cfg = TrainConfig {
            stage,
            steps: section.steps.unwrap_or(steps),
            batch_size: section.batch_size.unwrap_or(8),
            adam: AdamHyper {
                learning_rate: section.learning_rate.unwrap_or(lr),
                beta1: section.adam_beta1.unwrap_or(0.9),
                beta2: section.adam_beta2.unwrap_or(0.999),
                eps: section.adam_eps.unwrap_or(1e-8),
            },
            seed: derive_seed(self.global_seed, stage.as_str(), &[]),
            mask_prob: section.mask_prob.unwrap_or(0.3),
            mask_span: section.mask_span.unwrap_or(1),
            contrastive: ContrastiveConfig {
                num_distractors: section.num_distractors.unwrap_or(5),
                temperature: section.temperature.unwrap_or(0.1),
            },
            freeze: section.freeze_policy.unwrap_or(FreezePolicy::None),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig> {
        Ok(ProtocolConfig {
            k_grid: self.fewshot.k_grid.clone(),
            seeds: self.fewshot.seeds.clone(),
            finetune: self.train_config(Stage::Finetune)?,
            workers: self.fewshot.workers,
        })
    }
}
