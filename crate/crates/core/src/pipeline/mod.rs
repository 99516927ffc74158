//! The three optimization stages: pretraining on D0, self-supervised
//! adaptation (SAPT) on the target train split, and supervised fine-tuning.
//! All stages are bit-reproducible for a fixed config and read features only
//! through an audited, allow-listed store.

mod adam;

pub use adam::{optimizer_step, AdamHyper, AdamState};

use crate::corpus::{AuditedReader, FeatureStore, Manifest, ManifestRecord, ManifestRole, Split};
use crate::encoder::{
    init_params, loss_and_gradients, reinit_classifier, Checkpoint, ObjectiveSpec, StageTag,
};
use crate::encoder::{ArchConfig, ParamLayout};
use crate::error::{Result, SaptError};
use crate::math::softmax_inplace;
use crate::objective::ContrastiveConfig;
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Sapt,
    Finetune,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Sapt => "sapt",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    None,
    FreezeFeatureEncoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Span-masking parameters; used by the self-supervised stages.
    pub mask_prob: f64,
    pub mask_span: usize,
    pub contrastive: ContrastiveConfig,
    /// Applied during fine-tuning only.
    pub freeze: FreezePolicy,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(SaptError::Config("train: batch_size must be >= 1".into()));
        }
        if self.adam.learning_rate <= 0.0 {
            return Err(SaptError::Config("train: learning_rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) || self.mask_span < 1 {
            return Err(SaptError::Config("train: invalid masking parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: u64,
    pub loss: f64,
}

/// Result of one stage run: the checkpoint, the per-step loss trace, and the
/// set of utterance ids actually read.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TracePoint>,
    pub audit: BTreeSet<String>,
}

/// Loss-trace CSV: step, loss, stage, seed.
pub fn write_loss_trace(path: &Path, stage: Stage, seed: u64, trace: &[TracePoint]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,loss,stage,seed")?;
    for p in trace {
        writeln!(w, "{},{},{},{}", p.step, p.loss, stage.as_str(), seed)?;
    }
    Ok(())
}

/// Optional label assignment for supervised stages; `None` for the
/// self-supervised ones, which never see labels.
type LabelLookup<'a> = Option<&'a dyn Fn(&ManifestRecord) -> Result<usize>>;

/// Uniform-with-replacement batch sampling from a sorted record pool, one
/// seeded stream per stage.
fn run_training_loop(
    params: &mut [f64],
    arch: &ArchConfig,
    pool: &[&ManifestRecord],
    reader: &AuditedReader<'_>,
    cfg: &TrainConfig,
    labels: LabelLookup<'_>,
    frozen: &[std::ops::Range<usize>],
) -> Result<Vec<TracePoint>> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "batch", &[]));
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let rec = pool[rng.gen_range(0..pool.len())];
            let label = match labels {
                Some(f) => Some(f(rec)?),
                None => None,
            };
            batch.push(reader.read(rec, label)?);
        }
        let spec = match cfg.stage {
            Stage::Finetune => ObjectiveSpec::Supervised,
            _ => ObjectiveSpec::SelfSupervised {
                mask_prob: cfg.mask_prob,
                mask_span: cfg.mask_span,
                contrastive: cfg.contrastive,
                seed: derive_seed(cfg.seed, "objective", &[step]),
            },
        };
        let (loss, mut grads) = loss_and_gradients(params, arch, &batch, &spec)?;
        for range in frozen {
            grads[range.clone()].fill(0.0);
        }
        optimizer_step(params, &grads, &mut state, &cfg.adam)?;
        trace.push(TracePoint { step, loss });
    }
    Ok(trace)
}

fn sorted_pool(records: Vec<&ManifestRecord>) -> Vec<&ManifestRecord> {
    let mut pool = records;
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    pool
}

/// Stage 1: self-supervised pretraining on D0 from random initialization.
/// Labels in D0 are never read.
pub fn pretrain(
    manifest: &Manifest,
    store: &FeatureStore,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    cfg.validate()?;
    if cfg.stage != Stage::Pretrain {
        return Err(SaptError::Config("pretrain: cfg.stage must be 'pretrain'".into()));
    }
    if manifest.role != ManifestRole::Pretraining {
        return Err(SaptError::Config("pretrain: manifest role must be 'pretraining'".into()));
    }
    if manifest.records.is_empty() {
        return Err(SaptError::Config("pretrain: empty manifest".into()));
    }
    let pool = sorted_pool(manifest.records.iter().collect());
    let allowed: HashSet<String> = pool.iter().map(|r| r.id.clone()).collect();
    let reader = AuditedReader::new(store, Some(allowed));

    let mut params = init_params(arch, cfg.seed)?;
    let trace = run_training_loop(&mut params, arch, &pool, &reader, cfg, None, &[])?;
    let checkpoint =
        Checkpoint::new(*arch, StageTag::Theta0, cfg.seed, cfg.steps, String::new(), params)?;
    Ok(StageOutput { checkpoint, trace, audit: reader.audit_log() })
}

/// Stage 2: continue the pretraining objective on the TRAIN split of the
/// target corpus, starting from theta0. Dev/test records are never loaded;
/// the audited reader turns any such read into a hard error.
pub fn sapt(
    theta0: &Checkpoint,
    target: &Manifest,
    store: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    cfg.validate()?;
    if cfg.stage != Stage::Sapt {
        return Err(SaptError::Config("sapt: cfg.stage must be 'sapt'".into()));
    }
    if theta0.stage != StageTag::Theta0 {
        return Err(SaptError::Dependency(format!(
            "sapt must start from a theta0 checkpoint, found '{}'",
            theta0.stage.as_str()
        )));
    }
    if target.role != ManifestRole::Target {
        return Err(SaptError::Config("sapt: manifest role must be 'target'".into()));
    }
    let pool = sorted_pool(target.ids_for_split(Split::Train));
    if pool.is_empty() {
        return Err(SaptError::Config("sapt: target manifest has no train records".into()));
    }
    let allowed: HashSet<String> = pool.iter().map(|r| r.id.clone()).collect();
    let reader = AuditedReader::new(store, Some(allowed));

    let mut params = theta0.params.clone();
    let trace = run_training_loop(&mut params, &theta0.arch, &pool, &reader, cfg, None, &[])?;
    let checkpoint =
        Checkpoint::new(theta0.arch, StageTag::Sapt, cfg.seed, cfg.steps, theta0.digest(), params)?;
    Ok(StageOutput { checkpoint, trace, audit: reader.audit_log() })
}

/// Stage 3: supervised fine-tuning from theta0 (vanilla) or theta_SAPT.
/// The classifier head is re-initialized from the fine-tuning seed so runs
/// from different starting checkpoints share head initializations. `subset`
/// restricts training to the given train-split ids (the few-shot case).
pub fn finetune(
    start: &Checkpoint,
    target: &Manifest,
    subset: Option<&[String]>,
    store: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    cfg.validate()?;
    if cfg.stage != Stage::Finetune {
        return Err(SaptError::Config("finetune: cfg.stage must be 'finetune'".into()));
    }
    if start.stage == StageTag::Finetuned {
        return Err(SaptError::Dependency(
            "finetune must start from a theta0 or sapt checkpoint".into(),
        ));
    }
    if target.role != ManifestRole::Target {
        return Err(SaptError::Config("finetune: manifest role must be 'target'".into()));
    }
    let class_map = target.class_map();
    if start.arch.num_classes != class_map.len() {
        return Err(SaptError::Config(format!(
            "finetune: arch has {} classes but the manifest has {} languages",
            start.arch.num_classes,
            class_map.len()
        )));
    }
    let train: Vec<&ManifestRecord> = target.ids_for_split(Split::Train);
    let pool = match subset {
        None => sorted_pool(train),
        Some(ids) => {
            let train_ids: HashSet<&str> = train.iter().map(|r| r.id.as_str()).collect();
            for id in ids {
                if !train_ids.contains(id.as_str()) {
                    return Err(SaptError::SplitDiscipline(format!(
                        "fine-tuning subset contains non-train id '{id}'"
                    )));
                }
            }
            let wanted: HashSet<&str> = ids.iter().map(|s| s.as_str()).collect();
            sorted_pool(train.into_iter().filter(|r| wanted.contains(r.id.as_str())).collect())
        }
    };
    if pool.is_empty() {
        return Err(SaptError::Config("finetune: empty training subset".into()));
    }
    let allowed: HashSet<String> = pool.iter().map(|r| r.id.clone()).collect();
    let reader = AuditedReader::new(store, Some(allowed));

    let mut params = start.params.clone();
    reinit_classifier(&mut params, &start.arch, cfg.seed);
    let frozen = match cfg.freeze {
        FreezePolicy::None => vec![],
        FreezePolicy::FreezeFeatureEncoder => {
            let layout = ParamLayout::new(&start.arch);
            vec![
                layout.fe_w.offset..layout.fe_w.offset + layout.fe_w.len(),
                layout.fe_b.offset..layout.fe_b.offset + layout.fe_b.len(),
            ]
        }
    };
    let lookup = |rec: &ManifestRecord| -> Result<usize> {
        class_map
            .get(&rec.label)
            .copied()
            .ok_or_else(|| SaptError::Config(format!("unknown language '{}'", rec.label)))
    };
    let trace =
        run_training_loop(&mut params, &start.arch, &pool, &reader, cfg, Some(&lookup), &frozen)?;
    let checkpoint = Checkpoint::new(
        start.arch,
        StageTag::Finetuned,
        cfg.seed,
        cfg.steps,
        start.digest(),
        params,
    )?;
    Ok(StageOutput { checkpoint, trace, audit: reader.audit_log() })
}

/// Inference on one utterance with a fine-tuned checkpoint. Ties break
/// toward the lowest class index.
pub fn predict(
    ckpt: &Checkpoint,
    utt: &crate::corpus::LoadedUtterance,
) -> Result<(usize, Vec<f64>)> {
    if ckpt.stage != StageTag::Finetuned {
        return Err(SaptError::Dependency(format!(
            "predict requires a finetuned checkpoint, found '{}'",
            ckpt.stage.as_str()
        )));
    }
    let mut probs = crate::encoder::classify_logits(&ckpt.params, &ckpt.arch, utt)?;
    softmax_inplace(&mut probs);
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs))
}

/// Mean self-supervised loss over a fixed record list, used to measure
/// adaptation progress. Reads are unaudited; callers pass train records.
pub fn mean_self_supervised_loss(
    params: &[f64],
    arch: &ArchConfig,
    records: &[&ManifestRecord],
    store: &FeatureStore,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, rec) in records.iter().enumerate() {
        let utt = store.read(rec, None)?;
        let spec = ObjectiveSpec::SelfSupervised {
            mask_prob: cfg.mask_prob,
            mask_span: cfg.mask_span,
            contrastive: cfg.contrastive,
            seed: derive_seed(seed, "eval-ss", &[i as u64]),
        };
        let (loss, _) = loss_and_gradients(params, arch, std::slice::from_ref(&utt), &spec)?;
        total += loss;
    }
    Ok(total / records.len().max(1) as f64)
}
