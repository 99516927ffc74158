//! End-to-end experiment runner: generate the corpus, pretrain, adapt,
//! run the full-data comparison and the few-shot grid, and emit reports.
//! Every step is resumable; completed outputs on disk are reused as-is.

use crate::config::ExperimentConfig;
use crate::corpus::{build_benchmark, FeatureStore, Manifest, Split};
use crate::encoder::Checkpoint;
use crate::error::{Result, SaptError};
use crate::evalreport::{emit_report, evaluate, mean_report, EvalReport};
use crate::fewshot::{run_protocol, ProtocolResult};
use crate::pipeline::{finetune, pretrain, sapt, write_loss_trace, Stage, StageOutput};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub theta0: Checkpoint,
    pub adapted: Checkpoint,
    pub vanilla: EvalReport,
    pub sapt: EvalReport,
    pub protocol: ProtocolResult,
}

pub struct ExperimentPaths {
    pub corpus_dir: PathBuf,
    pub pretrain_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub theta0: PathBuf,
    pub adapted: PathBuf,
}

impl ExperimentPaths {
    pub fn new(out_dir: &Path) -> Self {
        ExperimentPaths {
            corpus_dir: out_dir.join("corpus"),
            pretrain_manifest: out_dir.join("corpus/pretrain.jsonl"),
            target_manifest: out_dir.join("corpus/target.jsonl"),
            theta0: out_dir.join("checkpoints/theta0.ckpt"),
            adapted: out_dir.join("checkpoints/sapt.ckpt"),
        }
    }
}

fn write_audit(path: &Path, ids: &BTreeSet<String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}

/// Generate manifests and features under `<out>/corpus`, reusing existing
/// ones when `resume` is set and the config hash matches.
pub fn ensure_corpus(cfg: &ExperimentConfig, resume: bool) -> Result<(Manifest, Manifest)> {
    let paths = ExperimentPaths::new(&cfg.out_dir);
    let bench_cfg = cfg.benchmark_config();
    if resume && paths.pretrain_manifest.exists() && paths.target_manifest.exists() {
        let pre = Manifest::load(&paths.pretrain_manifest)?;
        let tgt = Manifest::load(&paths.target_manifest)?;
        if pre.config_hash == bench_cfg.config_hash() && tgt.config_hash == bench_cfg.config_hash()
        {
            return Ok((pre, tgt));
        }
    }
    let bench = build_benchmark(&bench_cfg, Some(&paths.corpus_dir))?;
    bench.pretrain.save(&paths.pretrain_manifest)?;
    bench.target.save(&paths.target_manifest)?;
    Ok((bench.pretrain, bench.target))
}

fn ensure_stage(
    path: &Path,
    resume: bool,
    out_dir: &Path,
    stage: Stage,
    seed: u64,
    run: impl FnOnce() -> Result<StageOutput>,
) -> Result<Checkpoint> {
    if resume && path.exists() {
        return Checkpoint::load(path);
    }
    let out = run()?;
    out.checkpoint.save(path)?;
    write_loss_trace(
        &out_dir.join(format!("loss_trace_{}.csv", stage.as_str())),
        stage,
        seed,
        &out.trace,
    )?;
    write_audit(&out_dir.join(format!("audit_{}.txt", stage.as_str())), &out.audit)?;
    Ok(out.checkpoint)
}

#[derive(Serialize, Deserialize)]
struct FullDataResults {
    config_digest: String,
    vanilla: EvalReport,
    sapt: EvalReport,
}

/// Run the whole study for one config. With `resume`, finished artifacts
/// (corpus, checkpoints, protocol cells, full-data results) are loaded
/// instead of recomputed, so a completed run is a no-op.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("config.toml"),
        toml::to_string_pretty(cfg).map_err(|e| SaptError::Format(e.to_string()))?,
    )?;
    let paths = ExperimentPaths::new(&out_dir);

    let (pre_manifest, target) = ensure_corpus(cfg, resume)?;
    let store = FeatureStore::new(&paths.corpus_dir);
    let arch = cfg.arch_config();

    let pretrain_cfg = cfg.train_config(Stage::Pretrain)?;
    let theta0 =
        ensure_stage(&paths.theta0, resume, &out_dir, Stage::Pretrain, pretrain_cfg.seed, || {
            pretrain(&pre_manifest, &store, &arch, &pretrain_cfg)
        })?;

    let sapt_cfg = cfg.train_config(Stage::Sapt)?;
    let adapted =
        ensure_stage(&paths.adapted, resume, &out_dir, Stage::Sapt, sapt_cfg.seed, || {
            sapt(&theta0, &target, &store, &sapt_cfg)
        })?;

    // Full-data comparison: fine-tune both modes on the entire train split
    // across several seeds; both modes share each seed.
    let fulldata_path = out_dir.join("fulldata.json");
    let mut finetune_audit: BTreeSet<String> = BTreeSet::new();
    let fulldata: FullDataResults = 'full: {
        if resume && fulldata_path.exists() {
            let text = std::fs::read_to_string(&fulldata_path)?;
            if let Ok(prev) = serde_json::from_str::<FullDataResults>(&text) {
                if prev.config_digest == cfg.digest() {
                    break 'full prev;
                }
            }
        }
        let ft_template = cfg.train_config(Stage::Finetune)?;
        let mut by_mode: [Vec<EvalReport>; 2] = [Vec::new(), Vec::new()];
        for &seed in &cfg.fewshot.full_data_seeds {
            let mut ft_cfg = ft_template.clone();
            ft_cfg.seed = derive_seed(ft_template.seed, "full-data", &[seed]);
            for (mi, start) in [&theta0, &adapted].into_iter().enumerate() {
                let out = finetune(start, &target, None, &store, &ft_cfg)?;
                finetune_audit.extend(out.audit);
                by_mode[mi].push(evaluate(&out.checkpoint, &target, &store, Split::Test)?);
            }
        }
        let results = FullDataResults {
            config_digest: cfg.digest(),
            vanilla: mean_report(&by_mode[0])?,
            sapt: mean_report(&by_mode[1])?,
        };
        let json =
            serde_json::to_vec_pretty(&results).map_err(|e| SaptError::Format(e.to_string()))?;
        std::fs::write(&fulldata_path, json)?;
        results
    };

    let protocol_cfg = cfg.protocol_config()?;
    let protocol =
        run_protocol(&theta0, &adapted, &target, &store, &protocol_cfg, Some(&out_dir), resume)?;
    finetune_audit.extend(protocol.audit.iter().cloned());
    if !finetune_audit.is_empty() {
        write_audit(&out_dir.join("audit_finetune.txt"), &finetune_audit)?;
    }

    let reports = vec![
        ("vanilla".to_string(), fulldata.vanilla.clone()),
        ("sapt".to_string(), fulldata.sapt.clone()),
    ];
    emit_report(&reports, Some(("vanilla", "sapt")), &protocol.summary(), &out_dir)?;

    Ok(ExperimentOutcome {
        out_dir,
        theta0,
        adapted,
        vanilla: fulldata.vanilla,
        sapt: fulldata.sapt,
        protocol,
    })
}
