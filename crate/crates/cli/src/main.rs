//! `sapt`: config-driven corpus generation, training stages, few-shot
//! protocol, and reporting.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sapt_core::config::ExperimentConfig;
use sapt_core::corpus::{FeatureStore, Manifest, Split};
use sapt_core::encoder::Checkpoint;
use sapt_core::evalreport::{emit_report, evaluate};
use sapt_core::experiment::{ensure_corpus, run_experiment, ExperimentPaths};
use sapt_core::pipeline::{self, write_loss_trace, Stage};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sapt",
    about = "Self-supervised adaptive pretraining for spoken language identification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment config (TOML); built-in defaults when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the config's global seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the protocol worker count
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Reuse completed outputs (default)
    #[arg(long, overrides_with = "no_resume")]
    resume: bool,
    /// Recompute everything from scratch
    #[arg(long)]
    no_resume: bool,
}

impl CommonOpts {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, bool)> {
        let mut cfg = match &self.config {
            Some(p) => {
                ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.global_seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.fewshot.workers = workers.max(1);
        }
        cfg.validate()?;
        Ok((cfg, !self.no_resume))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (manifests + feature files)
    GenCorpus(CommonOpts),
    /// Self-supervised pretraining on the pretraining corpus
    Pretrain(CommonOpts),
    /// Continue the self-supervised objective on the target train split
    Sapt(CommonOpts),
    /// Supervised fine-tuning on the full target train split
    Finetune(CommonOpts),
    /// Evaluate a fine-tuned checkpoint on a held-out split
    Evaluate {
        /// Checkpoint file
        checkpoint: PathBuf,
        /// Target manifest (JSONL); features resolve relative to its directory
        manifest: PathBuf,
        /// dev or test
        split: String,
        /// Report output directory
        #[arg(long, value_name = "DIR", default_value = "evaluation")]
        out: PathBuf,
    },
    /// Run the full study: corpus, stages, comparison grid, reports
    Experiment(CommonOpts),
}

fn load_checkpoint(path: &Path, what: &str) -> anyhow::Result<Checkpoint> {
    if !path.exists() {
        bail!(
            "dependency error: {what} checkpoint not found at {} (run the earlier stage first)",
            path.display()
        );
    }
    Ok(Checkpoint::load(path)?)
}

fn finish_stage(
    out: pipeline::StageOutput,
    path: &Path,
    out_dir: &Path,
    stage: Stage,
    seed: u64,
) -> anyhow::Result<Checkpoint> {
    out.checkpoint.save(path)?;
    write_loss_trace(
        &out_dir.join(format!("loss_trace_{}.csv", stage.as_str())),
        stage,
        seed,
        &out.trace,
    )?;
    let audit_path = out_dir.join(format!("audit_{}.txt", stage.as_str()));
    let mut w = std::fs::File::create(&audit_path)?;
    for id in &out.audit {
        writeln!(w, "{id}")?;
    }
    println!("{}: wrote {}", stage.as_str(), path.display());
    Ok(out.checkpoint)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenCorpus(opts) => {
            let (cfg, resume) = opts.load()?;
            let (pre, tgt) = ensure_corpus(&cfg, resume)?;
            println!(
                "corpus ready under {}: {} pretraining and {} target utterances",
                cfg.out_dir.join("corpus").display(),
                pre.records.len(),
                tgt.records.len()
            );
        }
        Command::Pretrain(opts) => {
            let (cfg, resume) = opts.load()?;
            let paths = ExperimentPaths::new(&cfg.out_dir);
            let (pre, _) = ensure_corpus(&cfg, resume)?;
            let store = FeatureStore::new(&paths.corpus_dir);
            let stage_cfg = cfg.train_config(Stage::Pretrain)?;
            if resume && paths.theta0.exists() {
                println!("pretrain: reusing {}", paths.theta0.display());
            } else {
                let out = pipeline::pretrain(&pre, &store, &cfg.arch_config(), &stage_cfg)?;
                finish_stage(out, &paths.theta0, &cfg.out_dir, Stage::Pretrain, stage_cfg.seed)?;
            }
        }
        Command::Sapt(opts) => {
            let (cfg, resume) = opts.load()?;
            let paths = ExperimentPaths::new(&cfg.out_dir);
            let (_, target) = ensure_corpus(&cfg, resume)?;
            let store = FeatureStore::new(&paths.corpus_dir);
            let theta0 = load_checkpoint(&paths.theta0, "pretrained")?;
            let stage_cfg = cfg.train_config(Stage::Sapt)?;
            if resume && paths.adapted.exists() {
                println!("sapt: reusing {}", paths.adapted.display());
            } else {
                let out = pipeline::sapt(&theta0, &target, &store, &stage_cfg)?;
                finish_stage(out, &paths.adapted, &cfg.out_dir, Stage::Sapt, stage_cfg.seed)?;
            }
        }
        Command::Finetune(opts) => {
            let (cfg, resume) = opts.load()?;
            let paths = ExperimentPaths::new(&cfg.out_dir);
            let (_, target) = ensure_corpus(&cfg, resume)?;
            let store = FeatureStore::new(&paths.corpus_dir);
            // start from the adapted checkpoint when present, else theta0
            let start = if paths.adapted.exists() {
                load_checkpoint(&paths.adapted, "adapted")?
            } else {
                load_checkpoint(&paths.theta0, "pretrained")?
            };
            let stage_cfg = cfg.train_config(Stage::Finetune)?;
            let ckpt_path = cfg.out_dir.join("checkpoints/finetuned.ckpt");
            if resume && ckpt_path.exists() {
                println!("finetune: reusing {}", ckpt_path.display());
            } else {
                let out = pipeline::finetune(&start, &target, None, &store, &stage_cfg)?;
                finish_stage(out, &ckpt_path, &cfg.out_dir, Stage::Finetune, stage_cfg.seed)?;
            }
        }
        Command::Evaluate { checkpoint, manifest, split, out } => {
            let split: Split = split.parse()?;
            let ckpt = load_checkpoint(&checkpoint, "fine-tuned")?;
            let m = Manifest::load(&manifest)?;
            let store_root = manifest.parent().unwrap_or_else(|| Path::new("."));
            let store = FeatureStore::new(store_root);
            let report = evaluate(&ckpt, &m, &store, split)?;
            emit_report(&[("model".into(), report.clone())], None, &[], &out)?;
            println!(
                "{} accuracy on {}: {:.1}% macro ({} languages); reports in {}",
                checkpoint.display(),
                split.as_str(),
                report.macro_average,
                report.per_language.len(),
                out.display()
            );
        }
        Command::Experiment(opts) => {
            let (cfg, resume) = opts.load()?;
            let outcome = run_experiment(&cfg, resume)?;
            let ok = outcome.protocol.cells.iter().filter(|c| c.status == "ok").count();
            let failed: BTreeSet<String> = outcome
                .protocol
                .cells
                .iter()
                .filter(|c| c.status != "ok")
                .map(|c| format!("{}/K={}/seed={}", c.mode, c.k, c.seed))
                .collect();
            println!(
                "experiment complete: {} protocol cells ok, vanilla {:.1}% vs sapt {:.1}% macro; reports in {}",
                ok,
                outcome.vanilla.macro_average,
                outcome.sapt.macro_average,
                outcome.out_dir.display()
            );
            if !failed.is_empty() {
                bail!("failed cells: {}", failed.into_iter().collect::<Vec<_>>().join(", "));
            }
        }
    }
    Ok(())
}
