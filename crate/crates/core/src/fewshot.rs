//! Few-shot protocol: K-per-language support sampling, the (mode, K, seed)
//! comparison grid, and incremental, resumable result storage.

use crate::corpus::{FeatureStore, Manifest, Split};
use crate::encoder::{Checkpoint, StageTag};
use crate::error::{Result, SaptError};
use crate::evalreport::{evaluate, CurvePoint};
use crate::math::{mean, std_dev};
use crate::pipeline::{finetune, Stage, TrainConfig};
use crate::rng::{derive_seed, rng_from_seed};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

/// A per-language support sample: exactly K train-split ids per language.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotPlan {
    pub k: usize,
    pub seed: u64,
    /// language -> sorted selected ids
    pub selected: BTreeMap<String, Vec<String>>,
}

impl FewShotPlan {
    /// All selected ids across languages, sorted.
    pub fn ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.selected.values().flatten().cloned().collect();
        v.sort();
        v
    }
}

/// Uniform sample of K train utterances per language, without replacement,
/// fully determined by (manifest, K, seed).
pub fn sample_fewshot(target: &Manifest, k: usize, seed: u64) -> Result<FewShotPlan> {
    if k == 0 {
        return Err(SaptError::Config("sample_fewshot: K must be >= 1".into()));
    }
    let mut by_language: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for rec in target.ids_for_split(Split::Train) {
        by_language.entry(rec.label.clone()).or_default().push(&rec.id);
    }
    let mut selected = BTreeMap::new();
    for (li, (lang, mut ids)) in by_language.into_iter().enumerate() {
        if ids.len() < k {
            return Err(SaptError::Config(format!(
                "sample_fewshot: language '{lang}' has {} train utterances, K={k} requested",
                ids.len()
            )));
        }
        ids.sort();
        let mut rng = rng_from_seed(derive_seed(seed, "fewshot", &[li as u64, k as u64]));
        let picked = rand::seq::index::sample(&mut rng, ids.len(), k);
        let mut chosen: Vec<String> = picked.iter().map(|i| ids[i].to_string()).collect();
        chosen.sort();
        selected.insert(lang, chosen);
    }
    Ok(FewShotPlan { k, seed, selected })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub mode: String,
    pub k: usize,
    pub seed: u64,
    /// Macro-average test accuracy; NaN is never stored, failed cells carry 0.
    pub accuracy_pct: f64,
    pub ckpt_digest: String,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolResult {
    /// Sorted by (mode, k, seed); one entry per grid cell.
    pub cells: Vec<CellResult>,
    /// Union of utterance ids read while fine-tuning the cells computed in
    /// this run (resumed cells contribute nothing).
    pub audit: BTreeSet<String>,
}

impl ProtocolResult {
    /// Mean and sample standard deviation of accuracy per (mode, K), over
    /// cells with status "ok", in sorted order.
    pub fn summary(&self) -> Vec<CurvePoint> {
        let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            if c.status == "ok" {
                groups.entry((c.mode.clone(), c.k)).or_default().push(c.accuracy_pct);
            }
        }
        groups
            .into_iter()
            .map(|((mode, k), accs)| CurvePoint {
                mode,
                k,
                mean_accuracy_pct: mean(&accs),
                std_accuracy_pct: std_dev(&accs),
            })
            .collect()
    }

    /// Digest over the canonical serialization of the sorted cells.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.cells).expect("cells serialize");
        hex::encode(Sha256::digest(&json))
    }
}

pub const MODES: [&str; 2] = ["vanilla", "sapt"];

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Template for the per-cell fine-tuning run; the per-cell seed is
    /// derived from the cell, overriding `finetune.seed`.
    pub finetune: TrainConfig,
    pub workers: usize,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() || self.seeds.is_empty() {
            return Err(SaptError::Config(
                "protocol: K grid and seed list must be non-empty".into(),
            ));
        }
        if self.k_grid.contains(&0) {
            return Err(SaptError::Config("protocol: K values must be >= 1".into()));
        }
        if self.finetune.stage != Stage::Finetune {
            return Err(SaptError::Config(
                "protocol: finetune template stage must be 'finetune'".into(),
            ));
        }
        if self.workers == 0 {
            return Err(SaptError::Config("protocol: workers must be >= 1".into()));
        }
        self.finetune.validate()
    }
}

fn parse_protocol_csv(path: &Path) -> Result<Vec<CellResult>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == PROTOCOL_HEADER => {}
        _ => return Err(SaptError::Format(format!("{}: bad protocol header", path.display()))),
    }
    let mut cells = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(SaptError::Format(format!("{}: bad row '{line}'", path.display())));
        }
        let parse_err =
            |what: &str| SaptError::Format(format!("{}: bad {what} in '{line}'", path.display()));
        cells.push(CellResult {
            mode: f[0].to_string(),
            k: f[1].parse().map_err(|_| parse_err("K"))?,
            seed: f[2].parse().map_err(|_| parse_err("seed"))?,
            accuracy_pct: f[3].parse().map_err(|_| parse_err("accuracy"))?,
            ckpt_digest: f[4].to_string(),
            status: f[5].to_string(),
        });
    }
    Ok(cells)
}

const PROTOCOL_HEADER: &str = "mode,K,seed,accuracy_pct,ckpt_digest,status";

fn write_cell(w: &mut dyn Write, c: &CellResult) -> Result<()> {
    writeln!(w, "{},{},{},{},{},{}", c.mode, c.k, c.seed, c.accuracy_pct, c.ckpt_digest, c.status)?;
    w.flush()?;
    Ok(())
}

/// Run the full (mode, K, seed) grid. Per (K, seed), both modes share the
/// same support plan and fine-tuning seed so only the starting checkpoint
/// differs. Results append to `<out_dir>/protocol.csv` as cells finish;
/// with `resume`, cells already present there are not recomputed. A summary
/// of per-(mode, K) mean and standard deviation lands next to the CSV.
pub fn run_protocol(
    theta0: &Checkpoint,
    adapted: &Checkpoint,
    target: &Manifest,
    store: &FeatureStore,
    cfg: &ProtocolConfig,
    out_dir: Option<&Path>,
    resume: bool,
) -> Result<ProtocolResult> {
    cfg.validate()?;
    if theta0.stage != StageTag::Theta0 || adapted.stage != StageTag::Sapt {
        return Err(SaptError::Config(
            "protocol: expected a theta0 and a sapt checkpoint, in that order".into(),
        ));
    }
    if theta0.arch != adapted.arch {
        return Err(SaptError::Config("protocol: checkpoint architectures differ".into()));
    }
    if adapted.source_digest != theta0.digest() {
        return Err(SaptError::Config(
            "protocol: the sapt checkpoint was not adapted from the given theta0".into(),
        ));
    }

    let csv_path = out_dir.map(|d| d.join("protocol.csv"));
    let mut done: Vec<CellResult> = Vec::new();
    if resume {
        if let Some(p) = &csv_path {
            if p.exists() {
                done = parse_protocol_csv(p)?;
            }
        }
    }
    let finished: BTreeSet<(String, usize, u64)> =
        done.iter().map(|c| (c.mode.clone(), c.k, c.seed)).collect();

    let mut todo: Vec<(String, usize, u64)> = Vec::new();
    for &k in &cfg.k_grid {
        for &seed in &cfg.seeds {
            for mode in MODES {
                let key = (mode.to_string(), k, seed);
                if !finished.contains(&key) {
                    todo.push(key);
                }
            }
        }
    }

    let writer: Option<Mutex<std::fs::File>> = match &csv_path {
        None => None,
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let fresh = !(resume && p.exists());
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(p)?;
            if fresh {
                f.set_len(0)?;
                writeln!(f, "{PROTOCOL_HEADER}")?;
            }
            Some(Mutex::new(f))
        }
    };

    let run_cell = |mode: &str, k: usize, seed: u64| -> Result<(CellResult, BTreeSet<String>)> {
        let plan = sample_fewshot(target, k, derive_seed(seed, "plan", &[k as u64]))?;
        let ids = plan.ids();
        let mut cell_cfg = cfg.finetune.clone();
        cell_cfg.seed = derive_seed(seed, "cell-finetune", &[k as u64]);
        let start = if mode == "vanilla" { theta0 } else { adapted };
        match finetune(start, target, Some(&ids), store, &cell_cfg) {
            Ok(out) => {
                let report = evaluate(&out.checkpoint, target, store, Split::Test)?;
                Ok((
                    CellResult {
                        mode: mode.to_string(),
                        k,
                        seed,
                        accuracy_pct: report.macro_average,
                        ckpt_digest: out.checkpoint.digest(),
                        status: "ok".into(),
                    },
                    out.audit,
                ))
            }
            // a diverged run is a recorded failure, not a protocol abort
            Err(SaptError::Numerical(_)) => Ok((
                CellResult {
                    mode: mode.to_string(),
                    k,
                    seed,
                    accuracy_pct: 0.0,
                    ckpt_digest: String::new(),
                    status: "failed".into(),
                },
                BTreeSet::new(),
            )),
            Err(e) => Err(e),
        }
    };

    let queue = Mutex::new(todo.into_iter());
    let computed: Mutex<Vec<CellResult>> = Mutex::new(Vec::new());
    let audit: Mutex<BTreeSet<String>> = Mutex::new(BTreeSet::new());
    let failure: Mutex<Option<SaptError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(2 * cfg.k_grid.len() * cfg.seeds.len()).max(1) {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().next();
                let Some((mode, k, seed)) = next else { break };
                match run_cell(&mode, k, seed) {
                    Ok((cell, cell_audit)) => {
                        if let Some(w) = &writer {
                            let mut f = w.lock().unwrap();
                            if let Err(e) = write_cell(&mut *f, &cell) {
                                failure.lock().unwrap().get_or_insert(e);
                                break;
                            }
                        }
                        audit.lock().unwrap().extend(cell_audit);
                        computed.lock().unwrap().push(cell);
                    }
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let mut cells = done;
    cells.extend(computed.into_inner().unwrap());
    cells.sort_by(|a, b| (&a.mode, a.k, a.seed).cmp(&(&b.mode, b.k, b.seed)));
    let result = ProtocolResult { cells, audit: audit.into_inner().unwrap() };

    if let Some(dir) = out_dir {
        let summary = serde_json::to_vec_pretty(&result.summary())
            .map_err(|e| SaptError::Format(e.to_string()))?;
        std::fs::write(dir.join("protocol_summary.json"), summary)?;
    }
    Ok(result)
}
