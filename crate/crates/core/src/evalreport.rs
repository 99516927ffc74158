//! Accuracy metrics, relative gains, and report emission: a grouped accuracy
//! table, a few-shot accuracy curve, and a machine-readable JSON bundle.

use crate::corpus::{FeatureStore, Manifest, Split};
use crate::encoder::{Checkpoint, StageTag};
use crate::error::{Result, SaptError};
use crate::math::round1;
use crate::pipeline::predict;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// language -> accuracy %
    pub per_language: BTreeMap<String, f64>,
    /// group -> unweighted mean over member languages, %
    pub per_group: BTreeMap<String, f64>,
    /// unweighted mean over all languages, %
    pub macro_average: f64,
    /// language -> evaluated utterance count
    pub n_test: BTreeMap<String, usize>,
}

/// Aggregate per-utterance outcomes (language, group, correct) into a report.
pub fn report_from_outcomes(outcomes: &[(String, String, bool)]) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(SaptError::Config("evaluate: empty split".into()));
    }
    let mut correct: BTreeMap<String, usize> = BTreeMap::new();
    let mut total: BTreeMap<String, usize> = BTreeMap::new();
    let mut group_of: BTreeMap<String, String> = BTreeMap::new();
    for (lang, group, ok) in outcomes {
        *total.entry(lang.clone()).or_default() += 1;
        *correct.entry(lang.clone()).or_default() += usize::from(*ok);
        group_of.insert(lang.clone(), group.clone());
    }
    let per_language: BTreeMap<String, f64> = total
        .iter()
        .map(|(lang, &n)| (lang.clone(), correct[lang] as f64 / n as f64 * 100.0))
        .collect();
    let mut group_acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (lang, acc) in &per_language {
        group_acc.entry(group_of[lang].clone()).or_default().push(*acc);
    }
    let per_group = group_acc
        .into_iter()
        .map(|(g, accs)| (g, accs.iter().sum::<f64>() / accs.len() as f64))
        .collect();
    let macro_average = per_language.values().sum::<f64>() / per_language.len() as f64;
    Ok(EvalReport { per_language, per_group, macro_average, n_test: total })
}

/// Run the classifier over one held-out split and tally accuracies.
/// Checkpoints that have not been fine-tuned are rejected.
pub fn evaluate(
    ckpt: &Checkpoint,
    manifest: &Manifest,
    store: &FeatureStore,
    split: Split,
) -> Result<EvalReport> {
    if ckpt.stage != StageTag::Finetuned {
        return Err(SaptError::Dependency(format!(
            "evaluate requires a finetuned checkpoint, found '{}'",
            ckpt.stage.as_str()
        )));
    }
    if split == Split::Train {
        return Err(SaptError::Config("evaluate: split must be dev or test".into()));
    }
    let class_map = manifest.class_map();
    if ckpt.arch.num_classes != class_map.len() {
        return Err(SaptError::Config(format!(
            "evaluate: arch has {} classes but the manifest has {} languages",
            ckpt.arch.num_classes,
            class_map.len()
        )));
    }
    let mut outcomes = Vec::new();
    for rec in manifest.ids_for_split(split) {
        let utt = store.read(rec, None)?;
        let (pred, _) = predict(ckpt, &utt)?;
        let truth = class_map[&rec.label];
        outcomes.push((rec.label.clone(), rec.group.clone(), pred == truth));
    }
    report_from_outcomes(&outcomes)
}

/// Average per-language accuracies over several runs of the same benchmark
/// (e.g. seeds), then rebuild group and macro figures from the means.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| SaptError::Config("mean_report: at least one report required".into()))?;
    let mut per_language = BTreeMap::new();
    for lang in first.per_language.keys() {
        let mut sum = 0.0;
        for r in reports {
            let v = r.per_language.get(lang).ok_or_else(|| {
                SaptError::Config(format!("mean_report: language '{lang}' missing from a report"))
            })?;
            sum += v;
        }
        per_language.insert(lang.clone(), sum / reports.len() as f64);
    }
    // group accuracy is linear in per-language accuracies, so averaging the
    // group values directly is exact
    let per_group: BTreeMap<String, f64> = first
        .per_group
        .keys()
        .map(|g| {
            let v = reports.iter().map(|r| r.per_group[g]).sum::<f64>() / reports.len() as f64;
            (g.clone(), v)
        })
        .collect();
    let macro_average = reports.iter().map(|r| r.macro_average).sum::<f64>() / reports.len() as f64;
    Ok(EvalReport { per_language, per_group, macro_average, n_test: first.n_test.clone() })
}

/// (treatment - baseline) / baseline * 100, full precision. Display rounding
/// happens at emission.
pub fn relative_gain(baseline_pct: f64, treatment_pct: f64) -> Result<f64> {
    if baseline_pct <= 0.0 {
        return Err(SaptError::UndefinedGain);
    }
    Ok((treatment_pct - baseline_pct) / baseline_pct * 100.0)
}

/// One point of the few-shot curve: accuracy over seeds at a given K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: String,
    pub k: usize,
    pub mean_accuracy_pct: f64,
    pub std_accuracy_pct: f64,
}

#[derive(Serialize)]
struct ReportBundle<'a> {
    rows: BTreeMap<&'a str, &'a EvalReport>,
    gain_pct: Option<BTreeMap<String, f64>>,
    curve: &'a [CurvePoint],
}

/// Write `table.csv`, `fewshot_curve.csv`, and `report.json` under `out_dir`.
///
/// The table has one row per named report with group columns plus a macro
/// average; when `comparison` names a (baseline, treatment) pair, a relative
/// gain row is appended. Displayed percentages are rounded half away from
/// zero to one decimal; the JSON bundle keeps full precision. Output is
/// byte-identical for identical inputs.
pub fn emit_report(
    reports: &[(String, EvalReport)],
    comparison: Option<(&str, &str)>,
    curve: &[CurvePoint],
    out_dir: &Path,
) -> Result<()> {
    if reports.is_empty() {
        return Err(SaptError::Config("emit_report: at least one report required".into()));
    }
    let groups: Vec<&String> = reports[0].1.per_group.keys().collect();
    for (name, r) in reports {
        if r.per_group.keys().collect::<Vec<_>>() != groups {
            return Err(SaptError::Config(format!(
                "emit_report: row '{name}' has mismatched groups"
            )));
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let find = |name: &str| -> Result<&EvalReport> {
        reports
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r)
            .ok_or_else(|| SaptError::Config(format!("emit_report: no report named '{name}'")))
    };
    let gain_pct: Option<BTreeMap<String, f64>> = match comparison {
        None => None,
        Some((base_name, treat_name)) => {
            let (base, treat) = (find(base_name)?, find(treat_name)?);
            let mut gains = BTreeMap::new();
            for g in &groups {
                gains.insert((*g).clone(), relative_gain(base.per_group[*g], treat.per_group[*g])?);
            }
            gains.insert("avg".into(), relative_gain(base.macro_average, treat.macro_average)?);
            Some(gains)
        }
    };

    let mut table = std::io::BufWriter::new(std::fs::File::create(out_dir.join("table.csv"))?);
    write!(table, "model")?;
    for g in &groups {
        write!(table, ",{g}")?;
    }
    writeln!(table, ",avg")?;
    for (name, r) in reports {
        write!(table, "{name}")?;
        for g in &groups {
            write!(table, ",{:.1}", round1(r.per_group[*g]))?;
        }
        writeln!(table, ",{:.1}", round1(r.macro_average))?;
    }
    if let Some(gains) = &gain_pct {
        write!(table, "gain_pct")?;
        for g in &groups {
            write!(table, ",{:.1}", round1(gains[*g]))?;
        }
        writeln!(table, ",{:.1}", round1(gains["avg"]))?;
    }
    table.flush()?;

    let mut fc = std::io::BufWriter::new(std::fs::File::create(out_dir.join("fewshot_curve.csv"))?);
    writeln!(fc, "mode,k,mean_accuracy_pct,std_accuracy_pct")?;
    for p in curve {
        writeln!(fc, "{},{},{},{}", p.mode, p.k, p.mean_accuracy_pct, p.std_accuracy_pct)?;
    }
    fc.flush()?;

    let bundle = ReportBundle {
        rows: reports.iter().map(|(n, r)| (n.as_str(), r)).collect(),
        gain_pct,
        curve,
    };
    let json = serde_json::to_vec_pretty(&bundle).map_err(|e| SaptError::Format(e.to_string()))?;
    std::fs::write(out_dir.join("report.json"), json)?;
    Ok(())
}
