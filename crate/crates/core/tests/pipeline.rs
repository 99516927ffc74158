//! End-to-end checks for the three training stages on a tiny generated
//! benchmark: zero-step identities, split discipline, label blindness, and
//! the fine-tuning gate on inference.

use sapt_core::corpus::{
    build_benchmark, BenchmarkConfig, ChannelKind, DomainConfig, FeatureStore, GeneratedBenchmark,
    Split,
};
use sapt_core::encoder::{ArchConfig, StageTag};
use sapt_core::objective::ContrastiveConfig;
use sapt_core::pipeline::{
    finetune, predict, pretrain, sapt, write_loss_trace, AdamHyper, FreezePolicy, Stage,
    TrainConfig,
};
use sapt_core::SaptError;
use std::collections::BTreeSet;
use std::path::Path;

fn tiny_benchmark(dir: &Path) -> GeneratedBenchmark {
    let cfg = BenchmarkConfig {
        seed: 11,
        num_seen: 2,
        num_unseen: 1,
        phones_per_language: 3,
        feat_dim: 6,
        min_frames: 10,
        max_frames: 16,
        pretrain_per_language: 6,
        target_train: 6,
        target_dev: 2,
        target_test: 3,
        pretrain_domain: DomainConfig {
            id: "studio".into(),
            noise_sigma: 0.05,
            channel: ChannelKind::Unit,
            channel_sigma: 0.0,
            rate: 1.0,
        },
        target_domain: DomainConfig {
            id: "field".into(),
            noise_sigma: 0.2,
            channel: ChannelKind::Lognormal,
            channel_sigma: 0.5,
            rate: 1.3,
        },
    };
    build_benchmark(&cfg, Some(dir)).unwrap()
}

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        feat_dim: 6,
        frame_stack: 2,
        model_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 12,
        num_classes: 3,
        proj_dim: 5,
    }
}

fn cfg(stage: Stage, steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        stage,
        steps,
        batch_size: 4,
        adam: AdamHyper::default(),
        seed,
        mask_prob: 0.3,
        mask_span: 2,
        contrastive: ContrastiveConfig { num_distractors: 3, temperature: 0.1 },
        freeze: FreezePolicy::None,
    }
}

#[test]
fn zero_step_stages_preserve_parameter_digests() {
    let dir = tempfile::tempdir().unwrap();
    let bench = tiny_benchmark(dir.path());
    let store = FeatureStore::new(dir.path());
    let arch = tiny_arch();

    let theta0 =
        pretrain(&bench.pretrain, &store, &arch, &cfg(Stage::Pretrain, 5, 1)).unwrap().checkpoint;
    let adapted0 =
        sapt(&theta0, &bench.target, &store, &cfg(Stage::Sapt, 0, 2)).unwrap().checkpoint;
    assert_eq!(adapted0.digest(), theta0.digest());
    assert_eq!(adapted0.params, theta0.params);

    // With identical parameters and the same fine-tuning seed, the two modes
    // produce bit-identical fine-tuned checkpoints.
    let ft_cfg = cfg(Stage::Finetune, 3, 7);
    let from_theta0 = finetune(&theta0, &bench.target, None, &store, &ft_cfg).unwrap().checkpoint;
    let from_adapted =
        finetune(&adapted0, &bench.target, None, &store, &ft_cfg).unwrap().checkpoint;
    assert_eq!(from_theta0.params, from_adapted.params);
    assert_eq!(from_theta0.digest(), from_adapted.digest());
    assert_eq!(from_theta0.stage, StageTag::Finetuned);
    assert_eq!(from_theta0.source_digest, theta0.digest());
}

#[test]
fn adaptation_and_finetuning_read_only_the_train_split() {
    let dir = tempfile::tempdir().unwrap();
    let bench = tiny_benchmark(dir.path());
    let store = FeatureStore::new(dir.path());
    let arch = tiny_arch();

    let theta0 =
        pretrain(&bench.pretrain, &store, &arch, &cfg(Stage::Pretrain, 4, 1)).unwrap().checkpoint;
    let out = sapt(&theta0, &bench.target, &store, &cfg(Stage::Sapt, 30, 2)).unwrap();
    let train_ids: BTreeSet<String> =
        bench.target.ids_for_split(Split::Train).iter().map(|r| r.id.clone()).collect();
    assert!(!out.audit.is_empty());
    assert!(out.audit.is_subset(&train_ids));

    let ft = finetune(&out.checkpoint, &bench.target, None, &store, &cfg(Stage::Finetune, 30, 3))
        .unwrap();
    assert!(ft.audit.is_subset(&train_ids));

    // a subset containing a dev id is a split-discipline violation
    let dev_id = bench.target.ids_for_split(Split::Dev)[0].id.clone();
    let err = finetune(
        &out.checkpoint,
        &bench.target,
        Some(&[dev_id]),
        &store,
        &cfg(Stage::Finetune, 1, 3),
    );
    assert!(matches!(err, Err(SaptError::SplitDiscipline(_))));
}

#[test]
fn self_supervised_stages_are_label_blind() {
    let dir = tempfile::tempdir().unwrap();
    let bench = tiny_benchmark(dir.path());
    let store = FeatureStore::new(dir.path());
    let arch = tiny_arch();

    // Permute every label in the pretraining manifest; theta0 must not move.
    let mut scrambled = bench.pretrain.clone();
    for r in &mut scrambled.records {
        r.label = format!("not-a-language-{}", r.label);
    }
    let c = cfg(Stage::Pretrain, 10, 5);
    let a = pretrain(&bench.pretrain, &store, &arch, &c).unwrap().checkpoint;
    let b = pretrain(&scrambled, &store, &arch, &c).unwrap().checkpoint;
    assert_eq!(a.params, b.params);
}

#[test]
fn training_runs_are_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let bench = tiny_benchmark(dir.path());
    let store = FeatureStore::new(dir.path());
    let arch = tiny_arch();
    let c = cfg(Stage::Pretrain, 15, 9);
    let a = pretrain(&bench.pretrain, &store, &arch, &c).unwrap();
    let b = pretrain(&bench.pretrain, &store, &arch, &c).unwrap();
    assert_eq!(a.checkpoint.params, b.checkpoint.params);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn stage_and_lineage_gates_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let bench = tiny_benchmark(dir.path());
    let store = FeatureStore::new(dir.path());
    let arch = tiny_arch();

    let theta0 =
        pretrain(&bench.pretrain, &store, &arch, &cfg(Stage::Pretrain, 2, 1)).unwrap().checkpoint;
    // predict requires a fine-tuned checkpoint
    let utt = store.read(bench.target.ids_for_split(Split::Test)[0], None).unwrap();
    assert!(matches!(predict(&theta0, &utt), Err(SaptError::Dependency(_))));

    let ft = finetune(&theta0, &bench.target, None, &store, &cfg(Stage::Finetune, 2, 2))
        .unwrap()
        .checkpoint;
    let (label, probs) = predict(&ft, &utt).unwrap();
    assert!(label < 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    // sapt must start from theta0, finetune must not start from finetuned
    assert!(matches!(
        sapt(&ft, &bench.target, &store, &cfg(Stage::Sapt, 1, 3)),
        Err(SaptError::Dependency(_))
    ));
    assert!(matches!(
        finetune(&ft, &bench.target, None, &store, &cfg(Stage::Finetune, 1, 3)),
        Err(SaptError::Dependency(_))
    ));
}

#[test]
fn loss_trace_csv_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let bench = tiny_benchmark(dir.path());
    let store = FeatureStore::new(dir.path());
    let arch = tiny_arch();
    let out = pretrain(&bench.pretrain, &store, &arch, &cfg(Stage::Pretrain, 7, 1)).unwrap();
    let p = dir.path().join("trace.csv");
    write_loss_trace(&p, Stage::Pretrain, 1, &out.trace).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,loss,stage,seed");
    assert_eq!(lines.len(), 8);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",pretrain,1"));
}
