//! Smoke tests for the command-line interface on a miniature config.

use std::path::Path;
use std::process::Command;

fn sapt(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sapt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    let text = r#"
out_dir = "run"
global_seed = 23

[benchmark]
num_seen = 2
num_unseen = 1
phones_per_language = 3
feat_dim = 6
min_frames = 10
max_frames = 16
pretrain_per_language = 6
target_train = 6
target_dev = 2
target_test = 3

[benchmark.pretrain_domain]
id = "studio"
noise_sigma = 0.05
channel = "unit"
rate = 1.0

[benchmark.target_domain]
id = "field"
noise_sigma = 0.2
channel = "lognormal"
channel_sigma = 0.5
rate = 1.3

[arch]
frame_stack = 2
model_dim = 8
num_layers = 1
num_heads = 2
ffn_dim = 12
proj_dim = 5

[pretrain]
steps = 20

[sapt]
steps = 10

[finetune]
steps = 60

[fewshot]
k_grid = [1, 2]
seeds = [1, 2]
full_data_seeds = [1, 2]
workers = 2
"#;
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn stage_commands_chain_and_evaluate_works() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let out = sapt(&["gen-corpus", "--config", cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // sapt before pretrain is a dependency error
    let out = sapt(&["sapt", "--config", cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dependency"));

    for cmd in ["pretrain", "sapt", "finetune"] {
        let out = sapt(&[cmd, "--config", cfg], dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = dir.path().join("run");
    assert!(run.join("checkpoints/finetuned.ckpt").exists());

    // evaluating the non-finetuned theta0 checkpoint fails the stage gate
    let out = sapt(
        &[
            "evaluate",
            "run/checkpoints/theta0.ckpt",
            "run/corpus/target.jsonl",
            "test",
            "--out",
            "eval0",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("eval0/report.json").exists());

    let out = sapt(
        &[
            "evaluate",
            "run/checkpoints/finetuned.ckpt",
            "run/corpus/target.jsonl",
            "test",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("eval/report.json").exists());

    // rerunning a stage with --resume reuses the checkpoint
    let out = sapt(&["pretrain", "--config", cfg, "--resume"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("reusing"));
}

#[test]
fn experiment_command_writes_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let out = sapt(&["experiment", "--config", cfg, "--workers", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in ["table.csv", "fewshot_curve.csv", "report.json", "protocol.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let report = std::fs::read(run.join("report.json")).unwrap();
    let out = sapt(&["experiment", "--config", cfg], dir.path());
    assert!(out.status.success());
    assert_eq!(std::fs::read(run.join("report.json")).unwrap(), report);
}

#[test]
fn malformed_config_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "global_seed = 1\nnot_a_key = 2\n").unwrap();
    let out = sapt(&["gen-corpus", "--config", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}
