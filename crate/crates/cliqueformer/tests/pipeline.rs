//! Stage-by-stage pipeline checks: artifacts round-trip through files and
//! the staged path reproduces the end-to-end path exactly.

use cliqueformer::experiments::bench::{
    default_run_config, run_seed, stage_design, stage_filter, stage_task, stage_train,
    MethodSpec, TaskInstance, TaskSpec,
};
use cliqueformer::experiments::{evaluate_candidates, Metric};
use cliqueformer::fgm::CliqueLayout;
use cliqueformer::io;
use std::process::Command;

fn micro_config() -> cliqueformer::experiments::RunConfig {
    let task = TaskSpec::LatentRbf {
        n_triangles: 2,
        observed_dim: 10,
        n_samples: 400,
        eps_valid: 0.4,
    };
    let mut cfg = default_run_config(task, MethodSpec::Cliqueformer).unwrap();
    cfg.model.layout = CliqueLayout::chain(3, 3, 1).unwrap();
    cfg.model.d_model = 16;
    cfg.model.n_blocks = 1;
    cfg.model.mlp_hidden = 32;
    cfg.train.total_steps = 80;
    cfg.train.batch_size = 32;
    cfg.train.vib_warmup_steps = 40;
    cfg.metric = Metric::Top1Of128;
    cfg.design.steps = 5;
    cfg.seeds = vec![0];
    cfg
}

#[test]
fn staged_path_reproduces_end_to_end_through_files() {
    let cfg = micro_config();
    let seed = 3u64;

    // end-to-end reference
    let reference = run_seed(&cfg, seed).unwrap();

    // staged: every intermediate passes through a file
    let dir = tempfile::tempdir().unwrap();
    let (task, data) = stage_task(&cfg, seed).unwrap();
    let train_ds = stage_filter(&cfg, &data).unwrap();
    let task_path = dir.path().join("task.bin");
    let train_path = dir.path().join("train.bin");
    if let TaskInstance::Rbf(t) = &task {
        io::save_task(&task_path, t).unwrap();
    }
    io::save_dataset(&train_path, &train_ds).unwrap();

    let train_loaded = io::load_dataset(&train_path).unwrap();
    let (model, _) = stage_train(&cfg, &train_loaded, seed).unwrap();
    let ckpt_path = dir.path().join("model.bin");
    io::save_model(&ckpt_path, &model).unwrap();

    let model_loaded = io::load_model(&ckpt_path).unwrap();
    assert_eq!(model.params.checksum(), model_loaded.params.checksum());
    let batch = stage_design(&cfg, &model_loaded, &train_loaded, seed).unwrap();
    let cands_path = dir.path().join("cands.csv");
    io::save_candidates(&cands_path, &batch.designs).unwrap();

    let task_loaded = io::load_task(&task_path).unwrap();
    let cands_loaded = io::load_candidates(&cands_path, None).unwrap();
    let oracle = task_loaded.oracle(train_loaded.stats);
    let row = evaluate_candidates(&oracle, &cands_loaded, cfg.metric.top_k()).unwrap();

    assert_eq!(row.score.to_bits(), reference.row.score.to_bits());
    assert_eq!(row.validity.to_bits(), reference.row.validity.to_bits());
}

#[test]
fn cli_stages_run_and_produce_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config_path = dir.path().join("cfg.toml");
    std::fs::write(
        &config_path,
        r#"
[model]
n_clique = 3
d_clique = 3
d_knot = 1
d_model = 16
n_blocks = 1
mlp_hidden = 32

[train]
total_steps = 60
batch_size = 32
vib_warmup_steps = 30

[design]
steps = 4

[task]
n_samples = 400
"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_cliqueformer");
    let run = |args: &[&str]| {
        let output = Command::new(bin).args(args).output().unwrap();
        assert!(
            output.status.success(),
            "command {:?} failed:\n{}\n{}",
            args,
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8_lossy(&output.stdout).to_string()
    };
    let cfg_flag = config_path.to_str().unwrap();

    run(&["generate", "--task", "rbf11", "--seed", "5", "--config", cfg_flag, "--out", out]);
    assert!(dir.path().join("task.bin").exists());
    assert!(dir.path().join("dataset_train.bin").exists());

    let train_data = dir.path().join("dataset_train.bin");
    run(&[
        "train", "--task", "rbf11", "--seed", "5", "--config", cfg_flag,
        "--train-data", train_data.to_str().unwrap(), "--out", out,
    ]);
    assert!(dir.path().join("checkpoint.bin").exists());
    assert!(dir.path().join("curves.csv").exists());

    let ckpt = dir.path().join("checkpoint.bin");
    run(&[
        "design", "--task", "rbf11", "--seed", "5", "--config", cfg_flag,
        "--checkpoint", ckpt.to_str().unwrap(),
        "--train-data", train_data.to_str().unwrap(),
        "--batch-size", "64", "--top-k", "5", "--out", out,
    ]);
    assert!(dir.path().join("candidates.csv").exists());
    assert!(dir.path().join("surrogate_trace.csv").exists());

    let task_file = dir.path().join("task.bin");
    let cands = dir.path().join("candidates.csv");
    let stdout = run(&[
        "evaluate", "--task", "rbf11", "--config", cfg_flag,
        "--task-file", task_file.to_str().unwrap(),
        "--train-data", train_data.to_str().unwrap(),
        "--candidates", cands.to_str().unwrap(),
        "--top-k", "5", "--out", out,
    ]);
    assert!(stdout.contains("score"), "stdout: {stdout}");
    assert!(dir.path().join("eval.json").exists());
}

#[test]
fn cli_rejects_unknown_task_and_method() {
    let bin = env!("CARGO_BIN_EXE_cliqueformer");
    let out = Command::new(bin)
        .args(["bench", "--task", "rbf99"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(bin)
        .args(["bench", "--method", "mystery"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
