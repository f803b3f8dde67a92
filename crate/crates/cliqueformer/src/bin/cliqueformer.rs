//! Command-line interface: task generation, training, design
//! optimization, evaluation, end-to-end benchmarks, ablations, and the
//! two demonstration studies.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cliqueformer::design::DecodeMode;
use cliqueformer::experiments::bench::{
    stage_design, stage_filter, stage_task, stage_train, TaskInstance,
};
use cliqueformer::experiments::{
    ablation_suite, default_run_config, evaluate_candidates, fgm_vs_oblivious, rotation_demo,
    run_benchmark, AblationVariant, BenchResult, FgmStudyConfig, Metric, MethodSpec, RunConfig,
    TaskSpec,
};
use cliqueformer::fgm::CliqueLayout;
use cliqueformer::io;
use cliqueformer::tasks::{Dataset, Designs};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "cliqueformer",
    about = "Offline model-based optimization with clique-structured transformer surrogates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Task name: rbf11 | rbf31 | rbf41 | rbf61 | tfbind8
    #[arg(long, default_value = "rbf11")]
    task: String,
    /// Method: cliqueformer | gradasc | rwr | coms | transformer
    #[arg(long, default_value = "cliqueformer")]
    method: String,
    /// Base seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds (seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// TOML config overriding the task defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Evaluation metric preset: top10of1000 | top1of128
    #[arg(long)]
    metric: Option<String>,
    /// Top-k override for evaluation.
    #[arg(long)]
    top_k: Option<usize>,
    /// Candidate-count override for evaluation.
    #[arg(long)]
    batch_size: Option<usize>,
    /// TFBind-8 data file (SEQUENCE<TAB>SCORE rows).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a latent-RBF task and emit task/dataset artifacts.
    Generate(CommonOpts),
    /// Train a surrogate and write a checkpoint plus loss curves.
    Train(TrainOpts),
    /// Optimize designs from a checkpoint and write candidates.
    Design(DesignOpts),
    /// Score a candidates file with the task oracle.
    Evaluate(EvaluateOpts),
    /// Full pipeline over seeds with aggregation.
    Bench(CommonOpts),
    /// Run ablation variants through the benchmark.
    Ablate(AblateOpts),
    /// Interaction-structure demonstration under rotation.
    DemoRotation(DemoRotationOpts),
    /// Decomposed-vs-oblivious surrogate study.
    DemoFgm(DemoFgmOpts),
}

#[derive(Args)]
struct TrainOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Training dataset artifact from `generate` (otherwise the task is
    /// derived from --task and --seed).
    #[arg(long)]
    train_data: Option<PathBuf>,
}

#[derive(Args)]
struct DesignOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training dataset artifact (candidate initialization and stats).
    #[arg(long)]
    train_data: PathBuf,
}

#[derive(Args)]
struct EvaluateOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Task artifact from `generate`.
    #[arg(long)]
    task_file: PathBuf,
    /// Training dataset artifact (normalization stats).
    #[arg(long)]
    train_data: PathBuf,
    /// Candidates CSV from `design`.
    #[arg(long)]
    candidates: PathBuf,
}

#[derive(Args)]
struct AblateOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Comma-separated variants: base, no-vib, no-weight-decay,
    /// ncliques-fixed-dz=N, ncliques-fixed-dclique=N
    #[arg(long, default_value = "base,no-vib,no-weight-decay")]
    variants: String,
}

#[derive(Args)]
struct DemoRotationOpts {
    /// Dimensions to probe, inclusive range.
    #[arg(long, default_value_t = 2)]
    l_min: usize,
    #[arg(long, default_value_t = 8)]
    l_max: usize,
    #[arg(long, default_value_t = 100)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoFgmOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    n_triangles: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Optional overrides loaded from --config TOML.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    #[serde(default)]
    model: ModelOverrides,
    #[serde(default)]
    train: TrainOverrides,
    #[serde(default)]
    design: DesignOverrides,
    #[serde(default)]
    task: TaskOverrides,
    #[serde(default)]
    baseline: BaselineOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverrides {
    d_model: Option<usize>,
    n_blocks: Option<usize>,
    n_heads: Option<usize>,
    mlp_hidden: Option<usize>,
    dropout: Option<f64>,
    n_clique: Option<usize>,
    d_clique: Option<usize>,
    d_knot: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    tau: Option<f64>,
    model_lr: Option<f64>,
    total_steps: Option<usize>,
    batch_size: Option<usize>,
    vib_warmup_steps: Option<usize>,
    vib_max_coeff: Option<f64>,
    weight_decay: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignOverrides {
    steps: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    explicit_decay: Option<bool>,
    decode_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskOverrides {
    eps_valid: Option<f64>,
    n_samples: Option<usize>,
    percentile: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineOverrides {
    surrogate_hidden: Option<usize>,
    surrogate_steps: Option<usize>,
    surrogate_lr: Option<f64>,
    ascent_steps: Option<usize>,
    ascent_lr: Option<f64>,
    coms_alpha: Option<f64>,
    coms_inner_steps: Option<usize>,
    coms_inner_lr: Option<f64>,
    rwr_iterations: Option<usize>,
}

fn load_overrides(path: Option<&Path>) -> Result<Overrides> {
    match path {
        None => Ok(Overrides::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn resolve_config(opts: &CommonOpts) -> Result<RunConfig> {
    let over = load_overrides(opts.config.as_deref())?;
    let mut task = TaskSpec::parse(&opts.task, opts.data.as_deref())?;
    if let TaskSpec::LatentRbf {
        n_samples,
        eps_valid,
        ..
    } = &mut task
    {
        if let Some(n) = over.task.n_samples {
            *n_samples = n;
        }
        if let Some(e) = over.task.eps_valid {
            *eps_valid = e;
        }
    }
    let method = MethodSpec::parse(&opts.method)?;
    let mut cfg = default_run_config(task, method)?;

    if let Some(p) = over.task.percentile {
        cfg.percentile = p;
    }
    let m = &over.model;
    if let Some(v) = m.d_model {
        cfg.model.d_model = v;
    }
    if let Some(v) = m.n_blocks {
        cfg.model.n_blocks = v;
    }
    if let Some(v) = m.n_heads {
        cfg.model.n_heads = v;
    }
    if let Some(v) = m.mlp_hidden {
        cfg.model.mlp_hidden = v;
    }
    if let Some(v) = m.dropout {
        cfg.model.dropout = v;
    }
    if m.n_clique.is_some() || m.d_clique.is_some() || m.d_knot.is_some() {
        let layout = &cfg.model.layout;
        cfg.model.layout = CliqueLayout::chain(
            m.n_clique.unwrap_or(layout.n_clique()),
            m.d_clique.unwrap_or(layout.d_clique()),
            m.d_knot.unwrap_or(layout.d_knot()),
        )?;
    }
    let t = &over.train;
    if let Some(v) = t.tau {
        cfg.train.tau = v;
    }
    if let Some(v) = t.model_lr {
        cfg.train.model_lr = v;
    }
    if let Some(v) = t.total_steps {
        cfg.train.total_steps = v;
    }
    if let Some(v) = t.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = t.vib_warmup_steps {
        cfg.train.vib_warmup_steps = v;
    }
    if let Some(v) = t.vib_max_coeff {
        cfg.train.vib_max_coeff = v;
    }
    if let Some(v) = t.weight_decay {
        cfg.train.weight_decay = v;
    }
    let d = &over.design;
    if let Some(v) = d.steps {
        cfg.design.steps = v;
    }
    if let Some(v) = d.lr {
        cfg.design.lr = v;
    }
    if let Some(v) = d.weight_decay {
        cfg.design.weight_decay = v;
    }
    if let Some(v) = d.explicit_decay {
        cfg.design.explicit_decay = v;
    }
    if let Some(mode) = &d.decode_mode {
        cfg.design.decode_mode = match mode.as_str() {
            "argmax" => DecodeMode::Argmax,
            "sample" => DecodeMode::Sample,
            other => bail!("unknown decode mode '{other}' (argmax|sample)"),
        };
    }
    let b = &over.baseline;
    if let Some(v) = b.surrogate_hidden {
        cfg.surrogate.hidden = v;
    }
    if let Some(v) = b.surrogate_steps {
        cfg.surrogate.steps = v;
    }
    if let Some(v) = b.surrogate_lr {
        cfg.surrogate.lr = v;
    }
    if let Some(v) = b.ascent_steps {
        cfg.ascent.steps = v;
    }
    if let Some(v) = b.ascent_lr {
        cfg.ascent.lr = v;
    }
    if let Some(v) = b.coms_alpha {
        cfg.coms.alpha = v;
    }
    if let Some(v) = b.coms_inner_steps {
        cfg.coms.inner_steps = v;
    }
    if let Some(v) = b.coms_inner_lr {
        cfg.coms.inner_lr = v;
    }
    if let Some(v) = b.rwr_iterations {
        cfg.rwr_iterations = v;
    }

    cfg.metric = match (&opts.metric, opts.top_k, opts.batch_size) {
        (Some(name), None, None) => Metric::parse(name)?,
        (None, Some(k), Some(n)) => Metric::Custom {
            top_k: k,
            candidate_count: n,
        },
        (None, Some(k), None) => Metric::Custom {
            top_k: k,
            candidate_count: cfg.metric.candidate_count(),
        },
        (None, None, Some(n)) => Metric::Custom {
            top_k: cfg.metric.top_k().min(n),
            candidate_count: n,
        },
        (None, None, None) => cfg.metric,
        (Some(_), _, _) => bail!("--metric conflicts with --top-k/--batch-size"),
    };
    cfg.seeds = (opts.seed..opts.seed + opts.seeds.max(1)).collect();
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_bench(result: &BenchResult) {
    println!(
        "task {} method {} metric {}",
        result.task, result.method, result.metric
    );
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}",
        "seed", "score", "top-k std", "validity", "seconds"
    );
    for r in &result.rows {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>9.1}% {:>10.1}",
            r.seed,
            r.row.score,
            r.row.score_std,
            r.row.validity * 100.0,
            r.wall_seconds
        );
    }
    println!(
        "mean score {:.4}  mean top-k std {:.4}  mean validity {:.1}%",
        result.mean_score,
        result.mean_top_k_std,
        result.mean_validity * 100.0
    );
}

fn write_bench(dir: &Path, result: &BenchResult) -> Result<()> {
    ensure_out(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record([
        "task", "method", "metric", "seed", "score", "top_k_std", "validity", "seconds",
    ])?;
    for r in &result.rows {
        w.write_record(&[
            result.task.clone(),
            result.method.clone(),
            result.metric.clone(),
            r.seed.to_string(),
            format!("{:?}", r.row.score),
            format!("{:?}", r.row.score_std),
            format!("{:?}", r.row.validity),
            format!("{:?}", r.wall_seconds),
        ])?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(result)?;
    std::fs::write(dir.join("aggregate.json"), json)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(opts) => {
            let cfg = resolve_config(&opts)?;
            ensure_out(&opts.out)?;
            let (task, data) = stage_task(&cfg, opts.seed)?;
            let train_ds = stage_filter(&cfg, &data)?;
            match task {
                TaskInstance::Rbf(t) => {
                    io::save_task(&opts.out.join("task.bin"), &t)?;
                }
                TaskInstance::TfBind(_) => {
                    bail!("generate applies to latent-RBF tasks; tfbind8 loads from --data")
                }
            }
            io::save_dataset(&opts.out.join("dataset_full.bin"), &data)?;
            io::save_dataset(&opts.out.join("dataset_train.bin"), &train_ds)?;
            println!(
                "wrote task.bin, dataset_full.bin ({} rows), dataset_train.bin ({} rows) to {}",
                data.len(),
                train_ds.len(),
                opts.out.display()
            );
        }
        Command::Train(opts) => {
            let cfg = resolve_config(&opts.common)?;
            ensure_out(&opts.common.out)?;
            if cfg.method != MethodSpec::Cliqueformer {
                bail!("the train stage checkpoints the cliqueformer method; run baselines via `bench`");
            }
            let train_ds: Dataset = match &opts.train_data {
                Some(data) => io::load_dataset(data)?,
                None => {
                    let (_, data) = stage_task(&cfg, opts.common.seed)?;
                    stage_filter(&cfg, &data)?
                }
            };
            let (model, report) = stage_train(&cfg, &train_ds, opts.common.seed)?;
            io::save_model(&opts.common.out.join("checkpoint.bin"), &model)?;
            io::save_curves(&opts.common.out.join("curves.csv"), &report)?;
            println!(
                "trained {} params in {:.1}s; final loss {:.4}; wrote checkpoint.bin, curves.csv",
                model.param_count(),
                report.wall_seconds,
                report.final_total()
            );
        }
        Command::Design(opts) => {
            let cfg = resolve_config(&opts.common)?;
            ensure_out(&opts.common.out)?;
            let model = io::load_model(&opts.checkpoint)?;
            let train_ds = io::load_dataset(&opts.train_data)?;
            let batch = stage_design(&cfg, &model, &train_ds, opts.common.seed)?;
            io::save_candidates(&opts.common.out.join("candidates.csv"), &batch.designs)?;
            let mut w = csv::Writer::from_path(opts.common.out.join("surrogate_trace.csv"))?;
            w.write_record(["step", "mean_surrogate_value"])?;
            for (i, v) in batch.surrogate_trace.iter().enumerate() {
                w.write_record(&[i.to_string(), format!("{v:?}")])?;
            }
            w.flush()?;
            println!(
                "optimized {} candidates over {} steps (max |z| {:.3}); wrote candidates.csv, surrogate_trace.csv",
                batch.latents.nrows(),
                batch.surrogate_trace.len(),
                batch.max_abs_latent
            );
        }
        Command::Evaluate(opts) => {
            let cfg = resolve_config(&opts.common)?;
            let task = io::load_task(&opts.task_file)?;
            let train_ds = io::load_dataset(&opts.train_data)?;
            let vocab = match &train_ds.designs {
                Designs::Discrete { vocab, .. } => Some(*vocab),
                Designs::Continuous(_) => None,
            };
            let candidates = io::load_candidates(&opts.candidates, vocab)?;
            let oracle = task.oracle(train_ds.stats);
            let row = evaluate_candidates(&oracle, &candidates, cfg.metric.top_k())?;
            println!(
                "score {:.4} (top-{} of {}), top-k std {:.4}, validity {:.1}%",
                row.score,
                cfg.metric.top_k(),
                candidates.len(),
                row.score_std,
                row.validity * 100.0
            );
            ensure_out(&opts.common.out)?;
            std::fs::write(
                opts.common.out.join("eval.json"),
                serde_json::to_string_pretty(&row)?,
            )?;
        }
        Command::Bench(opts) => {
            let cfg = resolve_config(&opts)?;
            let result = run_benchmark(&cfg)?;
            print_bench(&result);
            write_bench(&opts.out, &result)?;
        }
        Command::Ablate(opts) => {
            let cfg = resolve_config(&opts.common)?;
            let variants: Vec<AblationVariant> = opts
                .variants
                .split(',')
                .map(|s| AblationVariant::parse(s.trim()))
                .collect::<cliqueformer::Result<_>>()?;
            let results = ablation_suite(&cfg, &variants)?;
            ensure_out(&opts.common.out)?;
            let mut w = csv::Writer::from_path(opts.common.out.join("ablation.csv"))?;
            w.write_record(["variant", "mean_score", "mean_top_k_std", "mean_validity"])?;
            println!(
                "{:>28} {:>10} {:>10} {:>10}",
                "variant", "score", "top-k std", "validity"
            );
            for (label, r) in &results {
                println!(
                    "{label:>28} {:>10.4} {:>10.4} {:>9.1}%",
                    r.mean_score,
                    r.mean_top_k_std,
                    r.mean_validity * 100.0
                );
                w.write_record(&[
                    label.clone(),
                    format!("{:?}", r.mean_score),
                    format!("{:?}", r.mean_top_k_std),
                    format!("{:?}", r.mean_validity),
                ])?;
            }
            w.flush()?;
        }
        Command::DemoRotation(opts) => {
            ensure_out(&opts.out)?;
            let mut reports = Vec::new();
            println!(
                "{:>3} {:>14} {:>14} {:>14} {:>12}",
                "l", "max offdiag v", "min offdiag z", "max grad v>=2", "gap"
            );
            for l in opts.l_min..=opts.l_max {
                let report = rotation_demo(l, opts.probes, opts.seed)?;
                println!(
                    "{l:>3} {:>14.3e} {:>14.3e} {:>14.3e} {:>12.3e}",
                    report.max_offdiag_v,
                    report.min_offdiag_z,
                    report.max_grad_v_rest,
                    report.dependence_gap
                );
                reports.push(report);
            }
            std::fs::write(
                opts.out.join("rotation.json"),
                serde_json::to_string_pretty(&reports)?,
            )?;
        }
        Command::DemoFgm(opts) => {
            ensure_out(&opts.out)?;
            let cfg = FgmStudyConfig {
                seed: opts.seed,
                n_triangles: opts.n_triangles,
                ..FgmStudyConfig::default()
            };
            let report = fgm_vs_oblivious(&cfg)?;
            println!(
                "params: decomposed {} vs oblivious {}",
                report.params_fgm, report.params_obl
            );
            println!(
                "test mse: decomposed {:.4} vs oblivious {:.4}",
                report.test_mse_fgm, report.test_mse_obl
            );
            println!(
                "mean design value: decomposed {:.4} vs oblivious {:.4}",
                report.design_value_fgm, report.design_value_obl
            );
            std::fs::write(
                opts.out.join("fgm_study.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
        }
    }
    Ok(())
}
