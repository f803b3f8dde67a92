//! End-to-end benchmark harness: task construction, training, design,
//! and evaluation per seed, with deterministic aggregation.

use crate::baselines::{
    coms_baseline, grad_ascent_baseline, match_head_width, rwr_baseline, transformer_baseline,
    AscentConfig, ComsConfig, GradAscentConfig, RwrConfig, SurrogateTrainConfig,
    TransformerBaselineConfig, TransformerSurrogateConfig, TransformerTrainConfig,
};
use crate::design::{optimize_designs, DesignBatch, DesignOptConfig};
use crate::error::{Error, Result};
use crate::experiments::eval::{evaluate_candidates, EvalRow, Metric};
use crate::fgm::CliqueLayout;
use crate::model::{Cliqueformer, CliqueformerConfig, Modality};
use crate::rng::SeededRng;
use crate::tasks::{
    generate_latent_rbf, load_tfbind8, Dataset, Designs, LatentRbfConfig, LatentRbfTask, Oracle,
    ScoreStats, TfBindTable,
};
use crate::training::{train, TrainConfig, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Which benchmark task to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TaskSpec {
    LatentRbf {
        n_triangles: usize,
        observed_dim: usize,
        n_samples: usize,
        eps_valid: f64,
    },
    TfBind8 {
        path: PathBuf,
    },
}

impl TaskSpec {
    /// Named standard tasks: rbf11, rbf31, rbf41, rbf61, tfbind8.
    pub fn parse(name: &str, data_path: Option<&std::path::Path>) -> Result<Self> {
        let rbf = |n_triangles: usize| {
            let cfg = LatentRbfConfig::standard(n_triangles, 10_000);
            TaskSpec::LatentRbf {
                n_triangles,
                observed_dim: cfg.observed_dim,
                n_samples: cfg.n_samples,
                eps_valid: crate::tasks::latent_rbf::DEFAULT_EPS_VALID,
            }
        };
        match name {
            "rbf11" => Ok(rbf(5)),
            "rbf31" => Ok(rbf(15)),
            "rbf41" => Ok(rbf(20)),
            "rbf61" => Ok(rbf(30)),
            "tfbind8" => {
                let path = data_path
                    .ok_or_else(|| Error::Config("tfbind8 requires a data path".into()))?;
                Ok(TaskSpec::TfBind8 {
                    path: path.to_path_buf(),
                })
            }
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected rbf11|rbf31|rbf41|rbf61|tfbind8)"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TaskSpec::LatentRbf { n_triangles, .. } => format!("rbf{}", 2 * n_triangles + 1),
            TaskSpec::TfBind8 { .. } => "tfbind8".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodSpec {
    Cliqueformer,
    GradAsc,
    Rwr,
    Coms,
    Transformer,
}

impl MethodSpec {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cliqueformer" => Ok(MethodSpec::Cliqueformer),
            "gradasc" => Ok(MethodSpec::GradAsc),
            "rwr" => Ok(MethodSpec::Rwr),
            "coms" => Ok(MethodSpec::Coms),
            "transformer" => Ok(MethodSpec::Transformer),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected cliqueformer|gradasc|rwr|coms|transformer)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Cliqueformer => "cliqueformer",
            MethodSpec::GradAsc => "gradasc",
            MethodSpec::Rwr => "rwr",
            MethodSpec::Coms => "coms",
            MethodSpec::Transformer => "transformer",
        }
    }
}

/// Fully resolved run settings for one (task, method) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub method: MethodSpec,
    pub metric: Metric,
    /// Percentile filter applied to the visible data before training.
    pub percentile: f64,
    pub model: CliqueformerConfig,
    pub train: TrainConfig,
    pub design: DesignOptConfig,
    pub surrogate: SurrogateTrainConfig,
    pub ascent: AscentConfig,
    pub coms: ComsConfig,
    pub rwr_iterations: usize,
    pub seeds: Vec<u64>,
}

/// Per-task latent layout defaults: 3-wide cliques with single knots and
/// the clique count scaled so d_z roughly matches the input width.
pub fn default_layout(task: &TaskSpec) -> Result<CliqueLayout> {
    match task {
        TaskSpec::LatentRbf { n_triangles, .. } => {
            let n_clique = match n_triangles {
                5 => 10,
                15 => 18,
                20 => 20,
                30 => 28,
                other => *other * 2,
            };
            CliqueLayout::chain(n_clique, 3, 1)
        }
        TaskSpec::TfBind8 { .. } => CliqueLayout::chain(4, 3, 1),
    }
}

fn task_modality(task: &TaskSpec) -> Modality {
    match task {
        TaskSpec::LatentRbf { observed_dim, .. } => Modality::Continuous { dim: *observed_dim },
        TaskSpec::TfBind8 { .. } => Modality::Discrete {
            seq_len: 8,
            vocab: 4,
        },
    }
}

/// Standard configuration for a task/method pair.
pub fn default_run_config(task: TaskSpec, method: MethodSpec) -> Result<RunConfig> {
    let layout = default_layout(&task)?;
    let model = CliqueformerConfig::new(layout, task_modality(&task));
    let (total_steps, batch_size) = match &task {
        // larger latent-RBF instances train with a smaller batch to keep
        // single-core step time bounded
        TaskSpec::LatentRbf { n_triangles, .. } if *n_triangles > 10 => (1500, 64),
        TaskSpec::LatentRbf { .. } => (3000, 128),
        TaskSpec::TfBind8 { .. } => (20_000, 128),
    };
    let train = TrainConfig {
        total_steps,
        batch_size,
        ..TrainConfig::default()
    };
    let design_steps = match &task {
        TaskSpec::LatentRbf { .. } => 50,
        TaskSpec::TfBind8 { .. } => 1000,
    };
    let design = DesignOptConfig {
        steps: design_steps,
        weight_decay: 0.5,
        ..DesignOptConfig::default()
    };
    Ok(RunConfig {
        task,
        method,
        metric: Metric::Top10Of1000,
        percentile: 0.8,
        model,
        train,
        design,
        surrogate: SurrogateTrainConfig::default(),
        ascent: AscentConfig::default(),
        coms: ComsConfig::default(),
        rwr_iterations: 10,
        seeds: vec![0, 1, 2, 3, 4],
    })
}

/// A concrete task instance with its scorer.
pub enum TaskInstance {
    Rbf(LatentRbfTask),
    TfBind(TfBindTable),
}

impl TaskInstance {
    pub fn oracle(&self, stats: ScoreStats) -> Box<dyn Oracle + '_> {
        match self {
            TaskInstance::Rbf(t) => Box::new(t.oracle(stats)),
            TaskInstance::TfBind(t) => Box::new(t.oracle(stats)),
        }
    }
}

/// Stage 1: build the task instance and its full visible dataset for one
/// run seed.
pub fn stage_task(cfg: &RunConfig, seed: u64) -> Result<(TaskInstance, Dataset)> {
    let root = SeededRng::new(seed);
    match &cfg.task {
        TaskSpec::LatentRbf {
            n_triangles,
            observed_dim,
            n_samples,
            eps_valid,
        } => {
            let rbf_cfg = LatentRbfConfig {
                n_triangles: *n_triangles,
                observed_dim: *observed_dim,
                n_samples: *n_samples,
                centers_per_clique: 4,
                sigma_rbf: 1.0,
                eps_valid: *eps_valid,
            };
            let (task, data) = generate_latent_rbf(&rbf_cfg, root.split(10).seed())?;
            Ok((TaskInstance::Rbf(task), data))
        }
        TaskSpec::TfBind8 { path } => {
            let (data, table) = load_tfbind8(path)?;
            Ok((TaskInstance::TfBind(table), data))
        }
    }
}

/// Stage 2: percentile-filter the visible data for training.
pub fn stage_filter(cfg: &RunConfig, data: &Dataset) -> Result<Dataset> {
    data.percentile_filter(cfg.percentile)
}

/// Stage 3 (main method): train the surrogate on the filtered data.
pub fn stage_train(
    cfg: &RunConfig,
    train_ds: &Dataset,
    seed: u64,
) -> Result<(Cliqueformer, TrainReport)> {
    let root = SeededRng::new(seed);
    let train_cfg = TrainConfig {
        seed: root.split(11).seed(),
        ..cfg.train.clone()
    };
    train(train_ds, &cfg.model, &train_cfg)
}

/// Stage 4 (main method): latent ascent and decoding.
pub fn stage_design(
    cfg: &RunConfig,
    model: &Cliqueformer,
    train_ds: &Dataset,
    seed: u64,
) -> Result<DesignBatch> {
    let root = SeededRng::new(seed);
    let design_cfg = DesignOptConfig {
        candidate_count: cfg.metric.candidate_count(),
        seed: root.split(12).seed(),
        ..cfg.design.clone()
    };
    optimize_designs(model, train_ds, &design_cfg)
}

/// Produce candidates for any method on the filtered training data.
pub fn run_method(cfg: &RunConfig, train_ds: &Dataset, seed: u64) -> Result<Designs> {
    let root = SeededRng::new(seed);
    let count = cfg.metric.candidate_count();
    match cfg.method {
        MethodSpec::Cliqueformer => {
            let (model, _) = stage_train(cfg, train_ds, seed)?;
            Ok(stage_design(cfg, &model, train_ds, seed)?.designs)
        }
        MethodSpec::GradAsc => {
            let ga = GradAscentConfig {
                surrogate: cfg.surrogate.clone(),
                ascent: AscentConfig {
                    candidate_count: count,
                    ..cfg.ascent.clone()
                },
                seed: root.split(13).seed(),
            };
            grad_ascent_baseline(train_ds, &ga)
        }
        MethodSpec::Coms => {
            let ga = GradAscentConfig {
                surrogate: cfg.surrogate.clone(),
                ascent: AscentConfig {
                    candidate_count: count,
                    ..cfg.ascent.clone()
                },
                seed: root.split(14).seed(),
            };
            coms_baseline(train_ds, &ga, cfg.coms)
        }
        MethodSpec::Rwr => {
            let rwr = RwrConfig {
                beta: None,
                iterations: cfg.rwr_iterations,
                candidate_count: count,
                surrogate: cfg.surrogate.clone(),
                seed: root.split(15).seed(),
            };
            rwr_baseline(train_ds, &rwr)
        }
        MethodSpec::Transformer => {
            // parameter count matched to the main model's encoder-side
            let target = encoder_side_param_count(&cfg.model)?;
            let base = TransformerSurrogateConfig {
                d_model: cfg.model.d_model,
                n_blocks: cfg.model.n_blocks,
                n_heads: cfg.model.n_heads,
                head_hidden: 1,
                modality: cfg.model.modality,
            };
            let matched = match_head_width(&base, target, 0.05)?;
            let tb = TransformerBaselineConfig {
                surrogate: matched,
                train: TransformerTrainConfig {
                    steps: cfg.train.total_steps.min(2000),
                    batch_size: cfg.train.batch_size,
                    ..TransformerTrainConfig::default()
                },
                ascent: AscentConfig {
                    candidate_count: count,
                    ..cfg.ascent.clone()
                },
                seed: root.split(17).seed(),
            };
            transformer_baseline(train_ds, &tb)
        }
    }
}

/// Parameter count of the main model's encoder plus predictor (the part
/// the structure-oblivious baseline is matched against).
pub fn encoder_side_param_count(cfg: &CliqueformerConfig) -> Result<usize> {
    let model = Cliqueformer::new(cfg.clone(), &mut SeededRng::new(0))?;
    let mut count = 0usize;
    model.params.visit(&mut |name, t| {
        if name.starts_with("tokenizer")
            || name.starts_with("encoder")
            || name.starts_with("enc_ln")
            || name.starts_with("posterior")
            || name.starts_with("predictor")
        {
            count += t.len();
        }
    });
    Ok(count)
}

/// One seed's evaluation row plus bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub row: EvalRow,
    pub wall_seconds: f64,
}

/// Aggregate over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub task: String,
    pub method: String,
    pub metric: String,
    pub rows: Vec<SeedResult>,
    pub mean_score: f64,
    /// Mean over seeds of the per-seed top-k standard deviation.
    pub mean_top_k_std: f64,
    pub mean_validity: f64,
}

impl BenchResult {
    fn aggregate(task: &TaskSpec, method: MethodSpec, metric: Metric, rows: Vec<SeedResult>) -> Self {
        let n = rows.len() as f64;
        let mean_score = rows.iter().map(|r| r.row.score).sum::<f64>() / n;
        let mean_top_k_std = rows.iter().map(|r| r.row.score_std).sum::<f64>() / n;
        let mean_validity = rows.iter().map(|r| r.row.validity).sum::<f64>() / n;
        Self {
            task: task.name(),
            method: method.name().to_string(),
            metric: metric.name(),
            rows,
            mean_score,
            mean_top_k_std,
            mean_validity,
        }
    }
}

/// Full pipeline for one seed: task -> filter -> method -> evaluate.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    let start = std::time::Instant::now();
    let (task, data) = stage_task(cfg, seed)?;
    let train_ds = stage_filter(cfg, &data)?;
    let candidates = run_method(cfg, &train_ds, seed)?;
    let oracle = task.oracle(train_ds.stats);
    let row = evaluate_candidates(oracle.as_ref(), &candidates, cfg.metric.top_k())?;
    Ok(SeedResult {
        seed,
        row,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run every seed (in parallel) and aggregate deterministically.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("no seeds".into()));
    }
    let rows: Result<Vec<SeedResult>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed).map_err(|e| Error::Data(format!("seed {seed}: {e}"))))
        .collect();
    Ok(BenchResult::aggregate(
        &cfg.task,
        cfg.method,
        cfg.metric,
        rows?,
    ))
}
