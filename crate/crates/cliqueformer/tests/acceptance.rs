//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL/SKIPPED line (run with `--nocapture` to see them as they
//! complete). Thresholds are pinned here, not computed.

use cliqueformer::design::DesignOptConfig;
use cliqueformer::experiments::bench::{default_run_config, MethodSpec, TaskSpec};
use cliqueformer::experiments::{
    ablation_suite, fgm_vs_oblivious, rotation_demo, run_benchmark, AblationVariant,
    FgmStudyConfig, RunConfig,
};
use cliqueformer::fgm::CliqueLayout;
use cliqueformer::model::{Batch, Cliqueformer, CliqueformerConfig, Modality};
use cliqueformer::numerics::{grad_check, AdamConfig, DiagonalGaussian, OptimizerState};
use cliqueformer::rng::SeededRng;
use cliqueformer::training::loss_clique;
use ndarray::{Array1, Array2};

fn verdict(name: &str, pass: bool, detail: &str) -> Option<String> {
    let flag = if pass { "PASS" } else { "FAIL" };
    println!("{name}: {flag} - {detail}");
    if pass {
        None
    } else {
        Some(format!("{name}: {detail}"))
    }
}

#[test]
fn criterion_1_rbf11_quality_and_2_dimension_robustness() {
    let mut failures: Vec<String> = Vec::new();

    // criterion 1: 5 seeds on the standard 11-dimensional latent task
    let rbf11 = TaskSpec::parse("rbf11", None).unwrap();
    let mut cfg11 = default_run_config(rbf11, MethodSpec::Cliqueformer).unwrap();
    cfg11.seeds = vec![0, 1, 2, 3, 4];
    let r11 = run_benchmark(&cfg11).expect("rbf11 benchmark");
    let per_seed_minutes: Vec<f64> = r11.rows.iter().map(|r| r.wall_seconds / 60.0).collect();
    failures.extend(verdict(
        "criterion 1",
        r11.mean_score >= 0.45 && r11.mean_validity >= 0.50,
        &format!(
            "rbf11 mean top-10-of-1000 score {:.3} (need >= 0.45), validity {:.1}% (need >= 50%), 5 seeds, {:.1} min/seed",
            r11.mean_score,
            r11.mean_validity * 100.0,
            per_seed_minutes.iter().sum::<f64>() / per_seed_minutes.len() as f64
        ),
    ));

    // criterion 2: score robustness at 61 latent dimensions plus the
    // naive-ascent collapse on both tasks
    let rbf61 = TaskSpec::parse("rbf61", None).unwrap();
    let mut cfg61 = default_run_config(rbf61.clone(), MethodSpec::Cliqueformer).unwrap();
    cfg61.seeds = vec![0, 1];
    let r61 = run_benchmark(&cfg61).expect("rbf61 benchmark");

    let mut ga11 = default_run_config(TaskSpec::parse("rbf11", None).unwrap(), MethodSpec::GradAsc)
        .unwrap();
    ga11.seeds = vec![0, 1, 2];
    let ga11 = run_benchmark(&ga11).expect("rbf11 gradient ascent");
    let mut ga61 = default_run_config(rbf61, MethodSpec::GradAsc).unwrap();
    ga61.seeds = vec![0, 1, 2];
    let ga61 = run_benchmark(&ga61).expect("rbf61 gradient ascent");

    let gap = (r61.mean_score - r11.mean_score).abs();
    let ga_ok = ga11.mean_score <= 0.1
        && ga61.mean_score <= 0.1
        && ga11.mean_validity <= 0.05
        && ga61.mean_validity <= 0.05;
    failures.extend(verdict(
        "criterion 2",
        gap <= 0.15 && ga_ok,
        &format!(
            "rbf61 score {:.3} vs rbf11 {:.3} (gap {:.3}, need <= 0.15); gradient ascent scores {:.3}/{:.3} (need <= 0.1) with validity {:.1}%/{:.1}% (need <= 5%)",
            r61.mean_score,
            r11.mean_score,
            gap,
            ga11.mean_score,
            ga61.mean_score,
            ga11.mean_validity * 100.0,
            ga61.mean_validity * 100.0
        ),
    ));

    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_3_decomposed_vs_oblivious() {
    let start = std::time::Instant::now();
    let mut wins = 0usize;
    let mut details = Vec::new();
    for seed in 0..5u64 {
        let cfg = FgmStudyConfig {
            seed,
            ..FgmStudyConfig::default()
        };
        let report = fgm_vs_oblivious(&cfg).expect("study run");
        let diff = report.params_fgm.abs_diff(report.params_obl) as f64;
        assert!(
            diff <= 0.05 * report.params_fgm as f64,
            "parameter counts not matched: {} vs {}",
            report.params_fgm,
            report.params_obl
        );
        if report.design_value_fgm > report.design_value_obl {
            wins += 1;
        }
        details.push(format!(
            "seed {seed}: {:.3} vs {:.3}",
            report.design_value_fgm, report.design_value_obl
        ));
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let failure = verdict(
        "criterion 3",
        wins >= 4,
        &format!(
            "decomposed surrogate won {wins}/5 seeds (need >= 4) [{}] in {minutes:.1} min (expect <= 10)",
            details.join("; ")
        ),
    );
    assert!(failure.is_none(), "{failure:?}");
}

#[test]
fn criterion_4_rotation_interaction_structure() {
    let mut worst_offdiag_v = 0.0f64;
    let mut worst_offdiag_z = f64::INFINITY;
    for l in 2..=8 {
        let report = rotation_demo(l, 100, 7).expect("rotation report");
        worst_offdiag_v = worst_offdiag_v.max(report.max_offdiag_v);
        worst_offdiag_z = worst_offdiag_z.min(report.min_offdiag_z);
    }
    let failure = verdict(
        "criterion 4",
        worst_offdiag_v < 1e-6 && worst_offdiag_z > 1e-3,
        &format!(
            "rotated mixed partials max {worst_offdiag_v:.2e} (need < 1e-6), original min {worst_offdiag_z:.2e} (need > 1e-3), l in 2..=8, 100 probes"
        ),
    );
    assert!(failure.is_none(), "{failure:?}");
}

fn tiny_model_config(idx: usize) -> (CliqueformerConfig, usize) {
    // three tiny configurations: d <= 6, d_z <= 5, d_model <= 16
    match idx {
        0 => {
            let layout = CliqueLayout::chain(2, 2, 1).unwrap(); // d_z 3
            let mut cfg = CliqueformerConfig::new(layout, Modality::Continuous { dim: 4 });
            cfg.d_model = 8;
            cfg.n_blocks = 1;
            cfg.mlp_hidden = 8;
            cfg.dropout = 0.0;
            (cfg, 4)
        }
        1 => {
            let layout = CliqueLayout::chain(2, 3, 1).unwrap(); // d_z 5
            let mut cfg = CliqueformerConfig::new(layout, Modality::Continuous { dim: 6 });
            cfg.d_model = 16;
            cfg.n_blocks = 1;
            cfg.mlp_hidden = 12;
            cfg.dropout = 0.5; // frozen masks keep the check exact
            (cfg, 6)
        }
        _ => {
            // two cliques so the decoder attends over more than one token
            // (single-token attention has exactly zero q/k gradients, which
            // the relative-deviation formula cannot distinguish from noise)
            let layout = CliqueLayout::chain(2, 3, 1).unwrap(); // d_z 5
            let mut cfg = CliqueformerConfig::new(
                layout,
                Modality::Discrete {
                    seq_len: 5,
                    vocab: 3,
                },
            );
            cfg.d_model = 8;
            cfg.n_blocks = 1;
            cfg.mlp_hidden = 8;
            cfg.dropout = 0.0;
            (cfg, 5)
        }
    }
}

#[test]
fn criterion_5_gradient_correctness() {
    let mut worst_loss_dev = 0.0f64;
    let mut worst_design_dev = 0.0f64;
    for idx in 0..3 {
        let (cfg, d) = tiny_model_config(idx);
        let seed = 100 + idx as u64;
        let model = Cliqueformer::new(cfg.clone(), &mut SeededRng::new(seed)).unwrap();
        let b = 4usize;
        let mut data_rng = SeededRng::new(seed + 1);
        let batch = match cfg.modality {
            Modality::Continuous { .. } => Batch::Continuous(data_rng.normal_mat(b, d, 1.0)),
            Modality::Discrete { seq_len, vocab } => {
                let seqs: Vec<Vec<usize>> = (0..b)
                    .map(|_| (0..seq_len).map(|_| data_rng.index(vocab)).collect())
                    .collect();
                Batch::from_seqs(seqs, vocab)
            }
        };
        let targets = data_rng.normal_mat(b, 1, 1.0);
        let frozen = SeededRng::new(seed + 2);

        // full training loss against all parameters
        let shapes: Vec<(usize, usize)> =
            model.params.tensors().iter().map(|t| t.dim()).collect();
        let flat: Vec<f64> = model
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.iter().cloned())
            .collect();
        let rebuild = |theta: &[f64]| -> Cliqueformer {
            let mut m = model.clone();
            let mut offset = 0usize;
            for (t, shape) in m.params.tensors_mut().into_iter().zip(&shapes) {
                let len = shape.0 * shape.1;
                *t = Array2::from_shape_vec(*shape, theta[offset..offset + len].to_vec())
                    .unwrap();
                offset += len;
            }
            m
        };
        let f = |theta: &[f64]| -> f64 {
            let m = rebuild(theta);
            let (v, _) = loss_clique(&m, &batch, &targets, frozen.clone(), 0.8, 10.0).unwrap();
            v.total
        };
        let grad = |theta: &[f64]| -> Vec<f64> {
            let m = rebuild(theta);
            let (_, gs) = loss_clique(&m, &batch, &targets, frozen.clone(), 0.8, 10.0).unwrap();
            gs.iter().flat_map(|g| g.iter().cloned()).collect()
        };
        let dev = grad_check(f, grad, &flat, 1e-5).unwrap();
        worst_loss_dev = worst_loss_dev.max(dev);

        // design objective against the latent rows
        let d_z = cfg.layout.latent_dim();
        let z0 = SeededRng::new(seed + 3).normal_mat(3, d_z, 1.0);
        let zflat: Vec<f64> = z0.iter().cloned().collect();
        let fz = |zv: &[f64]| -> f64 {
            let z = Array2::from_shape_vec((3, d_z), zv.to_vec()).unwrap();
            cliqueformer::design::objective(&model, &z).0
        };
        let gz = |zv: &[f64]| -> Vec<f64> {
            let z = Array2::from_shape_vec((3, d_z), zv.to_vec()).unwrap();
            cliqueformer::design::objective(&model, &z)
                .1
                .iter()
                .cloned()
                .collect()
        };
        let dev = grad_check(fz, gz, &zflat, 1e-5).unwrap();
        worst_design_dev = worst_design_dev.max(dev);
    }
    let failure = verdict(
        "criterion 5",
        worst_loss_dev < 1e-3 && worst_design_dev < 1e-3,
        &format!(
            "training-loss gradient deviation {worst_loss_dev:.2e}, design-objective deviation {worst_design_dev:.2e} (need < 1e-3, 3 configurations)"
        ),
    );
    assert!(failure.is_none(), "{failure:?}");
}

#[test]
fn criterion_6_kl_monte_carlo() {
    let mut rng = SeededRng::new(60);
    let mut worst_rel = 0.0f64;
    for trial in 0..10 {
        let dim = 2 + rng.index(4);
        let mean = rng.normal_vec(dim);
        let logvar = rng.normal_vec(dim).mapv(|v| v.clamp(-1.5, 1.5));
        let q = DiagonalGaussian::new(mean, logvar).unwrap();
        let indices: Vec<usize> = (0..dim).collect();
        let closed = q.kl_to_standard_normal(&indices).unwrap();

        let mut mc_rng = SeededRng::new(600 + trial);
        let n = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = q.reparam_sample(&mut mc_rng);
            let mut log_ratio = 0.0;
            for k in 0..dim {
                let var = q.log_variance()[k].exp();
                let diff = z[k] - q.mean()[k];
                log_ratio += -0.5 * (diff * diff / var + q.log_variance()[k]) + 0.5 * z[k] * z[k];
            }
            acc += log_ratio;
        }
        let mc = acc / n as f64;
        worst_rel = worst_rel.max((mc - closed).abs() / closed.abs());
    }
    let failure = verdict(
        "criterion 6",
        worst_rel < 0.01,
        &format!(
            "closed-form KL vs 1e6-sample Monte Carlo: worst relative error {worst_rel:.4} over 10 posteriors (need < 0.01)"
        ),
    );
    assert!(failure.is_none(), "{failure:?}");
}

#[test]
fn criterion_7_optimizer_decay_contract() {
    let run_once = || -> Vec<u64> {
        let mut p = SeededRng::new(70).normal_mat(4, 3, 1.0);
        let zero = Array2::zeros((4, 3));
        let mut state = OptimizerState::for_params(AdamConfig::new(0.07, 0.3), &[&p]);
        for _ in 0..11 {
            cliqueformer::numerics::adamw_update(&mut p, &zero, &mut state).unwrap();
        }
        p.iter().map(|x| x.to_bits()).collect()
    };
    let first = run_once();
    let second = run_once();

    let mut expect = SeededRng::new(70).normal_mat(4, 3, 1.0);
    for _ in 0..11 {
        expect.mapv_inplace(|x| x * (1.0 - 0.07 * 0.3));
    }
    let expect_bits: Vec<u64> = expect.iter().map(|x| x.to_bits()).collect();
    let failure = verdict(
        "criterion 7",
        first == expect_bits && first == second,
        "11 zero-gradient steps scale parameters by exactly (1 - lr*wd)^11, bitwise reproducible",
    );
    assert!(failure.is_none(), "{failure:?}");
}

#[test]
fn criterion_8_layout_invariants() {
    let mut rng = SeededRng::new(80);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let n = 1 + rng.index(16);
        let dc = 1 + rng.index(10);
        let dk = rng.index(dc);
        let layout = CliqueLayout::chain(n, dc, dk).unwrap();
        assert_eq!(layout.latent_dim(), dk + n * (dc - dk), "d_z formula");
        let mult = layout.knot_multiplicity();
        assert!(mult.iter().all(|&m| m >= 1), "coverage");
        assert_eq!(mult.iter().sum::<usize>(), n * dc, "index budget");
        for i in 1..n {
            let a = layout.clique_indices(i).unwrap();
            let b = layout.clique_indices(i + 1).unwrap();
            let overlap = a.iter().filter(|k| b.contains(k)).count();
            assert_eq!(overlap, dk, "consecutive overlap");
        }
        checked += 1;
    }
    let failure = verdict(
        "criterion 8",
        checked == 1000,
        "1000 random layouts satisfy the d_z formula, coverage, and overlap cardinality",
    );
    assert!(failure.is_none(), "{failure:?}");
}

#[test]
fn criterion_9_ablation_directions() {
    let task = TaskSpec::parse("rbf11", None).unwrap();
    let mut base: RunConfig = default_run_config(task, MethodSpec::Cliqueformer).unwrap();
    // shorter runs: the criterion compares variants against each other
    base.train.total_steps = 1500;
    base.seeds = vec![0, 1, 2];
    let results = ablation_suite(
        &base,
        &[
            AblationVariant::Base,
            AblationVariant::NoVib,
            AblationVariant::NoWeightDecay,
        ],
    )
    .expect("ablation suite");
    let base_score = results[0].1.mean_score;
    let worst = results
        .iter()
        .map(|(_, r)| r.mean_score)
        .fold(f64::INFINITY, f64::min);
    let detail: Vec<String> = results
        .iter()
        .map(|(label, r)| format!("{label} {:.3}", r.mean_score))
        .collect();
    let failure = verdict(
        "criterion 9",
        base_score >= worst - 0.05,
        &format!(
            "3 seeds each: {} (base must be >= worst - 0.05)",
            detail.join(", ")
        ),
    );
    assert!(failure.is_none(), "{failure:?}");

    // sanity: the no-weight-decay variant only changes the design stage
    let nwd = AblationVariant::NoWeightDecay.apply(&base).unwrap();
    assert_eq!(nwd.design.weight_decay, 0.0);
    assert_eq!(nwd.train.weight_decay, base.train.weight_decay);
    let _ = DesignOptConfig::default();
}

#[test]
fn criterion_10_tfbind8() {
    let candidates = [
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/tfbind8.tsv"),
        std::path::PathBuf::from("data/tfbind8.tsv"),
    ];
    let Some(path) = candidates.iter().find(|p| p.exists()) else {
        println!(
            "criterion 10: SKIPPED - TFBind-8 data file absent (expected at data/tfbind8.tsv)"
        );
        return;
    };
    let task = TaskSpec::TfBind8 { path: path.clone() };
    let mut cfg = default_run_config(task, MethodSpec::Cliqueformer).unwrap();
    cfg.seeds = vec![0, 1, 2];
    let result = run_benchmark(&cfg).expect("tfbind8 benchmark");
    let failure = verdict(
        "criterion 10",
        result.mean_score >= 1.0,
        &format!(
            "tfbind8 mean top-10-of-1000 score {:.3} over 3 seeds (need >= 1.0)",
            result.mean_score
        ),
    );
    assert!(failure.is_none(), "{failure:?}");
}
