use cliqueformer::design::{optimize_designs, DesignOptConfig};
use cliqueformer::experiments::evaluate_candidates;
use cliqueformer::fgm::CliqueLayout;
use cliqueformer::model::{CliqueformerConfig, Modality};
use cliqueformer::tasks::{generate_latent_rbf, Designs, LatentRbfConfig};
use cliqueformer::training::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(300);
    let n_triangles: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5);
    let n_clique: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(128);

    let cfg = LatentRbfConfig::standard(n_triangles, 10_000);
    let (task, ds) = generate_latent_rbf(&cfg, 42).unwrap();
    let train_ds = ds.percentile_filter(0.8).unwrap();
    println!("task d_z={} d={} train rows={} stats={:?}", task.latent_dim(), task.observed_dim(), train_ds.len(), train_ds.stats);

    let layout = CliqueLayout::chain(n_clique, 3, 1).unwrap();
    let model_cfg = CliqueformerConfig::new(layout, Modality::Continuous { dim: task.observed_dim() });
    let tc = TrainConfig { total_steps: steps, batch_size: batch, seed: 1, ..TrainConfig::default() };

    let t0 = std::time::Instant::now();
    let (model, report) = train(&train_ds, &model_cfg, &tc).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    println!("params={} train {:.1}s ({:.3} s/step)", model.param_count(), train_time, train_time / steps as f64);
    for s in report.steps.iter().step_by((steps / 15).max(1)) {
        println!("  step {:5}  vib {:8.4}  nll {:8.3}  mse {:8.4}  total {:8.3}", s.step, s.vib, s.nll, s.mse, s.total);
    }
    let last = report.steps.last().unwrap();
    println!("  final vib {:.4} nll {:.3} mse {:.4}", last.vib, last.nll, last.mse);

    // design phase
    let dcfg = DesignOptConfig { candidate_count: 1000, steps: 50, lr: 3e-4, weight_decay: 0.5, seed: 2, ..Default::default() };
    let t1 = std::time::Instant::now();
    let batch_out = optimize_designs(&model, &train_ds, &dcfg).unwrap();
    println!("design {:.1}s, trace {:.4} -> {:.4}, max|z| {:.3}", t1.elapsed().as_secs_f64(),
        batch_out.surrogate_trace.first().unwrap_or(&f64::NAN), batch_out.surrogate_trace.last().unwrap_or(&f64::NAN), batch_out.max_abs_latent);

    // decoder manifold consistency: residual distribution of decoded designs
    if let Designs::Continuous(xs) = &batch_out.designs {
        let mut residuals: Vec<f64> = Vec::new();
        let d_z = task.latent_dim();
        for row in xs.rows() {
            let z = row.slice(ndarray::s![..d_z]).to_owned();
            let x_on = task.transform(z.view()).unwrap();
            let resid = row.iter().zip(x_on.iter()).skip(d_z).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            residuals.push(resid);
        }
        residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("tail residual linf: p10 {:.4} p50 {:.4} p90 {:.4} max {:.4}",
            residuals[100], residuals[500], residuals[900], residuals[999]);
        // score under various eps_valid
        for eps in [1e-3, 0.01, 0.05, 0.1, 0.2, 0.3] {
            let frac = residuals.iter().filter(|&&r| r <= eps).count() as f64 / residuals.len() as f64;
            println!("  eps {:6}: validity {:.1}%", eps, frac * 100.0);
        }
    }
    for eps in [1e-3, 0.1, 0.2, 0.3, 0.5] {
        let t = task.clone().with_eps_valid(eps);
        let oracle = t.oracle(train_ds.stats);
        let row = evaluate_candidates(&oracle, &batch_out.designs, 10).unwrap();
        println!("eps {:5}: top-10 score {:.3} (std {:.3}), validity {:.1}%", eps, row.score, row.score_std, row.validity * 100.0);
    }
    let oracle = task.oracle(train_ds.stats);

    // reference: raw dataset candidates (no model at all)
    let mut idx_rng = cliqueformer::rng::SeededRng::new(9);
    if let Designs::Continuous(xs) = &train_ds.designs {
        let picks: Vec<usize> = (0..1000).map(|_| idx_rng.index(train_ds.len())).collect();
        let sel = xs.select(ndarray::Axis(0), &picks);
        let row = evaluate_candidates(&oracle, &Designs::Continuous(sel), 10).unwrap();
        println!("dataset-sample reference: top-10 {:.3}, validity {:.1}%", row.score, row.validity * 100.0);
    }
}
