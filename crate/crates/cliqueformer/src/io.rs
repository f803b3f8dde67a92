//! Artifact files: a small versioned binary container for named f64
//! tensors with a JSON header, used for model checkpoints, task files,
//! and datasets. Round trips are bit-exact.

use crate::error::{Error, Result};
use crate::model::{Cliqueformer, CliqueformerConfig, CliqueformerParams};
use crate::rng::SeededRng;
use crate::tasks::{Dataset, Designs, LatentRbfTask, ScoreStats};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CQF1";

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    write_u64(w, bytes.len() as u64)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_bytes(r: &mut impl Read, cap: u64) -> Result<Vec<u8>> {
    let len = read_u64(r)?;
    if len > cap {
        return Err(Error::Format(format!("field length {len} exceeds cap {cap}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Write a container: magic, kind, JSON header, then named tensors as
/// little-endian f64 bit patterns.
pub fn write_container(
    path: &Path,
    kind: &str,
    header_json: &str,
    tensors: &[(String, &Array2<f64>)],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_bytes(&mut w, kind.as_bytes())?;
    write_bytes(&mut w, header_json.as_bytes())?;
    write_u64(&mut w, tensors.len() as u64)?;
    for (name, t) in tensors {
        write_bytes(&mut w, name.as_bytes())?;
        let (rows, cols) = t.dim();
        write_u64(&mut w, rows as u64)?;
        write_u64(&mut w, cols as u64)?;
        for &x in t.iter() {
            w.write_all(&x.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a container, checking magic and kind.
pub fn read_container(path: &Path, kind: &str) -> Result<(String, Vec<(String, Array2<f64>)>)> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic; not a container file".into()));
    }
    let found_kind = String::from_utf8(read_bytes(&mut r, 64)?)
        .map_err(|_| Error::Format("kind is not utf-8".into()))?;
    if found_kind != kind {
        return Err(Error::Format(format!(
            "container kind '{found_kind}', expected '{kind}'"
        )));
    }
    let header = String::from_utf8(read_bytes(&mut r, 1 << 24)?)
        .map_err(|_| Error::Format("header is not utf-8".into()))?;
    let count = read_u64(&mut r)?;
    if count > 1 << 20 {
        return Err(Error::Format(format!("implausible tensor count {count}")));
    }
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(&mut r, 1 << 16)?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if rows.checked_mul(cols).map_or(true, |n| n > 1 << 30) {
            return Err(Error::Format(format!("implausible tensor shape {rows}x{cols}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        let t = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Format(format!("tensor shape: {e}")))?;
        tensors.push((name, t));
    }
    Ok((header, tensors))
}

/// Save a model checkpoint: config header plus all weights by name.
pub fn save_model(path: &Path, model: &Cliqueformer) -> Result<()> {
    let header = serde_json::to_string(&model.cfg)
        .map_err(|e| Error::Format(format!("config to json: {e}")))?;
    let named: Vec<(String, &Array2<f64>)> = model.params.named_tensors();
    write_container(path, "model", &header, &named)
}

/// Load a model checkpoint; tensor names and shapes must match the
/// config's canonical parameter list exactly.
pub fn load_model(path: &Path) -> Result<Cliqueformer> {
    let (header, tensors) = read_container(path, "model")?;
    let cfg: CliqueformerConfig =
        serde_json::from_str(&header).map_err(|e| Error::Format(format!("config json: {e}")))?;
    cfg.validate()?;
    let mut params = CliqueformerParams::init(&cfg, &mut SeededRng::new(0));
    let expected: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    if expected.len() != tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, config expects {}",
            tensors.len(),
            expected.len()
        )));
    }
    let mut idx = 0usize;
    let mut failure: Option<String> = None;
    params.visit_mut(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        let (found_name, found) = &tensors[idx];
        if *found_name != name {
            failure = Some(format!("tensor {idx} named '{found_name}', expected '{name}'"));
        } else if found.dim() != t.dim() {
            failure = Some(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                found.dim(),
                t.dim()
            ));
        } else {
            t.assign(found);
        }
        idx += 1;
    });
    if let Some(msg) = failure {
        return Err(Error::Format(msg));
    }
    Ok(Cliqueformer { cfg, params })
}

#[derive(Serialize, Deserialize)]
struct TaskHeader {
    n_clique: usize,
    d_clique: usize,
    d_knot: usize,
    centers_per_clique: usize,
    sigma_rbf: f64,
    observed_dim: usize,
    eps_valid: f64,
    seed: u64,
}

/// Save a latent-RBF task so it reloads bit-exactly.
pub fn save_task(path: &Path, task: &LatentRbfTask) -> Result<()> {
    let (layout, centers, weights, sigma_rbf, w, b, observed_dim, eps_valid, seed) = task.parts();
    let k = centers[0].nrows();
    let header = TaskHeader {
        n_clique: layout.n_clique(),
        d_clique: layout.d_clique(),
        d_knot: layout.d_knot(),
        centers_per_clique: k,
        sigma_rbf,
        observed_dim,
        eps_valid,
        seed,
    };
    let header_json =
        serde_json::to_string(&header).map_err(|e| Error::Format(format!("task json: {e}")))?;
    let mut stacked_centers = Array2::zeros((layout.n_clique() * k, 3));
    let mut weight_mat = Array2::zeros((layout.n_clique(), k));
    for i in 0..layout.n_clique() {
        for r in 0..k {
            stacked_centers.row_mut(i * k + r).assign(&centers[i].row(r));
            weight_mat[(i, r)] = weights[i][r];
        }
    }
    let b_mat = b.clone().insert_axis(ndarray::Axis(0));
    let named: Vec<(String, &Array2<f64>)> = vec![
        ("centers".into(), &stacked_centers),
        ("weights".into(), &weight_mat),
        ("obs_w".into(), w),
        ("obs_b".into(), &b_mat),
    ];
    write_container(path, "task", &header_json, &named)
}

pub fn load_task(path: &Path) -> Result<LatentRbfTask> {
    let (header, tensors) = read_container(path, "task")?;
    let h: TaskHeader =
        serde_json::from_str(&header).map_err(|e| Error::Format(format!("task json: {e}")))?;
    let layout = crate::fgm::CliqueLayout::chain(h.n_clique, h.d_clique, h.d_knot)?;
    let find = |name: &str| -> Result<&Array2<f64>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    };
    let stacked = find("centers")?;
    let weight_mat = find("weights")?;
    if stacked.dim() != (h.n_clique * h.centers_per_clique, 3)
        || weight_mat.dim() != (h.n_clique, h.centers_per_clique)
    {
        return Err(Error::Format("task tensor shapes do not match header".into()));
    }
    let mut centers = Vec::with_capacity(h.n_clique);
    let mut weights = Vec::with_capacity(h.n_clique);
    for i in 0..h.n_clique {
        let mut c = Array2::zeros((h.centers_per_clique, 3));
        for r in 0..h.centers_per_clique {
            c.row_mut(r).assign(&stacked.row(i * h.centers_per_clique + r));
        }
        centers.push(c);
        weights.push(Array1::from_iter(weight_mat.row(i).iter().cloned()));
    }
    let w = find("obs_w")?.clone();
    let b = Array1::from_iter(find("obs_b")?.row(0).iter().cloned());
    if w.dim() != (h.observed_dim - layout.latent_dim(), layout.latent_dim()) {
        return Err(Error::Format("observation matrix shape mismatch".into()));
    }
    Ok(LatentRbfTask::from_parts(
        layout,
        centers,
        weights,
        h.sigma_rbf,
        w,
        b,
        h.observed_dim,
        h.eps_valid,
        h.seed,
    ))
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    modality: String,
    vocab: usize,
    y_min: f64,
    y_max: f64,
}

/// Save a dataset (designs, scores, stats).
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let (modality, vocab, x) = match &dataset.designs {
        Designs::Continuous(x) => ("continuous".to_string(), 0usize, x.clone()),
        Designs::Discrete { seqs, vocab } => {
            let l = seqs.first().map_or(0, |s| s.len());
            let mut m = Array2::zeros((seqs.len(), l));
            for (i, s) in seqs.iter().enumerate() {
                for (j, &c) in s.iter().enumerate() {
                    m[(i, j)] = c as f64;
                }
            }
            ("discrete".to_string(), *vocab, m)
        }
    };
    let header = DatasetHeader {
        modality,
        vocab,
        y_min: dataset.stats.y_min,
        y_max: dataset.stats.y_max,
    };
    let header_json =
        serde_json::to_string(&header).map_err(|e| Error::Format(format!("dataset json: {e}")))?;
    let y = dataset
        .scores
        .clone()
        .insert_axis(ndarray::Axis(1));
    let named: Vec<(String, &Array2<f64>)> =
        vec![("designs".into(), &x), ("scores".into(), &y)];
    write_container(path, "dataset", &header_json, &named)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (header, tensors) = read_container(path, "dataset")?;
    let h: DatasetHeader =
        serde_json::from_str(&header).map_err(|e| Error::Format(format!("dataset json: {e}")))?;
    let x = tensors
        .iter()
        .find(|(n, _)| n == "designs")
        .map(|(_, t)| t.clone())
        .ok_or_else(|| Error::Format("missing 'designs'".into()))?;
    let y = tensors
        .iter()
        .find(|(n, _)| n == "scores")
        .map(|(_, t)| Array1::from_iter(t.column(0).iter().cloned()))
        .ok_or_else(|| Error::Format("missing 'scores'".into()))?;
    let designs = match h.modality.as_str() {
        "continuous" => Designs::Continuous(x),
        "discrete" => {
            let seqs = x
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| v as usize).collect())
                .collect();
            Designs::Discrete {
                seqs,
                vocab: h.vocab,
            }
        }
        other => return Err(Error::Format(format!("unknown modality '{other}'"))),
    };
    let mut ds = Dataset::new(designs, y)?;
    ds.stats = ScoreStats {
        y_min: h.y_min,
        y_max: h.y_max,
    };
    Ok(ds)
}

/// Write candidate designs: continuous rows as CSV floats, sequences as
/// integer symbol rows.
pub fn save_candidates(path: &Path, designs: &Designs) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    match designs {
        Designs::Continuous(x) => {
            for row in x.rows() {
                let rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        Designs::Discrete { seqs, .. } => {
            for s in seqs {
                let rec: Vec<String> = s.iter().map(|c| c.to_string()).collect();
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read candidates back; `vocab` of `Some(v)` parses integer sequences.
pub fn load_candidates(path: &Path, vocab: Option<usize>) -> Result<Designs> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    match vocab {
        None => {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for rec in r.records() {
                let rec = rec.map_err(csv_err)?;
                let row: std::result::Result<Vec<f64>, _> =
                    rec.iter().map(|v| v.parse::<f64>()).collect();
                rows.push(row.map_err(|e| Error::Format(format!("bad float: {e}")))?);
            }
            if rows.is_empty() {
                return Err(Error::Data("no candidates in file".into()));
            }
            let cols = rows[0].len();
            let mut x = Array2::zeros((rows.len(), cols));
            for (i, row) in rows.iter().enumerate() {
                if row.len() != cols {
                    return Err(Error::Format("ragged candidate rows".into()));
                }
                for (j, &v) in row.iter().enumerate() {
                    x[(i, j)] = v;
                }
            }
            Ok(Designs::Continuous(x))
        }
        Some(vocab) => {
            let mut seqs: Vec<Vec<usize>> = Vec::new();
            for rec in r.records() {
                let rec = rec.map_err(csv_err)?;
                let row: std::result::Result<Vec<usize>, _> =
                    rec.iter().map(|v| v.parse::<usize>()).collect();
                seqs.push(row.map_err(|e| Error::Format(format!("bad symbol: {e}")))?);
            }
            if seqs.is_empty() {
                return Err(Error::Data("no candidates in file".into()));
            }
            Ok(Designs::Discrete { seqs, vocab })
        }
    }
}

/// Training curves as CSV: step, vib, nll, mse, total, warmup.
pub fn save_curves(path: &Path, report: &crate::training::TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "vib", "nll", "mse", "total", "warmup"])
        .map_err(csv_err)?;
    for s in &report.steps {
        w.write_record(&[
            s.step.to_string(),
            format!("{:?}", s.vib),
            format!("{:?}", s.nll),
            format!("{:?}", s.mse),
            format!("{:?}", s.total),
            format!("{:?}", s.warmup),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgm::CliqueLayout;
    use crate::model::{CliqueformerConfig, Modality};
    use crate::tasks::{generate_latent_rbf, LatentRbfConfig};

    #[test]
    fn model_checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let layout = CliqueLayout::chain(2, 3, 1).unwrap();
        let mut cfg = CliqueformerConfig::new(layout, Modality::Continuous { dim: 6 });
        cfg.d_model = 8;
        cfg.n_blocks = 1;
        cfg.mlp_hidden = 8;
        let model = Cliqueformer::new(cfg, &mut SeededRng::new(1)).unwrap();
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.params.checksum(), loaded.params.checksum());
        assert_eq!(model.param_count(), loaded.param_count());
    }

    #[test]
    fn task_round_trip_preserves_oracle_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.bin");
        let (task, ds) = generate_latent_rbf(&LatentRbfConfig::standard(2, 20), 7).unwrap();
        save_task(&path, &task).unwrap();
        let loaded = load_task(&path).unwrap();
        let mut rng = SeededRng::new(8);
        for _ in 0..20 {
            let z = rng.normal_vec(task.latent_dim());
            assert_eq!(
                task.raw_value(z.view()).to_bits(),
                loaded.raw_value(z.view()).to_bits()
            );
            let x = task.transform(z.view()).unwrap();
            assert_eq!(x, loaded.transform(z.view()).unwrap());
        }
        let _ = ds;
    }

    #[test]
    fn dataset_round_trip_both_modalities() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(9);
        let x = rng.normal_mat(12, 3, 1.0);
        let y = ndarray::Array1::from_iter((0..12).map(|i| i as f64));
        let ds = Dataset::new(Designs::Continuous(x), y).unwrap();
        let path = dir.path().join("data.bin");
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        if let (Designs::Continuous(a), Designs::Continuous(b)) = (&ds.designs, &loaded.designs) {
            for (p, q) in a.iter().zip(b.iter()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
        assert_eq!(ds.stats, loaded.stats);

        let seqs = vec![vec![0usize, 2, 1], vec![3, 3, 0]];
        let yd = ndarray::array![0.5, 0.7];
        let dsd = Dataset::new(Designs::Discrete { seqs: seqs.clone(), vocab: 4 }, yd).unwrap();
        let pathd = dir.path().join("datad.bin");
        save_dataset(&pathd, &dsd).unwrap();
        let loaded = load_dataset(&pathd).unwrap();
        if let Designs::Discrete { seqs: got, vocab } = &loaded.designs {
            assert_eq!(got, &seqs);
            assert_eq!(*vocab, 4);
        } else {
            panic!("discrete expected");
        }
    }

    #[test]
    fn candidates_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cands.csv");
        let mut rng = SeededRng::new(10);
        let x = rng.normal_mat(5, 4, 1.0);
        save_candidates(&path, &Designs::Continuous(x.clone())).unwrap();
        if let Designs::Continuous(got) = load_candidates(&path, None).unwrap() {
            for (p, q) in x.iter().zip(got.iter()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.bin");
        let (task, _) = generate_latent_rbf(&LatentRbfConfig::standard(1, 5), 3).unwrap();
        save_task(&path, &task).unwrap();
        assert!(load_model(&path).is_err());
    }
}
