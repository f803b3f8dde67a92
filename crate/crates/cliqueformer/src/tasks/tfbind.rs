//! TFBind-8 ingestion: tab-separated `SEQUENCE<TAB>SCORE` rows over the
//! DNA alphabet. The full table backs an exact-lookup oracle; training
//! uses a percentile-filtered subset.

use crate::error::{Error, Result};
use crate::tasks::{Dataset, DesignView, Designs, Oracle, ScoreStats};
use ndarray::Array1;
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

pub const DNA_VOCAB: usize = 4;

fn symbol_of(c: char) -> Result<usize> {
    match c {
        'A' | 'a' => Ok(0),
        'C' | 'c' => Ok(1),
        'G' | 'g' => Ok(2),
        'T' | 't' => Ok(3),
        other => Err(Error::Format(format!("unknown DNA character '{other}'"))),
    }
}

pub fn symbol_to_char(s: usize) -> char {
    ['A', 'C', 'G', 'T'][s]
}

/// Full sequence-to-score table.
#[derive(Debug, Clone)]
pub struct TfBindTable {
    table: HashMap<Vec<usize>, f64>,
    seq_len: usize,
}

impl TfBindTable {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn lookup(&self, seq: &[usize]) -> Option<f64> {
        self.table.get(seq).copied()
    }

    /// Lookup oracle normalizing against the given visible-data stats.
    /// Sequences absent from the table are treated as invalid.
    pub fn oracle(&self, stats: ScoreStats) -> TfBindOracle {
        TfBindOracle {
            table: self.clone(),
            stats,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TfBindOracle {
    table: TfBindTable,
    stats: ScoreStats,
}

impl TfBindOracle {
    pub fn stats(&self) -> ScoreStats {
        self.stats
    }
}

impl Oracle for TfBindOracle {
    fn score(&self, design: DesignView<'_>) -> (f64, bool) {
        match design {
            DesignView::Discrete(seq) => match self.table.lookup(seq) {
                Some(y) => (
                    self.stats.normalize(y).expect("non-degenerate stats"),
                    true,
                ),
                None => (0.0, false),
            },
            DesignView::Continuous(_) => (0.0, false),
        }
    }
}

/// Parse a TFBind-8 style file: one `SEQUENCE<TAB>SCORE` record per line.
/// Returns the full dataset (all rows) and the lookup table behind the
/// oracle. Callers filter the dataset for training and pass the filtered
/// stats to [`TfBindTable::oracle`].
pub fn load_tfbind8(path: &Path) -> Result<(Dataset, TfBindTable)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut seqs: Vec<Vec<usize>> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut table = HashMap::new();
    let mut seq_len = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let seq_str = parts
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: missing sequence", lineno + 1)))?;
        let score_str = parts
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: missing score", lineno + 1)))?;
        let seq: Vec<usize> = seq_str
            .trim()
            .chars()
            .map(symbol_of)
            .collect::<Result<_>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        match seq_len {
            None => seq_len = Some(seq.len()),
            Some(l) if l != seq.len() => {
                return Err(Error::Format(format!(
                    "line {}: sequence length {} differs from {}",
                    lineno + 1,
                    seq.len(),
                    l
                )))
            }
            _ => {}
        }
        let score: f64 = score_str.trim().parse().map_err(|e| {
            Error::Format(format!("line {}: bad score '{score_str}': {e}", lineno + 1))
        })?;
        table.insert(seq.clone(), score);
        seqs.push(seq);
        scores.push(score);
    }
    let seq_len = seq_len.ok_or_else(|| Error::Format("empty TFBind file".into()))?;
    let dataset = Dataset::new(
        Designs::Discrete {
            seqs,
            vocab: DNA_VOCAB,
        },
        Array1::from_vec(scores),
    )?;
    Ok((dataset, TfBindTable { table, seq_len }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_fixture(rows: &[(&str, f64)]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for (seq, score) in rows {
            writeln!(f, "{seq}\t{score}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_and_looks_up() {
        let f = write_fixture(&[
            ("ACGTACGT", 0.31),
            ("AAAAAAAA", 0.92),
            ("TTTTGGGG", 0.05),
            ("CCCCCCCC", 0.55),
        ]);
        let (ds, table) = load_tfbind8(f.path()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(table.seq_len(), 8);
        let seq: Vec<usize> = "AAAAAAAA".chars().map(|c| symbol_of(c).unwrap()).collect();
        assert_eq!(table.lookup(&seq), Some(0.92));

        let oracle = table.oracle(ds.stats);
        let (score, valid) = oracle.score(DesignView::Discrete(&seq));
        assert!(valid);
        assert!((score - 1.0).abs() < 1e-12);

        let missing = vec![0usize; 8];
        if table.lookup(&missing).is_none() {
            assert_eq!(oracle.score(DesignView::Discrete(&missing)), (0.0, false));
        }
    }

    #[test]
    fn rejects_malformed_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "ACGT\tnot_a_number").unwrap();
        f.flush().unwrap();
        assert!(load_tfbind8(f.path()).is_err());

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "ACXT\t0.5").unwrap();
        g.flush().unwrap();
        assert!(load_tfbind8(g.path()).is_err());

        let mut h = tempfile::NamedTempFile::new().unwrap();
        writeln!(h, "ACGT\t0.5").unwrap();
        writeln!(h, "ACGTACGT\t0.5").unwrap();
        h.flush().unwrap();
        assert!(load_tfbind8(h.path()).is_err());
    }

    #[test]
    fn filtered_training_set_excludes_top_scores() {
        let f = write_fixture(&[
            ("AAAAAAAA", 0.1),
            ("CCCCCCCC", 0.2),
            ("GGGGGGGG", 0.3),
            ("TTTTTTTT", 0.4),
            ("ACACACAC", 0.5),
            ("AGAGAGAG", 0.6),
            ("ATATATAT", 0.7),
            ("CGCGCGCG", 0.8),
            ("CTCTCTCT", 0.9),
            ("GTGTGTGT", 1.0),
        ]);
        let (ds, _) = load_tfbind8(f.path()).unwrap();
        let train = ds.percentile_filter(0.8).unwrap();
        assert!(train.len() < ds.len());
        let max_kept = train.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max_kept < 0.9);
    }
}
