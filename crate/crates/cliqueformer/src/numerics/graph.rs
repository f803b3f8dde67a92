//! Tape-based reverse-mode differentiation over 2-D `f64` arrays.
//!
//! A `Graph` records one forward pass as an append-only arena of nodes;
//! `backward` walks the tape in reverse and accumulates gradients. Every
//! tensor is a row-major `Array2<f64>`; batched sequences are stored as
//! `(batch * seq_len, width)` so reshapes between token and example views
//! are free.
//!
//! Shape mismatches are programming errors and panic with context.

use ndarray::{s, Array2, ArrayView2, Axis};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[allow(dead_code)] // op payloads kept for forward reconstruction and debugging
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// (m,n) + (1,n) broadcast over rows.
    AddRow(Var, Var),
    /// (m,n) * (1,n) broadcast over rows.
    MulRow(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Gelu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    SumAll(Var),
    RowMean(Var),
    /// Mean over consecutive groups of `group` rows: (B*group, n) -> (B, n).
    GroupMeanRows(Var, usize),
    /// Elementwise product with a fixed mask (inverted-scaling dropout).
    Dropout(Var, Array2<f64>),
    /// Row-wise normalization to zero mean, unit variance.
    LayerNorm(Var),
    /// Multi-head self-attention per example; inputs are (B*T, d_model).
    Attention {
        q: Var,
        k: Var,
        v: Var,
        n_heads: usize,
        seq_len: usize,
        /// Saved softmax probabilities, one (T, T) matrix per (example, head).
        probs: Vec<Array2<f64>>,
    },
    /// Per-position scalar embedding: out[b*d+k, :] = x[b,k]*w[k,:] + p[k,:].
    ScaleEmbed { x: Var, w: Var, p: Var },
    /// out[b*t+i, :] = a[b*t+i, :] + rows[i, :] with rows (t, n).
    TileRows { a: Var, rows: Var },
    /// Slice a latent (B, d_z) into per-clique rows (B*n_clique, d_clique),
    /// optionally concatenating a fixed per-clique vector on the right.
    CliqueRows {
        z: Var,
        starts: Vec<usize>,
        d_clique: usize,
        extra: Option<Array2<f64>>,
    },
    /// Mean-over-examples, sum-over-positions softmax cross-entropy against
    /// integer targets; logits are (B*L, V) and `batch` is B.
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        batch: usize,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, materialized as zeros when it never received one.
    pub fn take(&mut self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads[v.0].take().unwrap_or_else(|| Array2::zeros(shape))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

const LN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a (1,1) node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on non-scalar node");
        a[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "{what}: shape mismatch {:?} vs {:?}",
            self.value(a).dim(),
            self.value(b).dim()
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, n), "add_row: bias shape");
        let v = self.value(a) + &self.value(row).row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, n), "mul_row: scale shape");
        let v = self.value(a) * &self.value(row).row(0);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (_, ka) = self.value(a).dim();
        let (kb, _) = self.value(b).dim();
        assert_eq!(ka, kb, "matmul: inner dims {ka} vs {kb}");
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu_scalar);
        self.push(v, Op::Gelu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Hard clamp; gradient is passed through strictly inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a);
        assert_eq!(value.len(), rows * cols, "reshape: element count");
        let v = value
            .to_owned()
            .into_shape((rows, cols))
            .expect("contiguous reshape");
        self.push(v, Op::Reshape(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, _) = self.value(a).dim();
        let (rb, _) = self.value(b).dim();
        assert_eq!(ra, rb, "concat_cols: row counts");
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols");
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (_, n) = self.value(a).dim();
        assert!(start < end && end <= n, "slice_cols: range {start}..{end} of {n}");
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean_axis(Axis(1)).expect("nonempty rows");
        let rows = m.len();
        let v = m.into_shape((rows, 1)).expect("column vector");
        self.push(v, Op::RowMean(a))
    }

    /// Mean-pool consecutive groups of `group` rows.
    pub fn group_mean_rows(&mut self, a: Var, group: usize) -> Var {
        let (rows, cols) = self.value(a).dim();
        assert!(group > 0 && rows % group == 0, "group_mean_rows: row count");
        let out_rows = rows / group;
        let mut v = Array2::zeros((out_rows, cols));
        let av = self.value(a);
        for r in 0..out_rows {
            let mut acc = v.row_mut(r);
            for i in 0..group {
                acc += &av.row(r * group + i);
            }
            acc /= group as f64;
        }
        self.push(v, Op::GroupMeanRows(a, group))
    }

    pub fn dropout(&mut self, a: Var, mask: Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), mask.dim(), "dropout: mask shape");
        let v = self.value(a) * &mask;
        self.push(v, Op::Dropout(a, mask))
    }

    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.to_owned();
        for mut row in v.rows_mut() {
            let mean = row.mean().expect("nonempty row");
            let var = row.mapv(|t| (t - mean) * (t - mean)).mean().expect("nonempty");
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|t| (t - mean) * inv);
        }
        self.push(v, Op::LayerNorm(a))
    }

    /// Multi-head self-attention. `q`, `k`, `v` are (B*T, d_model) with
    /// `seq_len = T`; each example attends over its own T rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize, seq_len: usize) -> Var {
        let (rows, d_model) = self.value(q).dim();
        self.same_shape(q, k, "attention q/k");
        self.same_shape(q, v, "attention q/v");
        assert_eq!(rows % seq_len, 0, "attention: rows not multiple of seq_len");
        assert_eq!(d_model % n_heads, 0, "attention: d_model not divisible by heads");
        let batch = rows / seq_len;
        let d_head = d_model / n_heads;
        let scale = 1.0 / (d_head as f64).sqrt();

        let mut out = Array2::zeros((rows, d_model));
        let mut probs = Vec::with_capacity(batch * n_heads);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for b in 0..batch {
            let r0 = b * seq_len;
            for h in 0..n_heads {
                let c0 = h * d_head;
                let qs = qv.slice(s![r0..r0 + seq_len, c0..c0 + d_head]);
                let ks = kv.slice(s![r0..r0 + seq_len, c0..c0 + d_head]);
                let vs = vv.slice(s![r0..r0 + seq_len, c0..c0 + d_head]);
                let mut scores = qs.dot(&ks.t());
                scores *= scale;
                softmax_rows(&mut scores);
                let o = scores.dot(&vs);
                out.slice_mut(s![r0..r0 + seq_len, c0..c0 + d_head]).assign(&o);
                probs.push(scores);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                seq_len,
                probs,
            },
        )
    }

    /// Tokenize a batch of scalar coordinates: out[b*d+k, :] = x[b,k]*w[k,:] + p[k,:].
    pub fn scale_embed(&mut self, x: Var, w: Var, p: Var) -> Var {
        let (batch, d) = self.value(x).dim();
        let (dw, d_model) = self.value(w).dim();
        assert_eq!(d, dw, "scale_embed: positions");
        assert_eq!(self.value(p).dim(), (d, d_model), "scale_embed: p shape");
        let mut out = Array2::zeros((batch * d, d_model));
        let (xv, wv, pv) = (self.value(x), self.value(w), self.value(p));
        for b in 0..batch {
            for k in 0..d {
                let xs = xv[(b, k)];
                let mut row = out.row_mut(b * d + k);
                ndarray::Zip::from(&mut row)
                    .and(wv.row(k))
                    .and(pv.row(k))
                    .for_each(|o, &wi, &pi| *o = xs * wi + pi);
            }
        }
        self.push(out, Op::ScaleEmbed { x, w, p })
    }

    /// Add a (t, n) row block to every example: out[b*t+i, :] = a[b*t+i, :] + rows[i, :].
    pub fn tile_rows(&mut self, a: Var, rows: Var) -> Var {
        let (total, n) = self.value(a).dim();
        let (t, nr) = self.value(rows).dim();
        assert_eq!(n, nr, "tile_rows: widths");
        assert_eq!(total % t, 0, "tile_rows: row count not multiple of tile");
        let mut out = self.value(a).to_owned();
        let rv = self.value(rows).to_owned();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row += &rv.row(i % t);
        }
        self.push(out, Op::TileRows { a, rows })
    }

    /// Slice latent rows into per-clique inputs. For z of shape (B, d_z) and
    /// cliques starting at `starts`, produces (B*n_clique, d_clique [+ extra]).
    /// `extra` rows (n_clique, e) are appended per clique when provided.
    pub fn clique_rows(
        &mut self,
        z: Var,
        starts: &[usize],
        d_clique: usize,
        extra: Option<Array2<f64>>,
    ) -> Var {
        let (batch, d_z) = self.value(z).dim();
        let n_clique = starts.len();
        for &st in starts {
            assert!(st + d_clique <= d_z, "clique_rows: clique out of range");
        }
        let e = extra.as_ref().map_or(0, |m| {
            assert_eq!(m.nrows(), n_clique, "clique_rows: extra rows");
            m.ncols()
        });
        let mut out = Array2::zeros((batch * n_clique, d_clique + e));
        let zv = self.value(z);
        for b in 0..batch {
            for (i, &st) in starts.iter().enumerate() {
                let mut row = out.row_mut(b * n_clique + i);
                row.slice_mut(s![..d_clique])
                    .assign(&zv.slice(s![b, st..st + d_clique]));
                if let Some(m) = &extra {
                    row.slice_mut(s![d_clique..]).assign(&m.row(i));
                }
            }
        }
        self.push(
            out,
            Op::CliqueRows {
                z,
                starts: starts.to_vec(),
                d_clique,
                extra,
            },
        )
    }

    /// Softmax cross-entropy against integer targets, summed over positions
    /// and averaged over the `batch` examples. Returns a (1,1) scalar.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize], batch: usize) -> Var {
        let (rows, vocab) = self.value(logits).dim();
        assert_eq!(rows, targets.len(), "softmax_xent: target count");
        assert!(rows % batch == 0, "softmax_xent: rows not multiple of batch");
        let lv = self.value(logits);
        let mut total = 0.0;
        for (row, &t) in lv.rows().into_iter().zip(targets) {
            assert!(t < vocab, "softmax_xent: target out of vocab");
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = Array2::from_elem((1, 1), total / batch as f64);
        self.push(
            v,
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                batch,
            },
        )
    }

    /// Reverse pass from a (1,1) root. Returns per-node gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                // keep leaf gradients; intermediates are dropped as we pass them
                Op::Leaf => grads[idx] = Some(g),
                Op::Add(a, b) => {
                    accum_owned(&mut grads, *b, g.clone());
                    accum_owned(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accum_scaled(&mut grads, *b, g.view(), -1.0);
                    accum_owned(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let mut gb = g;
                    gb *= self.value(*a);
                    accum_owned(&mut grads, *a, ga);
                    accum_owned(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum_owned(&mut grads, *row, gr);
                    accum_owned(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum_owned(&mut grads, *row, gr);
                    let mut ga = g;
                    ga *= &self.value(*row).row(0);
                    accum_owned(&mut grads, *a, ga);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accum_owned(&mut grads, *a, ga);
                    accum_owned(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let mut ga = g;
                    ga *= *c;
                    accum_owned(&mut grads, *a, ga);
                }
                Op::AddScalar(a, _) => accum_owned(&mut grads, *a, g),
                Op::Gelu(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| *gi *= gelu_grad_scalar(x));
                    accum_owned(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| {
                            if x <= 0.0 {
                                *gi *= *slope;
                            }
                        });
                    accum_owned(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&self.nodes[idx].value)
                        .for_each(|gi, &t| *gi *= 1.0 - t * t);
                    accum_owned(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let mut ga = g;
                    ga *= &self.nodes[idx].value;
                    accum_owned(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga).and(self.value(*a)).for_each(|gi, &x| {
                        if x < *lo || x > *hi {
                            *gi = 0.0;
                        }
                    });
                    accum_owned(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).dim();
                    let ga = g.into_shape(shape).expect("reshape grad");
                    accum_owned(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).ncols();
                    accum(&mut grads, *a, g.slice(s![.., ..na]));
                    accum(&mut grads, *b, g.slice(s![.., na..]));
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accum_owned(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[(0, 0)]);
                    accum_owned(&mut grads, *a, ga);
                }
                Op::RowMean(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let mut ga = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        ga.row_mut(r).fill(g[(r, 0)] / cols as f64);
                    }
                    accum_owned(&mut grads, *a, ga);
                }
                Op::GroupMeanRows(a, group) => {
                    let (rows, cols) = self.value(*a).dim();
                    let mut ga = Array2::zeros((rows, cols));
                    let scale = 1.0 / *group as f64;
                    for r in 0..rows {
                        let src = g.row(r / group);
                        let mut dst = ga.row_mut(r);
                        ndarray::Zip::from(&mut dst).and(src).for_each(|d, &s| *d = s * scale);
                    }
                    accum_owned(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => {
                    let mut ga = g;
                    ga *= mask;
                    accum_owned(&mut grads, *a, ga);
                }
                Op::LayerNorm(a) => {
                    let x = self.value(*a);
                    let y = &self.nodes[idx].value;
                    let mut ga = Array2::zeros(x.dim());
                    let n = x.ncols() as f64;
                    for r in 0..x.nrows() {
                        let xr = x.row(r);
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let mean = xr.mean().expect("nonempty");
                        let var = xr.mapv(|t| (t - mean) * (t - mean)).mean().expect("nonempty");
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let g_mean = gr.mean().expect("nonempty");
                        let gy_mean = gr
                            .iter()
                            .zip(yr.iter())
                            .map(|(&gi, &yi)| gi * yi)
                            .sum::<f64>()
                            / n;
                        let mut out = ga.row_mut(r);
                        for c in 0..x.ncols() {
                            out[c] = inv * (gr[c] - g_mean - yr[c] * gy_mean);
                        }
                    }
                    accum(&mut grads, *a, ga.view());
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    n_heads,
                    seq_len,
                    probs,
                } => {
                    let (rows, d_model) = self.value(*q).dim();
                    let batch = rows / seq_len;
                    let d_head = d_model / n_heads;
                    let scale = 1.0 / (d_head as f64).sqrt();
                    let mut gq = Array2::zeros((rows, d_model));
                    let mut gk = Array2::zeros((rows, d_model));
                    let mut gv = Array2::zeros((rows, d_model));
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    for b in 0..batch {
                        let r0 = b * seq_len;
                        for h in 0..*n_heads {
                            let c0 = h * d_head;
                            let p = &probs[b * n_heads + h];
                            let go = g.slice(s![r0..r0 + *seq_len, c0..c0 + d_head]);
                            let qs = qv.slice(s![r0..r0 + *seq_len, c0..c0 + d_head]);
                            let ks = kv.slice(s![r0..r0 + *seq_len, c0..c0 + d_head]);
                            let vs = vv.slice(s![r0..r0 + *seq_len, c0..c0 + d_head]);
                            // dV = P^T dO
                            let dv = p.t().dot(&go);
                            // dP = dO V^T ; dS = P ⊙ (dP - rowsum(dP ⊙ P))
                            let dp = go.dot(&vs.t());
                            let mut ds = dp.clone();
                            for r in 0..*seq_len {
                                let dot = dp
                                    .row(r)
                                    .iter()
                                    .zip(p.row(r).iter())
                                    .map(|(&a, &b)| a * b)
                                    .sum::<f64>();
                                for c in 0..*seq_len {
                                    ds[(r, c)] = (dp[(r, c)] - dot) * p[(r, c)];
                                }
                            }
                            ds *= scale;
                            let dq = ds.dot(&ks);
                            let dk = ds.t().dot(&qs);
                            gq.slice_mut(s![r0..r0 + *seq_len, c0..c0 + d_head])
                                .assign(&dq);
                            gk.slice_mut(s![r0..r0 + *seq_len, c0..c0 + d_head])
                                .assign(&dk);
                            gv.slice_mut(s![r0..r0 + *seq_len, c0..c0 + d_head])
                                .assign(&dv);
                        }
                    }
                    accum_owned(&mut grads, *q, gq);
                    accum_owned(&mut grads, *k, gk);
                    accum_owned(&mut grads, *v, gv);
                }
                Op::ScaleEmbed { x, w, p } => {
                    let (batch, d) = self.value(*x).dim();
                    let d_model = self.value(*w).ncols();
                    let mut gx = Array2::zeros((batch, d));
                    let mut gw = Array2::zeros((d, d_model));
                    let mut gp = Array2::zeros((d, d_model));
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    for b in 0..batch {
                        for k in 0..d {
                            let go = g.row(b * d + k);
                            gx[(b, k)] = go.dot(&wv.row(k));
                            let mut gwr = gw.row_mut(k);
                            gwr += &(&go * xv[(b, k)]);
                            let mut gpr = gp.row_mut(k);
                            gpr += &go;
                        }
                    }
                    accum_owned(&mut grads, *x, gx);
                    accum_owned(&mut grads, *w, gw);
                    accum_owned(&mut grads, *p, gp);
                }
                Op::TileRows { a, rows } => {
                    let (t, n) = self.value(*rows).dim();
                    let mut gr = Array2::zeros((t, n));
                    for (i, row) in g.rows().into_iter().enumerate() {
                        let mut target = gr.row_mut(i % t);
                        target += &row;
                    }
                    accum_owned(&mut grads, *rows, gr);
                    accum_owned(&mut grads, *a, g);
                }
                Op::CliqueRows {
                    z,
                    starts,
                    d_clique,
                    extra: _,
                } => {
                    let (batch, d_z) = self.value(*z).dim();
                    let n_clique = starts.len();
                    let mut gz = Array2::zeros((batch, d_z));
                    for b in 0..batch {
                        for (i, &st) in starts.iter().enumerate() {
                            let grow = g.row(b * n_clique + i);
                            let mut target = gz.slice_mut(s![b, st..st + *d_clique]);
                            target += &grow.slice(s![..*d_clique]);
                        }
                    }
                    accum_owned(&mut grads, *z, gz);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    batch,
                } => {
                    let lv = self.value(*logits);
                    let coeff = g[(0, 0)] / *batch as f64;
                    let mut gl = Array2::zeros(lv.dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = lv.row(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                        for c in 0..lv.ncols() {
                            let p = (row[c] - max).exp() / denom;
                            gl[(r, c)] = coeff * (p - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                    accum_owned(&mut grads, *logits, gl);
                }
            }
        }
        Gradients { grads }
    }
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

fn accum(grads: &mut [Option<Array2<f64>>], v: Var, g: ArrayView2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g.to_owned()),
    }
}

fn accum_owned(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

fn accum_scaled(grads: &mut [Option<Array2<f64>>], v: Var, g: ArrayView2<f64>, c: f64) {
    match &mut grads[v.0] {
        Some(acc) => acc.zip_mut_with(&g, |a, &b| *a += c * b),
        slot => *slot = Some(g.mapv(|x| c * x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Finite-difference check of d(scalar)/d(leaf) for a graph builder.
    fn check_leaf_grad<F>(build: F, leaf_value: &Array2<f64>, tol: f64)
    where
        F: Fn(&mut Graph, Var) -> Var,
    {
        let mut g = Graph::new();
        let x = g.leaf(leaf_value.clone());
        let out = build(&mut g, x);
        let grads = g.backward(out);
        let analytic = grads.get(x).expect("leaf gradient").clone();

        let h = 1e-5;
        let mut max_dev: f64 = 0.0;
        for idx in 0..leaf_value.len() {
            let mut plus = leaf_value.clone();
            let mut minus = leaf_value.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fp = {
                let mut gp = Graph::new();
                let xp = gp.leaf(plus);
                let out = build(&mut gp, xp);
                gp.scalar(out)
            };
            let fm = {
                let mut gm = Graph::new();
                let xm = gm.leaf(minus);
                let out = build(&mut gm, xm);
                gm.scalar(out)
            };
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            max_dev = max_dev.max((a - fd).abs() / (a.abs() + 1e-8));
        }
        assert!(max_dev < tol, "finite-difference deviation {max_dev}");
    }

    #[test]
    fn elementwise_and_reduction_grads() {
        let mut rng = SeededRng::new(5);
        let x = rng.normal_mat(3, 4, 1.0);
        check_leaf_grad(
            |g, x| {
                let t = g.tanh(x);
                let e = g.exp(t);
                let u = g.gelu(e);
                let m = g.mul(u, x);
                g.sum_all(m)
            },
            &x,
            1e-6,
        );
    }

    #[test]
    fn matmul_and_affine_grads() {
        let mut rng = SeededRng::new(6);
        let x = rng.normal_mat(4, 3, 1.0);
        let w = rng.normal_mat(3, 5, 0.7);
        let b = rng.normal_mat(1, 5, 0.5);
        check_leaf_grad(
            |g, x| {
                let wl = g.leaf(w.clone());
                let bl = g.leaf(b.clone());
                let y = g.matmul(x, wl);
                let y = g.add_row(y, bl);
                let y = g.gelu(y);
                g.sum_all(y)
            },
            &x,
            1e-6,
        );
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = SeededRng::new(7);
        let x = rng.normal_mat(3, 6, 2.0);
        check_leaf_grad(
            |g, x| {
                let y = g.layer_norm(x);
                let sq = g.mul(y, y);
                let w = g.gelu(sq);
                g.sum_all(w)
            },
            &x,
            1e-5,
        );
    }

    #[test]
    fn attention_grads_all_inputs() {
        let mut rng = SeededRng::new(8);
        // 2 examples, 3 tokens, d_model 4, 2 heads
        let base = rng.normal_mat(6, 4, 0.8);
        for role in 0..3 {
            let others: Vec<Array2<f64>> =
                (0..3).map(|i| rng.split(100 + i).normal_mat(6, 4, 0.8)).collect();
            check_leaf_grad(
                |g, x| {
                    let mut ids = Vec::new();
                    for (i, o) in others.iter().enumerate() {
                        if i == role {
                            ids.push(x);
                        } else {
                            ids.push(g.leaf(o.clone()));
                        }
                    }
                    let a = g.attention(ids[0], ids[1], ids[2], 2, 3);
                    let sq = g.mul(a, a);
                    g.sum_all(sq)
                },
                &base,
                1e-5,
            );
        }
    }

    #[test]
    fn structural_op_grads() {
        let mut rng = SeededRng::new(9);
        let z = rng.normal_mat(2, 5, 1.0);
        let extra = rng.normal_mat(2, 4, 1.0);
        // cliques of width 3 starting at 0 and 2 (overlap at index 2)
        check_leaf_grad(
            |g, z| {
                let rows = g.clique_rows(z, &[0, 2], 3, Some(extra.clone()));
                let sq = g.mul(rows, rows);
                let m = g.row_mean(sq);
                let r = g.reshape(m, 1, 4);
                let sl = g.slice_cols(r, 1, 4);
                g.sum_all(sl)
            },
            &z,
            1e-6,
        );

        let x = rng.normal_mat(3, 4, 1.0);
        let w = rng.normal_mat(4, 6, 0.5);
        let p = rng.normal_mat(4, 6, 0.5);
        check_leaf_grad(
            |g, x| {
                let wl = g.leaf(w.clone());
                let pl = g.leaf(p.clone());
                let tok = g.scale_embed(x, wl, pl);
                let sq = g.mul(tok, tok);
                g.sum_all(sq)
            },
            &x,
            1e-6,
        );

        // scale_embed gradients w.r.t. the embedding tables
        check_leaf_grad(
            |g, wleaf| {
                let xl = g.leaf(x.clone());
                let pl = g.leaf(p.clone());
                let tok = g.scale_embed(xl, wleaf, pl);
                let sq = g.mul(tok, tok);
                g.sum_all(sq)
            },
            &w,
            1e-6,
        );

        let a = rng.normal_mat(6, 4, 1.0);
        let tile = rng.normal_mat(3, 4, 1.0);
        check_leaf_grad(
            |g, t| {
                let al = g.leaf(a.clone());
                let y = g.tile_rows(al, t);
                let sq = g.mul(y, y);
                g.sum_all(sq)
            },
            &tile,
            1e-6,
        );
    }

    #[test]
    fn group_mean_rows_grad() {
        let mut rng = SeededRng::new(11);
        let x = rng.normal_mat(6, 3, 1.0);
        check_leaf_grad(
            |g, x| {
                let pooled = g.group_mean_rows(x, 3);
                let sq = g.mul(pooled, pooled);
                g.sum_all(sq)
            },
            &x,
            1e-6,
        );
        let mut g = Graph::new();
        let xl = g.leaf(ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        let m = g.group_mean_rows(xl, 2);
        assert_eq!(g.value(m), &ndarray::array![[2.0, 3.0]]);
    }

    #[test]
    fn softmax_xent_grad_and_value() {
        let mut rng = SeededRng::new(10);
        let logits = rng.normal_mat(4, 3, 1.0);
        let targets = vec![0, 2, 1, 1];
        // uniform logits give log(vocab) per position
        let mut g = Graph::new();
        let uni = g.leaf(Array2::zeros((4, 3)));
        let loss = g.softmax_xent(uni, &targets, 2);
        let expect = 4.0 * (3.0f64).ln() / 2.0;
        assert!((g.scalar(loss) - expect).abs() < 1e-12);

        check_leaf_grad(
            |g, l| g.softmax_xent(l, &targets, 2),
            &logits,
            1e-6,
        );
    }

    #[test]
    fn clamp_passes_gradient_inside_range() {
        let x = ndarray::array![[0.5, -9.0, 9.0]];
        let mut g = Graph::new();
        let xl = g.leaf(x);
        let c = g.clamp(xl, -8.0, 8.0);
        let s = g.sum_all(c);
        let grads = g.backward(s);
        let gx = grads.get(xl).unwrap();
        assert_eq!(gx[(0, 0)], 1.0);
        assert_eq!(gx[(0, 1)], 0.0);
        assert_eq!(gx[(0, 2)], 0.0);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Array2::zeros((2, 3)));
        let b = g.leaf(Array2::zeros((3, 2)));
        let _ = g.add(a, b);
    }
}
