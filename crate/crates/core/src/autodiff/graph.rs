//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature statistics of one train-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used for running-statistic updates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Detach,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    Mean(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    RowCosine {
        a: Var,
        b: Var,
        norms_a: Vec<f64>,
        norms_b: Vec<f64>,
    },
    SqDist {
        input: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("shape"))
    }

    /// Gradient for each var, zero-filled where no gradient reached it.
    pub fn wrt(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .map(|&v| {
                self.get(v)
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Same values as `a`, but a constant for differentiation.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::Detach, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(dim_err("matmul", ta, tb));
        };
        if k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a[b×d] + bias[d]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (rows, cols) = ta.rows_cols();
        if ta.shape().len() != 2 || tb.numel() != cols {
            return Err(dim_err("add_row", ta, tb));
        }
        let mut out = ta.data().to_vec();
        for r in 0..rows {
            for (o, &bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(a, bias), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(dim_err(op, ta, tb));
        }
        Ok(ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t
            .data()
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Softplus(a), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Train-mode batch normalization over the rows of `a`.
    ///
    /// Returns the output and the batch statistics for running-stat updates.
    pub fn batch_norm_train(&mut self, a: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (ta, tg, tb) = (self.value(a), self.value(gamma), self.value(beta));
        let (rows, cols) = ta.rows_cols();
        if ta.shape().len() != 2 || tg.numel() != cols || tb.numel() != cols {
            return Err(dim_err("batch_norm", ta, tg));
        }
        if rows < 2 {
            return Err(Error::DegenerateBatch { rows });
        }
        let x = ta.data();
        let n = rows as f64;
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = x[r * cols + c] - mean[c];
                var[c] += d * d;
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / n + BN_EPSILON).sqrt())
            .collect();
        let unbiased: Vec<f64> = var.iter().map(|s| s / (n - 1.0)).collect();
        let (out, xhat) = normalize(x, rows, cols, &mean, &inv_std, tg.data(), tb.data());
        let rg = self.rg(&[a, gamma, beta]);
        let v = self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::BatchNorm {
                input: a,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        Ok((
            v,
            BatchStats {
                mean,
                var: unbiased,
            },
        ))
    }

    /// Eval-mode batch normalization using running statistics.
    pub fn batch_norm_eval(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let (ta, tg, tb) = (self.value(a), self.value(gamma), self.value(beta));
        let (rows, cols) = ta.rows_cols();
        if ta.shape().len() != 2
            || tg.numel() != cols
            || tb.numel() != cols
            || running_mean.len() != cols
            || running_var.len() != cols
        {
            return Err(dim_err("batch_norm", ta, tg));
        }
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + BN_EPSILON).sqrt())
            .collect();
        let (out, xhat) = normalize(
            ta.data(),
            rows,
            cols,
            running_mean,
            &inv_std,
            tg.data(),
            tb.data(),
        );
        let rg = self.rg(&[a, gamma, beta]);
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::BatchNorm {
                input: a,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, classes) = t.rows_cols();
        if t.shape().len() != 2 || labels.len() != rows {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label {
                index,
                label,
                classes,
            });
        }
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &z) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (z - max).exp();
                sum += *p;
            }
            probs[r * classes..(r + 1) * classes]
                .iter_mut()
                .for_each(|p| *p /= sum);
            loss += -(row[labels[r]] - max - sum.ln());
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / rows as f64),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Per-row cosine similarity of two `b×d` matrices, as a length-`b` vector.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_cosine_impl(a, b, true)
    }

    /// As [`row_cosine`](Self::row_cosine), but a row pair in which either
    /// side has zero norm yields 0 with zero gradient instead of an error.
    pub fn row_cosine_masked(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_cosine_impl(a, b, false)
    }

    fn row_cosine_impl(&mut self, a: Var, b: Var, strict: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) || ta.shape().len() != 2 {
            return Err(dim_err("cosine_similarity", ta, tb));
        }
        let (rows, _) = ta.rows_cols();
        let mut out = Vec::with_capacity(rows);
        let mut norms_a = Vec::with_capacity(rows);
        let mut norms_b = Vec::with_capacity(rows);
        for r in 0..rows {
            let (ra, rb) = (ta.row(r), tb.row(r));
            let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na <= NORM_FLOOR || nb <= NORM_FLOOR {
                if strict {
                    return Err(Error::DegenerateVector {
                        op: "cosine_similarity",
                        row: r,
                    });
                }
                out.push(0.0);
                norms_a.push(0.0);
                norms_b.push(0.0);
                continue;
            }
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            out.push(dot / (na * nb));
            norms_a.push(na);
            norms_b.push(nb);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::vector(out),
            Op::RowCosine {
                a,
                b,
                norms_a,
                norms_b,
            },
            rg,
        ))
    }

    /// Batch mean of row-wise cosine similarity.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let rows = self.row_cosine(a, b)?;
        Ok(self.mean(rows))
    }

    /// Batch mean of [`row_cosine_masked`](Self::row_cosine_masked); masked
    /// rows still count in the denominator.
    pub fn cosine_similarity_masked(&mut self, a: Var, b: Var) -> Result<Var> {
        let rows = self.row_cosine_masked(a, b)?;
        Ok(self.mean(rows))
    }

    /// `Σ (a − target)²` with `target` held constant.
    pub fn sq_dist(&mut self, a: Var, target: &Tensor) -> Result<Var> {
        let t = self.value(a);
        if !t.same_shape(target) {
            return Err(dim_err("sq_dist", t, target));
        }
        let s: f64 = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::SqDist {
                input: a,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: lt.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if let Some(ga) = self.accum(grads, *a) {
                    let bd = tb.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            ga[i * k + p] += dot;
                        }
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    let ad = ta.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.accum(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
                if let Some(gb) = self.accum(grads, *bias) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(gv) = self.accum(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(o, &x)| *o += sign * x);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.accum(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x);
                }
                if let Some(gb) = self.accum(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x);
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = self.accum(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, &x)| *o += factor * x);
                }
            }
            Op::Relu(a) => {
                let input = self.value(*a).data();
                if let Some(ga) = self.accum(grads, *a) {
                    for ((o, &x), &gv) in ga.iter_mut().zip(input).zip(g) {
                        if x > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                let input = self.value(*a).data();
                if let Some(ga) = self.accum(grads, *a) {
                    for ((o, &x), &gv) in ga.iter_mut().zip(input).zip(g) {
                        *o += gv * sigmoid(x);
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                if let Some(ga) = self.accum(grads, *a) {
                    let share = g[0] / n;
                    ga.iter_mut().for_each(|o| *o += share);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let cols = inv_std.len();
                let rows = g.len() / cols;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; cols];
                let mut sum_gx = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        sum_g[c] += g[i];
                        sum_gx[c] += g[i] * xhat[i];
                    }
                }
                if let Some(gi) = self.accum(grads, *input) {
                    let n = rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            let i = r * cols + c;
                            gi[i] += if *batch_stats {
                                gam[c] * inv_std[c] / n
                                    * (n * g[i] - sum_g[c] - xhat[i] * sum_gx[c])
                            } else {
                                gam[c] * inv_std[c] * g[i]
                            };
                        }
                    }
                }
                if let Some(gg) = self.accum(grads, *gamma) {
                    gg.iter_mut().zip(&sum_gx).for_each(|(o, &v)| *o += v);
                }
                if let Some(gb) = self.accum(grads, *beta) {
                    gb.iter_mut().zip(&sum_g).for_each(|(o, &v)| *o += v);
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let rows = labels.len();
                let classes = probs.len() / rows;
                let scale = g[0] / rows as f64;
                if let Some(gl) = self.accum(grads, *logits) {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let i = r * classes + c;
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gl[i] += scale * (probs[i] - onehot);
                        }
                    }
                }
            }
            Op::RowCosine {
                a,
                b,
                norms_a,
                norms_b,
            } => {
                let cos = node.value.data();
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (rows, cols) = ta.rows_cols();
                // d cos / d a = b / (|a||b|) - cos * a / |a|^2, and symmetrically for b.
                for (which, this, other, n_this, n_other) in [
                    (*a, ta, tb, norms_a, norms_b),
                    (*b, tb, ta, norms_b, norms_a),
                ] {
                    if let Some(gw) = self.accum(grads, which) {
                        for r in 0..rows {
                            if n_this[r] == 0.0 {
                                continue;
                            }
                            let (x, y) = (this.row(r), other.row(r));
                            let inv = 1.0 / (n_this[r] * n_other[r]);
                            let self_coef = cos[r] / (n_this[r] * n_this[r]);
                            for c in 0..cols {
                                gw[r * cols + c] += g[r] * (y[c] * inv - self_coef * x[c]);
                            }
                        }
                    }
                }
            }
            Op::SqDist { input, target } => {
                let x = self.value(*input).data();
                if let Some(gi) = self.accum(grads, *input) {
                    for ((o, &xv), &tv) in gi.iter_mut().zip(x).zip(target) {
                        *o += g[0] * 2.0 * (xv - tv);
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normalize(
    x: &[f64],
    rows: usize,
    cols: usize,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * cols];
    let mut xhat = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            xhat[i] = (x[i] - mean[c]) * inv_std[c];
            out[i] = gamma[c] * xhat[i] + beta[c];
        }
    }
    (out, xhat)
}
