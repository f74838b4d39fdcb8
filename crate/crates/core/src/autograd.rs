//! A small reverse-mode tape over [`Mat`] values.
//!
//! Every forward operation appends a node; nodes are created in topological
//! order, so backward is a single reverse sweep. Parameters enter the tape once
//! per graph: asking for the same [`ParamId`] twice returns the same node, which
//! makes weight sharing literal (gradients from every use accumulate in one place).

use std::collections::HashMap;

use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{Mat, COSINE_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    Relu(Var),
    Abs(Var),
    SqrtEps(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    RowSum(Var),
    SumAll(Var),
    Gather(Var, Vec<(usize, usize)>),
    Cosine(Var, Var),
    PairSqDist(Var),
    CrossEntropy(Var, Vec<usize>),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + r` with the `1×C` row `r` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!((1, av.cols), rv.shape(), "add_row expects a 1×C row");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r))
    }

    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!((1, av.cols), rv.shape(), "mul_row expects a 1×C row");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv.data) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, r))
    }

    /// Scales row `i` of `a` by `c[i]` where `c` is `R×1`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        assert_eq!((av.rows, 1), cv.shape(), "mul_col expects an R×1 column");
        let mut out = av.clone();
        for i in 0..out.rows {
            let s = cv.data[i];
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        self.push(out, Op::MulCol(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::Offset(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(out.rows);
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// `sqrt(a + eps)`, smooth at zero.
    pub fn sqrt_eps(&mut self, a: Var, eps: f64) -> Var {
        let out = self.value(a).map(|x| (x + eps).sqrt());
        self.push(out, Op::SqrtEps(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::vstack(&mats);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.data[i * total + off..i * total + off + m.cols].copy_from_slice(m.row(i));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice_cols out of range");
        let mut out = Mat::zeros(av.rows, len);
        for i in 0..av.rows {
            out.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Column means, `R×C → 1×C`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(1, av.cols);
        for i in 0..av.rows {
            for (o, x) in out.data.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let n = av.rows as f64;
        out.scale_assign(1.0 / n);
        self.push(out, Op::MeanRows(a))
    }

    /// Row sums, `R×C → R×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|i| av.row(i).iter().sum()).collect();
        let out = Mat::from_vec(av.rows, 1, data);
        self.push(out, Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Mat::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).data.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Picks the listed `(row, col)` entries into an `n×1` column.
    pub fn gather(&mut self, a: Var, idx: Vec<(usize, usize)>) -> Var {
        let av = self.value(a);
        let data = idx.iter().map(|&(r, c)| av.get(r, c)).collect();
        let out = Mat::from_vec(idx.len(), 1, data);
        self.push(out, Op::Gather(a, idx))
    }

    /// Row-wise cosine similarity, `R×1`. Rows with norm below
    /// [`COSINE_EPS`] give 0 with zero gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "cosine_rows shape mismatch");
        let data = (0..av.rows).map(|i| crate::tensor::cosine(av.row(i), bv.row(i))).collect();
        let out = Mat::from_vec(av.rows, 1, data);
        self.push(out, Op::Cosine(a, b))
    }

    /// Pairwise squared Euclidean distances between rows, `R×R`.
    pub fn pair_sq_dist(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let r = av.rows;
        let mut out = Mat::zeros(r, r);
        for i in 0..r {
            for j in 0..r {
                let d: f64 = av.row(i).iter().zip(av.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                out.set(i, j, d);
            }
        }
        self.push(out, Op::PairSqDist(a))
    }

    /// Mean over rows of `-log softmax(row)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, labels.len(), "cross_entropy label count mismatch");
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            total += log_sum_exp(row) - row[y];
        }
        let out = Mat::scalar(total / labels.len() as f64);
        self.push(out, Op::CrossEntropy(logits, labels))
    }

    /// Mean binary cross-entropy of `sigmoid(z)` against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, z: Var, targets: Vec<f64>) -> Var {
        let zv = self.value(z);
        assert_eq!(zv.data.len(), targets.len(), "bce target count mismatch");
        let total: f64 = zv.data.iter().zip(&targets).map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()).sum();
        let out = Mat::scalar(total / targets.len() as f64);
        self.push(out, Op::BceWithLogits(z, targets))
    }

    /// Reverse sweep seeded with `d(output)/d(var)` for each `(var, seed)`.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut hi = 0;
        for (v, s) in seeds {
            assert_eq!(self.value(*v).shape(), s.shape(), "seed shape mismatch");
            accumulate(&mut grads[v.0], s);
            hi = hi.max(v.0 + 1);
        }
        for idx in (0..hi).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    /// Backward from a scalar node with seed 1.
    pub fn backward_scalar(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward_scalar needs a 1×1 node");
        self.backward(&[(loss, Mat::scalar(1.0))])
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(&mut grads[a.0], &g.matmul_t(bv));
                accumulate(&mut grads[b.0], &av.t_matmul(g));
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g);
                accumulate(&mut grads[b.0], g);
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g);
                accumulate(&mut grads[b.0], &g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(&mut grads[a.0], &g.zip_map(bv, |x, y| x * y));
                accumulate(&mut grads[b.0], &g.zip_map(av, |x, y| x * y));
            }
            Op::AddRow(a, r) => {
                accumulate(&mut grads[a.0], g);
                accumulate(&mut grads[r.0], &column_sums(g));
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                let mut ga = g.clone();
                let mut gr = Mat::zeros(1, rv.cols);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        ga.data[i * g.cols + j] *= rv.data[j];
                        gr.data[j] += g.get(i, j) * av.get(i, j);
                    }
                }
                accumulate(&mut grads[a.0], &ga);
                accumulate(&mut grads[r.0], &gr);
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                let mut ga = g.clone();
                let mut gc = Mat::zeros(cv.rows, 1);
                for i in 0..g.rows {
                    let s = cv.data[i];
                    ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    gc.data[i] = crate::tensor::dot(g.row(i), av.row(i));
                }
                accumulate(&mut grads[a.0], &ga);
                accumulate(&mut grads[c.0], &gc);
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], &g.map(|x| x * s)),
            Op::Offset(a) => accumulate(&mut grads[a.0], g),
            Op::Transpose(a) => accumulate(&mut grads[a.0], &g.transpose()),
            Op::SoftmaxRows(a) => {
                let mut ga = Mat::zeros(g.rows, g.cols);
                for i in 0..g.rows {
                    let (y, gr) = (out.row(i), g.row(i));
                    let s = crate::tensor::dot(y, gr);
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = y[j] * (gr[j] - s);
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Mat::zeros(g.rows, g.cols);
                for i in 0..g.rows {
                    let (y, gr) = (out.row(i), g.row(i));
                    let s: f64 = gr.iter().sum();
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = gr[j] - y[j].exp() * s;
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let mut ga = Mat::zeros(g.rows, g.cols);
                let n = g.cols as f64;
                for i in 0..g.rows {
                    let (xh, gr) = (out.row(i), g.row(i));
                    let mg = gr.iter().sum::<f64>() / n;
                    let mgx = crate::tensor::dot(gr, xh) / n;
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = inv_std[i] * (gr[j] - mg - xh[j] * mgx);
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let ga = g.zip_map(av, |gi, x| {
                    let inner = GELU_C * (x + 0.044715 * x * x * x);
                    let t = inner.tanh();
                    let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    gi * d
                });
                accumulate(&mut grads[a.0], &ga);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                accumulate(&mut grads[a.0], &g.zip_map(av, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                accumulate(&mut grads[a.0], &g.zip_map(av, |gi, x| gi * sign(x)));
            }
            Op::SqrtEps(a) => {
                accumulate(&mut grads[a.0], &g.zip_map(out, |gi, y| gi / (2.0 * y)));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.value(*p).rows;
                    accumulate(&mut grads[p.0], &g.slice_rows(off, r));
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols;
                    let mut gp = Mat::zeros(g.rows, c);
                    for i in 0..g.rows {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                    }
                    accumulate(&mut grads[p.0], &gp);
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                ga.data[start * av.cols..(start + g.rows) * av.cols].copy_from_slice(&g.data);
                accumulate(&mut grads[a.0], &ga);
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for i in 0..av.rows {
                    ga.row_mut(i)[*start..start + g.cols].copy_from_slice(g.row(i));
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let n = av.rows as f64;
                let mut ga = Mat::zeros(av.rows, av.cols);
                for i in 0..av.rows {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(&g.data) {
                        *o = x / n;
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for i in 0..av.rows {
                    let s = g.data[i];
                    ga.row_mut(i).iter_mut().for_each(|x| *x = s);
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                accumulate(&mut grads[a.0], &Mat::filled(av.rows, av.cols, g.item()));
            }
            Op::Gather(a, idx) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for (k, &(r, c)) in idx.iter().enumerate() {
                    ga.data[r * av.cols + c] += g.data[k];
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Mat::zeros(av.rows, av.cols);
                let mut gb = Mat::zeros(bv.rows, bv.cols);
                for i in 0..av.rows {
                    let (x, y) = (av.row(i), bv.row(i));
                    let (nx, ny) = (crate::tensor::norm(x), crate::tensor::norm(y));
                    if nx < COSINE_EPS || ny < COSINE_EPS {
                        continue;
                    }
                    let c = crate::tensor::dot(x, y) / (nx * ny);
                    let gi = g.data[i];
                    for j in 0..x.len() {
                        ga.data[i * av.cols + j] = gi * (y[j] / (nx * ny) - c * x[j] / (nx * nx));
                        gb.data[i * bv.cols + j] = gi * (x[j] / (nx * ny) - c * y[j] / (ny * ny));
                    }
                }
                accumulate(&mut grads[a.0], &ga);
                accumulate(&mut grads[b.0], &gb);
            }
            Op::PairSqDist(a) => {
                let av = self.value(*a);
                let r = av.rows;
                let mut ga = Mat::zeros(av.rows, av.cols);
                for i in 0..r {
                    for j in 0..r {
                        let w = 2.0 * (g.get(i, j) + g.get(j, i));
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..av.cols {
                            ga.data[i * av.cols + k] += w * (av.get(i, k) - av.get(j, k));
                        }
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::CrossEntropy(logits, labels) => {
                let lv = self.value(*logits);
                let scale = g.item() / labels.len() as f64;
                let mut gl = lv.clone();
                for (i, &y) in labels.iter().enumerate() {
                    let row = gl.row_mut(i);
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    row.iter_mut().for_each(|x| *x *= scale);
                }
                accumulate(&mut grads[logits.0], &gl);
            }
            Op::BceWithLogits(z, targets) => {
                let zv = self.value(*z);
                let scale = g.item() / targets.len() as f64;
                let data = zv.data.iter().zip(targets).map(|(&x, &t)| scale * (sigmoid(x) - t)).collect();
                accumulate(&mut grads[z.0], &Mat::from_vec(zv.rows, zv.cols, data));
            }
        }
    }

    /// Adds this graph's parameter gradients into `buf`.
    pub fn accumulate_params(&self, grads: &Grads, buf: &mut GradBuffer) {
        let mut entries: Vec<(&ParamId, &Var)> = self.param_nodes.iter().collect();
        entries.sort_by_key(|(id, _)| **id);
        for (&id, &v) in entries {
            if let Some(gm) = grads.get(v) {
                buf.add(id, gm);
            }
        }
    }
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = g.shape(v);
            Mat::zeros(r, c)
        })
    }
}

fn accumulate(slot: &mut Option<Mat>, g: &Mat) {
    match slot {
        Some(existing) => existing.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

fn column_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols);
    for i in 0..g.rows {
        for (o, x) in out.data.iter_mut().zip(g.row(i)) {
            *o += x;
        }
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}
