//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! A [`Graph`] borrows parameter tensors for its lifetime and records every
//! operation applied to them. [`Graph::backward`] walks the tape once in
//! reverse and returns gradients keyed by parameter slot. Embedding lookups
//! produce row-sparse gradients so large tables are never densified per
//! sample.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

pub type Mat = Array2<f64>;

/// Probability floor applied before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Gather {
        param: usize,
        ids: Vec<usize>,
    },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Array1<f64>,
    },
    Rows(Var, usize, usize),
    Cols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    NegLogPick(Var, usize),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    requires_grad: bool,
}

struct ParamUse<'a> {
    tensor: &'a Mat,
    leaf: Option<Var>,
}

/// Maps parameter tensors (by address) to stable slot numbers.
pub type SlotMap = HashMap<usize, usize>;

pub fn tensor_key(t: &Mat) -> usize {
    t as *const Mat as usize
}

/// Gradient for one parameter tensor.
#[derive(Debug, Clone)]
pub enum ParamGrad {
    Dense(Mat),
    /// (row index, row gradient) entries; rows may repeat.
    Rows(Vec<(usize, Array1<f64>)>),
}

/// Gradients of one backward pass, keyed by slot.
#[derive(Debug, Clone, Default)]
pub struct SparseGrads {
    pub entries: Vec<(usize, ParamGrad)>,
}

impl SparseGrads {
    /// Adds `scale` times these gradients into dense buffers indexed by slot.
    pub fn add_into(&self, buffers: &mut [Mat], scale: f64) {
        for (slot, g) in &self.entries {
            let buf = &mut buffers[*slot];
            match g {
                ParamGrad::Dense(m) => buf.scaled_add(scale, m),
                ParamGrad::Rows(rows) => {
                    for (r, v) in rows {
                        buf.row_mut(*r).scaled_add(scale, v);
                    }
                }
            }
        }
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<ParamUse<'a>>,
    param_lookup: HashMap<usize, usize>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            param_lookup: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn param_use(&mut self, tensor: &'a Mat) -> usize {
        let key = tensor_key(tensor);
        if let Some(&i) = self.param_lookup.get(&key) {
            return i;
        }
        self.params.push(ParamUse { tensor, leaf: None });
        self.param_lookup.insert(key, self.params.len() - 1);
        self.params.len() - 1
    }

    /// Registers a trainable tensor; repeated calls return the same node.
    pub fn param(&mut self, tensor: &'a Mat) -> Var {
        let i = self.param_use(tensor);
        if let Some(v) = self.params[i].leaf {
            return v;
        }
        let v = self.push(Cow::Borrowed(tensor), Op::Leaf, true);
        self.params[i].leaf = Some(v);
        v
    }

    /// A tensor that takes part in the computation but receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Mat) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: &'a Mat, ids: &[usize]) -> Var {
        let p = self.param_use(table);
        let d = table.ncols();
        let mut out = Mat::zeros((ids.len(), d));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&table.row(id));
        }
        self.push(
            Cow::Owned(out),
            Op::Gather {
                param: p,
                ids: ids.to_vec(),
            },
            true,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(v), Op::Add(a, b), rg)
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(Cow::Owned(v), Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Scale(a, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, m: Mat) -> Var {
        let v = self.value(a) * &m;
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::MulConst(a, m), rg)
    }

    /// Inverted dropout. A no-op when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let shape = self.value(a).raw_dim();
        let mask = Mat::from_shape_simple_fn(shape, || if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.mul_const(a, mask)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Tanh(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Softmax(a), rg)
    }

    /// Row-wise layer normalization with 1×n gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * *is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Rows(a, start, len), rg)
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(Cow::Owned(v), Op::Cols(a, start, len), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("matching column counts");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(v), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("matching row counts");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// `-ln(max(p[0, k], 1e-12))` for a 1×n probability row.
    pub fn neg_log_pick(&mut self, probs: Var, k: usize) -> Var {
        let p = self.value(probs)[[0, k]];
        let v = Mat::from_elem((1, 1), -p.max(PROB_FLOOR).ln());
        let rg = self.rg(probs);
        self.push(Cow::Owned(v), Op::NegLogPick(probs, k), rg)
    }

    /// Sum of 1×1 nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Reverse pass from a 1×1 `loss`. Only parameters listed in `slots`
    /// are reported.
    pub fn backward(&self, loss: Var, slots: &SlotMap) -> SparseGrads {
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones(self.value(loss).raw_dim()));
        let mut leaf_grads: HashMap<usize, Mat> = HashMap::new();
        let mut row_grads: HashMap<usize, Vec<(usize, Array1<f64>)>> = HashMap::new();
        let leaf_param: HashMap<usize, usize> = self
            .params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.leaf.map(|v| (v.0, i)))
            .collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |v: Var, delta: Mat| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(&p) = leaf_param.get(&i) {
                        leaf_grads.insert(p, g);
                    }
                }
                Op::Gather { param, ids } => {
                    let entry = row_grads.entry(*param).or_default();
                    for (r, &id) in ids.iter().enumerate() {
                        entry.push((id, g.row(r).to_owned()));
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        acc(*a, g.dot(&bv.t()));
                    }
                    if self.rg(*b) {
                        acc(*b, av.t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        acc(*a, g.dot(bv));
                    }
                    if self.rg(*b) {
                        acc(*b, g.t().dot(av));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Scale(a, s) => acc(*a, g * *s),
                Op::MulConst(a, m) => acc(*a, g * m),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = x.mapv(|x| {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
                    });
                    d *= &g;
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, g * &y.mapv(|y| 1.0 - y * y));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = &g * &**y;
                    let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, (g - &dots) * &**y);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.rg(*gamma) {
                        acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*beta) {
                        acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*x) {
                        let gxhat = &g * self.value(*gamma);
                        let n = xhat.ncols() as f64;
                        let mut gx = Mat::zeros(xhat.raw_dim());
                        for r in 0..xhat.nrows() {
                            let gh = gxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_g = gh.sum();
                            let sum_gx = gh.dot(&xh);
                            let is = inv_std[r];
                            for c in 0..xhat.ncols() {
                                gx[[r, c]] = is / n * (n * gh[c] - sum_g - xh[c] * sum_gx);
                            }
                        }
                        acc(*x, gx);
                    }
                }
                Op::Rows(a, start, len) => {
                    let mut d = Mat::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    acc(*a, d);
                }
                Op::Cols(a, start, len) => {
                    let mut d = Mat::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(p, g.slice(s![off..off + n, ..]).to_owned());
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        acc(p, g.slice(s![.., off..off + n]).to_owned());
                        off += n;
                    }
                }
                Op::NegLogPick(a, k) => {
                    let p = self.value(*a)[[0, *k]];
                    let mut d = Mat::zeros(self.value(*a).raw_dim());
                    if p >= PROB_FLOOR {
                        d[[0, *k]] = -g[[0, 0]] / p;
                    }
                    acc(*a, d);
                }
            }
        }

        let mut entries = Vec::new();
        for (i, pu) in self.params.iter().enumerate() {
            let Some(&slot) = slots.get(&tensor_key(pu.tensor)) else {
                continue;
            };
            if let Some(g) = leaf_grads.remove(&i) {
                entries.push((slot, ParamGrad::Dense(g)));
            }
            if let Some(rows) = row_grads.remove(&i) {
                entries.push((slot, ParamGrad::Rows(rows)));
            }
        }
        SparseGrads { entries }
    }
}

pub fn softmax_rows(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
