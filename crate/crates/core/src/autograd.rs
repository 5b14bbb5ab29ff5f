//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations on 2-D matrices as they are evaluated and
//! replays them backwards to produce parameter gradients. Parameters live in a
//! [`ParamStore`] that the graph borrows; they are never copied into the tape.
//! Every value is a matrix; vectors are `1 x n` rows.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

const LN_EPS: f64 = 1e-6;

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names, which is a construction bug.
    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    /// Copy of the tensors whose names start with `prefix`.
    pub fn filtered(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, value) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(name.to_string(), value.clone());
        }
        out
    }

    /// Copies every tensor of `other` into `self`.
    pub fn absorb(&mut self, other: &ParamStore) {
        for (name, value) in other.iter() {
            self.insert(name.to_string(), value.clone());
        }
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LayerNorm(Var),
    Gelu(Var),
    Silu(Var),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Conv1dRows { x: Var, kernel: Var, bias: Var },
    /// Scalar loss whose gradient with respect to `input` was computed by the caller.
    Custom(Var, Mat),
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose values live in the store.
    value: Option<Mat>,
    /// Per-op cache for the backward pass (normalized activations, inverse std, ...).
    aux: Option<Mat>,
}

/// Gradients for every parameter touched by a backward pass.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Grads {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, other: &Grads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(src) = src {
                match dst {
                    Some(d) => *d += src,
                    None => *dst = Some(src.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Drops gradients of parameters for which `keep` returns false.
    pub fn retain(&mut self, params: &ParamStore, keep: impl Fn(&str) -> bool) {
        for (i, g) in self.grads.iter_mut().enumerate() {
            if !keep(params.name(ParamId(i))) {
                *g = None;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Tape of operations evaluated against a borrowed [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let th = inner.tanh();
    let sech2 = 1.0 - th * th;
    0.5 * (1.0 + th) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Mat, aux: Option<Mat>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Const, value, None)
    }

    pub fn param_by_id(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            aux: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Looks up a parameter by name. Panics if absent: model code and the
    /// parameter layout are built from the same config.
    pub fn param(&mut self, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param_by_id(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), out, None)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNT(a, b), out, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), out, None)
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let out = self.value(a) + &r.row(0);
        self.push(Op::AddRow(a, row), out, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), out, None)
    }

    /// Multiplies every row of `a` elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let out = self.value(a) * &r.row(0);
        self.push(Op::MulRow(a, row), out, None)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(Op::Scale(a, factor), out, None)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(Op::AddScalar(a), out, None)
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = x.dim();
        let mut out = Mat::zeros((n, m));
        let mut inv_std = Mat::zeros((n, 1));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[[i, 0]] = is;
            for (j, v) in row.iter().enumerate() {
                out[[i, j]] = (v - mean) * is;
            }
        }
        self.push(Op::LayerNorm(a), out, Some(inv_std))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), out, None)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(Op::Silu(a), out, None)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(Op::SoftmaxRows(a), out, None)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start), out, None)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows(a, start), out, None)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(Op::ConcatCols(parts.to_vec()), out, None)
    }

    /// Column means, as a `1 x m` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(Op::MeanRows(a), out, None)
    }

    /// Same-padded 1-D convolution applied independently to each row of `x`.
    ///
    /// `kernel` is `filters x width` (odd width), `bias` is `1 x filters`; the
    /// output row concatenates the filter responses: `n x (filters * len)`.
    pub fn conv1d_rows(&mut self, x: Var, kernel: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let bv = self.value(bias);
        let (n, len) = xv.dim();
        let (filters, width) = kv.dim();
        let half = (width / 2) as isize;
        let mut out = Mat::zeros((n, filters * len));
        for r in 0..n {
            for f in 0..filters {
                for i in 0..len {
                    let mut acc = bv[[0, f]];
                    for j in 0..width {
                        let src = i as isize + j as isize - half;
                        if src >= 0 && (src as usize) < len {
                            acc += kv[[f, j]] * xv[[r, src as usize]];
                        }
                    }
                    out[[r, f * len + i]] = acc;
                }
            }
        }
        self.push(Op::Conv1dRows { x, kernel, bias }, out, None)
    }

    /// Attaches a scalar loss computed outside the tape. `grad` is the
    /// derivative of `value` with respect to `input`.
    pub fn custom_loss(&mut self, input: Var, value: f64, grad: Mat) -> Var {
        debug_assert_eq!(grad.dim(), self.shape(input));
        self.push(Op::Custom(input, grad), Mat::from_elem((1, 1), value), None)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Mat) -> Var {
        let p = self.value(pred);
        let n = p.len() as f64;
        let diff = p - target;
        let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let grad = diff * (2.0 / n);
        self.custom_loss(pred, value, grad)
    }

    /// Softmax cross-entropy of a `1 x n_classes` logit row against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let l = self.value(logits);
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = l.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        let value = log_z - l[[0, label]];
        let mut grad = l.mapv(|v| (v - log_z).exp());
        grad[[0, label]] -= 1.0;
        self.custom_loss(logits, value, grad)
    }

    /// Weighted sum of scalar losses.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut acc = self.scale(terms[0].0, terms[0].1);
        for &(v, w) in &terms[1..] {
            let t = self.scale(v, w);
            acc = self.add(acc, t);
        }
        acc
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Back-propagates from a `1 x 1` node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Grads {
            grads: vec![None; self.params.len()],
        };

        fn acc(slot: &mut Option<Mat>, g: Mat) {
            match slot {
                Some(s) => *s += &g,
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => acc(&mut out.grads[id.0], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj[a.0], ga);
                    acc(&mut adj[b.0], gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut adj[a.0], ga);
                    acc(&mut adj[b.0], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj[a.0], g.clone());
                    acc(&mut adj[b.0], g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj[a.0], g);
                    acc(&mut adj[row.0], gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj[a.0], ga);
                    acc(&mut adj[b.0], gb);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let ga = &g * &r.row(0);
                    let gr = (&g * self.value(*a))
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    acc(&mut adj[a.0], ga);
                    acc(&mut adj[row.0], gr);
                }
                Op::Scale(a, f) => acc(&mut adj[a.0], g * *f),
                Op::AddScalar(a) => acc(&mut adj[a.0], g),
                Op::LayerNorm(a) => {
                    let y = node.value.as_ref().expect("value");
                    let inv_std = node.aux.as_ref().expect("aux");
                    let (n, m) = y.dim();
                    let mut gx = Mat::zeros((n, m));
                    for i in 0..n {
                        let gy = g.row(i);
                        let yr = y.row(i);
                        let mean_g = gy.sum() / m as f64;
                        let mean_gy = gy.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>()
                            / m as f64;
                        for j in 0..m {
                            gx[[i, j]] = inv_std[[i, 0]] * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    acc(&mut adj[a.0], gx);
                }
                Op::Gelu(a) => {
                    let mut gx = self.value(*a).mapv(gelu_grad);
                    gx *= &g;
                    acc(&mut adj[a.0], gx);
                }
                Op::Silu(a) => {
                    let mut gx = self.value(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    });
                    gx *= &g;
                    acc(&mut adj[a.0], gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("value");
                    let mut gx = Mat::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                        for j in 0..y.ncols() {
                            gx[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(&mut adj[a.0], gx);
                }
                Op::SliceCols(a, start) => {
                    let mut gx = Mat::zeros(self.shape(*a));
                    let len = g.ncols();
                    gx.slice_mut(s![.., *start..*start + len]).assign(&g);
                    acc(&mut adj[a.0], gx);
                }
                Op::SliceRows(a, start) => {
                    let mut gx = Mat::zeros(self.shape(*a));
                    let len = g.nrows();
                    gx.slice_mut(s![*start..*start + len, ..]).assign(&g);
                    acc(&mut adj[a.0], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut adj[p.0], g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::MeanRows(a) => {
                    let (n, m) = self.shape(*a);
                    let row = g.row(0).to_owned() / n as f64;
                    let gx = row.broadcast((n, m)).expect("broadcast").to_owned();
                    acc(&mut adj[a.0], gx);
                }
                Op::Conv1dRows { x, kernel, bias } => {
                    let xv = self.value(*x);
                    let kv = self.value(*kernel);
                    let (n, len) = xv.dim();
                    let (filters, width) = kv.dim();
                    let half = (width / 2) as isize;
                    let mut gx = Mat::zeros((n, len));
                    let mut gk = Mat::zeros((filters, width));
                    let mut gb = Mat::zeros((1, filters));
                    for r in 0..n {
                        for f in 0..filters {
                            for i in 0..len {
                                let go = g[[r, f * len + i]];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[[0, f]] += go;
                                for j in 0..width {
                                    let src = i as isize + j as isize - half;
                                    if src >= 0 && (src as usize) < len {
                                        gk[[f, j]] += go * xv[[r, src as usize]];
                                        gx[[r, src as usize]] += go * kv[[f, j]];
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut adj[x.0], gx);
                    acc(&mut adj[kernel.0], gk);
                    acc(&mut adj[bias.0], gb);
                }
                Op::Custom(a, grad) => {
                    let s = g[[0, 0]];
                    acc(&mut adj[a.0], grad * s);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of every scalar in every parameter.
    fn check(params: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let grads = {
            let mut g = Graph::new(params);
            let loss = f(&mut g);
            g.backward(loss)
        };
        let h = 1e-5;
        for id in params.ids().collect::<Vec<_>>() {
            let (r, c) = params.value(id).dim();
            for i in 0..r {
                for j in 0..c {
                    let orig = params.value(id)[[i, j]];
                    params.value_mut(id)[[i, j]] = orig + h;
                    let up = {
                        let mut g = Graph::new(params);
                        let l = f(&mut g);
                        g.scalar(l)
                    };
                    params.value_mut(id)[[i, j]] = orig - h;
                    let down = {
                        let mut g = Graph::new(params);
                        let l = f(&mut g);
                        g.scalar(l)
                    };
                    params.value_mut(id)[[i, j]] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads.get(id).map_or(0.0, |g| g[[i, j]]);
                    let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-5,
                        "{}[{i},{j}]: numeric {numeric} analytic {analytic}",
                        params.name(id)
                    );
                }
            }
        }
    }

    #[test]
    fn elementwise_and_matrix_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::new();
        p.insert("x", random(&mut rng, 3, 4));
        p.insert("w", random(&mut rng, 4, 5));
        p.insert("row", random(&mut rng, 1, 5));
        p.insert("k", random(&mut rng, 5, 5));
        check(&mut p, |g| {
            let x = g.param("x");
            let w = g.param("w");
            let row = g.param("row");
            let k = g.param("k");
            let h = g.matmul(x, w);
            let h = g.add_row(h, row);
            let h = g.layer_norm(h);
            let h = g.mul_row(h, row);
            let h = g.gelu(h);
            let a = g.matmul_nt(h, k);
            let a = g.softmax_rows(a);
            let h2 = g.matmul(a, k);
            let h2 = g.silu(h2);
            let m = g.mul(h2, h);
            let left = g.slice_cols(m, 0, 2);
            let right = g.slice_cols(m, 2, 3);
            let cat = g.concat_cols(&[right, left]);
            let top = g.slice_rows(cat, 1, 2);
            let pooled = g.mean_rows(top);
            let pooled = g.add_scalar(pooled, 0.5);
            let target = Mat::from_elem((1, 5), 0.3);
            g.mse(pooled, &target)
        });
    }

    #[test]
    fn conv_and_cross_entropy_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamStore::new();
        p.insert("x", random(&mut rng, 2, 9));
        p.insert("kernel", random(&mut rng, 2, 5));
        p.insert("bias", random(&mut rng, 1, 2));
        p.insert("w", random(&mut rng, 18, 3));
        check(&mut p, |g| {
            let x = g.param("x");
            let k = g.param("kernel");
            let b = g.param("bias");
            let w = g.param("w");
            let c = g.conv1d_rows(x, k, b);
            let c = g.gelu(c);
            let logits = g.matmul(c, w);
            let logits = g.mean_rows(logits);
            g.cross_entropy(logits, 1)
        });
    }

    #[test]
    fn conv_same_padding_matches_direct_sum() {
        let mut p = ParamStore::new();
        p.insert("x", Mat::from_shape_vec((1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        p.insert("k", Mat::from_shape_vec((1, 3), vec![1.0, 10.0, 100.0]).unwrap());
        p.insert("b", Mat::zeros((1, 1)));
        let mut g = Graph::new(&p);
        let (x, k, b) = (g.param("x"), g.param("k"), g.param("b"));
        let y = g.conv1d_rows(x, k, b);
        // out[i] = k0*x[i-1] + k1*x[i] + k2*x[i+1]
        assert_eq!(
            g.value(y).row(0).to_vec(),
            vec![210.0, 321.0, 432.0, 43.0]
        );
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut p = ParamStore::new();
        p.insert("a", Mat::from_elem((1, 1), 3.0));
        let mut g = Graph::new(&p);
        let a = g.param("a");
        let a2 = g.param("a");
        assert_eq!(a, a2);
        let sq = g.mul(a, a2);
        let grads = g.backward(sq);
        assert_eq!(grads.get(p.id("a").unwrap()).unwrap()[[0, 0]], 6.0);
    }
}
