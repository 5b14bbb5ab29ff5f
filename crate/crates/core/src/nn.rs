//! Transformer building blocks expressed on the autograd tape.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, Mat, ParamStore, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    /// Normal with standard deviation `1/sqrt(fan_in)`.
    LeCun,
    Normal(u32),
}

pub fn init_matrix(rows: usize, cols: usize, init: Init, rng: &mut Rng) -> Mat {
    match init {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::LeCun => {
            let sd = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| sd * rng.sample::<f64, _>(StandardNormal))
        }
        Init::Normal(milli) => {
            let sd = f64::from(milli) / 1000.0;
            Array2::from_shape_fn((rows, cols), |_| sd * rng.sample::<f64, _>(StandardNormal))
        }
    }
}

/// Registers `{prefix}.w` (`input x output`) and a zero bias `{prefix}.b`.
pub fn add_linear(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    init: Init,
    rng: &mut Rng,
) {
    store.insert(format!("{prefix}.w"), init_matrix(input, output, init, rng));
    store.insert(format!("{prefix}.b"), Array2::zeros((1, output)));
}

pub fn add_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}.g"), Array2::ones((1, dim)));
    store.insert(format!("{prefix}.b"), Array2::zeros((1, dim)));
}

pub fn linear(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let w = g.param(&format!("{prefix}.w"));
    let b = g.param(&format!("{prefix}.b"));
    let h = g.matmul(x, w);
    g.add_row(h, b)
}

pub fn layer_norm(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let gain = g.param(&format!("{prefix}.g"));
    let bias = g.param(&format!("{prefix}.b"));
    let h = g.layer_norm(x);
    let h = g.mul_row(h, gain);
    g.add_row(h, bias)
}

/// Registers the parameters of [`self_attention`].
pub fn add_attention(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) {
    add_linear(store, &format!("{prefix}.qkv"), dim, 3 * dim, Init::LeCun, rng);
    add_linear(store, &format!("{prefix}.proj"), dim, dim, Init::LeCun, rng);
}

/// Multi-head scaled dot-product self-attention over the rows of `x`.
pub fn self_attention(g: &mut Graph, x: Var, prefix: &str, heads: usize) -> Var {
    let dim = g.shape(x).1;
    let head_dim = dim / heads;
    let qkv = linear(g, x, &format!("{prefix}.qkv"));
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice_cols(qkv, h * head_dim, head_dim);
        let k = g.slice_cols(qkv, dim + h * head_dim, head_dim);
        let v = g.slice_cols(qkv, 2 * dim + h * head_dim, head_dim);
        let scores = g.matmul_nt(q, k);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        outs.push(g.matmul(attn, v));
    }
    let merged = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    };
    linear(g, merged, &format!("{prefix}.proj"))
}

pub fn add_mlp(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize, rng: &mut Rng) {
    add_linear(store, &format!("{prefix}.fc1"), dim, hidden, Init::LeCun, rng);
    add_linear(store, &format!("{prefix}.fc2"), hidden, dim, Init::LeCun, rng);
}

pub fn mlp(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let h = linear(g, x, &format!("{prefix}.fc1"));
    let h = g.gelu(h);
    linear(g, h, &format!("{prefix}.fc2"))
}

/// 1-D sine-cosine embedding of `positions` into `dim` features
/// (`dim` even): `[sin(p·ω_i), cos(p·ω_i)]` with `ω_i = 10000^(-i/(dim/2))`.
pub fn sincos_1d(positions: &[f64], dim: usize) -> Mat {
    let half = dim / 2;
    Array2::from_shape_fn((positions.len(), dim), |(r, c)| {
        let i = c % half;
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = positions[r] * freq;
        if c < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Deterministically perturbs every parameter, e.g. to move a zero-initialized
/// model away from the identity before gradient checks.
pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        store
            .value_mut(id)
            .mapv_inplace(|v| v + scale * rng.sample::<f64, _>(StandardNormal));
    }
}
