#![allow(dead_code)]

use std::path::PathBuf;

use eegdm::autograd::{Grads, ParamId, ParamStore};
use eegdm::config::{DiffusionConfig, RunConfig};
use eegdm::dit::DitConfig;
use eegdm::encoder::EncoderConfig;
use eegdm::model::Eegdm;
use eegdm::pca::PcaBasis;
use eegdm::rng::Rng;
use rand::Rng as _;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn smoke_config() -> RunConfig {
    RunConfig::load(manifest_dir().join("configs/smoke.toml")).expect("committed smoke config")
}

/// The smoke config with PCA replaced by raw windows (`k = ω`).
pub fn no_pca(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.pca.enabled = false;
    c.pca.components = c.pca.window;
    c
}

/// Two channels, 32 timestamps, 8-wide windows, width-8 transformer.
pub fn tiny_model(lambda_vlb: f64, seed: u64) -> Eegdm {
    let enc = EncoderConfig {
        patch_window: 8,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2.0,
        max_tokens: 8,
        conv_filters: 2,
        conv_kernel: 5,
    };
    let dit = DitConfig {
        token_dim: 8,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        time_features: 8,
        residual_conditioning: true,
    };
    let diffusion = DiffusionConfig {
        t_max: 50,
        lambda_vlb,
        ..Default::default()
    };
    Eegdm::new(enc, dit, diffusion, PcaBasis::identity(8), 2, 32, seed).unwrap()
}

/// `n` random `(parameter, flat index)` pairs among parameters whose name
/// starts with `prefix`: a parameter is drawn uniformly, then an entry.
pub fn pick_entries(params: &ParamStore, prefix: &str, n: usize, rng: &mut Rng) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = params
        .ids()
        .filter(|&id| params.name(id).starts_with(prefix))
        .collect();
    (0..n)
        .map(|_| {
            let id = ids[rng.gen_range(0..ids.len())];
            (id, rng.gen_range(0..params.value(id).len()))
        })
        .collect()
}

pub struct GradCheck {
    pub name: String,
    pub backprop: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Central differences of `value` against `grads` at the picked entries.
/// Relative error is `|fd − bp| / max(|fd|, |bp|, floor)`.
pub fn grad_check(
    params: &ParamStore,
    grads: &Grads,
    picks: &[(ParamId, usize)],
    h: f64,
    floor: f64,
    value: impl Fn(&ParamStore) -> f64,
) -> Vec<GradCheck> {
    picks
        .iter()
        .map(|&(id, idx)| {
            let mut p = params.clone();
            let cols = p.value(id).ncols();
            let at = [idx / cols, idx % cols];
            let orig = p.value(id)[at];
            p.value_mut(id)[at] = orig + h;
            let up = value(&p);
            p.value_mut(id)[at] = orig - h;
            let down = value(&p);
            let numeric = (up - down) / (2.0 * h);
            let backprop = grads.get(id).map_or(0.0, |g| g[at]);
            let rel_err = (numeric - backprop).abs() / numeric.abs().max(backprop.abs()).max(floor);
            GradCheck {
                name: format!("{}[{idx}]", params.name(id)),
                backprop,
                numeric,
                rel_err,
            }
        })
        .collect()
}

/// Linear-schedule `ᾱ_t`, recomputed from scratch.
pub fn alpha_bar_oracle(t: usize, t_max: usize, b0: f64, b1: f64) -> f64 {
    (1..=t)
        .map(|i| 1.0 - (b0 + (b1 - b0) * (i - 1) as f64 / (t_max - 1) as f64))
        .product()
}

/// KL(N(μ₁, σ₁²) ‖ N(μ₂, σ₂²)) written with standard deviations.
pub fn kl_oracle(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let (s1, s2) = (var1.sqrt(), var2.sqrt());
    (s2 / s1).ln() + (s1 * s1 + (mu1 - mu2) * (mu1 - mu2)) / (2.0 * s2 * s2) - 0.5
}

/// Mean power of `x` in `[lo, hi)` Hz via a direct DFT.
pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for k in 1..n / 2 {
        let f = k as f64 * fs / n as f64;
        if f < lo || f >= hi {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in x.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        total += re * re + im * im;
    }
    total
}
