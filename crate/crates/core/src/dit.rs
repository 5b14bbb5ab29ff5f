//! Conditional diffusion transformer over latent blocks.
//!
//! One token per `(channel, window)` position embeds that position's `k`
//! latent coefficients. Fixed 2-D sine-cosine positional embeddings are added
//! (half the features encode the channel, half the window). Every block is
//! modulated by adaLN-Zero parameters regressed from `e + t_embed`:
//!
//! ```text
//! x ← x + α₁ ⊙ (Attn((1+γ₁) ⊙ LN(x) + β₁) + R₁ c)
//! x ← x + α₂ ⊙ (MLP ((1+γ₂) ⊙ LN(x) + β₂) + R₂ c)
//! ```
//!
//! where `R c` is the optional residual-stream conditioning term. All
//! modulation layers and both decoder heads start at zero, so a fresh model
//! is the identity on its token stream and predicts `ε = 0`, `v = 0`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Init};
use crate::pca::LatentBlock;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DitConfig {
    /// Token width `d`; must equal the encoder's `embed_dim`.
    pub token_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Width of the sinusoidal timestep features.
    pub time_features: usize,
    /// Adds a projection of the conditioning vector into each residual branch.
    pub residual_conditioning: bool,
}

impl Default for DitConfig {
    fn default() -> Self {
        DitConfig {
            token_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
            time_features: 64,
            residual_conditioning: true,
        }
    }
}

impl DitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.heads == 0 || self.token_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dit.token_dim {} must be a positive multiple of heads {}",
                self.token_dim, self.heads
            )));
        }
        if self.token_dim % 4 != 0 {
            return Err(Error::Config(
                "dit.token_dim must be divisible by 4 for 2-D sine-cosine positions".into(),
            ));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 {
            return Err(Error::Config("dit.time_features must be even and >= 2".into()));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::Config("dit.mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        ((self.token_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Latent geometry `(C, n_windows, k)` the denoiser was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGeometry {
    pub channels: usize,
    pub n_windows: usize,
    pub k: usize,
}

impl LatentGeometry {
    pub fn tokens(&self) -> usize {
        self.channels * self.n_windows
    }
}

/// Noise and variance-interpolation predictions, `tokens x k` each.
#[derive(Debug, Clone, Copy)]
pub struct DitOutput {
    pub eps: Var,
    pub v: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dit {
    pub config: DitConfig,
    pub geometry: LatentGeometry,
    pub t_max: usize,
    pub prefix: String,
    positions: Mat,
}

/// Sinusoidal timestep features `[cos(t·f_i), sin(t·f_i)]`,
/// `f_i = 10000^(-i/half)`.
pub fn timestep_features(t: usize, dim: usize) -> Mat {
    let half = dim / 2;
    Array2::from_shape_fn((1, dim), |(_, c)| {
        let i = c % half;
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        if c < half {
            arg.cos()
        } else {
            arg.sin()
        }
    })
}

/// 2-D sine-cosine table for a channel-major `(channel, window)` grid.
pub fn positional_table(channels: usize, n_windows: usize, dim: usize) -> Mat {
    let ch: Vec<f64> = (0..channels)
        .flat_map(|c| std::iter::repeat(c as f64).take(n_windows))
        .collect();
    let win: Vec<f64> = (0..channels)
        .flat_map(|_| (0..n_windows).map(|w| w as f64))
        .collect();
    let a = nn::sincos_1d(&ch, dim / 2);
    let b = nn::sincos_1d(&win, dim / 2);
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("same rows")
}

impl Dit {
    pub fn new(config: DitConfig, geometry: LatentGeometry, t_max: usize) -> Self {
        let positions = positional_table(geometry.channels, geometry.n_windows, config.token_dim);
        Dit {
            config,
            geometry,
            t_max,
            prefix: "dit".into(),
            positions,
        }
    }

    fn p(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) {
        let c = &self.config;
        let d = c.token_dim;
        nn::add_linear(store, &self.p("tok"), self.geometry.k, d, Init::LeCun, rng);
        nn::add_linear(store, &self.p("time.fc1"), c.time_features, d, Init::LeCun, rng);
        nn::add_linear(store, &self.p("time.fc2"), d, d, Init::LeCun, rng);
        store.insert(self.p("null"), nn::init_matrix(1, d, Init::Normal(20), rng));
        for i in 0..c.depth {
            let b = self.p(&format!("blocks.{i}"));
            nn::add_linear(store, &format!("{b}.ada"), d, 6 * d, Init::Zeros, rng);
            nn::add_attention(store, &format!("{b}.attn"), d, rng);
            nn::add_mlp(store, &format!("{b}.mlp"), d, c.hidden(), rng);
            if c.residual_conditioning {
                nn::add_linear(store, &format!("{b}.res1"), d, d, Init::LeCun, rng);
                nn::add_linear(store, &format!("{b}.res2"), d, d, Init::LeCun, rng);
            }
        }
        nn::add_linear(store, &self.p("final.ada"), d, 2 * d, Init::Zeros, rng);
        nn::add_linear(store, &self.p("eps"), d, self.geometry.k, Init::Zeros, rng);
        nn::add_linear(store, &self.p("var"), d, self.geometry.k, Init::Zeros, rng);
    }

    /// `e + MLP(sinusoid(t))`, with the learned null embedding when `e` is `None`.
    pub fn condition(&self, g: &mut Graph, e: Option<Var>, t: usize) -> Result<Var> {
        if t == 0 || t > self.t_max {
            return Err(Error::TimestepOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        let feats = g.constant(timestep_features(t, self.config.time_features));
        let h = nn::linear(g, feats, &self.p("time.fc1"));
        let h = g.silu(h);
        let t_embed = nn::linear(g, h, &self.p("time.fc2"));
        let e = match e {
            Some(e) => {
                if g.shape(e) != (1, self.config.token_dim) {
                    return Err(Error::ShapeMismatch(format!(
                        "conditioning vector {:?} != (1, {})",
                        g.shape(e),
                        self.config.token_dim
                    )));
                }
                e
            }
            None => g.param(&self.p("null")),
        };
        Ok(g.add(e, t_embed))
    }

    fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
        let h = g.layer_norm(x);
        let one_plus = g.add_scalar(scale, 1.0);
        let h = g.mul_row(h, one_plus);
        g.add_row(h, shift)
    }

    /// The stack of adaLN-Zero blocks applied to a token stream.
    pub fn blocks(&self, g: &mut Graph, tokens: Var, cond: Var) -> Var {
        let d = self.config.token_dim;
        let c_act = g.silu(cond);
        let mut x = tokens;
        for i in 0..self.config.depth {
            let b = self.p(&format!("blocks.{i}"));
            let m = nn::linear(g, c_act, &format!("{b}.ada"));
            let chunk = |g: &mut Graph, j: usize| g.slice_cols(m, j * d, d);
            let (shift1, scale1, gate1) = (chunk(g, 0), chunk(g, 1), chunk(g, 2));
            let (shift2, scale2, gate2) = (chunk(g, 3), chunk(g, 4), chunk(g, 5));

            let h = Self::modulate(g, x, shift1, scale1);
            let mut h = nn::self_attention(g, h, &format!("{b}.attn"), self.config.heads);
            if self.config.residual_conditioning {
                let r = nn::linear(g, cond, &format!("{b}.res1"));
                h = g.add_row(h, r);
            }
            let h = g.mul_row(h, gate1);
            x = g.add(x, h);

            let h = Self::modulate(g, x, shift2, scale2);
            let mut h = nn::mlp(g, h, &format!("{b}.mlp"));
            if self.config.residual_conditioning {
                let r = nn::linear(g, cond, &format!("{b}.res2"));
                h = g.add_row(h, r);
            }
            let h = g.mul_row(h, gate2);
            x = g.add(x, h);
        }
        x
    }

    /// Linear patch embedding plus positional table.
    pub fn embed(&self, g: &mut Graph, z_t: &Mat) -> Result<Var> {
        let expected = (self.geometry.tokens(), self.geometry.k);
        if z_t.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "latent tokens {:?} != {:?}",
                z_t.dim(),
                expected
            )));
        }
        let z = g.constant(z_t.clone());
        let h = nn::linear(g, z, &self.p("tok"));
        let pos = g.constant(self.positions.clone());
        Ok(g.add(h, pos))
    }

    /// Predicts noise and variance-interpolation logits for tokenized `z_t`.
    pub fn forward(&self, g: &mut Graph, z_t: &Mat, cond: Var) -> Result<DitOutput> {
        let d = self.config.token_dim;
        let x = self.embed(g, z_t)?;
        let x = self.blocks(g, x, cond);
        let c_act = g.silu(cond);
        let m = nn::linear(g, c_act, &self.p("final.ada"));
        let shift = g.slice_cols(m, 0, d);
        let scale = g.slice_cols(m, d, d);
        let h = Self::modulate(g, x, shift, scale);
        let eps = nn::linear(g, h, &self.p("eps"));
        let v = nn::linear(g, h, &self.p("var"));
        Ok(DitOutput { eps, v })
    }

    /// Inference-mode denoising of a latent block.
    pub fn denoise(
        &self,
        params: &ParamStore,
        z_t: &LatentBlock,
        e: Option<&ndarray::Array1<f64>>,
        t: usize,
    ) -> Result<(LatentBlock, LatentBlock)> {
        let (c, w, k) = z_t.geometry();
        if (c, w, k) != (self.geometry.channels, self.geometry.n_windows, self.geometry.k) {
            return Err(Error::ShapeMismatch(format!(
                "latent geometry {:?} != {:?}",
                (c, w, k),
                self.geometry
            )));
        }
        let mut g = Graph::new(params);
        let e = e.map(|e| g.constant(e.clone().insert_axis(ndarray::Axis(0))));
        let cond = self.condition(&mut g, e, t)?;
        let out = self.forward(&mut g, &z_t.to_tokens(), cond)?;
        Ok((
            LatentBlock::from_tokens(g.value(out.eps).clone(), c, w)?,
            LatentBlock::from_tokens(g.value(out.v).clone(), c, w)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn small() -> Dit {
        Dit::new(
            DitConfig {
                token_dim: 8,
                depth: 2,
                heads: 2,
                mlp_ratio: 2.0,
                time_features: 8,
                residual_conditioning: true,
            },
            LatentGeometry {
                channels: 2,
                n_windows: 3,
                k: 4,
            },
            50,
        )
    }

    fn random(r: &mut Rng, rows: usize, cols: usize) -> Mat {
        Array2::from_shape_fn((rows, cols), |_| r.gen_range(-2.0..2.0))
    }

    #[test]
    fn fresh_model_is_identity_and_predicts_zero() {
        let dit = small();
        let mut p = ParamStore::new();
        let mut r = rng::seeded(0);
        dit.init_params(&mut p, &mut r);
        let tokens = random(&mut r, 6, 8);
        let z = random(&mut r, 6, 4);
        let e = random(&mut r, 1, 8);
        let mut g = Graph::new(&p);
        let x = g.constant(tokens.clone());
        let ev = g.constant(e);
        let cond = dit.condition(&mut g, Some(ev), 7).unwrap();
        let y = dit.blocks(&mut g, x, cond);
        assert_eq!(g.value(y), &tokens);
        let out = dit.forward(&mut g, &z, cond).unwrap();
        assert_eq!(g.shape(out.eps), (6, 4));
        assert!(g.value(out.eps).iter().all(|&v| v == 0.0));
        assert!(g.value(out.v).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditioning_is_additive_and_deterministic() {
        let dit = small();
        let mut p = ParamStore::new();
        let mut r = rng::seeded(1);
        dit.init_params(&mut p, &mut r);
        let e = random(&mut r, 1, 8);
        let mut g = Graph::new(&p);
        let ev = g.constant(e.clone());
        let a = dit.condition(&mut g, Some(ev), 3).unwrap();
        let b = dit.condition(&mut g, Some(ev), 3).unwrap();
        let n = dit.condition(&mut g, None, 3).unwrap();
        assert_eq!(g.value(a), g.value(b));
        let null = p.get("dit.null").unwrap();
        let lhs = g.value(n) - g.value(a);
        let rhs = null - &e;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(
            dit.condition(&mut g, None, 0),
            Err(Error::TimestepOutOfRange { .. })
        ));
        assert!(dit.condition(&mut g, None, 51).is_err());
    }

    #[test]
    fn timestep_features_distinguish_extremes() {
        let a = timestep_features(1, 16);
        let b = timestep_features(1000, 16);
        let dist: f64 = (&a - &b).iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!(dist > 0.5);
        // cos/sin pairs lie on the unit circle.
        for i in 0..8 {
            assert!((a[[0, i]].powi(2) + a[[0, i + 8]].powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn denoise_checks_geometry() {
        let dit = small();
        let mut p = ParamStore::new();
        dit.init_params(&mut p, &mut rng::seeded(2));
        let (eps, v) = dit.denoise(&p, &LatentBlock::zeros(2, 3, 4), None, 1).unwrap();
        assert_eq!(eps.geometry(), (2, 3, 4));
        assert_eq!(v.geometry(), (2, 3, 4));
        assert!(dit.denoise(&p, &LatentBlock::zeros(2, 2, 4), None, 1).is_err());
    }

    #[test]
    fn positional_table_separates_channels_and_windows() {
        let t = positional_table(2, 3, 8);
        assert_eq!(t.dim(), (6, 8));
        // Same channel share the first half; same window share the second half.
        assert_eq!(t.row(0).slice(ndarray::s![..4]), t.row(2).slice(ndarray::s![..4]));
        assert_eq!(t.row(1).slice(ndarray::s![4..]), t.row(4).slice(ndarray::s![4..]));
        assert_ne!(t.row(0), t.row(3));
    }
}
