//! ViT-style EEG encoder.
//!
//! Each channel is cut into non-overlapping `ω`-windows (patches). A temporal
//! convolution block embeds every patch into `d` dimensions, learnable
//! positional embeddings are added per `(channel, window)` slot, a pre-norm
//! Transformer processes the token sequence and the output tokens are
//! average-pooled into one representation vector.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::augment::ViewSet;
use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Init};
use crate::rng::Rng;
use crate::signal::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub patch_window: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Rows of the positional table; bounds `C * t^s / ω`.
    pub max_tokens: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_window: 64,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
            max_tokens: 64,
            conv_filters: 4,
            conv_kernel: 15,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_window == 0 || self.embed_dim == 0 || self.heads == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder.embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.conv_kernel % 2 == 0 || self.conv_filters == 0 {
            return Err(Error::Config(
                "encoder.conv_kernel must be odd and conv_filters positive".into(),
            ));
        }
        if self.max_tokens == 0 || !(self.mlp_ratio > 0.0) {
            return Err(Error::Config("encoder.max_tokens and mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Splits every channel into `ω`-length patches, channel-major then time:
/// row `j * (t^s/ω) + k` is `sample[j, kω..(k+1)ω]`.
pub fn patchify(sample: &Sample, window: usize) -> Result<Array2<f64>> {
    if window == 0 || sample.len() % window != 0 {
        return Err(Error::WindowDoesNotTile {
            window,
            sample_len: sample.len(),
        });
    }
    let n = sample.channels() * (sample.len() / window);
    Ok(sample
        .data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, window))
        .expect("tiling checked"))
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Array2<f64>, channels: usize) -> Result<Sample> {
    let total = patches.len();
    if channels == 0 || total % channels != 0 || patches.nrows() % channels != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} patches cannot be split over {channels} channels",
            patches.nrows()
        )));
    }
    let data = patches
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((channels, total / channels))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(Sample::from_data(data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub prefix: String,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Self {
        Encoder {
            config,
            prefix: "enc".into(),
        }
    }

    fn p(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) {
        let c = &self.config;
        let d = c.embed_dim;
        store.insert(
            self.p("conv.kernel"),
            nn::init_matrix(c.conv_filters, c.conv_kernel, Init::LeCun, rng),
        );
        store.insert(self.p("conv.bias"), Array2::zeros((1, c.conv_filters)));
        nn::add_linear(
            store,
            &self.p("embed"),
            c.conv_filters * c.patch_window,
            d,
            Init::LeCun,
            rng,
        );
        store.insert(self.p("pos"), Array2::zeros((c.max_tokens, d)));
        for i in 0..c.depth {
            let b = self.p(&format!("blocks.{i}"));
            nn::add_layer_norm(store, &format!("{b}.ln1"), d);
            nn::add_attention(store, &format!("{b}.attn"), d, rng);
            nn::add_layer_norm(store, &format!("{b}.ln2"), d);
            nn::add_mlp(store, &format!("{b}.mlp"), d, c.hidden(), rng);
        }
        nn::add_layer_norm(store, &self.p("norm"), d);
    }

    /// Patch embeddings plus positional embeddings for the given slots.
    pub fn embed_patches(&self, g: &mut Graph, patches: Var, slots: &[usize]) -> Result<Var> {
        let (n, w) = g.shape(patches);
        if w != self.config.patch_window {
            return Err(Error::ShapeMismatch(format!(
                "patch length {w} != window {}",
                self.config.patch_window
            )));
        }
        let max_slot = slots.iter().copied().max().map_or(0, |m| m + 1);
        if n > self.config.max_tokens || max_slot > self.config.max_tokens {
            return Err(Error::TooManyTokens {
                tokens: n.max(max_slot),
                max_tokens: self.config.max_tokens,
            });
        }
        let kernel = g.param(&self.p("conv.kernel"));
        let bias = g.param(&self.p("conv.bias"));
        let h = g.conv1d_rows(patches, kernel, bias);
        let h = g.gelu(h);
        let h = nn::linear(g, h, &self.p("embed"));
        let table = g.param(&self.p("pos"));
        let is_prefix = slots.iter().enumerate().all(|(i, &s)| i == s);
        let pos = if is_prefix {
            g.slice_rows(table, 0, n)
        } else {
            let onehot = Array2::from_shape_fn((n, self.config.max_tokens), |(r, c)| {
                if slots[r] == c {
                    1.0
                } else {
                    0.0
                }
            });
            let onehot = g.constant(onehot);
            g.matmul(onehot, table)
        };
        Ok(g.add(h, pos))
    }

    /// Transformer trunk, final norm and average pooling: `1 x d`.
    pub fn trunk(&self, g: &mut Graph, tokens: Var) -> Var {
        let mut x = tokens;
        for i in 0..self.config.depth {
            let b = self.p(&format!("blocks.{i}"));
            let h = nn::layer_norm(g, x, &format!("{b}.ln1"));
            let h = nn::self_attention(g, h, &format!("{b}.attn"), self.config.heads);
            x = g.add(x, h);
            let h = nn::layer_norm(g, x, &format!("{b}.ln2"));
            let h = nn::mlp(g, h, &format!("{b}.mlp"));
            x = g.add(x, h);
        }
        let x = nn::layer_norm(g, x, &self.p("norm"));
        g.mean_rows(x)
    }

    /// Encodes patches whose tokens occupy the given positional slots.
    pub fn forward_patches(&self, g: &mut Graph, patches: &Array2<f64>, slots: &[usize]) -> Result<Var> {
        let p = g.constant(patches.clone());
        let tokens = self.embed_patches(g, p, slots)?;
        Ok(self.trunk(g, tokens))
    }

    /// Representation of one sample.
    pub fn forward(&self, g: &mut Graph, sample: &Sample) -> Result<Var> {
        let patches = patchify(sample, self.config.patch_window)?;
        let slots: Vec<usize> = (0..patches.nrows()).collect();
        self.forward_patches(g, &patches, &slots)
    }

    /// Mean of the per-view representations.
    pub fn encode(&self, g: &mut Graph, views: &ViewSet) -> Result<Var> {
        if views.views.is_empty() {
            return Err(Error::InvalidArgument("empty view set".into()));
        }
        let shape = views.views[0].data.dim();
        if views.views.iter().any(|v| v.data.dim() != shape) {
            return Err(Error::ShapeMismatch("views differ in geometry".into()));
        }
        let mut reps = Vec::with_capacity(views.m());
        for v in &views.views {
            reps.push(self.forward(g, v)?);
        }
        if reps.len() == 1 {
            return Ok(reps[0]);
        }
        let mut sum = reps[0];
        for &r in &reps[1..] {
            sum = g.add(sum, r);
        }
        Ok(g.scale(sum, 1.0 / reps.len() as f64))
    }

    /// Inference-mode [`Encoder::encode`].
    pub fn represent(&self, params: &ParamStore, views: &ViewSet) -> Result<Array1<f64>> {
        let mut g = Graph::new(params);
        let e = self.encode(&mut g, views)?;
        Ok(g.value(e).row(0).to_owned())
    }

    /// Inference-mode single-sample representation.
    pub fn represent_sample(&self, params: &ParamStore, sample: &Sample) -> Result<Array1<f64>> {
        let mut g = Graph::new(params);
        let e = self.forward(&mut g, sample)?;
        Ok(g.value(e).row(0).to_owned())
    }

    pub fn param_names(&self, params: &ParamStore) -> Vec<String> {
        let prefix = format!("{}.", self.prefix);
        params
            .iter()
            .filter(|(n, _)| n.starts_with(&prefix))
            .map(|(n, _)| n.to_string())
            .collect()
    }
}
