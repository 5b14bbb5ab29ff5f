//! Run configuration, read from a single TOML file.
//!
//! Unknown keys are rejected in every section. Missing sections and keys fall
//! back to desk-scale defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentSpec};
use crate::dit::DitConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::split::{SplitMode, SplitSpec};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `.eegb` files with a `labels.csv` sidecar. Mutually
    /// exclusive with `synth`.
    pub path: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub synth_seed: u64,
    /// Timestamps per sample, `t^s`.
    pub sample_len: usize,
    /// Segmentation stride, `s^t`.
    pub stride: usize,
    /// Target sampling rate; recordings are resampled when it differs.
    pub sampling_rate: f64,
    /// Per-channel z-scoring at ingestion.
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synth: None,
            synth_seed: 0,
            sample_len: 256,
            stride: 128,
            sampling_rate: 128.0,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    /// When false the diffusion model works on raw windows.
    pub enabled: bool,
    /// Window length `ω`.
    pub window: usize,
    /// Retained components `k`.
    pub components: usize,
    /// Scale each coefficient to unit variance before diffusion.
    pub standardize: bool,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            enabled: true,
            window: 64,
            components: 20,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Augmented views added to the original sample (`m = 1 + views.len()`).
    pub views: Vec<AugmentSpec>,
    /// Feed the augmented views to the encoder during fine-tuning too.
    pub finetune_views: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            views: augment::default_specs(),
            finetune_views: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lambda_vlb: f64,
    /// Probability of replacing the condition with the null embedding.
    pub p_uncond: f64,
    /// Guidance scale `s`.
    pub guidance_scale: f64,
    /// Visit every `sampling_stride`-th timestep when sampling (1 = full chain).
    pub sampling_stride: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            lambda_vlb: 1e-3,
            p_uncond: 0.1,
            guidance_scale: 2.0,
            sampling_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub grad_clip: Option<f64>,
    /// Seeds for repeated runs; pre-training uses the first unless overridden.
    pub seeds: Vec<u64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps: 200,
            lr: 1e-3,
            grad_clip: Some(1.0),
            seeds: vec![0, 1, 2],
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub task: String,
    pub split: SplitSpec,
    /// Fraction of the training split used for fine-tuning (class-stratified).
    pub fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Linear probe: only the head is trained.
    pub freeze_encoder: bool,
    /// Class count; inferred from the labels when absent.
    pub n_classes: Option<usize>,
    /// Eval samples used for generation-quality reports.
    pub generation_samples: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            task: "synthetic".into(),
            split: SplitSpec {
                mode: SplitMode::FixedTrainTest,
                fraction: 1.0,
                held_out_subject: None,
                test_fraction: 0.25,
                seed: 0,
            },
            fraction: 1.0,
            epochs: 50,
            lr: 1e-3,
            batch_size: 16,
            freeze_encoder: false,
            n_classes: None,
            generation_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub pca: PcaConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub dit: DitConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub downstream: DownstreamConfig,
    pub output: OutputConfig,
}

/// Environment variable that overrides `output.dir`.
pub const OUT_ENV: &str = "EEGDM_OUT";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Output root, honouring [`OUT_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.dir.clone(),
        }
    }

    pub fn n_windows(&self) -> usize {
        self.data.sample_len / self.pca.window
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.path, &d.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("data.path and data.synth are exclusive".into()))
            }
            (None, None) => {
                return Err(Error::Config("either data.path or data.synth is required".into()))
            }
            (Some(p), None) if !p.is_dir() => {
                return Err(Error::Config(format!(
                    "data.path {} is not a directory",
                    p.display()
                )))
            }
            (None, Some(s)) => s.validate().map_err(|e| Error::Config(e.to_string()))?,
            _ => {}
        }
        if d.sample_len == 0 || d.stride == 0 {
            return Err(Error::Config("data.sample_len and data.stride must be positive".into()));
        }
        if !(d.sampling_rate > 0.0) {
            return Err(Error::Config("data.sampling_rate must be positive".into()));
        }
        let p = &self.pca;
        if p.window == 0 || d.sample_len % p.window != 0 {
            return Err(Error::Config(format!(
                "pca.window {} must tile data.sample_len {}",
                p.window, d.sample_len
            )));
        }
        if p.components == 0 || p.components > p.window {
            return Err(Error::Config(format!(
                "pca.components must lie in 1..={}",
                p.window
            )));
        }
        for v in &self.augment.views {
            v.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.encoder.validate()?;
        if d.sample_len % self.encoder.patch_window != 0 {
            return Err(Error::Config(
                "encoder.patch_window must tile data.sample_len".into(),
            ));
        }
        self.dit.validate()?;
        if self.dit.token_dim != self.encoder.embed_dim {
            return Err(Error::Config(format!(
                "dit.token_dim {} must equal encoder.embed_dim {}",
                self.dit.token_dim, self.encoder.embed_dim
            )));
        }
        let f = &self.diffusion;
        if f.t_max < 2 || !(0.0 < f.beta_start && f.beta_start < f.beta_end && f.beta_end < 1.0) {
            return Err(Error::Config("diffusion schedule parameters out of range".into()));
        }
        if !(0.0..=1.0).contains(&f.p_uncond) || f.lambda_vlb < 0.0 || f.guidance_scale < 0.0 {
            return Err(Error::Config(
                "diffusion.p_uncond in [0,1], lambda_vlb >= 0 and guidance_scale >= 0 required"
                    .into(),
            ));
        }
        if f.sampling_stride == 0 || f.sampling_stride >= f.t_max {
            return Err(Error::Config("diffusion.sampling_stride must lie in 1..t_max".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.seeds.is_empty() || !(t.lr > 0.0) {
            return Err(Error::Config(
                "train.batch_size, train.lr and train.seeds must be non-empty/positive".into(),
            ));
        }
        let s = &self.downstream;
        if !(s.fraction > 0.0 && s.fraction <= 1.0) {
            return Err(Error::Config("downstream.fraction must lie in (0, 1]".into()));
        }
        if s.batch_size == 0 || !(s.lr > 0.0) {
            return Err(Error::Config("downstream.batch_size and lr must be positive".into()));
        }
        if let Some(n) = s.n_classes {
            if n < 2 {
                return Err(Error::Config("downstream.n_classes must be at least 2".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
sample_len = 128
[data.synth]
channels = 2
[pca]
window = 32
components = 8
[encoder]
patch_window = 32
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.data.sample_len, 128);
        assert_eq!(cfg.diffusion.t_max, 1000);
        assert_eq!(cfg.augment.views.len(), 2);
        assert_eq!(cfg.n_windows(), 4);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[train]\nbogus = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn missing_data_source_rejected() {
        let err = RunConfig::from_toml("[data]\nsample_len = 64\n").unwrap_err();
        assert!(err.to_string().contains("data.path or data.synth"));
        let err = RunConfig::from_toml(
            "[data]\npath = \"/definitely/not/here\"\nsample_len = 64\n[pca]\nwindow=32\ncomponents=4\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn geometry_mismatches_rejected() {
        let text = MINIMAL.replace("components = 8", "components = 40");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = MINIMAL.replace("window = 32", "window = 48");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}\n[dit]\ntoken_dim = 32\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
