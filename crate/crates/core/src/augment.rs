//! Channel augmentations that build the encoder's conditioning views.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentSpec {
    Identity,
    ZeroMask {
        #[serde(default = "default_mask_fraction")]
        mask_fraction: f64,
        /// Contiguous run per channel; scattered timestamps when false.
        #[serde(default = "yes")]
        contiguous: bool,
        #[serde(default)]
        seed: u64,
    },
    AmplitudeScale {
        #[serde(default = "default_scale_range")]
        scale_range: (f64, f64),
        #[serde(default)]
        seed: u64,
    },
}

fn default_mask_fraction() -> f64 {
    0.1
}

fn default_scale_range() -> (f64, f64) {
    (0.5, 2.0)
}

fn yes() -> bool {
    true
}

impl AugmentSpec {
    pub fn zero_mask(mask_fraction: f64, seed: u64) -> Self {
        AugmentSpec::ZeroMask {
            mask_fraction,
            contiguous: true,
            seed,
        }
    }

    pub fn amplitude_scale(low: f64, high: f64, seed: u64) -> Self {
        AugmentSpec::AmplitudeScale {
            scale_range: (low, high),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentSpec::Identity => Ok(()),
            AugmentSpec::ZeroMask { mask_fraction, .. } => {
                if !(0.0..1.0).contains(&mask_fraction) {
                    Err(Error::InvalidArgument(format!(
                        "mask_fraction must lie in [0, 1), got {mask_fraction}"
                    )))
                } else {
                    Ok(())
                }
            }
            AugmentSpec::AmplitudeScale {
                scale_range: (lo, hi),
                ..
            } => {
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    Err(Error::InvalidArgument(format!(
                        "scale_range must satisfy 0 < low <= high, got ({lo}, {hi})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Same augmentation with its seed replaced by `mix(seed, stream)`, so a
    /// training loop can draw fresh masks per item and step.
    pub fn reseeded(&self, streams: &[u64]) -> Self {
        let derive = |s: u64| streams.iter().fold(s, |acc, &x| rng::mix(acc, x));
        match self.clone() {
            AugmentSpec::Identity => AugmentSpec::Identity,
            AugmentSpec::ZeroMask {
                mask_fraction,
                contiguous,
                seed,
            } => AugmentSpec::ZeroMask {
                mask_fraction,
                contiguous,
                seed: derive(seed),
            },
            AugmentSpec::AmplitudeScale { scale_range, seed } => AugmentSpec::AmplitudeScale {
                scale_range,
                seed: derive(seed),
            },
        }
    }
}

/// Applies one augmentation. The output has the input's shape.
pub fn apply(sample: &Sample, spec: &AugmentSpec) -> Result<Sample> {
    spec.validate()?;
    let mut out = sample.clone();
    match *spec {
        AugmentSpec::Identity => {}
        AugmentSpec::ZeroMask {
            mask_fraction,
            contiguous,
            seed,
        } => {
            let len = sample.len();
            let width = (mask_fraction * len as f64).floor() as usize;
            if width > 0 {
                let mut r = rng::seeded(seed);
                for mut row in out.data.rows_mut() {
                    if contiguous {
                        let start = r.gen_range(0..=len - width);
                        row.slice_mut(ndarray::s![start..start + width]).fill(0.0);
                    } else {
                        for i in sample_indices(&mut r, len, width) {
                            row[i] = 0.0;
                        }
                    }
                }
            }
        }
        AugmentSpec::AmplitudeScale {
            scale_range: (lo, hi),
            seed,
        } => {
            let mut r = rng::seeded(seed);
            for mut row in out.data.rows_mut() {
                let factor = if lo == hi { lo } else { r.gen_range(lo..=hi) };
                row.mapv_inplace(|v| v * factor);
            }
        }
    }
    Ok(out)
}

/// The original sample followed by one augmented copy per spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<Sample>,
}

impl ViewSet {
    /// A single-view set holding only the original sample.
    pub fn single(sample: Sample) -> Self {
        ViewSet {
            views: vec![sample],
        }
    }

    pub fn m(&self) -> usize {
        self.views.len()
    }
}

pub fn make_views(sample: &Sample, specs: &[AugmentSpec]) -> Result<ViewSet> {
    let mut views = Vec::with_capacity(specs.len() + 1);
    views.push(sample.clone());
    for spec in specs {
        views.push(apply(sample, spec)?);
    }
    Ok(ViewSet { views })
}

/// Default conditioning specs: zero-mask and amplitude-scale.
pub fn default_specs() -> Vec<AugmentSpec> {
    vec![
        AugmentSpec::zero_mask(default_mask_fraction(), 1),
        AugmentSpec::amplitude_scale(0.5, 2.0, 2),
    ]
}
