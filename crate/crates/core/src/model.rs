//! The joint model: encoder, conditional DiT, PCA codec and noise schedule.
//!
//! Training minimises `L_simple + λ·L_vlb` per item, where the condition is
//! the encoder's view-set representation or, with probability `p_uncond`,
//! the learned null embedding. Sampling is ancestral with classifier-free
//! guidance; the variance logits come from the conditional branch.

use ndarray::{Array1, Array3};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentSpec, ViewSet};
use crate::autograd::{Grads, Graph, Mat, ParamStore};
use crate::config::{DiffusionConfig, PcaConfig, RunConfig, TrainConfig};
use crate::diffusion::{self, NoiseSchedule};
use crate::dit::{Dit, DitConfig, LatentGeometry};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::pca::{self, LatentBlock, PcaBasis};
use crate::rng::{self, Rng};
use crate::signal::Sample;

/// One training example: clean latent tokens, timestep, noise and the
/// conditioning views (`None` when the condition is dropped).
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub z0: Mat,
    pub t: usize,
    pub eps: Mat,
    pub views: Option<ViewSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub simple: f64,
    pub vlb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub total: f64,
    pub simple: f64,
    pub vlb: f64,
    pub grad_norm: f64,
}

/// Fits the latent codec on training samples.
pub fn fit_basis(cfg: &PcaConfig, samples: &[Sample]) -> Result<PcaBasis> {
    let windows = pca::collect_windows(samples, cfg.window)?;
    let mut basis = if cfg.enabled {
        pca::fit(&windows, cfg.components)?
    } else {
        PcaBasis::identity(cfg.window)
    };
    if cfg.standardize {
        basis.fit_coeff_scale(&windows);
    }
    Ok(basis)
}

#[derive(Debug, Clone)]
pub struct Eegdm {
    pub encoder: Encoder,
    pub dit: Dit,
    pub schedule: NoiseSchedule,
    pub basis: PcaBasis,
    pub diffusion: DiffusionConfig,
    pub params: ParamStore,
}

impl Eegdm {
    /// Builds a freshly initialised model for `channels x sample_len` inputs.
    pub fn new(
        encoder: EncoderConfig,
        dit: DitConfig,
        diffusion: DiffusionConfig,
        basis: PcaBasis,
        channels: usize,
        sample_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let schedule =
            NoiseSchedule::linear(diffusion.t_max, diffusion.beta_start, diffusion.beta_end)?;
        let mut model = Self::assemble(encoder, dit, diffusion, basis, schedule, channels, sample_len)?;
        let mut r = rng::substream(seed, &[0x1417]);
        let mut params = ParamStore::new();
        model.encoder.init_params(&mut params, &mut r);
        model.dit.init_params(&mut params, &mut r);
        model.params = params;
        Ok(model)
    }

    /// Wires the components together around an existing schedule, with an
    /// empty parameter store (used when restoring checkpoints).
    pub fn assemble(
        encoder: EncoderConfig,
        dit: DitConfig,
        diffusion: DiffusionConfig,
        basis: PcaBasis,
        schedule: NoiseSchedule,
        channels: usize,
        sample_len: usize,
    ) -> Result<Self> {
        encoder.validate()?;
        dit.validate()?;
        if dit.token_dim != encoder.embed_dim {
            return Err(Error::Config(format!(
                "dit.token_dim {} must equal encoder.embed_dim {}",
                dit.token_dim, encoder.embed_dim
            )));
        }
        if sample_len % basis.window != 0 {
            return Err(Error::WindowDoesNotTile {
                window: basis.window,
                sample_len,
            });
        }
        if sample_len % encoder.patch_window != 0 {
            return Err(Error::WindowDoesNotTile {
                window: encoder.patch_window,
                sample_len,
            });
        }
        let tokens = channels * (sample_len / encoder.patch_window);
        if tokens > encoder.max_tokens {
            return Err(Error::TooManyTokens {
                tokens,
                max_tokens: encoder.max_tokens,
            });
        }
        let geometry = LatentGeometry {
            channels,
            n_windows: sample_len / basis.window,
            k: basis.components,
        };
        Ok(Eegdm {
            encoder: Encoder::new(encoder),
            dit: Dit::new(dit, geometry, schedule.t_max),
            schedule,
            basis,
            diffusion,
            params: ParamStore::new(),
        })
    }

    pub fn from_config(cfg: &RunConfig, basis: PcaBasis, channels: usize, seed: u64) -> Result<Self> {
        Self::new(
            cfg.encoder.clone(),
            cfg.dit.clone(),
            cfg.diffusion.clone(),
            basis,
            channels,
            cfg.data.sample_len,
            seed,
        )
    }

    pub fn geometry(&self) -> LatentGeometry {
        self.dit.geometry
    }

    pub fn sample_len(&self) -> usize {
        self.geometry().n_windows * self.basis.window
    }

    /// Standardised latent block of a sample.
    pub fn latent(&self, sample: &Sample) -> Result<LatentBlock> {
        let g = self.geometry();
        if sample.data.dim() != (g.channels, self.sample_len()) {
            return Err(Error::ShapeMismatch(format!(
                "sample {:?} != ({}, {})",
                sample.data.dim(),
                g.channels,
                self.sample_len()
            )));
        }
        Ok(pca::standardize(&pca::project(sample, &self.basis)?, &self.basis))
    }

    /// Undoes coefficient scaling and the PCA projection.
    pub fn reconstruct_signal(&self, latents: &[LatentBlock]) -> Result<Vec<Sample>> {
        latents
            .iter()
            .map(|z| pca::reconstruct(&pca::unstandardize(z, &self.basis), &self.basis))
            .collect()
    }

    /// Loss and parameter gradients for one item.
    pub fn item_loss(&self, item: &TrainItem) -> Result<(LossParts, Grads)> {
        self.schedule.check(item.t)?;
        let mut g = Graph::new(&self.params);
        let e = match &item.views {
            Some(v) => Some(self.encoder.encode(&mut g, v)?),
            None => None,
        };
        let cond = self.dit.condition(&mut g, e, item.t)?;
        let z_t = diffusion::forward_sample(&item.z0, item.t, &item.eps, &self.schedule)?;
        let out = self.dit.forward(&mut g, &z_t, cond)?;
        let simple = g.mse(out.eps, &item.eps);
        // The mean inside the bound uses ε_pred as a constant, so only the
        // variance head learns from it.
        let (vlb_value, vlb_grad) = diffusion::vlb_term(
            &item.z0,
            &z_t,
            g.value(out.eps),
            g.value(out.v),
            item.t,
            &self.schedule,
        );
        let vlb = g.custom_loss(out.v, vlb_value, vlb_grad);
        let total = g.weighted_sum(&[(simple, 1.0), (vlb, self.diffusion.lambda_vlb)]);
        let parts = LossParts {
            total: g.scalar(total),
            simple: g.scalar(simple),
            vlb: vlb_value,
        };
        Ok((parts, g.backward(total)))
    }

    /// Mean loss and gradient over a batch. Items are evaluated in parallel
    /// and reduced in order, so results do not depend on thread count.
    pub fn batch_loss(&self, items: &[TrainItem]) -> Result<(LossParts, Grads)> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let per_item: Vec<Result<(LossParts, Grads)>> =
            items.par_iter().map(|it| self.item_loss(it)).collect();
        let mut grads = Grads::zeros_like(&self.params);
        let mut parts = LossParts::default();
        for r in per_item {
            let (p, g) = r?;
            parts.total += p.total;
            parts.simple += p.simple;
            parts.vlb += p.vlb;
            grads.accumulate(&g);
        }
        let inv = 1.0 / items.len() as f64;
        grads.scale(inv);
        parts.total *= inv;
        parts.simple *= inv;
        parts.vlb *= inv;
        if !parts.total.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingDivergence(format!(
                "loss {} (simple {}, vlb {})",
                parts.total, parts.simple, parts.vlb
            )));
        }
        Ok((parts, grads))
    }

    /// Draws a batch: uniform items, uniform `t`, unit Gaussian noise, and a
    /// Bernoulli(`p_uncond`) condition drop. Augmentations are reseeded per
    /// step and item.
    pub fn draw_batch(
        &self,
        samples: &[Sample],
        latents: &[Mat],
        specs: &[AugmentSpec],
        batch_size: usize,
        seed: u64,
        step: u64,
    ) -> Result<Vec<TrainItem>> {
        if samples.is_empty() || samples.len() != latents.len() {
            return Err(Error::InvalidArgument(
                "need a non-empty sample list with one latent per sample".into(),
            ));
        }
        let mut r = rng::substream(seed, &[0xba7c, step]);
        let mut items = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let idx = r.gen_range(0..samples.len());
            let t = r.gen_range(1..=self.schedule.t_max);
            let z0 = latents[idx].clone();
            let eps = gaussian(z0.dim(), &mut r);
            let drop = r.gen::<f64>() < self.diffusion.p_uncond;
            let views = if drop {
                None
            } else {
                let specs: Vec<AugmentSpec> =
                    specs.iter().map(|s| s.reseeded(&[seed, step, i as u64])).collect();
                Some(augment::make_views(&samples[idx], &specs)?)
            };
            items.push(TrainItem { z0, t, eps, views });
        }
        Ok(items)
    }

    /// Jointly trains encoder and DiT. `on_step` sees every curve point.
    pub fn pretrain(
        &mut self,
        samples: &[Sample],
        specs: &[AugmentSpec],
        train: &TrainConfig,
        seed: u64,
        mut on_step: impl FnMut(&CurvePoint),
    ) -> Result<Vec<CurvePoint>> {
        let latents: Vec<Mat> = samples
            .iter()
            .map(|s| Ok(self.latent(s)?.to_tokens()))
            .collect::<Result<_>>()?;
        let mut opt = Adam::new(train.lr).with_clip(train.grad_clip);
        let mut curve = Vec::with_capacity(train.steps);
        for step in 0..train.steps {
            let batch = self.draw_batch(samples, &latents, specs, train.batch_size, seed, step as u64)?;
            let (parts, grads) = self.batch_loss(&batch)?;
            let point = CurvePoint {
                step,
                total: parts.total,
                simple: parts.simple,
                vlb: parts.vlb,
                grad_norm: grads.global_norm(),
            };
            opt.update(&mut self.params, &grads);
            on_step(&point);
            curve.push(point);
        }
        Ok(curve)
    }

    /// Ancestral sampling of `n` latent blocks with guidance scale `s`.
    ///
    /// With `cond = None` the null embedding drives every step. Each sample
    /// uses its own random stream, so results are independent of thread count.
    pub fn sample(
        &self,
        n: usize,
        cond: Option<&Array1<f64>>,
        s: f64,
        seed: u64,
    ) -> Result<Vec<LatentBlock>> {
        if !(s >= 0.0) {
            return Err(Error::InvalidArgument(format!("guidance scale {s} must be >= 0")));
        }
        let (sched, steps) = self.schedule.respaced(self.diffusion.sampling_stride)?;
        (0..n)
            .into_par_iter()
            .map(|i| self.sample_one(cond, s, &sched, &steps, rng::substream(seed, &[0x5a3b, i as u64])))
            .collect()
    }

    fn sample_one(
        &self,
        cond: Option<&Array1<f64>>,
        s: f64,
        sched: &NoiseSchedule,
        steps: &[usize],
        mut r: Rng,
    ) -> Result<LatentBlock> {
        let g = self.geometry();
        let shape = (g.channels, g.n_windows, g.k);
        let mut z = LatentBlock {
            data: gaussian3(shape, &mut r),
        };
        for i in (1..=steps.len()).rev() {
            let t = steps[i - 1];
            let (eps, v) = match cond {
                Some(e) => {
                    let (eps_c, v_c) = self.dit.denoise(&self.params, &z, Some(e), t)?;
                    let eps = if s == 1.0 {
                        eps_c.data
                    } else {
                        let (eps_u, _) = self.dit.denoise(&self.params, &z, None, t)?;
                        diffusion::guide(&eps_u.data, &eps_c.data, s)
                    };
                    (eps, v_c.data)
                }
                None => {
                    let (eps, v) = self.dit.denoise(&self.params, &z, None, t)?;
                    (eps.data, v.data)
                }
            };
            let mut next = diffusion::model_mean(&z.data, &eps, i, sched);
            if i > 1 {
                ndarray::Zip::from(&mut next).and(&v).for_each(|x, &vv| {
                    let sd = (0.5 * sched.model_log_variance(i, vv)).exp();
                    *x += sd * r.sample::<f64, _>(StandardNormal);
                });
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::SamplingDivergence(t));
            }
            z.data = next;
        }
        Ok(z)
    }

    /// Generates one signal per input sample, conditioned on the encoder's
    /// representation of that sample's view set.
    pub fn generate_like(
        &self,
        samples: &[Sample],
        specs: &[AugmentSpec],
        s: f64,
        seed: u64,
    ) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(samples.len());
        for (i, sample) in samples.iter().enumerate() {
            let views = augment::make_views(sample, specs)?;
            let e = self.encoder.represent(&self.params, &views)?;
            let z = self.sample(1, Some(&e), s, rng::mix(seed, i as u64))?;
            let mut rec = self.reconstruct_signal(&z)?.remove(0);
            rec.source_recording = sample.source_recording.clone();
            rec.subject_id = sample.subject_id.clone();
            rec.offset = sample.offset;
            rec.label = sample.label;
            out.push(rec);
        }
        Ok(out)
    }
}

fn gaussian(dim: (usize, usize), r: &mut Rng) -> Mat {
    Mat::from_shape_simple_fn(dim, || r.sample(StandardNormal))
}

fn gaussian3(dim: (usize, usize, usize), r: &mut Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || r.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny(t_max: usize) -> Eegdm {
        let enc = EncoderConfig {
            patch_window: 16,
            embed_dim: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            max_tokens: 16,
            conv_filters: 2,
            conv_kernel: 5,
        };
        let dit = DitConfig {
            token_dim: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            time_features: 8,
            residual_conditioning: true,
        };
        let diff = DiffusionConfig {
            t_max,
            ..Default::default()
        };
        Eegdm::new(enc, dit, diff, PcaBasis::identity(8), 2, 32, 3).unwrap()
    }

    fn noise_sample(seed: u64) -> Sample {
        let mut r = rng::seeded(seed);
        let mut s = Sample::from_data(Array2::from_shape_simple_fn((2, 32), || {
            r.sample::<f64, _>(StandardNormal)
        }));
        s.label = Some(0);
        s
    }

    #[test]
    fn untrained_model_predicts_zero_noise_so_simple_loss_is_noise_power() {
        let m = tiny(50);
        let s = noise_sample(1);
        let z0 = m.latent(&s).unwrap().to_tokens();
        let eps = gaussian(z0.dim(), &mut rng::seeded(2));
        let power = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
        let item = TrainItem {
            z0,
            t: 10,
            eps,
            views: Some(ViewSet::single(s)),
        };
        let (parts, _) = m.item_loss(&item).unwrap();
        assert!((parts.simple - power).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_matches_mean_of_items() {
        let m = tiny(50);
        let samples: Vec<Sample> = (0..3).map(noise_sample).collect();
        let lat: Vec<Mat> = samples.iter().map(|s| m.latent(s).unwrap().to_tokens()).collect();
        let batch = m
            .draw_batch(&samples, &lat, &augment::default_specs(), 4, 9, 0)
            .unwrap();
        let (parts, _) = m.batch_loss(&batch).unwrap();
        let mean: f64 = batch
            .iter()
            .map(|it| m.item_loss(it).unwrap().0.total)
            .sum::<f64>()
            / 4.0;
        assert!((parts.total - mean).abs() < 1e-12);
        let again = m
            .draw_batch(&samples, &lat, &augment::default_specs(), 4, 9, 0)
            .unwrap();
        assert_eq!(again[2].eps, batch[2].eps);
        assert_eq!(again[2].t, batch[2].t);
    }

    #[test]
    fn timestep_zero_rejected() {
        let m = tiny(50);
        let s = noise_sample(1);
        let z0 = m.latent(&s).unwrap().to_tokens();
        let item = TrainItem {
            eps: z0.clone(),
            z0,
            t: 0,
            views: None,
        };
        assert!(matches!(
            m.item_loss(&item),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_guidance_one_skips_nothing_observable() {
        let m = tiny(20);
        let e = m.encoder.represent_sample(&m.params, &noise_sample(4)).unwrap();
        let a = m.sample(2, Some(&e), 2.0, 11).unwrap();
        let b = m.sample(2, Some(&e), 2.0, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        // At initialisation the DiT ignores its condition, so every scale and
        // the unconditional chain coincide.
        let c = m.sample(2, None, 0.0, 11).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn strided_sampling_runs_fewer_steps() {
        let mut m = tiny(40);
        m.diffusion.sampling_stride = 10;
        let out = m.sample(1, None, 1.0, 0).unwrap();
        assert!(out[0].data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn reconstruct_inverts_latent() {
        let m = tiny(10);
        let s = noise_sample(5);
        let z = m.latent(&s).unwrap();
        let back = m.reconstruct_signal(&[z]).unwrap();
        let err = (&back[0].data - &s.data).iter().fold(0.0f64, |a, d| a.max(d.abs()));
        assert!(err < 1e-12);
    }

    #[test]
    fn geometry_limits_enforced() {
        let enc = EncoderConfig {
            patch_window: 8,
            max_tokens: 4,
            embed_dim: 16,
            heads: 2,
            ..Default::default()
        };
        let dit = DitConfig {
            token_dim: 16,
            heads: 2,
            ..Default::default()
        };
        let err = Eegdm::new(enc, dit, DiffusionConfig::default(), PcaBasis::identity(8), 2, 32, 0)
            .unwrap_err();
        assert!(matches!(err, Error::TooManyTokens { .. }));
    }
}
