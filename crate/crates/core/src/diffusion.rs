//! Noise schedule, forward process, guidance and the variational-bound terms.
//!
//! Timesteps run `1..=t_max`; `ᾱ_0 = 1`. The reverse-process variance is
//! `Σ = exp(v·log β_t + (1−v)·log β̃_t)` with `β̃_t = (1−ᾱ_{t−1})/(1−ᾱ_t)·β_t`.
//! Because `β̃_1 = 0`, the log-variance uses `β̃_2` at `t = 1`.

use std::f64::consts::PI;

use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `β` from `beta_start` to `beta_end`.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::Config("diffusion.t_max must be at least 2".into()));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..t_max)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            t_max: betas.len(),
            betas,
            alpha_bars,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior variance `β̃_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    /// `log β̃_t`, using `β̃_2` at `t = 1` where the variance vanishes.
    pub fn posterior_log_variance_clipped(&self, t: usize) -> f64 {
        let t = if t == 1 { 2.min(self.t_max) } else { t };
        self.posterior_variance(t).ln()
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·z_0 + ct·z_t`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        (
            self.beta(t) * ab_prev.sqrt() / (1.0 - ab),
            (1.0 - ab_prev) * self.alpha(t).sqrt() / (1.0 - ab),
        )
    }

    /// Log-variance of `p(z_{t−1}|z_t)` for interpolation logit `v`.
    pub fn model_log_variance(&self, t: usize, v: f64) -> f64 {
        v * self.beta(t).ln() + (1.0 - v) * self.posterior_log_variance_clipped(t)
    }

    /// Sub-sampled chain visiting `1, 1+stride, …` and always `t_max`.
    ///
    /// Returns the respaced schedule together with the original timestep of
    /// each respaced step, so `ᾱ'_i = ᾱ_{steps[i−1]}`. A stride of 1 returns
    /// the schedule unchanged.
    pub fn respaced(&self, stride: usize) -> Result<(NoiseSchedule, Vec<usize>)> {
        if stride == 0 {
            return Err(Error::InvalidArgument("sampling stride must be positive".into()));
        }
        if stride == 1 {
            return Ok((self.clone(), (1..=self.t_max).collect()));
        }
        let mut steps: Vec<usize> = (1..=self.t_max).step_by(stride).collect();
        if *steps.last().expect("t_max >= 1") != self.t_max {
            steps.push(self.t_max);
        }
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(steps.len());
        for &t in &steps {
            let ab = self.alpha_bar(t);
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        Ok((Self::from_betas(betas)?, steps))
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            return Err(Error::TimestepOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }
}

/// `z_t = √ᾱ_t·z_0 + √(1−ᾱ_t)·ε`, for an explicit `ᾱ_t`.
pub fn forward_sample_with<D: Dimension>(
    z0: &Array<f64, D>,
    alpha_bar: f64,
    eps: &Array<f64, D>,
) -> Result<Array<f64, D>> {
    if z0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs latent {:?}",
            eps.shape(),
            z0.shape()
        )));
    }
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    Ok(Zip::from(z0).and(eps).map_collect(|&z, &e| a * z + b * e))
}

pub fn forward_sample<D: Dimension>(
    z0: &Array<f64, D>,
    t: usize,
    eps: &Array<f64, D>,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>> {
    schedule.check(t)?;
    forward_sample_with(z0, schedule.alpha_bar(t), eps)
}

/// Classifier-free guidance `ε_∅ + s·(ε_e − ε_∅)`, evaluated as
/// `(1−s)·ε_∅ + s·ε_e` so that `s = 0` and `s = 1` reproduce the
/// unconditional and conditional predictions bit-for-bit.
pub fn guide<D: Dimension>(
    eps_null: &Array<f64, D>,
    eps_cond: &Array<f64, D>,
    scale: f64,
) -> Array<f64, D> {
    let keep = 1.0 - scale;
    Zip::from(eps_null)
        .and(eps_cond)
        .map_collect(|&u, &c| keep * u + scale * c)
}

/// Mean of `p(z_{t−1}|z_t)` from predicted noise:
/// `(z_t − β_t/√(1−ᾱ_t)·ε)/√α_t`.
pub fn model_mean<D: Dimension>(
    z_t: &Array<f64, D>,
    eps: &Array<f64, D>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Array<f64, D> {
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let c = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    Zip::from(z_t)
        .and(eps)
        .map_collect(|&z, &e| inv_sqrt_alpha * (z - c * e))
}

/// KL(N(μ₁, e^{lv₁}) ‖ N(μ₂, e^{lv₂})) for scalars.
pub fn normal_kl(mean1: f64, logvar1: f64, mean2: f64, logvar2: f64) -> f64 {
    0.5 * (-1.0 + logvar2 - logvar1
        + (logvar1 - logvar2).exp()
        + (mean1 - mean2).powi(2) * (-logvar2).exp())
}

/// Negative log-density of `x` under N(μ, e^{lv}).
pub fn gaussian_nll(x: f64, mean: f64, logvar: f64) -> f64 {
    0.5 * ((2.0 * PI).ln() + logvar + (x - mean).powi(2) * (-logvar).exp())
}

/// One term of the variational bound for a single item, averaged over
/// elements, together with its derivative with respect to each `v`.
///
/// For `t > 1` this is KL(q(z_{t−1}|z_t,z_0) ‖ p(z_{t−1}|z_t)); for `t = 1`
/// it is the negative log-likelihood of `z_0` under `p(z_0|z_1)`. The model
/// mean is built from `eps_pred` as a constant, so only `v` receives gradient.
pub fn vlb_term<D: Dimension>(
    z0: &Array<f64, D>,
    z_t: &Array<f64, D>,
    eps_pred: &Array<f64, D>,
    v: &Array<f64, D>,
    t: usize,
    schedule: &NoiseSchedule,
) -> (f64, Array<f64, D>) {
    let n = z0.len() as f64;
    let mean_pred = model_mean(z_t, eps_pred, t, schedule);
    let dlv_dv = schedule.beta(t).ln() - schedule.posterior_log_variance_clipped(t);
    let mut grad = v.clone();
    let mut total = 0.0;
    if t == 1 {
        Zip::from(&mut grad)
            .and(z0)
            .and(&mean_pred)
            .and(v)
            .for_each(|g, &x, &mu, &vv| {
                let lv = schedule.model_log_variance(t, vv);
                total += gaussian_nll(x, mu, lv);
                let d = 0.5 * (1.0 - (x - mu).powi(2) * (-lv).exp());
                *g = d * dlv_dv / n;
            });
    } else {
        let (c0, ct) = schedule.posterior_mean_coefs(t);
        let lv_true = schedule.posterior_log_variance_clipped(t);
        Zip::from(&mut grad)
            .and(z0)
            .and(z_t)
            .and(&mean_pred)
            .and(v)
            .for_each(|g, &x0, &xt, &mu, &vv| {
                let mu_true = c0 * x0 + ct * xt;
                let lv = schedule.model_log_variance(t, vv);
                total += normal_kl(mu_true, lv_true, mu, lv);
                let d = 0.5 * (1.0 - (lv_true - lv).exp() - (mu_true - mu).powi(2) * (-lv).exp());
                *g = d * dlv_dv / n;
            });
    }
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{Array1, Array2};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap()
    }

    #[test]
    fn respacing_preserves_cumulative_products() {
        let s = sched();
        let (r, steps) = s.respaced(7).unwrap();
        assert_eq!(steps[0], 1);
        assert_eq!(*steps.last().unwrap(), 1000);
        for (i, &t) in steps.iter().enumerate() {
            assert!((r.alpha_bar(i + 1) - s.alpha_bar(t)).abs() < 1e-12);
        }
        let (same, all) = s.respaced(1).unwrap();
        assert_eq!(same, s);
        assert_eq!(all.len(), 1000);
    }

    #[test]
    fn schedule_tables_are_consistent() {
        let s = sched();
        let mut prod = 1.0;
        for t in 1..=s.t_max {
            prod *= 1.0 - s.beta(t);
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
            if t > 1 {
                assert!(s.beta(t) > s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!((s.beta(1) - 1e-4).abs() < 1e-15);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn forward_limits() {
        let z0 = Array1::from(vec![1.0, -2.0, 3.0]);
        let eps = Array1::from(vec![0.5, 0.5, -0.5]);
        assert_eq!(forward_sample_with(&z0, 1.0, &eps).unwrap(), z0);
        assert_eq!(forward_sample_with(&z0, 0.0, &eps).unwrap(), eps);
        assert!(forward_sample(&z0, 0, &eps, &sched()).is_err());
        let short = Array1::from(vec![0.0]);
        assert!(forward_sample_with(&z0, 0.5, &short).is_err());
    }

    #[test]
    fn guidance_endpoints_are_exact() {
        let mut r = rng::seeded(3);
        let u = Array2::from_shape_fn((4, 5), |_| r.sample::<f64, _>(StandardNormal) * 1e3);
        let c = Array2::from_shape_fn((4, 5), |_| r.sample::<f64, _>(StandardNormal));
        assert_eq!(guide(&u, &c, 1.0), c);
        assert_eq!(guide(&u, &c, 0.0), u);
        let g2 = guide(&u, &c, 2.0);
        for ((g, a), b) in g2.iter().zip(u.iter()).zip(c.iter()) {
            assert!((g - (a + 2.0 * (b - a))).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_noise_prediction_gives_scaled_mean() {
        let s = sched();
        let z = Array1::from(vec![1.0, 2.0]);
        let m = model_mean(&z, &Array1::zeros(2), 500, &s);
        for i in 0..2 {
            assert!((m[i] - z[i] / s.alpha(500).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn vlb_gradient_matches_finite_differences() {
        let s = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let mut r = rng::seeded(9);
        for t in [1, 2, 25, 50] {
            let z0 = Array1::from_shape_fn(6, |_| r.sample::<f64, _>(StandardNormal));
            let zt = Array1::from_shape_fn(6, |_| r.sample::<f64, _>(StandardNormal));
            let ep = Array1::from_shape_fn(6, |_| r.sample::<f64, _>(StandardNormal));
            let v = Array1::from_shape_fn(6, |_| r.gen_range(-0.5..1.5));
            let (_, grad) = vlb_term(&z0, &zt, &ep, &v, t, &s);
            for i in 0..6 {
                let h = 1e-4;
                let mut up = v.clone();
                up[i] += h;
                let mut dn = v.clone();
                dn[i] -= h;
                let num = (vlb_term(&z0, &zt, &ep, &up, t, &s).0
                    - vlb_term(&z0, &zt, &ep, &dn, t, &s).0)
                    / (2.0 * h);
                assert!((num - grad[i]).abs() <= 1e-5 * num.abs().max(1e-3), "t={t} {num} {}", grad[i]);
            }
        }
    }
}
