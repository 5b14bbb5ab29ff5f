//! Deterministic synthetic EEG: per-class sinusoid mixtures over canonical
//! bands plus 1/f-shaped noise.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::signal::Recording;

/// Canonical EEG bands in Hz: delta, theta, alpha, beta.
pub const BANDS: [(f64, f64); 4] = [(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub channels: usize,
    /// Timestamps per recording.
    pub duration: usize,
    pub sampling_rate: f64,
    pub n_classes: usize,
    pub recordings_per_class: usize,
    pub n_subjects: usize,
    /// Signal-to-noise ratio in dB; `None` disables the noise entirely.
    pub snr_db: Option<f64>,
    /// Frequencies in Hz for each class. Defaults to two frequencies inside
    /// band `class % 4`.
    pub class_freqs: Option<Vec<Vec<f64>>>,
    /// Nominal sinusoid amplitude (microvolts).
    pub amplitude: f64,
    /// Relative per-channel amplitude spread, amplitudes drawn from
    /// `amplitude * [1 - jitter, 1 + jitter]`.
    pub amplitude_jitter: f64,
    /// Relative per-subject gain spread.
    pub subject_gain_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            channels: 4,
            duration: 1024,
            sampling_rate: 128.0,
            n_classes: 2,
            recordings_per_class: 8,
            n_subjects: 4,
            snr_db: Some(10.0),
            class_freqs: None,
            amplitude: 20.0,
            amplitude_jitter: 0.3,
            subject_gain_jitter: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("duration", self.duration),
            ("n_classes", self.n_classes),
            ("recordings_per_class", self.recordings_per_class),
            ("n_subjects", self.n_subjects),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("synth.{name} must be positive")));
            }
        }
        if !(self.sampling_rate > 0.0) {
            return Err(Error::InvalidArgument("synth.sampling_rate must be positive".into()));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::InvalidArgument("synth.amplitude must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter)
            || !(0.0..1.0).contains(&self.subject_gain_jitter)
        {
            return Err(Error::InvalidArgument("synth jitter must lie in [0, 1)".into()));
        }
        if let Some(freqs) = &self.class_freqs {
            if freqs.len() != self.n_classes || freqs.iter().any(Vec::is_empty) {
                return Err(Error::InvalidArgument(
                    "synth.class_freqs needs a non-empty list per class".into(),
                ));
            }
            let nyquist = self.sampling_rate / 2.0;
            if freqs.iter().flatten().any(|&f| !(f > 0.0 && f < nyquist)) {
                return Err(Error::InvalidArgument(format!(
                    "synth.class_freqs must lie in (0, {nyquist}) Hz"
                )));
            }
        }
        Ok(())
    }

    /// Frequencies used for class `c`.
    pub fn frequencies(&self, class: usize) -> Vec<f64> {
        match &self.class_freqs {
            Some(f) => f[class].clone(),
            None => {
                let (lo, hi) = BANDS[class % BANDS.len()];
                vec![lo + 0.3 * (hi - lo), lo + 0.7 * (hi - lo)]
            }
        }
    }
}

/// Unit-variance noise with a 1/f power spectrum.
pub fn pink_noise(len: usize, rng: &mut Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(len - k);
        *v = if f == 0 {
            Complex::new(0.0, 0.0)
        } else {
            *v / (f as f64).sqrt()
        };
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = re.iter().sum::<f64>() / len as f64;
    let sd = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    if sd == 0.0 {
        return vec![0.0; len];
    }
    re.iter().map(|v| (v - mean) / sd).collect()
}

/// Generates `n_classes * recordings_per_class` labelled recordings.
///
/// Recordings are ordered class-major and assigned round-robin to subjects
/// `s0..s{n_subjects-1}`; each subject has a fixed gain.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Vec<Recording>> {
    config.validate()?;
    let mut subject_rng = rng::substream(seed, &[0]);
    let gains: Vec<f64> = (0..config.n_subjects)
        .map(|_| {
            1.0 + config.subject_gain_jitter * subject_rng.gen_range(-1.0..=1.0)
        })
        .collect();
    let channel_names: Vec<String> = (0..config.channels).map(|c| format!("ch{c}")).collect();
    let fs = config.sampling_rate;
    let mut out = Vec::with_capacity(config.n_classes * config.recordings_per_class);
    let mut index = 0usize;
    for class in 0..config.n_classes {
        let freqs = config.frequencies(class);
        for r in 0..config.recordings_per_class {
            let mut rng = rng::substream(seed, &[1, class as u64, r as u64]);
            let subject = index % config.n_subjects;
            let gain = gains[subject];
            let mut data = Array2::<f32>::zeros((config.channels, config.duration));
            for ch in 0..config.channels {
                let comps: Vec<(f64, f64, f64)> = freqs
                    .iter()
                    .map(|&f| {
                        let amp = config.amplitude
                            * gain
                            * (1.0 + config.amplitude_jitter * rng.gen_range(-1.0..=1.0));
                        let phase = rng.gen_range(0.0..2.0 * PI);
                        (f, amp, phase)
                    })
                    .collect();
                let clean: Vec<f64> = (0..config.duration)
                    .map(|i| {
                        let t = i as f64 / fs;
                        comps
                            .iter()
                            .map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin())
                            .sum()
                    })
                    .collect();
                let noise_scale = match config.snr_db {
                    None => 0.0,
                    Some(snr) => {
                        let power: f64 = comps.iter().map(|&(_, a, _)| a * a / 2.0).sum();
                        power.sqrt() / 10f64.powf(snr / 20.0)
                    }
                };
                let noise = if noise_scale > 0.0 {
                    pink_noise(config.duration, &mut rng)
                } else {
                    vec![0.0; config.duration]
                };
                for i in 0..config.duration {
                    data[[ch, i]] = (clean[i] + noise_scale * noise[i]) as f32;
                }
            }
            out.push(Recording::new(
                format!("c{class}_r{r:03}"),
                channel_names.clone(),
                fs,
                data,
                format!("s{subject}"),
                Some(class),
            )?);
            index += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::encode_recording;

    /// Power of `x` at frequencies inside `[lo, hi)` via a direct DFT.
    fn bandpower(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mut p = 0.0;
        for k in 1..n / 2 {
            let f = k as f64 * fs / n as f64;
            if f < lo || f >= hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let w = 2.0 * PI * (k * i) as f64 / n as f64;
                re += v * w.cos();
                im -= v * w.sin();
            }
            p += re * re + im * im;
        }
        p
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg, 0).unwrap();
        let b = synth_generate(&cfg, 0).unwrap();
        let bytes = |v: &[Recording]| -> Vec<u8> {
            v.iter().flat_map(|r| encode_recording(r).unwrap()).collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&synth_generate(&cfg, 1).unwrap()));
    }

    #[test]
    fn noiseless_variance_matches_sinusoid_power() {
        let cfg = SynthConfig {
            channels: 3,
            duration: 4096,
            snr_db: None,
            amplitude_jitter: 0.0,
            subject_gain_jitter: 0.0,
            recordings_per_class: 2,
            ..SynthConfig::default()
        };
        let recs = synth_generate(&cfg, 3).unwrap();
        for rec in &recs {
            let n_freqs = cfg.frequencies(rec.label.unwrap()).len() as f64;
            let analytic = n_freqs * cfg.amplitude * cfg.amplitude / 2.0;
            for row in rec.data.rows() {
                let n = row.len() as f64;
                let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
                let var = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
                assert!(
                    (var - analytic).abs() / analytic < 0.01,
                    "variance {var} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn disjoint_band_classes_are_bandpower_separable() {
        let cfg = SynthConfig {
            n_classes: 2,
            class_freqs: Some(vec![vec![6.0], vec![20.0]]),
            recordings_per_class: 10,
            duration: 512,
            snr_db: Some(0.0),
            ..SynthConfig::default()
        };
        let recs = synth_generate(&cfg, 11).unwrap();
        let mut correct = 0;
        let mut total = 0;
        for rec in &recs {
            for row in rec.data.rows() {
                let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                let low = bandpower(&x, cfg.sampling_rate, 4.0, 8.0);
                let high = bandpower(&x, cfg.sampling_rate, 13.0, 30.0);
                let pred = usize::from(high > low);
                correct += usize::from(pred == rec.label.unwrap());
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 >= 0.99, "{correct}/{total}");
    }

    #[test]
    fn pink_noise_has_falling_spectrum() {
        let mut rng = rng::seeded(5);
        let x = pink_noise(2048, &mut rng);
        let low = bandpower(&x, 1.0, 0.001, 0.02);
        let high = bandpower(&x, 1.0, 0.3, 0.319);
        assert!(low > 5.0 * high);
    }

    #[test]
    fn rejects_non_positive_dimensions() {
        let cfg = SynthConfig {
            channels: 0,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg, 0).is_err());
    }
}
