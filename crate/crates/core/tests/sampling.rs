mod common;

use eegdm::diffusion::NoiseSchedule;
use ndarray::Array1;

/// Variance of the final state of the untrained chain. With ε_pred = 0 and
/// v = 0 every step is `z ← z/√α'_i + √β̃'_i · n`, noise-free at the last step.
fn chain_variance_oracle(steps: &[usize], t_max: usize, b0: f64, b1: f64) -> f64 {
    let ab = |t: usize| if t == 0 { 1.0 } else { common::alpha_bar_oracle(t, t_max, b0, b1) };
    let mut var = 1.0;
    for i in (0..steps.len()).rev() {
        let prev = if i == 0 { 0 } else { steps[i - 1] };
        let alpha = ab(steps[i]) / ab(prev);
        var /= alpha;
        if i > 0 {
            var += (1.0 - ab(prev)) / (1.0 - ab(steps[i])) * (1.0 - alpha);
        }
    }
    var
}

fn pooled_variance(stride: usize) -> (f64, f64) {
    let mut m = common::tiny_model(1e-3, 3);
    m.diffusion.sampling_stride = stride;
    let blocks = m.sample(160, None, 1.0, 42).unwrap();
    let values: Array1<f64> = blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
    assert!(values.len() >= 10_000);
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (_, steps) = m.schedule.respaced(stride).unwrap();
    (var, chain_variance_oracle(&steps, m.schedule.t_max, 1e-4, 2e-2))
}

#[test]
fn untrained_sampler_matches_scalar_chain() {
    let (var, expected) = pooled_variance(1);
    assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
}

#[test]
fn strided_sampler_matches_respaced_chain() {
    let (var, expected) = pooled_variance(7);
    assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
}

#[test]
fn respaced_schedule_keeps_endpoints() {
    let s = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
    let (r, steps) = s.respaced(30).unwrap();
    assert_eq!(steps.first(), Some(&1));
    assert_eq!(steps.last(), Some(&100));
    assert!((r.alpha_bar(steps.len()) - s.alpha_bar(100)).abs() < 1e-12);
}

#[test]
fn same_seed_same_samples() {
    let m = common::tiny_model(1e-3, 3);
    let e = Array1::from_elem(8, 0.3);
    let a = m.sample(3, Some(&e), 2.0, 9).unwrap();
    let b = m.sample(3, Some(&e), 2.0, 9).unwrap();
    assert_eq!(a, b);
    let c = m.sample(3, Some(&e), 2.0, 10).unwrap();
    assert_ne!(a, c);
}
