//! Build the augmented view set the encoder sees during pre-training.
//!
//! cargo run --example augment_views

use eegdm::augment::{self, AugmentSpec};
use eegdm::signal;
use eegdm::synth::{self, SynthConfig};

fn summary(name: &str, s: &signal::Sample) {
    let zeros = s.data.iter().filter(|&&v| v == 0.0).count();
    let rms = (s.data.iter().map(|v| v * v).sum::<f64>() / s.data.len() as f64).sqrt();
    println!("{name:<28} rms {rms:.3}  zeroed {zeros}/{}", s.data.len());
}

fn main() -> eegdm::Result<()> {
    let recs = synth::synth_generate(&SynthConfig::default(), 3)?;
    let sample = signal::segment(&signal::zscore(&recs[0]), 256, 256)?.remove(0);
    summary("original", &sample);

    let specs = [
        ("zero mask 25%", AugmentSpec::zero_mask(0.25, 1)),
        ("amplitude scale [0.5, 0.6]", AugmentSpec::amplitude_scale(0.5, 0.6, 2)),
    ];
    for (name, spec) in &specs {
        summary(name, &augment::apply(&sample, spec)?);
    }
    let views = augment::make_views(&sample, &augment::default_specs())?;
    println!("default view set: m = {}", views.m());
    Ok(())
}
