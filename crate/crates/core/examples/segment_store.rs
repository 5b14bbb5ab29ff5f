//! Generate a synthetic dataset, store it on disk, load it back and segment.
//!
//! cargo run --example segment_store

use eegdm::signal;
use eegdm::synth::{self, SynthConfig};

fn main() -> eegdm::Result<()> {
    let cfg = SynthConfig::default();
    let recordings = synth::synth_generate(&cfg, 7)?;
    let dir = std::env::temp_dir().join("eegdm-segment-store");
    signal::save_dataset(&recordings, &dir)?;

    let loaded = signal::load_dataset(&dir)?;
    assert_eq!(loaded, recordings);
    println!("{} recordings stored in {}", loaded.len(), dir.display());

    let (len, stride) = (256, 128);
    let mut total = 0;
    for rec in &loaded {
        let samples = signal::segment(&signal::zscore(rec), len, stride)?;
        total += samples.len();
    }
    let expected = signal::segment_count(cfg.duration, len, stride)? * loaded.len();
    println!("{total} samples of {len} timestamps (stride {stride}); count law gives {expected}");
    Ok(())
}
