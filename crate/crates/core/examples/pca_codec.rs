//! Fit a PCA basis on signal windows and watch reconstruction error fall
//! with the number of kept components.
//!
//! cargo run --example pca_codec

use eegdm::pca;
use eegdm::signal;
use eegdm::synth::{self, SynthConfig};

fn main() -> eegdm::Result<()> {
    let recs = synth::synth_generate(&SynthConfig::default(), 1)?;
    let samples: Vec<_> = recs
        .iter()
        .map(|r| signal::segment(&signal::zscore(r), 256, 256))
        .collect::<eegdm::Result<Vec<_>>>()?
        .concat();
    let window = 32;
    let windows = pca::collect_windows(&samples, window)?;
    println!("{} windows of width {window}", windows.nrows());

    let total: f64 = pca::covariance(&windows).1.diag().sum();
    for k in [1, 2, 4, 8, 16, 32] {
        let basis = pca::fit(&windows, k)?;
        let kept: f64 = basis.eigenvalues.sum();
        println!(
            "k={k:>2}  mse={:.5}  explained variance={:.3}",
            pca::reconstruction_mse(&basis, &windows),
            kept / total
        );
    }

    let basis = pca::fit(&windows, 8)?;
    let latent = pca::project(&samples[0], &basis)?;
    let (c, n, k) = latent.geometry();
    println!("one sample -> latent block of {c} channels x {n} windows x {k} coefficients");
    Ok(())
}
