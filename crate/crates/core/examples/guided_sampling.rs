//! Classifier-free guided generation: condition the sampler on encoder
//! embeddings of held-out samples and sweep the guidance scale.
//!
//! cargo run --release --example guided_sampling

use eegdm::config::RunConfig;
use eegdm::downstream;
use eegdm::pipeline;

fn main() -> eegdm::Result<()> {
    let mut cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml"))?;
    cfg.train.steps = 120;
    let data = pipeline::prepare(&cfg)?;
    let (model, _) = pipeline::pretrain_model(&cfg, &data, 0)?;

    let test = data.test_samples();
    let eval: Vec<_> = downstream::class_balanced_indices(&test, 6, 0)
        .into_iter()
        .map(|i| test[i].clone())
        .collect();
    for s in [0.0, 1.0, 2.0, 4.0] {
        let (q, _) = downstream::generation_quality(&model, &eval, &cfg.augment.views, s, 0)?;
        println!(
            "s = {s:<3}  pearson_time {:+.3}  pearson_freq {:+.3}  ({} pairs)",
            q.pearson_time, q.pearson_freq, q.n_pairs
        );
    }

    // Unconditional draws straight from the latent prior.
    let latents = model.sample(2, None, 1.0, 1)?;
    let signals = model.reconstruct_signal(&latents)?;
    println!("unconditional: {} signals of shape {:?}", signals.len(), signals[0].data.dim());
    Ok(())
}
