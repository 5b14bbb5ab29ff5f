//! Fine-tune the pre-trained encoder with a linear head, and compare with a
//! linear probe on frozen features.
//!
//! cargo run --release --example finetune_probe

use eegdm::config::RunConfig;
use eegdm::downstream;
use eegdm::pipeline;

fn main() -> eegdm::Result<()> {
    let cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml"))?;
    let data = pipeline::prepare(&cfg)?;
    let (model, _) = pipeline::pretrain_model(&cfg, &data, 0)?;
    let (train, test) = (data.train_samples(), data.test_samples());

    for (name, freeze) in [("fine-tune", false), ("linear probe", true)] {
        let mut ds = cfg.downstream.clone();
        ds.freeze_encoder = freeze;
        let (clf, curve) = downstream::finetune(&model, &train, &ds, Vec::new(), 0)?;
        let report = clf.evaluate(&test)?;
        let last = curve.last().expect("at least one epoch");
        println!(
            "{name:<13} train acc {:.3}  test BA {:.3}  kappa {:.3}  F1 {:.3}  AUROC {:.3}",
            last.train_accuracy,
            report.balanced_accuracy,
            report.cohens_kappa,
            report.weighted_f1,
            report.auroc.unwrap_or(f64::NAN)
        );
    }

    // Label-efficient setting: 10% of the training labels.
    let mut ds = cfg.downstream.clone();
    ds.fraction = 0.1;
    let (clf, _) = downstream::finetune(&model, &train, &ds, Vec::new(), 0)?;
    println!("10% labels    test BA {:.3}", clf.evaluate(&test)?.balanced_accuracy);
    Ok(())
}
