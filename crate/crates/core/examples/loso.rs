//! Leave-one-subject-out evaluation across every subject and two seeds.
//!
//! cargo run --release --example loso

use eegdm::config::RunConfig;
use eegdm::downstream;
use eegdm::pipeline;

fn main() -> eegdm::Result<()> {
    let mut cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml"))?;
    cfg.train.steps = 100;
    cfg.downstream.epochs = 10;
    let data = pipeline::prepare(&cfg)?;
    let (model, _) = pipeline::pretrain_model(&cfg, &data, 0)?;

    let report = downstream::run_loso(&model, &data.samples, &cfg.downstream, &[], &[0, 1])?;
    for f in &report.folds {
        println!(
            "held out {:<6} seed {}  BA {:.3}  (n = {})",
            f.subject, f.seed, f.report.balanced_accuracy, f.report.n_eval
        );
    }
    for (metric, mean) in &report.aggregate.mean {
        println!("{metric:<18} {mean:.3} ± {:.3}", report.aggregate.std[metric]);
    }
    Ok(())
}
