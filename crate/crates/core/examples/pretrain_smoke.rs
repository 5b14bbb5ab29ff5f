//! Pre-train the joint encoder + DiT on the bundled smoke configuration and
//! write the checkpoint under `runs/smoke` (or `$EEGDM_OUT`).
//!
//! cargo run --release --example pretrain_smoke

use eegdm::config::RunConfig;
use eegdm::pipeline::{self, Overrides};

fn main() -> eegdm::Result<()> {
    let cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml"))?;
    let out = pipeline::cmd_pretrain(&cfg, &Overrides::default())?;
    for p in out.curve.iter().step_by(cfg.train.log_every) {
        println!(
            "step {:>4}  loss {:.4}  simple {:.4}  vlb {:.4}  |g| {:.3}",
            p.step, p.total, p.simple, p.vlb, p.grad_norm
        );
    }
    println!("checkpoint: {}", out.checkpoint.display());
    Ok(())
}
