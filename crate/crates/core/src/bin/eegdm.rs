use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eegdm::config::RunConfig;
use eegdm::pipeline::{self, Overrides};
use eegdm::Error;

#[derive(Parser)]
#[command(name = "eegdm", version, about = "Latent diffusion pre-training for EEG representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Input checkpoint; defaults to the previous stage's output.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output root; overrides $EEGDM_OUT and output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed instead of the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Guidance scale for generation.
    #[arg(long)]
    scale: Option<f64>,
    /// Number of signals to generate or embeddings to export.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit PCA and jointly train encoder and DiT.
    Pretrain(Common),
    /// Sample signals conditioned on evaluation samples and score them.
    Generate(Common),
    /// Fine-tune the encoder with a linear head.
    Finetune(Common),
    /// Evaluate a fine-tuned checkpoint on the test split.
    Evaluate(Common),
    /// Leave-one-subject-out fine-tuning and evaluation.
    Loso(Common),
    /// Write encoder embeddings as CSV.
    ExportEmbeddings(Common),
}

fn run(cli: Cli) -> eegdm::Result<()> {
    let (name, c) = match &cli.command {
        Command::Pretrain(c) => ("pretrain", c),
        Command::Generate(c) => ("generate", c),
        Command::Finetune(c) => ("finetune", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Loso(c) => ("loso", c),
        Command::ExportEmbeddings(c) => ("export-embeddings", c),
    };
    let cfg = RunConfig::load(&c.config)?;
    let o = Overrides {
        checkpoint: c.checkpoint.clone(),
        out: c.out.clone(),
        seed: c.seed,
        scale: c.scale,
        count: c.n,
    };
    match name {
        "pretrain" => {
            let r = pipeline::cmd_pretrain(&cfg, &o)?;
            let last = r.curve.last().map_or(f64::NAN, |p| p.total);
            println!("checkpoint {} (final loss {last:.6})", r.checkpoint.display());
        }
        "generate" => {
            let r = pipeline::cmd_generate(&cfg, &o)?;
            println!(
                "generated {} signals: pearson_time {:.4}, pearson_freq {:.4}",
                r.files.len(),
                r.quality.pearson_time,
                r.quality.pearson_freq
            );
        }
        "finetune" => {
            let r = pipeline::cmd_finetune(&cfg, &o)?;
            println!("checkpoint {}", r.checkpoint.display());
            for (k, m) in &r.aggregate.mean {
                println!("{k}: {m:.4} ± {:.4}", r.aggregate.std[k]);
            }
        }
        "evaluate" => {
            let r = pipeline::cmd_evaluate(&cfg, &o)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        "loso" => {
            let r = pipeline::cmd_loso(&cfg, &o)?;
            for (k, m) in &r.aggregate.mean {
                println!("{k}: {m:.4} ± {:.4}", r.aggregate.std[k]);
            }
        }
        _ => {
            let p = pipeline::cmd_export_embeddings(&cfg, &o)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}
