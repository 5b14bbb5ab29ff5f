mod common;

use std::path::Path;
use std::process::{Command, Output};

use eegdm::config::RunConfig;
use eegdm::signal;
use eegdm::synth;

fn quick_config() -> RunConfig {
    let mut cfg = common::smoke_config();
    cfg.train.steps = 8;
    cfg.train.seeds = vec![0];
    cfg.downstream.epochs = 2;
    cfg.downstream.generation_samples = 2;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn eegdm(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eegdm"));
    cmd.args(args).env("RUST_LOG", "warn");
    match out_env {
        Some(p) => cmd.env("EEGDM_OUT", p),
        None => cmd.env_remove("EEGDM_OUT"),
    };
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn full_command_flow_on_stored_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let mut cfg = quick_config();
    let recs = synth::synth_generate(cfg.data.synth.as_ref().unwrap(), cfg.data.synth_seed).unwrap();
    signal::save_dataset(&recs, &data_dir).unwrap();
    cfg.data.path = Some(data_dir);
    cfg.data.synth = None;
    let config = write_config(dir.path(), &cfg);
    let config = config.to_str().unwrap();
    let out = dir.path().join("out");

    for cmd in ["pretrain", "finetune", "evaluate", "generate", "export-embeddings", "loso"] {
        let o = eegdm(&[cmd, "--config", config, "--seed", "0", "--n", "4"], Some(&out));
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let manifest = out.join(cmd).join("manifest.json");
        assert!(manifest.exists(), "{cmd} wrote no manifest");
    }
    assert!(out.join("pretrain/pretrained.ckpt").exists());
    assert!(out.join("finetune/finetuned.ckpt").exists());
    assert!(out.join("evaluate/metrics.json").exists());
    // Generated signals form a dataset in the same on-disk format.
    let generated = signal::load_dataset(out.join("generate/signals")).unwrap();
    assert_eq!(generated.len(), 4);
    assert!(generated.iter().all(|r| r.label.is_some() && r.duration() == cfg.data.sample_len));
    let emb = std::fs::read_to_string(out.join("export-embeddings/embeddings.csv")).unwrap();
    assert_eq!(emb.lines().count(), 5);

    // `--out` wins over the environment; `--checkpoint` points at the input.
    let elsewhere = dir.path().join("elsewhere");
    let ckpt = out.join("finetune/finetuned.ckpt");
    let o = eegdm(
        &[
            "evaluate",
            "--config",
            config,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            elsewhere.to_str().unwrap(),
        ],
        Some(&out),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(elsewhere.join("evaluate/metrics.json")).unwrap(),
        std::fs::read(out.join("evaluate/metrics.json")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config();
    cfg.data.path = Some(dir.path().join("no-such-dir"));
    let config = write_config(dir.path(), &cfg);
    let o = eegdm(&["pretrain", "--config", config.to_str().unwrap()], Some(dir.path()));
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_key_and_bad_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = quick_config().to_toml();
    let path = dir.path().join("bad.toml");

    std::fs::write(&path, format!("{text}\n[extra]\nfoo = 1\n")).unwrap();
    let o = eegdm(&["pretrain", "--config", path.to_str().unwrap()], Some(dir.path()));
    assert_eq!(code(&o), 2);

    let mut cfg = quick_config();
    cfg.pca.components = cfg.pca.window + 1;
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let o = eegdm(&["pretrain", "--config", path.to_str().unwrap()], Some(dir.path()));
    assert_eq!(code(&o), 2);

    let o = eegdm(&["evaluate", "--config", dir.path().join("absent.toml").to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &quick_config());
    let root = dir.path().join("env-root");
    let o = eegdm(&["pretrain", "--config", config.to_str().unwrap()], Some(&root));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("pretrain/pretrained.ckpt").exists());
    assert!(root.join("pretrain/curve.csv").exists());
}

#[test]
fn divergent_training_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config();
    cfg.train.lr = 1e300;
    cfg.train.grad_clip = None;
    let config = write_config(dir.path(), &cfg);
    let o = eegdm(&["pretrain", "--config", config.to_str().unwrap()], Some(dir.path()));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
