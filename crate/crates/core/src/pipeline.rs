//! Command orchestration: data preparation, the six commands, and the
//! artifacts each writes (resolved config, manifest, curves, reports).
//!
//! Every command writes into `<root>/<command>/`, where the root is `--out`,
//! else `$EEGDM_OUT`, else `output.dir`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::RunConfig;
use crate::downstream::{self, Aggregate, Classifier, EpochPoint, GenerationQuality, LosoReport};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{self, CurvePoint, Eegdm};
use crate::signal::{self, LabelRow, Recording, Sample};
use crate::split::{self, SplitMode};
use crate::synth;

/// Command-line overrides shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Guidance scale for generation.
    pub scale: Option<f64>,
    /// Number of samples to generate or embeddings to export.
    pub count: Option<usize>,
}

impl Overrides {
    fn root(&self, cfg: &RunConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir())
    }

    fn seeds(&self, cfg: &RunConfig) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => cfg.train.seeds.clone(),
        }
    }

    fn checkpoint_or(&self, cfg: &RunConfig, default_cmd: &str, file: &str) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.root(cfg).join(default_cmd).join(file))
    }
}

pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";

/// Segmented dataset together with the fixed train/test partition.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub samples: Vec<Sample>,
    pub channels: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Prepared {
    pub fn train_samples(&self) -> Vec<Sample> {
        self.train.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn test_samples(&self) -> Vec<Sample> {
        self.test.iter().map(|&i| self.samples[i].clone()).collect()
    }
}

/// Loads or synthesises recordings, resamples, z-scores and segments them.
pub fn load_recordings(cfg: &RunConfig) -> Result<Vec<Recording>> {
    let recs = match (&cfg.data.path, &cfg.data.synth) {
        (Some(p), _) => signal::load_dataset(p)?,
        (None, Some(s)) => synth::synth_generate(s, cfg.data.synth_seed)?,
        (None, None) => return Err(Error::Config("no data source".into())),
    };
    if recs.is_empty() {
        return Err(Error::Config("dataset holds no recordings".into()));
    }
    recs.into_iter()
        .map(|r| {
            let r = if (r.sampling_rate - cfg.data.sampling_rate).abs() > 1e-9 {
                signal::resample(&r, cfg.data.sampling_rate)?
            } else {
                r
            };
            Ok(if cfg.data.normalize { signal::zscore(&r) } else { r })
        })
        .collect()
}

/// Segments every recording and computes the train/test partition used by
/// pre-training, fine-tuning and evaluation.
///
/// `loso` mode without a held-out subject trains on everything; the LOSO
/// command builds its own folds.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let recs = load_recordings(cfg)?;
    let channels = recs[0].channels();
    let mut samples = Vec::new();
    for r in &recs {
        if r.channels() != channels {
            return Err(Error::InvalidRecording(format!(
                "recording {} has {} channels, expected {channels}",
                r.id,
                r.channels()
            )));
        }
        samples.extend(signal::segment(r, cfg.data.sample_len, cfg.data.stride)?);
    }
    let spec = &cfg.downstream.split;
    let (train, test) = if spec.mode == SplitMode::Loso && spec.held_out_subject.is_none() {
        ((0..samples.len()).collect(), Vec::new())
    } else {
        let s = split::split(&samples, spec)?;
        (s.train, s.test)
    };
    Ok(Prepared {
        samples,
        channels,
        train,
        test,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    crate_version: &'a str,
    seeds: &'a [u64],
    checkpoint: Option<&'a Path>,
    outputs: Vec<String>,
    elapsed_seconds: f64,
    config: &'a RunConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the resolved config and the run manifest next to the outputs.
fn finish(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    seeds: &[u64],
    checkpoint: Option<&Path>,
    outputs: &[&str],
    started: Instant,
) -> Result<()> {
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command,
            crate_version: env!("CARGO_PKG_VERSION"),
            seeds,
            checkpoint,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
            config: cfg,
        },
    )
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: Vec<CurvePoint>,
    pub model: Eegdm,
}

/// Fits the latent codec on the training split and jointly trains encoder
/// and DiT.
pub fn pretrain_model(cfg: &RunConfig, data: &Prepared, seed: u64) -> Result<(Eegdm, Vec<CurvePoint>)> {
    let train = data.train_samples();
    if train.is_empty() {
        return Err(Error::Config("pre-training split is empty".into()));
    }
    let basis = model::fit_basis(&cfg.pca, &train)?;
    let mut m = Eegdm::from_config(cfg, basis, data.channels, seed)?;
    let every = cfg.train.log_every.max(1);
    let curve = m.pretrain(&train, &cfg.augment.views, &cfg.train, seed, |p| {
        if p.step % every == 0 {
            info!(
                "pretrain step {:>5}  loss {:.5}  simple {:.5}  vlb {:.5}",
                p.step, p.total, p.simple, p.vlb
            );
        }
    })?;
    Ok((m, curve))
}

pub fn cmd_pretrain(cfg: &RunConfig, o: &Overrides) -> Result<PretrainOutcome> {
    let started = Instant::now();
    let seed = o.seed.unwrap_or(cfg.train.seeds[0]);
    let dir = o.root(cfg).join("pretrain");
    create_dir(&dir)?;
    let data = prepare(cfg)?;
    let (m, curve) = pretrain_model(cfg, &data, seed)?;
    let checkpoint = dir.join(PRETRAINED_FILE);
    Checkpoint::from_model(&m, cfg, curve.len(), seed).save(&checkpoint)?;
    write_csv(&dir.join("curve.csv"), &curve)?;
    finish(&dir, "pretrain", cfg, &[seed], None, &[PRETRAINED_FILE, "curve.csv"], started)?;
    Ok(PretrainOutcome {
        dir,
        checkpoint,
        curve,
        model: m,
    })
}

fn load_pretrained(path: &Path) -> Result<(Checkpoint, Eegdm)> {
    let ck = Checkpoint::load(path)?;
    let m = ck.to_model()?;
    Ok((ck, m))
}

fn finetune_views(cfg: &RunConfig) -> Vec<crate::augment::AugmentSpec> {
    if cfg.augment.finetune_views {
        cfg.augment.views.clone()
    } else {
        Vec::new()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneOutcome {
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
    #[serde(skip)]
    pub checkpoint: PathBuf,
    #[serde(skip)]
    pub classifier: Option<Classifier>,
}

#[derive(Serialize)]
struct EpochRow {
    seed: u64,
    epoch: usize,
    loss: f64,
    train_accuracy: f64,
}

/// Fine-tunes once per seed, evaluates each run on the test split and saves
/// the first seed's model as the fine-tuned checkpoint.
pub fn cmd_finetune(cfg: &RunConfig, o: &Overrides) -> Result<FinetuneOutcome> {
    let started = Instant::now();
    let ck_path = o.checkpoint_or(cfg, "pretrain", PRETRAINED_FILE);
    let (ck, m) = load_pretrained(&ck_path)?;
    let dir = o.root(cfg).join("finetune");
    create_dir(&dir)?;
    let data = prepare(cfg)?;
    let (train, test) = (data.train_samples(), data.test_samples());
    let seeds = o.seeds(cfg);
    let views = finetune_views(cfg);
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut first: Option<Classifier> = None;
    for &seed in &seeds {
        let (clf, curve) = downstream::finetune(&m, &train, &cfg.downstream, views.clone(), seed)?;
        info!(
            "finetune seed {seed}: final loss {:.4}, train accuracy {:.3}",
            curve.last().map_or(f64::NAN, |p| p.loss),
            curve.last().map_or(f64::NAN, |p| p.train_accuracy)
        );
        rows.extend(curve.into_iter().map(|p: EpochPoint| EpochRow {
            seed,
            epoch: p.epoch,
            loss: p.loss,
            train_accuracy: p.train_accuracy,
        }));
        if !test.is_empty() {
            runs.push(SeedRun {
                seed,
                report: clf.evaluate(&test)?,
            });
        }
        first.get_or_insert(clf);
    }
    let clf = first.expect("at least one seed");
    let mut out_ck = ck.clone();
    out_ck.update_params(&clf.params.filtered("enc."))?;
    let out_ck = out_ck.with_head(&clf.head())?;
    let checkpoint = dir.join(FINETUNED_FILE);
    out_ck.save(&checkpoint)?;
    write_csv(&dir.join("curve.csv"), &rows)?;
    let outcome = FinetuneOutcome {
        aggregate: Aggregate::from_reports(runs.iter().map(|r| &r.report)),
        runs,
        checkpoint,
        classifier: Some(clf),
    };
    write_json(&dir.join("metrics.json"), &outcome)?;
    finish(
        &dir,
        "finetune",
        cfg,
        &seeds,
        Some(&ck_path),
        &[FINETUNED_FILE, "curve.csv", "metrics.json"],
        started,
    )?;
    Ok(outcome)
}

/// Restores encoder and head from a fine-tuned checkpoint.
pub fn load_classifier(path: &Path, cfg: &RunConfig) -> Result<Classifier> {
    let ck = Checkpoint::load(path)?;
    if ck.manifest.kind != CheckpointKind::Finetuned {
        return Err(Error::Checkpoint(format!(
            "{} is not a fine-tuned checkpoint",
            path.display()
        )));
    }
    let m = ck.to_model()?;
    Classifier::from_parts(m.encoder.clone(), &m.params, &ck.head()?, finetune_views(cfg))
}

pub fn cmd_evaluate(cfg: &RunConfig, o: &Overrides) -> Result<MetricsReport> {
    let started = Instant::now();
    let ck_path = o.checkpoint_or(cfg, "finetune", FINETUNED_FILE);
    let clf = load_classifier(&ck_path, cfg)?;
    let dir = o.root(cfg).join("evaluate");
    create_dir(&dir)?;
    let data = prepare(cfg)?;
    let test = data.test_samples();
    if test.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let report = clf.evaluate(&test)?;
    write_json(&dir.join("metrics.json"), &report)?;
    finish(&dir, "evaluate", cfg, &[], Some(&ck_path), &["metrics.json"], started)?;
    Ok(report)
}

pub fn cmd_loso(cfg: &RunConfig, o: &Overrides) -> Result<LosoReport> {
    let started = Instant::now();
    let ck_path = o.checkpoint_or(cfg, "pretrain", PRETRAINED_FILE);
    let (_, m) = load_pretrained(&ck_path)?;
    let dir = o.root(cfg).join("loso");
    create_dir(&dir)?;
    let data = prepare(cfg)?;
    let seeds = o.seeds(cfg);
    let report = downstream::run_loso(&m, &data.samples, &cfg.downstream, &finetune_views(cfg), &seeds)?;
    write_json(&dir.join("loso.json"), &report)?;
    finish(&dir, "loso", cfg, &seeds, Some(&ck_path), &["loso.json"], started)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateOutcome {
    pub guidance_scale: f64,
    pub seed: u64,
    pub quality: GenerationQuality,
    pub files: Vec<String>,
}

/// Generates one signal per selected evaluation sample (class-balanced),
/// writes them as `.eegb` recordings with a label sidecar, and reports
/// time/frequency correlation against the originals.
pub fn cmd_generate(cfg: &RunConfig, o: &Overrides) -> Result<GenerateOutcome> {
    let started = Instant::now();
    let ck_path = o.checkpoint_or(cfg, "pretrain", PRETRAINED_FILE);
    let (_, m) = load_pretrained(&ck_path)?;
    let seed = o.seed.unwrap_or(cfg.train.seeds[0]);
    let scale = o.scale.unwrap_or(cfg.diffusion.guidance_scale);
    if !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("guidance scale {scale} must be >= 0")));
    }
    let n = o.count.unwrap_or(cfg.downstream.generation_samples);
    let dir = o.root(cfg).join("generate");
    create_dir(&dir)?;
    let data = prepare(cfg)?;
    let pool = if data.test.is_empty() {
        data.samples.clone()
    } else {
        data.test_samples()
    };
    let chosen: Vec<Sample> = downstream::class_balanced_indices(&pool, n, seed)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    if chosen.is_empty() {
        return Err(Error::InvalidArgument("nothing to generate".into()));
    }
    let (quality, generated) =
        downstream::generation_quality(&m, &chosen, &cfg.augment.views, scale, seed)?;
    let gen_dir = dir.join("signals");
    create_dir(&gen_dir)?;
    let mut files = Vec::new();
    let mut labels = Vec::new();
    for (i, (g, src)) in generated.iter().zip(&chosen).enumerate() {
        let id = format!("gen{i:04}");
        let rec = Recording::new(
            id.clone(),
            (0..g.channels()).map(|c| format!("ch{c}")).collect(),
            cfg.data.sampling_rate,
            g.data.mapv(|v| v as f32),
            src.subject_id.clone(),
            src.label,
        )?;
        let file = format!("{id}.eegb");
        signal::save_recording(&rec, gen_dir.join(&file))?;
        if let Some(label) = src.label {
            labels.push(LabelRow {
                recording_id: id,
                subject_id: src.subject_id.clone(),
                label,
            });
        }
        files.push(format!("signals/{file}"));
    }
    signal::write_labels(&labels, gen_dir.join(signal::LABELS_FILE))?;
    let outcome = GenerateOutcome {
        guidance_scale: scale,
        seed,
        quality,
        files,
    };
    write_json(&dir.join("quality.json"), &outcome)?;
    finish(&dir, "generate", cfg, &[seed], Some(&ck_path), &["quality.json", "signals/"], started)?;
    Ok(outcome)
}

/// Exports encoder embeddings of every sample (or a class-balanced subset of
/// `--count` samples). Uses a fine-tuned checkpoint's encoder when given one.
pub fn cmd_export_embeddings(cfg: &RunConfig, o: &Overrides) -> Result<PathBuf> {
    let started = Instant::now();
    let ck_path = o.checkpoint_or(cfg, "pretrain", PRETRAINED_FILE);
    let (_, m) = load_pretrained(&ck_path)?;
    let seed = o.seed.unwrap_or(cfg.train.seeds[0]);
    let dir = o.root(cfg).join("export-embeddings");
    create_dir(&dir)?;
    let data = prepare(cfg)?;
    let path = dir.join("embeddings.csv");
    let rows = downstream::export_embeddings(&m.encoder, &m.params, &data.samples, &path, o.count, seed)?;
    info!("wrote {rows} embeddings to {}", path.display());
    finish(&dir, "export-embeddings", cfg, &[seed], Some(&ck_path), &["embeddings.csv"], started)?;
    Ok(path)
}
