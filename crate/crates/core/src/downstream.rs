//! Downstream use of the pre-trained encoder: fine-tuning with a linear head,
//! evaluation, leave-one-subject-out runs, embedding export and generation
//! quality.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentSpec, ViewSet};
use crate::autograd::{Grads, Graph, Mat, ParamStore, Var};
use crate::config::DownstreamConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::Eegdm;
use crate::nn::{self, Init};
use crate::optim::Adam;
use crate::rng;
use crate::signal::Sample;
use crate::split;

/// Pre-trained encoder plus a linear prediction head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    /// `enc.*` tensors and `head.w` (`d x n_classes`), `head.b`.
    pub params: ParamStore,
    pub n_classes: usize,
    /// Augmentations fed to the encoder alongside the original; empty for `m = 1`.
    pub views: Vec<AugmentSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

fn labels_of(samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no label", s.id())))
        })
        .collect()
}

/// Class count from labels or config; rejects out-of-range and single-class sets.
pub fn check_labels(labels: &[usize], n_classes: Option<usize>) -> Result<usize> {
    let n = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange { label, n_classes: n });
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "training set has {} distinct class(es)",
            distinct.len()
        )));
    }
    Ok(n.max(2))
}

impl Classifier {
    /// Copies the encoder of `model` and attaches a fresh head.
    pub fn from_pretrained(model: &Eegdm, n_classes: usize, views: Vec<AugmentSpec>, seed: u64) -> Self {
        let mut params = model.params.filtered("enc.");
        let d = model.encoder.config.embed_dim;
        let mut r = rng::substream(seed, &[0x4ead]);
        nn::add_linear(&mut params, "head", d, n_classes, Init::LeCun, &mut r);
        Classifier {
            encoder: model.encoder.clone(),
            params,
            n_classes,
            views,
        }
    }

    /// Restores a classifier from encoder and head tensors.
    pub fn from_parts(encoder: Encoder, enc_params: &ParamStore, head: &ParamStore, views: Vec<AugmentSpec>) -> Result<Self> {
        let mut params = enc_params.filtered("enc.");
        params.absorb(head);
        let n_classes = params
            .get("head.w")
            .ok_or_else(|| Error::Checkpoint("head.w missing".into()))?
            .ncols();
        Ok(Classifier {
            encoder,
            params,
            n_classes,
            views,
        })
    }

    /// The head tensors only.
    pub fn head(&self) -> ParamStore {
        self.params.filtered("head.")
    }

    fn view_set(&self, sample: &Sample) -> Result<ViewSet> {
        if self.views.is_empty() {
            Ok(ViewSet::single(sample.clone()))
        } else {
            augment::make_views(sample, &self.views)
        }
    }

    fn head_logits(g: &mut Graph, e: Var) -> Var {
        nn::linear(g, e, "head")
    }

    /// Encoder representation (frozen, inference mode).
    pub fn features(&self, sample: &Sample) -> Result<Array1<f64>> {
        self.encoder.represent(&self.params, &self.view_set(sample)?)
    }

    /// Softmax class probabilities, one row per sample.
    pub fn scores(&self, samples: &[Sample]) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = samples
            .par_iter()
            .map(|s| {
                let mut g = Graph::new(&self.params);
                let e = self.encoder.encode(&mut g, &self.view_set(s)?)?;
                let l = Self::head_logits(&mut g, e);
                Ok(softmax(g.value(l).row(0).to_owned()))
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((samples.len(), self.n_classes));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&r);
        }
        Ok(out)
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<MetricsReport> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        let labels = labels_of(samples)?;
        if let Some(&label) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: self.n_classes,
            });
        }
        MetricsReport::from_scores(&labels, &self.scores(samples)?)
    }
}

fn softmax(mut l: Array1<f64>) -> Array1<f64> {
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    l.mapv_inplace(|v| (v - max).exp());
    let s = l.sum();
    l / s
}

/// Minimises cross-entropy of the linear head on top of the encoder.
///
/// With `freeze_encoder` only the head is updated and encoder features are
/// computed once. The training subset is the class-stratified
/// `cfg.fraction` of `train`.
pub fn finetune(
    model: &Eegdm,
    train: &[Sample],
    cfg: &DownstreamConfig,
    views: Vec<AugmentSpec>,
    seed: u64,
) -> Result<(Classifier, Vec<EpochPoint>)> {
    let all_labels = labels_of(train)?;
    let n_classes = check_labels(&all_labels, cfg.n_classes)?;
    let keep = split::stratified_subset(&all_labels, cfg.fraction, seed)?;
    let subset: Vec<Sample> = keep.iter().map(|&i| train[i].clone()).collect();
    let labels: Vec<usize> = keep.iter().map(|&i| all_labels[i]).collect();
    check_labels(&labels, Some(n_classes))?;

    let mut clf = Classifier::from_pretrained(model, n_classes, views, seed);
    let features: Option<Vec<Mat>> = if cfg.freeze_encoder {
        Some(
            subset
                .par_iter()
                .map(|s| Ok(clf.features(s)?.insert_axis(Axis(0))))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..subset.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::substream(seed, &[0xf1e, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let per_item: Vec<Result<(f64, bool, Grads)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new(&clf.params);
                    let e = match &features {
                        Some(f) => g.constant(f[i].clone()),
                        None => clf.encoder.encode(&mut g, &clf.view_set(&subset[i])?)?,
                    };
                    let logits = Classifier::head_logits(&mut g, e);
                    let pred = crate::metrics::argmax(g.value(logits).row(0));
                    let loss = g.cross_entropy(logits, labels[i]);
                    Ok((g.scalar(loss), pred == labels[i], g.backward(loss)))
                })
                .collect();
            let mut grads = Grads::zeros_like(&clf.params);
            for r in per_item {
                let (l, ok, g) = r?;
                loss_sum += l;
                correct += ok as usize;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if cfg.freeze_encoder {
                grads.retain(&clf.params, |n| n.starts_with("head."));
            }
            if !grads.is_finite() {
                return Err(Error::TrainingDivergence(format!(
                    "non-finite gradient in fine-tuning epoch {epoch}"
                )));
            }
            opt.update(&mut clf.params, &grads);
        }
        let n = subset.len() as f64;
        let loss = loss_sum / n;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence(format!(
                "fine-tuning loss {loss} at epoch {epoch}"
            )));
        }
        curve.push(EpochPoint {
            epoch,
            loss,
            train_accuracy: correct as f64 / n,
        });
    }
    Ok((clf, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub subject: String,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Mean and standard deviation (n−1 denominator; 0 for one run) per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Self {
        let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut runs = 0;
        for r in reports {
            runs += 1;
            let mut put = |k: &str, v: f64| cols.entry(k.to_string()).or_default().push(v);
            put("balanced_accuracy", r.balanced_accuracy);
            put("weighted_f1", r.weighted_f1);
            put("cohens_kappa", r.cohens_kappa);
            if let Some(a) = r.auroc {
                put("auroc", a);
            }
        }
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for (k, v) in cols {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let s = if v.len() > 1 {
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            mean.insert(k.clone(), m);
            std.insert(k, s);
        }
        Aggregate { runs, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
}

/// One fine-tune/evaluate per (held-out subject, seed). Samples are put in a
/// canonical order first, so the input order does not affect any fold.
pub fn run_loso(
    model: &Eegdm,
    samples: &[Sample],
    cfg: &DownstreamConfig,
    views: &[AugmentSpec],
    seeds: &[u64],
) -> Result<LosoReport> {
    let mut canon = samples.to_vec();
    canon.sort_by(|a, b| {
        (&a.subject_id, &a.source_recording, a.offset).cmp(&(&b.subject_id, &b.source_recording, b.offset))
    });
    let subjects = split::subjects(&canon);
    if subjects.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let n_classes = match cfg.n_classes {
        Some(n) => n,
        None => check_labels(&labels_of(&canon)?, None)?,
    };
    let mut fold_cfg = cfg.clone();
    fold_cfg.n_classes = Some(n_classes);
    let jobs: Vec<(String, u64)> = subjects
        .iter()
        .flat_map(|s| seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();
    let folds: Vec<FoldReport> = jobs
        .par_iter()
        .map(|(subject, seed)| {
            let (test, train): (Vec<Sample>, Vec<Sample>) = canon
                .iter()
                .cloned()
                .partition(|s| &s.subject_id == subject);
            let (clf, _) = finetune(model, &train, &fold_cfg, views.to_vec(), *seed)?;
            Ok(FoldReport {
                subject: subject.clone(),
                seed: *seed,
                report: clf.evaluate(&test)?,
            })
        })
        .collect::<Result<_>>()?;
    let aggregate = Aggregate::from_reports(folds.iter().map(|f| &f.report));
    Ok(LosoReport { folds, aggregate })
}

/// Picks `n` indices round-robin over classes (each class list shuffled by
/// `seed`), so every class contributes equally while it has samples left.
pub fn class_balanced_indices(samples: &[Sample], n: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut r = rng::substream(seed, &[0xe3b]);
    for v in by_class.values_mut() {
        v.shuffle(&mut r);
    }
    let mut queues: Vec<std::vec::IntoIter<usize>> = by_class.into_values().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(n.min(samples.len()));
    while out.len() < n {
        let mut progressed = false;
        for q in queues.iter_mut() {
            if out.len() == n {
                break;
            }
            if let Some(i) = q.next() {
                out.push(i);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out.sort_unstable();
    out
}

/// Writes `sample_id,label,e_1..e_d`, one row per sample. With `limit` the
/// rows are a class-balanced subsample. Returns the number of rows.
pub fn export_embeddings(
    encoder: &Encoder,
    params: &ParamStore,
    samples: &[Sample],
    path: impl AsRef<Path>,
    limit: Option<usize>,
    seed: u64,
) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to embed".into()));
    }
    let idx: Vec<usize> = match limit {
        Some(n) => class_balanced_indices(samples, n, seed),
        None => (0..samples.len()).collect(),
    };
    let rows: Vec<Array1<f64>> = idx
        .par_iter()
        .map(|&i| encoder.represent_sample(params, &samples[i]))
        .collect::<Result<_>>()?;
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let d = encoder.config.embed_dim;
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((1..=d).map(|j| format!("e_{j}")));
    w.write_record(&header)?;
    for (&i, e) in idx.iter().zip(&rows) {
        let mut rec = vec![
            samples[i].id(),
            samples[i].label.map(|l| l.to_string()).unwrap_or_default(),
        ];
        rec.extend(e.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(idx.len())
}

/// Pearson correlation; `None` if either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// One-sided magnitude spectrum (`len/2 + 1` bins).
pub fn magnitude_spectrum(x: &[f64], fft: &Arc<dyn rustfft::Fft<f64>>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationQuality {
    pub pearson_time: f64,
    pub pearson_freq: f64,
    pub n_pairs: usize,
    pub warnings: Vec<String>,
}

/// Per-channel Pearson correlation between generated and original signals in
/// time and on magnitude spectra, averaged over channels and samples.
/// Channels with zero variance on either side are skipped with a warning.
pub fn compare_signals(generated: &[Sample], original: &[Sample]) -> Result<GenerationQuality> {
    if generated.len() != original.len() || generated.is_empty() {
        return Err(Error::InvalidArgument(
            "need equally many (non-zero) generated and original samples".into(),
        ));
    }
    let mut planner = FftPlanner::new();
    let (mut st, mut sf, mut n, mut nf) = (0.0, 0.0, 0usize, 0usize);
    let mut warnings = Vec::new();
    for (gen, orig) in generated.iter().zip(original) {
        if gen.data.dim() != orig.data.dim() {
            return Err(Error::ShapeMismatch(format!(
                "generated {:?} vs original {:?}",
                gen.data.dim(),
                orig.data.dim()
            )));
        }
        let fft = planner.plan_fft_forward(orig.len());
        for c in 0..orig.channels() {
            let a = gen.data.row(c).to_vec();
            let b = orig.data.row(c).to_vec();
            match pearson(&a, &b) {
                Some(r) => {
                    st += r;
                    n += 1;
                }
                None => {
                    warnings.push(format!("{} channel {c}: zero variance, skipped", orig.id()));
                    continue;
                }
            }
            if let Some(r) = pearson(&magnitude_spectrum(&a, &fft), &magnitude_spectrum(&b, &fft)) {
                sf += r;
                nf += 1;
            }
        }
    }
    if n == 0 || nf == 0 {
        return Err(Error::InvalidArgument(
            "every channel had zero variance; correlation undefined".into(),
        ));
    }
    Ok(GenerationQuality {
        pearson_time: st / n as f64,
        pearson_freq: sf / nf as f64,
        n_pairs: n,
        warnings,
    })
}

/// Generates one signal per evaluation sample, conditioned on its view-set
/// representation, and compares it to the original.
pub fn generation_quality(
    model: &Eegdm,
    eval: &[Sample],
    views: &[AugmentSpec],
    guidance: f64,
    seed: u64,
) -> Result<(GenerationQuality, Vec<Sample>)> {
    let generated = model.generate_like(eval, views, guidance, seed)?;
    Ok((compare_signals(&generated, eval)?, generated))
}
