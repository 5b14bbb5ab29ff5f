//! EEG containers, segmentation, preprocessing and the `EEGB1` file format.
//!
//! An `EEGB1` file is a single ASCII line `EEGB1`, one line of JSON metadata,
//! and then the payload: `channels * samples` little-endian `f32` values in
//! channel-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "EEGB1";
const DTYPE_TAG: &str = "f32le";

/// A continuous multi-channel recording `C x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub channel_names: Vec<String>,
    pub sampling_rate: f64,
    pub data: Array2<f32>,
    pub subject_id: String,
    pub label: Option<usize>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        channel_names: Vec<String>,
        sampling_rate: f64,
        data: Array2<f32>,
        subject_id: impl Into<String>,
        label: Option<usize>,
    ) -> Result<Self> {
        let rec = Recording {
            id: id.into(),
            channel_names,
            sampling_rate,
            data,
            subject_id: subject_id.into(),
            label,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, t) = self.data.dim();
        if c == 0 || t == 0 {
            return Err(Error::InvalidRecording(format!(
                "recording {} has empty shape {c}x{t}",
                self.id
            )));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(Error::InvalidRecording(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        if self.channel_names.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "{} channel names for {c} channels",
                self.channel_names.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecording(format!(
                "recording {} contains non-finite values",
                self.id
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn duration(&self) -> usize {
        self.data.ncols()
    }
}

/// A fixed-length window `C x t^s` cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: Array2<f64>,
    pub source_recording: String,
    pub subject_id: String,
    pub offset: usize,
    pub label: Option<usize>,
}

impl Sample {
    /// Wraps a bare matrix, mostly for tests and generated signals.
    pub fn from_data(data: Array2<f64>) -> Self {
        Sample {
            data,
            source_recording: String::new(),
            subject_id: String::new(),
            offset: 0,
            label: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Stable identifier `recording@offset`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.source_recording, self.offset)
    }
}

/// Number of windows produced by [`segment`]: `⌊(T − t^s)/s^t⌋ + 1`.
pub fn segment_count(duration: usize, sample_len: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if sample_len == 0 {
        return Err(Error::InvalidArgument("sample length must be at least 1".into()));
    }
    if sample_len > duration {
        return Err(Error::SampleExceedsRecording {
            sample_len,
            duration,
        });
    }
    Ok((duration - sample_len) / stride + 1)
}

/// Cuts a recording into windows of `sample_len` every `stride` timestamps.
pub fn segment(recording: &Recording, sample_len: usize, stride: usize) -> Result<Vec<Sample>> {
    let n = segment_count(recording.duration(), sample_len, stride)?;
    Ok((0..n)
        .map(|i| {
            let offset = i * stride;
            Sample {
                data: recording
                    .data
                    .slice(s![.., offset..offset + sample_len])
                    .mapv(f64::from),
                source_recording: recording.id.clone(),
                subject_id: recording.subject_id.clone(),
                offset,
                label: recording.label,
            }
        })
        .collect())
}

/// Z-scores each channel. Constant channels are only mean-centered.
pub fn zscore(recording: &Recording) -> Recording {
    let mut out = recording.clone();
    for mut row in out.data.rows_mut() {
        let n = row.len() as f64;
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = row
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        let inv = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        row.mapv_inplace(|v| ((f64::from(v) - mean) * inv) as f32);
    }
    out
}

/// Linear-interpolation resampling to `target_rate`.
pub fn resample(recording: &Recording, target_rate: f64) -> Result<Recording> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    if (target_rate - recording.sampling_rate).abs() < 1e-9 {
        return Ok(recording.clone());
    }
    let t = recording.duration();
    let ratio = recording.sampling_rate / target_rate;
    let new_len = (((t - 1) as f64) / ratio).floor() as usize + 1;
    let mut data = Array2::<f32>::zeros((recording.channels(), new_len));
    for (c, src) in recording.data.rows().into_iter().enumerate() {
        for i in 0..new_len {
            let pos = i as f64 * ratio;
            let lo = (pos.floor() as usize).min(t - 1);
            let hi = (lo + 1).min(t - 1);
            let frac = pos - lo as f64;
            let v = f64::from(src[lo]) * (1.0 - frac) + f64::from(src[hi]) * frac;
            data[[c, i]] = v as f32;
        }
    }
    let mut out = recording.clone();
    out.data = data;
    out.sampling_rate = target_rate;
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    id: String,
    channel_names: Vec<String>,
    sampling_rate: f64,
    shape: [usize; 2],
    dtype: String,
    subject_id: String,
    label: Option<usize>,
}

/// Encodes a recording as `EEGB1` bytes.
pub fn encode_recording(recording: &Recording) -> Result<Vec<u8>> {
    let header = Header {
        id: recording.id.clone(),
        channel_names: recording.channel_names.clone(),
        sampling_rate: recording.sampling_rate,
        shape: [recording.channels(), recording.duration()],
        dtype: DTYPE_TAG.to_string(),
        subject_id: recording.subject_id.clone(),
        label: recording.label,
    };
    let json = serde_json::to_string(&header)?;
    let mut out = Vec::with_capacity(json.len() + 8 + recording.data.len() * 4);
    out.extend_from_slice(FORMAT_TAG.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for row in recording.data.rows() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes `EEGB1` bytes.
pub fn decode_recording(bytes: &[u8]) -> Result<Recording> {
    let tag_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing format tag line".into()))?;
    if &bytes[..tag_end] != FORMAT_TAG.as_bytes() {
        return Err(Error::MalformedHeader(format!(
            "expected format tag {FORMAT_TAG}"
        )));
    }
    let rest = &bytes[tag_end + 1..];
    let json_end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("unterminated metadata line".into()))?;
    let header: Header = serde_json::from_slice(&rest[..json_end])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.dtype != DTYPE_TAG {
        return Err(Error::MalformedHeader(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    let [c, t] = header.shape;
    if c == 0 || t == 0 {
        return Err(Error::MalformedHeader(format!("empty shape {c}x{t}")));
    }
    let payload = &rest[json_end + 1..];
    let expected = c * t * 4;
    if payload.len() != expected {
        // Whole-channel discrepancies mean the header disagrees with the data;
        // anything else is a cut-off file.
        let whole_channels = payload.len() % (t * 4) == 0;
        return Err(if whole_channels {
            Error::ShapeMismatch(format!(
                "header declares {c}x{t} but payload holds {} channels",
                payload.len() / (t * 4)
            ))
        } else {
            Error::TruncatedPayload {
                expected,
                found: payload.len(),
            }
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let data = Array2::from_shape_vec((c, t), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Recording::new(
        header.id,
        header.channel_names,
        header.sampling_rate,
        data,
        header.subject_id,
        header.label,
    )
}

pub fn save_recording(recording: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_recording(recording)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_recording(&bytes)
}

/// Row of the label sidecar CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub recording_id: String,
    pub subject_id: String,
    pub label: usize,
}

pub fn write_labels(rows: &[LabelRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const LABELS_FILE: &str = "labels.csv";

/// Writes each recording as `<id>.eegb` plus a `labels.csv` sidecar.
pub fn save_dataset(recordings: &[Recording], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::new();
    for r in recordings {
        save_recording(r, dir.join(format!("{}.eegb", r.id)))?;
        if let Some(label) = r.label {
            rows.push(LabelRow {
                recording_id: r.id.clone(),
                subject_id: r.subject_id.clone(),
                label,
            });
        }
    }
    write_labels(&rows, dir.join(LABELS_FILE))
}

/// Loads every `*.eegb` file in `dir`, sorted by file name. Labels and
/// subjects from a `labels.csv` sidecar, when present, override the headers.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Recording>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "eegb"))
        .collect();
    paths.sort();
    let mut recs = paths
        .iter()
        .map(load_recording)
        .collect::<Result<Vec<_>>>()?;
    let sidecar = dir.join(LABELS_FILE);
    if sidecar.exists() {
        let rows = read_labels(&sidecar)?;
        for rec in &mut recs {
            if let Some(row) = rows.iter().find(|r| r.recording_id == rec.id) {
                rec.label = Some(row.label);
                rec.subject_id = row.subject_id.clone();
            }
        }
    }
    Ok(recs)
}
