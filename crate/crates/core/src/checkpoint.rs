//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `EEGDMCK1`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as `f64` little-endian in
//! manifest order. The manifest echoes the run config and lists every
//! tensor's name and shape; loading checks both the payload and the
//! restored model's expected shapes against it.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, ParamStore};
use crate::config::RunConfig;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::model::Eegdm;
use crate::pca::PcaBasis;

pub const MAGIC: &[u8; 8] = b"EEGDMCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: CheckpointKind,
    pub step: usize,
    pub seed: u64,
    pub channels: usize,
    pub n_classes: Option<usize>,
    pub config: RunConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: ParamStore,
}

fn row(v: &Array1<f64>) -> Mat {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn vector(m: &Mat) -> Array1<f64> {
    m.iter().copied().collect()
}

impl Checkpoint {
    /// Packs a model's parameters, PCA codec and schedule.
    pub fn from_model(model: &Eegdm, config: &RunConfig, step: usize, seed: u64) -> Self {
        let mut tensors = ParamStore::new();
        tensors.insert("pca.basis", model.basis.basis.clone());
        tensors.insert("pca.mean", row(&model.basis.mean));
        tensors.insert("pca.eigenvalues", row(&model.basis.eigenvalues));
        tensors.insert("pca.coeff_scale", row(&model.basis.coeff_scale));
        tensors.insert(
            "schedule.betas",
            Mat::from_shape_vec((1, model.schedule.t_max), model.schedule.betas().to_vec())
                .expect("length matches"),
        );
        tensors.absorb(&model.params);
        let mut ck = Checkpoint {
            manifest: Manifest {
                version: VERSION,
                kind: CheckpointKind::Pretrained,
                step,
                seed,
                channels: model.geometry().channels,
                n_classes: None,
                config: config.clone(),
                tensors: Vec::new(),
            },
            tensors,
        };
        ck.refresh_entries();
        ck
    }

    /// Adds a linear head (`head.w`: `d x n_classes`, `head.b`: `1 x n_classes`)
    /// and marks the checkpoint as fine-tuned.
    pub fn with_head(mut self, head: &ParamStore) -> Result<Self> {
        let w = head
            .get("head.w")
            .ok_or_else(|| Error::Checkpoint("head.w missing".into()))?;
        let n_classes = w.ncols();
        for (name, value) in head.iter() {
            if let Some(slot) = self.tensors.get_mut(name) {
                *slot = value.clone();
            } else {
                self.tensors.insert(name.to_string(), value.clone());
            }
        }
        self.manifest.kind = CheckpointKind::Finetuned;
        self.manifest.n_classes = Some(n_classes);
        self.refresh_entries();
        Ok(self)
    }

    /// Replaces the stored tensors of every parameter in `params`.
    pub fn update_params(&mut self, params: &ParamStore) -> Result<()> {
        for (name, value) in params.iter() {
            let slot = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if slot.dim() != value.dim() {
                return Err(Error::Checkpoint(format!("shape change for {name}")));
            }
            *slot = value.clone();
        }
        Ok(())
    }

    fn refresh_entries(&mut self) {
        self.manifest.tensors = self
            .tensors
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.to_string(),
                shape: [v.nrows(), v.ncols()],
            })
            .collect();
    }

    fn tensor(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing")))
    }

    /// Rebuilds the model; every `enc.*`/`dit.*` tensor must match the shape
    /// the configured architecture expects.
    pub fn to_model(&self) -> Result<Eegdm> {
        let cfg = &self.manifest.config;
        let basis_m = self.tensor("pca.basis")?.clone();
        let (k, window) = basis_m.dim();
        let basis = PcaBasis {
            window,
            components: k,
            basis: basis_m,
            mean: vector(self.tensor("pca.mean")?),
            eigenvalues: vector(self.tensor("pca.eigenvalues")?),
            coeff_scale: vector(self.tensor("pca.coeff_scale")?),
        };
        if basis.mean.len() != window || basis.eigenvalues.len() != k || basis.coeff_scale.len() != k {
            return Err(Error::Checkpoint("inconsistent PCA tensors".into()));
        }
        let schedule = NoiseSchedule::from_betas(vector(self.tensor("schedule.betas")?).to_vec())?;
        let mut model = Eegdm::assemble(
            cfg.encoder.clone(),
            cfg.dit.clone(),
            cfg.diffusion.clone(),
            basis.clone(),
            schedule,
            self.manifest.channels,
            cfg.data.sample_len,
        )?;
        // Shapes come from a throwaway initialisation of the same architecture.
        let reference = Eegdm::from_config(cfg, basis, self.manifest.channels, 0)?;
        let mut params = ParamStore::new();
        for (name, expected) in reference.params.iter() {
            let got = self.tensor(name)?;
            if got.dim() != expected.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, architecture expects {:?}",
                    got.dim(),
                    expected.dim()
                )));
            }
            params.insert(name.to_string(), got.clone());
        }
        let model_tensors = self
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with("enc.") || n.starts_with("dit."))
            .count();
        if model_tensors != params.len() {
            return Err(Error::Checkpoint(
                "checkpoint holds tensors the architecture does not use".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    /// The linear head of a fine-tuned checkpoint.
    pub fn head(&self) -> Result<ParamStore> {
        let n = self
            .manifest
            .n_classes
            .ok_or_else(|| Error::Checkpoint("checkpoint has no prediction head".into()))?;
        let w = self.tensor("head.w")?;
        let b = self.tensor("head.b")?;
        let d = self.manifest.config.encoder.embed_dim;
        if w.dim() != (d, n) || b.dim() != (1, n) {
            return Err(Error::Checkpoint(format!(
                "head shapes {:?}/{:?} do not match ({d}, {n})",
                w.dim(),
                b.dim()
            )));
        }
        let mut head = ParamStore::new();
        head.insert("head.w", w.clone());
        head.insert("head.b", b.clone());
        Ok(head)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let scalars = self.tensors.num_scalars();
        let mut out = Vec::with_capacity(16 + manifest.len() + 8 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for entry in &self.manifest.tensors {
            let t = self.tensor(&entry.name)?;
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::Checkpoint("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len])?;
        if manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                manifest.version
            )));
        }
        let payload = &body[len..];
        let expected: usize = manifest.tensors.iter().map(|e| e.shape[0] * e.shape[1] * 8).sum();
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, manifest describes {expected}",
                payload.len()
            )));
        }
        let mut tensors = ParamStore::new();
        let mut off = 0;
        for e in &manifest.tensors {
            let n = e.shape[0] * e.shape[1];
            let vals: Vec<f64> = payload[off..off + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += 8 * n;
            if tensors.id(&e.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", e.name)));
            }
            tensors.insert(
                e.name.clone(),
                Mat::from_shape_vec((e.shape[0], e.shape[1]), vals).expect("length checked"),
            );
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn config() -> RunConfig {
        RunConfig::from_toml(
            r#"
[data]
sample_len = 32
[data.synth]
channels = 2
[pca]
window = 8
components = 4
[encoder]
patch_window = 8
embed_dim = 8
depth = 1
heads = 2
max_tokens = 8
[dit]
token_dim = 8
depth = 1
heads = 2
time_features = 8
[diffusion]
t_max = 20
"#,
        )
        .unwrap()
    }

    fn model(cfg: &RunConfig) -> Eegdm {
        let mut basis = PcaBasis::identity(8);
        basis.basis = basis.basis.slice(ndarray::s![..4, ..]).to_owned();
        basis.components = 4;
        basis.eigenvalues = Array1::ones(4);
        basis.coeff_scale = Array1::from(vec![1.0, 2.0, 3.0, 4.0]);
        let mut m = Eegdm::from_config(cfg, basis, 2, 1).unwrap();
        crate::nn::randomize(&mut m.params, 0.1, &mut rng::seeded(5));
        m
    }

    #[test]
    fn round_trip_restores_model_exactly() {
        let cfg = config();
        let m = model(&cfg);
        let ck = Checkpoint::from_model(&m, &cfg, 7, 42);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let m2 = back.to_model().unwrap();
        assert_eq!(m2.params, m.params);
        assert_eq!(m2.basis, m.basis);
        assert_eq!(m2.schedule, m.schedule);
        assert_eq!(back.manifest.step, 7);
        assert_eq!(back.manifest.seed, 42);
    }

    #[test]
    fn head_round_trip() {
        let cfg = config();
        let m = model(&cfg);
        let mut head = ParamStore::new();
        head.insert("head.w", Mat::from_elem((8, 3), 0.5));
        head.insert("head.b", Mat::zeros((1, 3)));
        let ck = Checkpoint::from_model(&m, &cfg, 0, 0).with_head(&head).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.manifest.kind, CheckpointKind::Finetuned);
        assert_eq!(back.head().unwrap(), head);
        back.to_model().unwrap();
    }

    #[test]
    fn corruption_detected() {
        let cfg = config();
        let ck = Checkpoint::from_model(&model(&cfg), &cfg, 0, 0);
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn shape_mismatch_against_architecture_rejected() {
        let cfg = config();
        let mut ck = Checkpoint::from_model(&model(&cfg), &cfg, 0, 0);
        *ck.tensors.get_mut("dit.eps.w").unwrap() = Mat::zeros((8, 5));
        ck.refresh_entries();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert!(matches!(back.to_model(), Err(Error::Checkpoint(_))));
    }
}
