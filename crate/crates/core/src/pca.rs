//! Windowed PCA codec between signal space and the diffusion latent space.
//!
//! Every channel of a sample is cut into non-overlapping windows of length
//! `ω`; one global orthonormal basis maps each centered window to `k`
//! coefficients. Since the rows are orthonormal the inverse map is the
//! transpose, so no whitening is folded into the basis. An optional
//! per-coefficient scale, stored alongside the basis, brings latents to unit
//! variance for the diffusion model.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::signal::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub window: usize,
    pub components: usize,
    /// `k x ω`, orthonormal rows.
    pub basis: Array2<f64>,
    pub mean: Array1<f64>,
    /// Descending, clamped at zero.
    pub eigenvalues: Array1<f64>,
    /// Per-coefficient standard deviation used to standardize latents
    /// (all ones when standardization is off).
    pub coeff_scale: Array1<f64>,
}

/// Latent tensor `(C, n_windows, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    pub data: Array3<f64>,
}

impl LatentBlock {
    pub fn zeros(channels: usize, n_windows: usize, k: usize) -> Self {
        LatentBlock {
            data: Array3::zeros((channels, n_windows, k)),
        }
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// One row per `(channel, window)` position, channel-major.
    pub fn to_tokens(&self) -> Array2<f64> {
        let (c, w, k) = self.data.dim();
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c * w, k))
            .expect("contiguous")
    }

    pub fn from_tokens(tokens: Array2<f64>, channels: usize, n_windows: usize) -> Result<Self> {
        let k = tokens.ncols();
        if tokens.nrows() != channels * n_windows {
            return Err(Error::ShapeMismatch(format!(
                "{} token rows for geometry {channels}x{n_windows}",
                tokens.nrows()
            )));
        }
        let data = tokens
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((channels, n_windows, k))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(LatentBlock { data })
    }
}

/// Stacks every non-overlapping `window`-length segment of every channel of
/// every sample into an `N x ω` matrix.
pub fn collect_windows<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
    window: usize,
) -> Result<Array2<f64>> {
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0;
    for sample in samples {
        check_tiling(sample.len(), window)?;
        for ch in sample.data.rows() {
            for w in 0..sample.len() / window {
                rows.extend(ch.slice(s![w * window..(w + 1) * window]).iter());
                n += 1;
            }
        }
    }
    Array2::from_shape_vec((n, window), rows).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

fn check_tiling(len: usize, window: usize) -> Result<()> {
    if window == 0 || len % window != 0 {
        return Err(Error::WindowDoesNotTile {
            window,
            sample_len: len,
        });
    }
    Ok(())
}

/// Population covariance (`1/N`) of the rows of `windows` and their mean.
pub fn covariance(windows: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = windows.nrows() as f64;
    let mean = windows.mean_axis(Axis(0)).expect("non-empty");
    let centered = windows - &mean;
    let cov = centered.t().dot(&centered) / n;
    (mean, cov)
}

/// Fits the top-`k` principal directions of `windows` (`N x ω`).
pub fn fit(windows: &Array2<f64>, k: usize) -> Result<PcaBasis> {
    let (n, omega) = windows.dim();
    if k == 0 || k > omega {
        return Err(Error::InvalidArgument(format!(
            "components must satisfy 1 <= k <= window ({k} vs {omega})"
        )));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "fewer windows ({n}) than components ({k})"
        )));
    }
    if windows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("windows contain non-finite values".into()));
    }
    let (mean, cov) = covariance(windows);
    let trace: f64 = cov.diag().sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateCovariance(
            "all windows are identical".into(),
        ));
    }
    let m = DMatrix::from_fn(omega, omega, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..omega).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut basis = Array2::zeros((k, omega));
    let mut eigenvalues = Array1::zeros(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let norm = v.norm();
        let pivot = (0..omega)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("omega >= 1");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..omega {
            basis[[row, j]] = sign * v[j] / norm;
        }
        eigenvalues[row] = eig.eigenvalues[idx].max(0.0);
    }
    Ok(PcaBasis {
        window: omega,
        components: k,
        basis,
        mean,
        eigenvalues,
        coeff_scale: Array1::ones(k),
    })
}

impl PcaBasis {
    /// The trivial codec used when PCA is disabled: raw windows, no centering.
    pub fn identity(window: usize) -> Self {
        PcaBasis {
            window,
            components: window,
            basis: Array2::eye(window),
            mean: Array1::zeros(window),
            eigenvalues: Array1::ones(window),
            coeff_scale: Array1::ones(window),
        }
    }

    /// Sets `coeff_scale` to the per-coefficient standard deviation of the
    /// projected `windows`. Zero-variance coefficients keep scale 1.
    pub fn fit_coeff_scale(&mut self, windows: &Array2<f64>) {
        let coeffs = self.project_windows(windows);
        let n = coeffs.nrows() as f64;
        let mean = coeffs.mean_axis(Axis(0)).expect("non-empty");
        self.coeff_scale = Array1::from_shape_fn(self.components, |i| {
            let var = coeffs
                .column(i)
                .iter()
                .map(|v| (v - mean[i]).powi(2))
                .sum::<f64>()
                / n;
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        });
    }

    /// `basis · (w − mean)` for each row `w`.
    pub fn project_windows(&self, windows: &Array2<f64>) -> Array2<f64> {
        (windows - &self.mean).dot(&self.basis.t())
    }

    /// `basisᵀ · z + mean` for each row `z`.
    pub fn reconstruct_windows(&self, coeffs: &Array2<f64>) -> Array2<f64> {
        coeffs.dot(&self.basis) + &self.mean
    }

    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let gram = self.basis.dot(&self.basis.t());
        let eye = Array2::<f64>::eye(self.components);
        let err = (&gram - &eye).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err > tol {
            return Err(Error::ShapeMismatch(format!("basis not orthonormal: {err}")));
        }
        if self.eigenvalues.windows(2).into_iter().any(|w| w[0] < w[1]) {
            return Err(Error::ShapeMismatch("eigenvalues not descending".into()));
        }
        Ok(())
    }
}

/// Projects a `C x t^s` sample into a `(C, t^s/ω, k)` latent block.
pub fn project(sample: &Sample, basis: &PcaBasis) -> Result<LatentBlock> {
    check_tiling(sample.len(), basis.window)?;
    let c = sample.channels();
    let nw = sample.len() / basis.window;
    let windows = sample
        .data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c * nw, basis.window))
        .expect("tiling checked");
    let coeffs = basis.project_windows(&windows);
    LatentBlock::from_tokens(coeffs, c, nw)
}

/// Inverts [`project`]: each window becomes `basisᵀ·z + mean`.
pub fn reconstruct(latent: &LatentBlock, basis: &PcaBasis) -> Result<Sample> {
    let (c, nw, k) = latent.geometry();
    if k != basis.components {
        return Err(Error::ShapeMismatch(format!(
            "latent has {k} coefficients, basis has {}",
            basis.components
        )));
    }
    let windows = basis.reconstruct_windows(&latent.to_tokens());
    let data = windows
        .into_shape_with_order((c, nw * basis.window))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(Sample::from_data(data))
}

/// Divides each coefficient by its recorded scale.
pub fn standardize(latent: &LatentBlock, basis: &PcaBasis) -> LatentBlock {
    LatentBlock {
        data: &latent.data / &basis.coeff_scale,
    }
}

pub fn unstandardize(latent: &LatentBlock, basis: &PcaBasis) -> LatentBlock {
    LatentBlock {
        data: &latent.data * &basis.coeff_scale,
    }
}

/// Mean squared reconstruction error over all elements of `windows`.
pub fn reconstruction_mse(basis: &PcaBasis, windows: &Array2<f64>) -> f64 {
    let rec = basis.reconstruct_windows(&basis.project_windows(windows));
    (&rec - windows).iter().map(|d| d * d).sum::<f64>() / windows.len() as f64
}
