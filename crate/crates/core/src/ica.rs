//! Spatial fastICA (logcosh contrast, symmetric decorrelation), back-projection
//! of the sources to whole-brain maps, and a concatenation group-ICA baseline.
//!
//! Input is `T × N`: rows are time points (features), columns are voxels
//! (samples), so the recovered sources are spatial maps over the voxels and
//! `data ≈ M · S` with `M` the `T × K` time courses.

use ndarray::{concatenate, Array, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::sym_eigh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Eigenvalues below this fraction of the largest count as zero.
    pub rank_rtol: f64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        IcaOptions {
            max_iter: 1000,
            tol: 1e-6,
            rank_rtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    /// Per-time-point mean over voxels.
    pub means: Array1<f64>,
    /// `K × T`; `Z = whitening · (data − means)`.
    pub whitening: Array2<f64>,
    /// `T × K` pseudo-inverse of `whitening`.
    pub dewhitening: Array2<f64>,
    /// Leading eigenvalues of the feature covariance.
    pub eigenvalues: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaDecomposition {
    /// `T × K`
    pub mixing: Array2<f64>,
    /// `K × N`, unit variance over the columns.
    pub sources: Array2<f64>,
    /// Orthogonal `K × K` rotation applied to the whitened data.
    pub unmixing: Array2<f64>,
    pub whitening: Whitening,
    pub iterations: usize,
    pub converged: bool,
}

impl IcaDecomposition {
    pub fn k(&self) -> usize {
        self.sources.nrows()
    }

    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                solver: "fastica",
                iterations: self.iterations,
            })
        }
    }

    /// Puts components in a reproducible order: descending mixing-column norm,
    /// each source signed so its largest-magnitude entry is positive.
    pub fn canonicalize(&mut self) {
        let k = self.k();
        let norms: Vec<f64> = (0..k)
            .map(|c| self.mixing.column(c).dot(&self.mixing.column(c)))
            .collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let mut mixing = self.mixing.select(Axis(1), &order);
        let mut sources = self.sources.select(Axis(0), &order);
        let mut unmixing = self.unmixing.select(Axis(0), &order);
        for c in 0..k {
            if source_sign(sources.row(c).iter().copied()) < 0.0 {
                mixing.column_mut(c).mapv_inplace(|v| -v);
                sources.row_mut(c).mapv_inplace(|v| -v);
                unmixing.row_mut(c).mapv_inplace(|v| -v);
            }
        }
        self.mixing = mixing;
        self.sources = sources;
        self.unmixing = unmixing;
    }
}

/// Sign of the largest-magnitude entry (first one on ties).
fn source_sign(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for v in values {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `(W Wᵀ)^{-1/2} W`
fn symmetric_decorrelation(w: &Array2<f64>) -> Array2<f64> {
    let (d, e) = sym_eigh(w.dot(&w.t()).view());
    let scaled = &e * &d.mapv(|x| 1.0 / x.max(f64::MIN_POSITIVE).sqrt());
    scaled.dot(&e.t()).dot(w)
}

fn whiten(data: ArrayView2<'_, f64>, k: usize, opts: &IcaOptions) -> Result<(Whitening, Array2<f64>)> {
    let (t, n) = data.dim();
    let means = data.mean_axis(Axis(1)).expect("nonempty data");
    let centered = &data - &means.view().insert_axis(Axis(1));
    let nf = n as f64;
    // eigenvectors of the feature covariance, via the smaller Gram matrix
    let (values, vectors) = if t <= n {
        let cov = centered.dot(&centered.t()) / nf;
        sym_eigh(cov.view())
    } else {
        let gram = centered.t().dot(&centered) / nf;
        let (vals, v) = sym_eigh(gram.view());
        let mut u = centered.dot(&v);
        for (c, &lam) in vals.iter().enumerate() {
            let scale = (nf * lam.max(0.0)).sqrt();
            let mut col = u.column_mut(c);
            if scale > 0.0 {
                col /= scale;
            }
        }
        (vals, u)
    };
    let top = values[0].max(0.0);
    let rank = values.iter().filter(|&&l| l > opts.rank_rtol * top && l > 0.0).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, requested: k });
    }
    let eig = values.slice(ndarray::s![..k]).to_owned();
    let e = vectors.slice(ndarray::s![.., ..k]).to_owned();
    let whitening = (&e / &eig.mapv(f64::sqrt)).t().to_owned();
    let dewhitening = &e * &eig.mapv(f64::sqrt);
    let z = whitening.dot(&centered);
    Ok((
        Whitening {
            means,
            whitening,
            dewhitening,
            eigenvalues: eig,
        },
        z,
    ))
}

pub fn fastica(data: ArrayView2<'_, f64>, k: usize, seed: u64, opts: &IcaOptions) -> Result<IcaDecomposition> {
    let (t, n) = data.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("fastica needs K >= 1".into()));
    }
    if n < k || t < k {
        return Err(Error::InvalidShape(format!(
            "fastica with K = {k} needs at least K rows and columns, got {t} × {n}"
        )));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite ICA input at flat index {i}")));
    }
    let (whitening, z) = whiten(data, k, opts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0: Array2<f64> = Array::from_shape_simple_fn((k, k), || rng.sample(StandardNormal));
    let mut w = symmetric_decorrelation(&w0);
    let nf = n as f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let u = w.dot(&z);
        let g = u.mapv(f64::tanh);
        let g_prime_mean = g.map_axis(Axis(1), |row| row.iter().map(|v| 1.0 - v * v).sum::<f64>() / nf);
        let w_new = g.dot(&z.t()) / nf - &(&w * &g_prime_mean.view().insert_axis(Axis(1)));
        let w_new = symmetric_decorrelation(&w_new);
        let change = w_new
            .dot(&w.t())
            .diag()
            .iter()
            .fold(0.0f64, |m, d| m.max((1.0 - d.abs()).abs()));
        w = w_new;
        iterations += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fastica: no convergence after {iterations} iterations");
    }
    let sources = w.dot(&z);
    let mixing = whitening.dewhitening.dot(&w.t());
    Ok(IcaDecomposition {
        mixing,
        sources,
        unmixing: w,
        whitening,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMaps {
    /// `V × K`
    pub q: Array2<f64>,
}

/// `Q = Wᵀ Sᵀ` for a model `w` stored as `|V_S1| × V` and sources over the
/// same `|V_S1|` voxels (`K × |V_S1|`).
pub fn backproject(w: ArrayView2<'_, f64>, sources: ArrayView2<'_, f64>) -> Result<SpatialMaps> {
    if w.nrows() != sources.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} predictor voxels, sources cover {}",
            w.nrows(),
            sources.ncols()
        )));
    }
    Ok(SpatialMaps {
        q: w.t().dot(&sources.t()),
    })
}

/// Spreads sources over `selected` voxels into the column layout of
/// `voxel_set` (a superset); other columns are zero.
pub fn embed_sources(sources: ArrayView2<'_, f64>, selected: &[usize], voxel_set: &[usize]) -> Result<Array2<f64>> {
    if sources.ncols() != selected.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source columns for {} selected voxels",
            sources.ncols(),
            selected.len()
        )));
    }
    let mut out = Array2::zeros((sources.nrows(), voxel_set.len()));
    for (c, v) in selected.iter().enumerate() {
        let pos = voxel_set
            .binary_search(v)
            .map_err(|_| Error::DimensionMismatch(format!("voxel {v} is not in the stage-1 set")))?;
        out.column_mut(pos).assign(&sources.column(c));
    }
    Ok(out)
}

/// Group maps from temporally concatenated subjects. Each input is `T_s × N`
/// over the same `N` common-space cells; the result is `K × N`.
pub fn group_ica_baseline(cohort: &[ArrayView2<'_, f64>], k: usize, seed: u64, opts: &IcaOptions) -> Result<Array2<f64>> {
    let first = cohort
        .first()
        .ok_or_else(|| Error::InvalidArgument("group ICA needs at least one subject".into()))?;
    let n = first.ncols();
    if let Some((s, m)) = cohort.iter().enumerate().find(|(_, m)| m.ncols() != n) {
        return Err(Error::MaskMismatch(format!(
            "subject {s} has {} common-space cells, subject 0 has {n}",
            m.ncols()
        )));
    }
    let stacked = concatenate(Axis(0), cohort).map_err(|e| Error::InvalidShape(e.to_string()))?;
    let mut ica = fastica(stacked.view(), k, seed, opts)?;
    ica.canonicalize();
    Ok(ica.sources)
}
