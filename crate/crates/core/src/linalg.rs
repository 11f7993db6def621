//! Thin dense linear-algebra layer.
//!
//! Data lives in `ndarray` arrays throughout the crate; factorizations are
//! delegated to `nalgebra` and converted back at this boundary.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Pivots whose squared value falls below this fraction of the matching
/// diagonal entry mark the column as numerically dependent.
const PIVOT_RTOL: f64 = 1e-13;

pub(crate) fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    inner: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of a {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let inner = nalgebra::Cholesky::new(to_nalgebra(a))
            .ok_or_else(|| Error::SingularSystem("matrix is not positive definite".into()))?;
        let l = inner.l_dirty();
        for i in 0..n {
            let diag = a[[i, i]];
            let pivot = l[(i, i)] * l[(i, i)];
            if !(pivot > PIVOT_RTOL * diag) {
                return Err(Error::SingularSystem(format!(
                    "column {i} is numerically dependent (pivot {pivot:e}, diagonal {diag:e})"
                )));
            }
        }
        Ok(Cholesky { inner, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` for a right-hand side with `dim()` rows.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        from_nalgebra(&self.inner.solve(&to_nalgebra(b)))
    }

    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let v = self
            .inner
            .solve(&DVector::from_iterator(b.len(), b.iter().copied()));
        Array1::from_iter(v.iter().copied())
    }

    pub fn inverse(&self) -> Array2<f64> {
        from_nalgebra(&self.inner.inverse())
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Each eigenvector's sign is fixed so that its largest-magnitude entry is
/// positive (first such entry on ties), which makes downstream results
/// independent of the backend's sign convention.
pub fn sym_eigh(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    // symmetrize to guard against round-off asymmetry in the caller's product
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut col = Array1::from_iter(col.iter().copied());
        canonical_sign(&mut col);
        vectors.column_mut(dst).assign(&col);
    }
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(v: &mut Array1<f64>) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: ArrayView2<'_, f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    to_nalgebra(a)
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |m, z| m.max(z.norm()))
}

/// `x xᵀ` for a row-major predictor block.
pub fn gram(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.dot(&x.t())
}

/// Mean of squared entries; zero for an empty array.
pub fn mean_square<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for v in values {
        acc += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// `n` linearly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    end
                } else {
                    start + (end - start) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// `n` logarithmically spaced values from `start` to `end` inclusive.
pub fn logspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    linspace(start.ln(), end.ln(), n)
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                start
            } else if i + 1 == n {
                end
            } else {
                l.exp()
            }
        })
        .collect()
}

/// Rows of `a` selected by `rows`, in the given order.
pub fn select_rows(a: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}
