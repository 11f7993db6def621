use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Per-voxel statistics estimated on the training slice only.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub mean: Array1<f64>,
    /// Population standard deviation; `None` when only centering is applied.
    pub std: Option<Array1<f64>>,
}

/// Estimates per-row mean (and, if `scale`, standard deviation) of `train`.
pub fn fit_stats(train: ArrayView2<'_, f64>, scale: bool) -> Result<StandardizationStats> {
    let n = train.ncols();
    if n == 0 {
        return Err(Error::InvalidShape("training slice has no columns".into()));
    }
    let mean = train.sum_axis(Axis(1)) / n as f64;
    let std = if scale {
        let mut std = Array1::zeros(train.nrows());
        for (voxel, row) in train.outer_iter().enumerate() {
            let var = row.iter().map(|x| (x - mean[voxel]).powi(2)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(Error::ZeroVariance { voxel });
            }
            std[voxel] = var.sqrt();
        }
        Some(std)
    } else {
        None
    };
    Ok(StandardizationStats { mean, std })
}

impl StandardizationStats {
    /// Applies the training statistics to every column of `x`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "stats for {} voxels applied to {} rows",
                self.mean.len(),
                x.nrows()
            )));
        }
        let mut out = x.to_owned();
        for (voxel, mut row) in out.outer_iter_mut().enumerate() {
            let m = self.mean[voxel];
            match &self.std {
                Some(std) => row.mapv_inplace(|v| (v - m) / std[voxel]),
                None => row.mapv_inplace(|v| v - m),
            }
        }
        Ok(out)
    }
}

/// Convenience for `fit_stats` followed by `apply`.
pub fn standardize(x: ArrayView2<'_, f64>, stats: &StandardizationStats) -> Result<Array2<f64>> {
    stats.apply(x)
}
