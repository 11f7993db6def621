use ndarray::{s, Array2, ArrayView2, Axis};

use super::standardize::{fit_stats, StandardizationStats};
use super::types::{AtlasPartition, CoordinateTable, TemporalSplit, TimeSeriesMatrix};
use crate::error::{Error, Result};

/// One-step lag pair for the given rows: predictors are columns `0..T-1` of
/// `predictors`, targets are columns `1..T` of `targets`.
pub fn lag_pair(
    x: ArrayView2<'_, f64>,
    predictors: &[usize],
    targets: &[usize],
) -> Result<(Array2<f64>, Array2<f64>)> {
    lagged_window(x, predictors, targets, 1, x.ncols())
}

/// Lag pairs `(x[p, t-1], x[q, t])` for `t` in `start..end`.
pub fn lagged_window(
    x: ArrayView2<'_, f64>,
    predictors: &[usize],
    targets: &[usize],
    start: usize,
    end: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if predictors.is_empty() || targets.is_empty() {
        return Err(Error::EmptySubset);
    }
    if start < 1 || end > x.ncols() || start >= end {
        return Err(Error::InvalidShape(format!(
            "lag window {start}..{end} on a series of length {}",
            x.ncols()
        )));
    }
    if let Some(&bad) = predictors.iter().chain(targets).find(|&&r| r >= x.nrows()) {
        return Err(Error::InvalidShape(format!(
            "row {bad} outside a matrix with {} rows",
            x.nrows()
        )));
    }
    let lagged = x.slice(s![.., start - 1..end - 1]).select(Axis(0), predictors);
    let next = x.slice(s![.., start..end]).select(Axis(0), targets);
    Ok((lagged, next))
}

/// A subject ready for model fitting: centered (optionally scaled) with
/// training-split statistics, plus atlas and optional grid coordinates.
#[derive(Debug, Clone)]
pub struct SubjectData {
    data: TimeSeriesMatrix,
    split: TemporalSplit,
    atlas: AtlasPartition,
    coords: Option<CoordinateTable>,
    stats: StandardizationStats,
}

impl SubjectData {
    pub fn prepare(
        raw: TimeSeriesMatrix,
        atlas: AtlasPartition,
        coords: Option<CoordinateTable>,
        split: TemporalSplit,
        scale: bool,
    ) -> Result<Self> {
        split.validate(raw.time_points())?;
        if atlas.n_voxels() != raw.voxels() {
            return Err(Error::DimensionMismatch(format!(
                "atlas labels {} voxels, data has {}",
                atlas.n_voxels(),
                raw.voxels()
            )));
        }
        if let Some(c) = &coords {
            if c.n_voxels() != raw.voxels() {
                return Err(Error::DimensionMismatch(format!(
                    "coordinate table lists {} voxels, data has {}",
                    c.n_voxels(),
                    raw.voxels()
                )));
            }
        }
        let stats = fit_stats(raw.view().slice(s![.., ..split.train_end]), scale)?;
        let data = TimeSeriesMatrix::new(stats.apply(raw.view())?)?;
        Ok(SubjectData {
            data,
            split,
            atlas,
            coords,
            stats,
        })
    }

    pub fn voxels(&self) -> usize {
        self.data.voxels()
    }

    pub fn time_points(&self) -> usize {
        self.data.time_points()
    }

    pub fn split(&self) -> TemporalSplit {
        self.split
    }

    pub fn atlas(&self) -> &AtlasPartition {
        &self.atlas
    }

    pub fn coords(&self) -> Option<&CoordinateTable> {
        self.coords.as_ref()
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    /// The full standardized series, including held-out columns.
    pub fn series(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// Lagged training and validation pairs; test columns are not reachable
    /// from the returned value.
    pub fn fit_data(&self) -> FitData {
        let visible = self.data.view().slice_move(s![.., ..self.split.val_end]);
        FitData::from_visible(visible, self.split.train_end)
    }

    /// Lagged pairs for the test window, predictors at `t-1` and targets at `t`.
    pub fn test_data(&self) -> LagBlock {
        let x = self.data.view();
        let all: Vec<usize> = (0..x.nrows()).collect();
        let (pred, next) = lagged_window(x, &all, &all, self.split.val_end, x.ncols())
            .expect("validated split leaves a nonempty test window");
        LagBlock { pred, next }
    }
}

/// Predictor / target pair over all voxels for one window of time.
#[derive(Debug, Clone, PartialEq)]
pub struct LagBlock {
    /// `V × n`, values at `t - 1`.
    pub pred: Array2<f64>,
    /// `V × n`, values at `t`.
    pub next: Array2<f64>,
}

/// Lag pairs for the model-fitting windows. Training pairs use `t` in
/// `1..train_end`; validation pairs use `t` in `train_end..val_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    pub train: LagBlock,
    pub val: LagBlock,
}

impl FitData {
    fn from_visible(x: ArrayView2<'_, f64>, train_end: usize) -> Self {
        let all: Vec<usize> = (0..x.nrows()).collect();
        let (pred, next) = lagged_window(x, &all, &all, 1, train_end)
            .expect("validated split leaves a nonempty training window");
        let train = LagBlock { pred, next };
        let (pred, next) = lagged_window(x, &all, &all, train_end, x.ncols())
            .expect("validated split leaves a nonempty validation window");
        FitData {
            train,
            val: LagBlock { pred, next },
        }
    }

    pub fn voxels(&self) -> usize {
        self.train.pred.nrows()
    }

    /// Copy whose training predictor columns are reordered by `perm`, which
    /// breaks the lag alignment with the (unchanged) training targets.
    pub fn with_shuffled_train_predictors(&self, perm: &[usize]) -> Result<FitData> {
        let n = self.train.pred.ncols();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument(format!(
                "not a permutation of {n} training columns"
            )));
        }
        let mut out = self.clone();
        out.train.pred = self.train.pred.select(Axis(1), perm);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_row_lag() {
        let x = array![[1.0, 2.0, 3.0]];
        let (lagged, next) = lag_pair(x.view(), &[0], &[0]).unwrap();
        assert_eq!(lagged, array![[1.0, 2.0]]);
        assert_eq!(next, array![[2.0, 3.0]]);
    }

    #[test]
    fn lag_shapes_and_empty_subset() {
        let x = Array2::<f64>::zeros((3, 5));
        let (a, b) = lag_pair(x.view(), &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!((a.dim(), b.dim()), ((3, 4), (3, 4)));
        assert!(matches!(lag_pair(x.view(), &[], &[0]), Err(Error::EmptySubset)));
    }

    #[test]
    fn next_column_is_shifted_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array::from_shape_fn((4, 9), |_| rng.random::<f64>());
        let rows = [3, 1];
        let (lagged, next) = lag_pair(x.view(), &rows, &rows).unwrap();
        for t in 0..8 {
            for (k, &r) in rows.iter().enumerate() {
                assert_eq!(next[[k, t]], x[[r, t + 1]]);
                assert_eq!(lagged[[k, t]], x[[r, t]]);
            }
        }
    }

    fn toy_subject(t: usize) -> SubjectData {
        let x = Array::from_shape_fn((2, t), |(i, j)| (i as f64 + 1.0) * j as f64);
        SubjectData::prepare(
            TimeSeriesMatrix::new(x).unwrap(),
            AtlasPartition::new(vec![1, 1], 1).unwrap(),
            None,
            TemporalSplit::default_for(t),
            false,
        )
        .unwrap()
    }

    #[test]
    fn fit_data_windows_exclude_test_columns() {
        let s = toy_subject(20); // split 16 / 2 / 2
        let fit = s.fit_data();
        assert_eq!(fit.train.pred.ncols(), 15);
        assert_eq!(fit.val.pred.ncols(), 2);
        // last validation target is column val_end - 1
        let series = s.series();
        assert_eq!(fit.val.next[[1, 1]], series[[1, 17]]);
        let test = s.test_data();
        assert_eq!(test.next.ncols(), 2);
        assert_eq!(test.pred[[0, 0]], series[[0, 17]]);
        assert_eq!(test.next[[0, 1]], series[[0, 19]]);
    }

    #[test]
    fn training_window_centered() {
        let s = toy_subject(30);
        let train = s.series().slice_move(s![.., ..s.split().train_end]).to_owned();
        for row in train.outer_iter() {
            assert!(row.mean().unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn shuffled_predictors_keep_targets() {
        let s = toy_subject(20);
        let fit = s.fit_data();
        let perm: Vec<usize> = (0..15).rev().collect();
        let shuffled = fit.with_shuffled_train_predictors(&perm).unwrap();
        assert_eq!(shuffled.train.next, fit.train.next);
        assert_eq!(shuffled.val, fit.val);
        assert_eq!(shuffled.train.pred[[0, 0]], fit.train.pred[[0, 14]]);
        assert!(fit.with_shuffled_train_predictors(&[0, 0]).is_err());
    }
}
