use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// A subject's voxel × time matrix: one row per voxel, one column per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    values: Array2<f64>,
}

impl TimeSeriesMatrix {
    pub const MIN_TIME_POINTS: usize = 3;

    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (v, t) = values.dim();
        if v < 1 || t < Self::MIN_TIME_POINTS {
            return Err(Error::InvalidShape(format!(
                "time series needs >= 1 voxel and >= {} time points, got {v}x{t}",
                Self::MIN_TIME_POINTS
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::NonFiniteValue {
                index,
                offset: 0,
                value,
            });
        }
        Ok(TimeSeriesMatrix { values })
    }

    pub fn voxels(&self) -> usize {
        self.values.nrows()
    }

    pub fn time_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    /// Column-contiguous train / validation / test slices.
    pub fn split(
        &self,
        policy: TemporalSplit,
    ) -> Result<(ArrayView2<'_, f64>, ArrayView2<'_, f64>, ArrayView2<'_, f64>)> {
        split(self.view(), policy)
    }
}

/// Splits columns into train `[0, train_end)`, validation `[train_end, val_end)`
/// and test `[val_end, T)`.
pub fn split(
    x: ArrayView2<'_, f64>,
    policy: TemporalSplit,
) -> Result<(ArrayView2<'_, f64>, ArrayView2<'_, f64>, ArrayView2<'_, f64>)> {
    policy.validate(x.ncols())?;
    Ok((
        x.slice_move(s![.., ..policy.train_end]),
        x.slice_move(s![.., policy.train_end..policy.val_end]),
        x.slice_move(s![.., policy.val_end..]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalSplit {
    pub train_end: usize,
    pub val_end: usize,
}

impl TemporalSplit {
    /// 80/10/10 with floor arithmetic; the test slice absorbs the remainder.
    pub fn default_for(t: usize) -> Self {
        let train_end = t * 4 / 5;
        TemporalSplit {
            train_end,
            val_end: train_end + t / 10,
        }
    }

    pub fn from_fractions(t: usize, train: f64, val: f64) -> Result<Self> {
        if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive and sum below 1 (train={train}, val={val})"
            )));
        }
        // the small slack keeps exact products such as 0.8 * 10 from flooring down
        let floor = |f: f64| (t as f64 * f + 1e-9).floor() as usize;
        let split = TemporalSplit {
            train_end: floor(train),
            val_end: floor(train) + floor(val),
        };
        split.validate(t)?;
        Ok(split)
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        if 0 < self.train_end && self.train_end < self.val_end && self.val_end < t {
            Ok(())
        } else {
            Err(Error::InvalidSplit {
                train_end: self.train_end,
                val_end: self.val_end,
                len: t,
            })
        }
    }

    /// Widths of the three slices for a series of length `t`.
    pub fn widths(&self, t: usize) -> (usize, usize, usize) {
        (
            self.train_end,
            self.val_end - self.train_end,
            t - self.val_end,
        )
    }
}

/// One region label per voxel, labels in `1..=n_regions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtlasPartition {
    labels: Vec<u32>,
    n_regions: u32,
}

impl AtlasPartition {
    pub fn new(labels: Vec<u32>, n_regions: u32) -> Result<Self> {
        if labels.is_empty() || n_regions == 0 {
            return Err(Error::InvalidAtlas("atlas has no voxels or no regions".into()));
        }
        let mut seen = vec![false; n_regions as usize];
        for (voxel, &label) in labels.iter().enumerate() {
            if label == 0 || label > n_regions {
                return Err(Error::InvalidAtlas(format!(
                    "voxel {voxel} has label {label} outside 1..={n_regions}"
                )));
            }
            seen[label as usize - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidAtlas(format!(
                "region {} has no voxels",
                missing + 1
            )));
        }
        Ok(AtlasPartition { labels, n_regions })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_regions(&self) -> u32 {
        self.n_regions
    }

    pub fn n_voxels(&self) -> usize {
        self.labels.len()
    }

    /// Voxel indices of every region, ascending, indexed by `region_id - 1`.
    pub fn region_voxels(&self) -> Vec<Vec<usize>> {
        let mut regions = vec![Vec::new(); self.n_regions as usize];
        for (voxel, &label) in self.labels.iter().enumerate() {
            regions[label as usize - 1].push(voxel);
        }
        regions
    }
}

/// Integer grid position of every voxel in a common `nx × ny × nz` space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinateTable {
    dims: [u32; 3],
    coords: Vec<[i32; 3]>,
}

impl CoordinateTable {
    pub fn new(dims: [u32; 3], coords: Vec<[i32; 3]>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidCoordinates(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        let mut seen: HashMap<[i32; 3], usize> = HashMap::with_capacity(coords.len());
        for (voxel, c) in coords.iter().enumerate() {
            for axis in 0..3 {
                if c[axis] < 0 || c[axis] as i64 >= dims[axis] as i64 {
                    return Err(Error::InvalidCoordinates(format!(
                        "voxel {voxel} at {c:?} lies outside grid {dims:?}"
                    )));
                }
            }
            if let Some(first) = seen.insert(*c, voxel) {
                return Err(Error::DuplicateCoordinate {
                    first,
                    second: voxel,
                    coord: *c,
                });
            }
        }
        Ok(CoordinateTable { dims, coords })
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn coords(&self) -> &[[i32; 3]] {
        &self.coords
    }

    pub fn n_voxels(&self) -> usize {
        self.coords.len()
    }

    pub fn grid_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    /// Flat grid index of a voxel; `x` varies slowest, `z` fastest.
    pub fn grid_index(&self, voxel: usize) -> usize {
        let [x, y, z] = self.coords[voxel];
        let [_, ny, nz] = self.dims;
        (x as usize * ny as usize + y as usize) * nz as usize + z as usize
    }
}
