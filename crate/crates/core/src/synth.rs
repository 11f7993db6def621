//! Synthetic cohorts with known ground truth.
//!
//! Two generators: sparse first-order autoregressive dynamics with a planted
//! set of driver voxels (for the selection stages), and shared spatial
//! sources on a 3D grid mixed by subject-specific time courses (for the ICA
//! and similarity stages).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::data_model::{
    write_atlas, write_coords, write_matrix, AtlasPartition, CoordinateTable, SubjectData, TemporalSplit,
    TimeSeriesMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::spectral_radius;

pub const BURN_IN: usize = 200;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    let e = Exp::new(1.0).expect("unit rate");
    let a: f64 = e.sample(rng);
    let b: f64 = e.sample(rng);
    a - b
}

/// `n_regions` contiguous index blocks of near-equal size.
pub fn block_atlas(v: usize, n_regions: usize) -> Result<AtlasPartition> {
    if n_regions == 0 || n_regions > v {
        return Err(Error::InvalidArgument(format!("cannot split {v} voxels into {n_regions} regions")));
    }
    let labels = (0..v).map(|i| (i * n_regions / v) as u32 + 1).collect();
    AtlasPartition::new(labels, n_regions as u32)
}

/// Raster-order coordinates on the smallest near-cubic grid holding `v` cells.
pub fn raster_coords(v: usize) -> Result<CoordinateTable> {
    let side = (v as f64).cbrt().ceil().max(1.0) as usize;
    let nx = v.div_ceil(side * side).max(1);
    let coords = (0..v)
        .map(|i| [(i / (side * side)) as i32, ((i / side) % side) as i32, (i % side) as i32])
        .collect();
    CoordinateTable::new([nx as u32, side as u32, side as u32], coords)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedVarSpec {
    pub voxels: usize,
    pub time_points: usize,
    pub n_regions: usize,
    pub drivers: Vec<usize>,
    /// `V × V`; `x_t = A x_{t-1} + noise`. Nonzero columns only at drivers.
    pub transition: Array2<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl PlantedVarSpec {
    /// Random planted model: `n_drivers` distinct driver voxels, each other
    /// voxel driven by one or two of them with coefficient magnitude in
    /// `[coupling, 1.15·coupling]` and random sign. Drivers themselves evolve
    /// as `x_d,t = driver_ar · x_d,t-1 + noise`.
    pub fn random(
        voxels: usize,
        time_points: usize,
        n_regions: usize,
        n_drivers: usize,
        coupling: f64,
        driver_ar: f64,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_drivers > voxels {
            return Err(Error::InvalidArgument(format!("{n_drivers} drivers among {voxels} voxels")));
        }
        let mut rng = rng_for(seed, 0);
        let mut drivers = sample(&mut rng, voxels, n_drivers).into_vec();
        drivers.sort_unstable();
        let mut a = Array2::zeros((voxels, voxels));
        if !drivers.is_empty() {
            let mut is_driver = vec![false; voxels];
            for &d in &drivers {
                is_driver[d] = true;
                a[[d, d]] = driver_ar;
            }
            for i in (0..voxels).filter(|&i| !is_driver[i]) {
                let k = if drivers.len() > 1 && rng.random_bool(0.5) { 2 } else { 1 };
                for pick in sample(&mut rng, drivers.len(), k) {
                    let mag = coupling * rng.random_range(1.0..1.15);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    a[[i, drivers[pick]]] = sign * mag;
                }
            }
        }
        Ok(PlantedVarSpec {
            voxels,
            time_points,
            n_regions,
            drivers,
            transition: a,
            noise,
            seed,
        })
    }

    /// Pure noise: no drivers, `A = 0`.
    pub fn white(voxels: usize, time_points: usize, n_regions: usize, noise: f64, seed: u64) -> Self {
        PlantedVarSpec {
            voxels,
            time_points,
            n_regions,
            drivers: Vec::new(),
            transition: Array2::zeros((voxels, voxels)),
            noise,
            seed,
        }
    }

    /// Voxels with at least one nonzero incoming coefficient from another voxel.
    pub fn driven_targets(&self) -> Vec<usize> {
        (0..self.voxels)
            .filter(|&i| {
                self.transition
                    .row(i)
                    .iter()
                    .enumerate()
                    .any(|(j, &v)| j != i && v != 0.0)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let v = self.voxels;
        if self.transition.dim() != (v, v) {
            return Err(Error::InvalidShape(format!(
                "transition matrix {:?} for {v} voxels",
                self.transition.dim()
            )));
        }
        if self.time_points < 3 || !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("need T >= 3 and noise >= 0".into()));
        }
        let mut is_driver = vec![false; v];
        for &d in &self.drivers {
            if d >= v {
                return Err(Error::InvalidArgument(format!("driver {d} outside {v} voxels")));
            }
            is_driver[d] = true;
        }
        for j in 0..v {
            if !is_driver[j] && self.transition.column(j).iter().any(|&x| x != 0.0) {
                return Err(Error::InvalidArgument(format!("transition column {j} is not a driver")));
            }
        }
        // columns vanish off the drivers, so the nonzero spectrum lives on A[D, D]
        let sub = self
            .transition
            .select(Axis(0), &self.drivers)
            .select(Axis(1), &self.drivers);
        let rho = spectral_radius(sub.view());
        if rho >= 1.0 {
            return Err(Error::UnstableSpec { spectral_radius: rho });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VarSubject {
    pub data: TimeSeriesMatrix,
    pub atlas: AtlasPartition,
    pub coords: CoordinateTable,
    pub drivers: Vec<usize>,
    pub transition: Array2<f64>,
}

impl VarSubject {
    pub fn prepare(&self, split: TemporalSplit, scale: bool) -> Result<SubjectData> {
        SubjectData::prepare(self.data.clone(), self.atlas.clone(), Some(self.coords.clone()), split, scale)
    }
}

pub fn gen_var_subject(spec: &PlantedVarSpec) -> Result<VarSubject> {
    spec.validate()?;
    let v = spec.voxels;
    let mut rng = rng_for(spec.seed, 1);
    // sparse column view of A
    let edges: Vec<(usize, usize, f64)> = spec
        .drivers
        .iter()
        .flat_map(|&j| {
            spec.transition
                .column(j)
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(move |(i, &a)| (i, j, a))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut x = Array1::<f64>::zeros(v);
    let mut out = Array2::zeros((v, spec.time_points));
    for step in 0..BURN_IN + spec.time_points {
        let mut next = Array1::from_shape_simple_fn(v, || spec.noise * rng.sample::<f64, _>(StandardNormal));
        for &(i, j, a) in &edges {
            next[i] += a * x[j];
        }
        x = next;
        if step >= BURN_IN {
            out.column_mut(step - BURN_IN).assign(&x);
        }
    }
    Ok(VarSubject {
        data: TimeSeriesMatrix::new(out)?,
        atlas: block_atlas(v, spec.n_regions)?,
        coords: raster_coords(v)?,
        drivers: spec.drivers.clone(),
        transition: spec.transition.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSourceSpec {
    pub grid: [u32; 3],
    /// Sources per population.
    pub n_sources: usize,
    pub n_subjects: usize,
    /// Populations with disjoint spatial maps; subject `s` belongs to
    /// population `s · n_populations / n_subjects`.
    pub n_populations: usize,
    pub time_points: usize,
    pub n_regions: usize,
    pub blob_sigma: f64,
    /// Cells farther than this from a blob centre are outside its support.
    pub blob_radius: f64,
    /// Fraction of grid cells missing from each subject.
    pub dropout: f64,
    pub noise: f64,
    /// Lag-1 autocorrelation of the source time courses.
    pub time_ar: f64,
    pub seed: u64,
}

impl Default for PlantedSourceSpec {
    fn default() -> Self {
        PlantedSourceSpec {
            grid: [12, 12, 6],
            n_sources: 4,
            n_subjects: 5,
            n_populations: 1,
            time_points: 300,
            n_regions: 10,
            blob_sigma: 1.2,
            blob_radius: 2.5,
            dropout: 0.1,
            noise: 0.2,
            time_ar: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceSubject {
    pub data: TimeSeriesMatrix,
    pub atlas: AtlasPartition,
    pub coords: CoordinateTable,
    pub population: usize,
    /// `T × K` time courses of this subject's population sources.
    pub time_courses: Array2<f64>,
}

impl SourceSubject {
    pub fn prepare(&self, split: TemporalSplit, scale: bool) -> Result<SubjectData> {
        SubjectData::prepare(self.data.clone(), self.atlas.clone(), Some(self.coords.clone()), split, scale)
    }
}

#[derive(Debug, Clone)]
pub struct SourceCohort {
    pub subjects: Vec<SourceSubject>,
    /// `(n_populations · K) × grid cells`; rows `p·K..(p+1)·K` belong to
    /// population `p`.
    pub maps: Array2<f64>,
    pub grid: [u32; 3],
}

impl PlantedSourceSpec {
    fn cells(&self) -> usize {
        self.grid.iter().map(|&d| d as usize).product()
    }

    fn population_of(&self, s: usize) -> usize {
        s * self.n_populations / self.n_subjects
    }

    fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_subjects == 0 || self.n_populations == 0 {
            return Err(Error::InvalidArgument("need at least one source, subject and population".into()));
        }
        if self.n_populations > self.n_subjects {
            return Err(Error::InvalidArgument("more populations than subjects".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.blob_sigma > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("bad dropout, blob width or noise".into()));
        }
        if !(self.time_ar.abs() < 1.0) {
            return Err(Error::UnstableSpec { spectral_radius: self.time_ar.abs() });
        }
        if self.grid.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Blob centres: population `p` occupies the `p`-th slab along x, blobs
    /// are at least two support radii apart and clear of slab boundaries.
    fn centers(&self, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 3]>> {
        let [nx, ny, nz] = self.grid.map(|d| d as f64);
        let r = self.blob_radius;
        let mut centers: Vec<[f64; 3]> = Vec::new();
        for p in 0..self.n_populations {
            let x_lo = p as f64 * nx / self.n_populations as f64;
            let x_hi = (p + 1) as f64 * nx / self.n_populations as f64;
            let x_margin = if self.n_populations > 1 { r } else { 0.0 };
            for _ in 0..self.n_sources {
                let mut placed = false;
                for _ in 0..10_000 {
                    let c = [
                        rng.random_range(x_lo + x_margin..=(x_hi - 1.0 - x_margin).max(x_lo + x_margin)),
                        rng.random_range(0.0..=ny - 1.0),
                        rng.random_range(0.0..=nz - 1.0),
                    ];
                    let clear = centers.iter().all(|o| {
                        let d2: f64 = (0..3).map(|i| (o[i] - c[i]).powi(2)).sum();
                        d2 > (2.0 * r).powi(2)
                    });
                    if clear {
                        centers.push(c);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::InvalidArgument(format!(
                        "grid {:?} cannot hold {} separated blobs per population",
                        self.grid, self.n_sources
                    )));
                }
            }
        }
        Ok(centers)
    }

    fn truth_maps(&self, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let centers = self.centers(rng)?;
        let [_, ny, nz] = self.grid.map(|d| d as usize);
        let mut maps = Array2::zeros((centers.len(), self.cells()));
        for (k, c) in centers.iter().enumerate() {
            for cell in 0..self.cells() {
                let p = [(cell / (ny * nz)) as f64, ((cell / nz) % ny) as f64, (cell % nz) as f64];
                let d2: f64 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum();
                if d2 <= self.blob_radius * self.blob_radius {
                    let envelope = (-d2 / (2.0 * self.blob_sigma * self.blob_sigma)).exp();
                    maps[[k, cell]] = envelope * (1.0 + 0.25 * laplace(rng));
                }
            }
        }
        Ok(maps)
    }
}

/// Cohort of subjects sharing spatial maps. Each subject observes a random
/// `1 − dropout` fraction of the grid cells (in raster order) and has its own
/// time courses and noise.
pub fn gen_source_cohort(spec: &PlantedSourceSpec) -> Result<SourceCohort> {
    gen_source_cohort_excluding(spec, None)
}

/// Same draws as [`gen_source_cohort`], but the data omit source `exclude`
/// (counted within each population) while maps and time courses are kept.
pub fn gen_source_cohort_excluding(spec: &PlantedSourceSpec, exclude: Option<usize>) -> Result<SourceCohort> {
    spec.validate()?;
    let mut map_rng = rng_for(spec.seed, 0);
    let maps = spec.truth_maps(&mut map_rng)?;
    let cells = spec.cells();
    let k = spec.n_sources;
    let t = spec.time_points;
    let [_, ny, nz] = spec.grid.map(|d| d as usize);
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let mut rng = rng_for(spec.seed, s as u64 + 1);
        let keep = cells - (spec.dropout * cells as f64).round() as usize;
        let mut voxels = sample(&mut rng, cells, keep).into_vec();
        voxels.sort_unstable();
        let innovation = (1.0 - spec.time_ar * spec.time_ar).sqrt();
        let mut tc = Array2::zeros((t, k));
        for c in 0..k {
            let mut x: f64 = rng.sample(StandardNormal);
            for step in 0..BURN_IN + t {
                x = spec.time_ar * x + innovation * rng.sample::<f64, _>(StandardNormal);
                if step >= BURN_IN {
                    tc[[step - BURN_IN, c]] = x;
                }
            }
        }
        let noise = Array2::from_shape_simple_fn((voxels.len(), t), || spec.noise * rng.sample::<f64, _>(StandardNormal));
        let pop = spec.population_of(s);
        let mut sub_maps = maps
            .slice(ndarray::s![pop * k..(pop + 1) * k, ..])
            .select(Axis(1), &voxels);
        if let Some(e) = exclude {
            if e < k {
                sub_maps.row_mut(e).fill(0.0);
            }
        }
        let data = sub_maps.t().dot(&tc.t()) + &noise;
        let coords = voxels
            .iter()
            .map(|&cell| [(cell / (ny * nz)) as i32, ((cell / nz) % ny) as i32, (cell % nz) as i32])
            .collect();
        subjects.push(SourceSubject {
            data: TimeSeriesMatrix::new(data)?,
            atlas: block_atlas(voxels.len(), spec.n_regions.min(voxels.len()))?,
            coords: CoordinateTable::new(spec.grid, coords)?,
            population: pop,
            time_courses: tc,
        });
    }
    Ok(SourceCohort {
        subjects,
        maps,
        grid: spec.grid,
    })
}

pub fn subject_name(s: usize) -> String {
    format!("sub-{:02}", s + 1)
}

fn write_subject(dir: &Path, data: &TimeSeriesMatrix, atlas: &AtlasPartition, coords: &CoordinateTable) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join("data.fmat"), data.view())?;
    write_atlas(dir.join("atlas.atls"), atlas)?;
    write_coords(dir.join("coords.ctbl"), coords)
}

/// Writes `<dir>/sub-XX/{data.fmat, atlas.atls, coords.ctbl}` and `truth.tsv`.
pub fn write_var_cohort(dir: &Path, subjects: &[VarSubject]) -> Result<()> {
    let mut truth = String::from("subject\tkind\ttarget\tdriver\tcoefficient\n");
    for (s, sub) in subjects.iter().enumerate() {
        let name = subject_name(s);
        write_subject(&dir.join(&name), &sub.data, &sub.atlas, &sub.coords)?;
        for &d in &sub.drivers {
            let _ = writeln!(truth, "{name}\tdriver\t\t{d}\t");
        }
        for ((i, j), &a) in sub.transition.indexed_iter() {
            if a != 0.0 {
                let _ = writeln!(truth, "{name}\tedge\t{i}\t{j}\t{a}");
            }
        }
    }
    std::fs::write(dir.join("truth.tsv"), truth).map_err(|e| Error::io(dir.join("truth.tsv"), e))
}

/// Writes the subjects, `truth_maps.fmat` (sources × grid cells), the map grid
/// as `truth_maps.ctbl`, and `truth.tsv`.
pub fn write_source_cohort(dir: &Path, cohort: &SourceCohort) -> Result<()> {
    let mut truth = String::from("subject\tpopulation\tvoxels\n");
    for (s, sub) in cohort.subjects.iter().enumerate() {
        let name = subject_name(s);
        write_subject(&dir.join(&name), &sub.data, &sub.atlas, &sub.coords)?;
        let _ = writeln!(truth, "{name}\t{}\t{}", sub.population, sub.data.voxels());
    }
    let _ = writeln!(truth, "\nmaps\ttruth_maps.fmat\t{}", cohort.maps.nrows());
    write_matrix(dir.join("truth_maps.fmat"), cohort.maps.view())?;
    write_coords(dir.join("truth_maps.ctbl"), &full_grid(cohort.grid)?)?;
    std::fs::write(dir.join("truth.tsv"), truth).map_err(|e| Error::io(dir.join("truth.tsv"), e))
}

/// Every cell of the grid in raster order.
pub fn full_grid(grid: [u32; 3]) -> Result<CoordinateTable> {
    let [nx, ny, nz] = grid.map(|d| d as i32);
    let mut coords = Vec::with_capacity((nx * ny * nz) as usize);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                coords.push([x, y, z]);
            }
        }
    }
    CoordinateTable::new(grid, coords)
}
