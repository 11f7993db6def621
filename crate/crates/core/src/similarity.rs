//! Common-space comparison of independent components: projection to the
//! shared grid, Gaussian smoothing, inter-subject (IS) and individual-group
//! (IGS) similarity, the dominance check and hierarchical clustering of the
//! similarity profiles.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::data_model::CoordinateTable;
use crate::error::{Error, Result};

/// Scatters one value per voxel onto the coordinate grid; untouched cells are 0.
pub fn project_to_grid(values: ArrayView1<'_, f64>, coords: &CoordinateTable) -> Result<Array3<f64>> {
    if values.len() != coords.n_voxels() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} coordinates",
            values.len(),
            coords.n_voxels()
        )));
    }
    let [nx, ny, nz] = coords.dims();
    let mut vol = Array3::zeros((nx as usize, ny as usize, nz as usize));
    for (v, c) in coords.coords().iter().enumerate() {
        vol[[c[0] as usize, c[1] as usize, c[2] as usize]] = values[v];
    }
    Ok(vol)
}

/// Inverse of [`project_to_grid`]: reads each voxel's cell.
pub fn gather(volume: &Array3<f64>, coords: &CoordinateTable) -> Result<Array1<f64>> {
    check_dims(volume, coords.dims())?;
    Ok(coords
        .coords()
        .iter()
        .map(|c| volume[[c[0] as usize, c[1] as usize, c[2] as usize]])
        .collect())
}

fn check_dims(volume: &Array3<f64>, dims: [u32; 3]) -> Result<()> {
    let shape = volume.dim();
    if shape != (dims[0] as usize, dims[1] as usize, dims[2] as usize) {
        return Err(Error::MaskMismatch(format!("volume {shape:?} on a grid of {dims:?}")));
    }
    Ok(())
}

/// Normalized Gaussian weights for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|o| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn default_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

fn convolve_lane(input: ArrayView1<'_, f64>, mut out: ndarray::ArrayViewMut1<'_, f64>, kernel: &[f64], radius: usize) {
    let n = input.len() as i64;
    let r = radius as i64;
    for i in 0..n {
        let lo = (i - r).max(0);
        let hi = (i + r).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += kernel[(j - i + r) as usize] * input[j as usize];
        }
        out[i as usize] = acc;
    }
}

/// Separable Gaussian smoothing with zero padding outside the volume.
pub fn blur3d(volume: &Array3<f64>, sigma: f64, radius: Option<usize>) -> Result<Array3<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("blur sigma must be > 0, got {sigma}")));
    }
    let radius = radius.unwrap_or_else(|| default_radius(sigma));
    let kernel = gaussian_kernel(sigma, radius);
    let mut current = volume.clone();
    for axis in 0..3 {
        let mut next = Array3::zeros(current.dim());
        Zip::from(current.lanes(Axis(axis)))
            .and(next.lanes_mut(Axis(axis)))
            .for_each(|src, dst| convolve_lane(src, dst, &kernel, radius));
        current = next;
    }
    Ok(current)
}

/// Sorted flat grid indices covered by any of the tables.
pub fn union_mask(tables: &[&CoordinateTable]) -> Result<Vec<usize>> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty cohort".into()))?;
    let dims = first.dims();
    let mut cells = Vec::new();
    for (s, t) in tables.iter().enumerate() {
        if t.dims() != dims {
            return Err(Error::MaskMismatch(format!(
                "subject {s} uses grid {:?}, subject 0 uses {dims:?}",
                t.dims()
            )));
        }
        cells.extend((0..t.n_voxels()).map(|v| t.grid_index(v)));
    }
    cells.sort_unstable();
    cells.dedup();
    Ok(cells)
}

/// Projects each column of `q` (`V × K`), blurs it and keeps the mask cells.
pub fn common_space_maps(
    q: ArrayView2<'_, f64>,
    coords: &CoordinateTable,
    mask: &[usize],
    sigma: f64,
) -> Result<Vec<Array1<f64>>> {
    q.axis_iter(Axis(1))
        .map(|col| {
            let vol = blur3d(&project_to_grid(col, coords)?, sigma, None)?;
            let flat = vol
                .as_slice()
                .expect("freshly allocated volumes are contiguous");
            mask.iter()
                .map(|&c| {
                    flat.get(c).copied().ok_or_else(|| {
                        Error::MaskMismatch(format!("mask cell {c} outside a grid of {} cells", flat.len()))
                    })
                })
                .collect()
        })
        .collect()
}

/// Scatters mask-cell values back to a full volume.
pub fn unmask(values: ArrayView1<'_, f64>, mask: &[usize], dims: [u32; 3]) -> Result<Array3<f64>> {
    if values.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} mask cells",
            values.len(),
            mask.len()
        )));
    }
    let mut vol = Array3::zeros((dims[0] as usize, dims[1] as usize, dims[2] as usize));
    let flat = vol.as_slice_mut().expect("contiguous");
    for (&c, &v) in mask.iter().zip(values) {
        *flat
            .get_mut(c)
            .ok_or_else(|| Error::MaskMismatch(format!("mask cell {c} outside the grid")))? = v;
    }
    Ok(vol)
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    // plain left-to-right sum so that dot(a, a) is the same number wherever
    // it is computed
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `|⟨a, b⟩| / (‖a‖ ‖b‖)`, clamped to `[0, 1]`.
pub fn cossim_abs(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("volumes of {} and {} cells", a.len(), b.len())));
    }
    let aa = dot(a, a);
    let bb = dot(b, b);
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b).abs() / (aa * bb).sqrt()).min(1.0))
}

/// Best match of `ic` among `candidates`: `(similarity, index)`, ties going to
/// the smallest index.
pub fn best_match(ic: ArrayView1<'_, f64>, candidates: &[Array1<f64>]) -> Result<(f64, usize)> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, c) in candidates.iter().enumerate() {
        let s = cossim_abs(ic, c.view())?;
        if s > best.0 {
            best = (s, k);
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no components to compare against".into()));
    }
    Ok(best)
}

pub fn inter_subject_similarity(ic: ArrayView1<'_, f64>, other: &[Array1<f64>]) -> Result<f64> {
    best_match(ic, other).map(|b| b.0)
}

pub fn individual_group_similarity(ic: ArrayView1<'_, f64>, group: &[Array1<f64>]) -> Result<f64> {
    best_match(ic, group).map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProfile {
    pub subject: usize,
    pub component: usize,
    /// One value per subject; the owning subject's entry is 1.
    pub is_values: Vec<f64>,
    pub igs_value: f64,
}

impl SimilarityProfile {
    pub fn mean_other_is(&self) -> f64 {
        let n = self.is_values.len();
        if n < 2 {
            return 0.0;
        }
        let total: f64 = self
            .is_values
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != self.subject)
            .map(|(_, v)| v)
            .sum();
        total / (n - 1) as f64
    }

    /// IS values followed by IGS.
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.is_values.clone();
        f.push(self.igs_value);
        f
    }
}

/// IS/IGS profiles of every component of every subject. `cohort[s]` holds the
/// common-space maps of subject `s`.
pub fn similarity_profiles(cohort: &[Vec<Array1<f64>>], group: &[Array1<f64>]) -> Result<Vec<SimilarityProfile>> {
    let tasks: Vec<(usize, usize)> = cohort
        .iter()
        .enumerate()
        .flat_map(|(s, maps)| (0..maps.len()).map(move |k| (s, k)))
        .collect();
    tasks
        .par_iter()
        .map(|&(s, k)| {
            let ic = cohort[s][k].view();
            let is_values = cohort
                .iter()
                .map(|other| inter_subject_similarity(ic, other))
                .collect::<Result<Vec<_>>>()?;
            debug_assert_eq!(is_values[s], 1.0);
            Ok(SimilarityProfile {
                subject: s,
                component: k,
                is_values,
                igs_value: individual_group_similarity(ic, group)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dominance {
    /// Other subjects whose IS exceeds the IGS.
    pub count: usize,
    pub needed: usize,
    pub pass: bool,
}

/// Passes when IS > IGS for at least half (rounded up) of the other subjects.
pub fn dominance_test(profile: &SimilarityProfile) -> Dominance {
    let others = profile.is_values.len().saturating_sub(1);
    let count = profile
        .is_values
        .iter()
        .enumerate()
        .filter(|&(s, &v)| s != profile.subject && v > profile.igs_value)
        .count();
    let needed = others.div_ceil(2);
    Dominance {
        count,
        needed,
        pass: count >= needed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDominance {
    pub subject: usize,
    pub n_components: usize,
    pub n_pass: usize,
    pub fraction: f64,
    pub pass: bool,
}

pub fn cohort_dominance(profiles: &[SimilarityProfile], n_subjects: usize) -> Vec<SubjectDominance> {
    let mut out: Vec<SubjectDominance> = (0..n_subjects)
        .map(|subject| SubjectDominance {
            subject,
            n_components: 0,
            n_pass: 0,
            fraction: 0.0,
            pass: false,
        })
        .collect();
    for p in profiles {
        let entry = &mut out[p.subject];
        entry.n_components += 1;
        if dominance_test(p).pass {
            entry.n_pass += 1;
        }
    }
    for e in &mut out {
        if e.n_components > 0 {
            e.fraction = e.n_pass as f64 / e.n_components as f64;
        }
        e.pass = e.n_components > 0 && e.fraction >= 0.5;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    /// `Σ|ΔIS| + |S|·|ΔIGS|`
    Manhattan,
    /// `sqrt(Σ ΔIS² + |S|·ΔIGS²)`
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// WPGMA: the merged cluster's distance is the plain mean of its children's.
    Weighted,
    /// UPGMA
    Average,
    Single,
    Complete,
}

impl std::str::FromStr for Distance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manhattan" => Ok(Distance::Manhattan),
            "euclidean" => Ok(Distance::Euclidean),
            _ => Err(Error::Config(format!("unknown distance '{s}' (manhattan|euclidean)"))),
        }
    }
}

impl std::str::FromStr for Linkage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Linkage::Weighted),
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            _ => Err(Error::Config(format!(
                "unknown linkage '{s}' (weighted|average|single|complete)"
            ))),
        }
    }
}

impl Distance {
    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Manhattan => "manhattan",
            Distance::Euclidean => "euclidean",
        }
    }
}

impl Linkage {
    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::Weighted => "weighted",
            Linkage::Average => "average",
            Linkage::Single => "single",
            Linkage::Complete => "complete",
        }
    }
}

/// Distance between two feature vectors laid out as `[IS_1..IS_S, IGS]`.
pub fn profile_distance(a: &[f64], b: &[f64], metric: Distance) -> f64 {
    let s = a.len() - 1;
    let w = s as f64;
    let is_part = a[..s].iter().zip(&b[..s]);
    let dg = a[s] - b[s];
    match metric {
        Distance::Manhattan => is_part.map(|(x, y)| (x - y).abs()).sum::<f64>() + w * dg.abs(),
        Distance::Euclidean => (is_part.map(|(x, y)| (x - y) * (x - y)).sum::<f64>() + w * dg * dg).sqrt(),
    }
}

pub fn distance_matrix(features: ArrayView2<'_, f64>, metric: Distance) -> Array2<f64> {
    let n = features.nrows();
    let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = profile_distance(&rows[i], &rows[j], metric);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Cluster ids: `0..n` are single items, `n + i` is the cluster formed by
    /// merge `i`.
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Agglomerative clustering on a full distance matrix. Among equal distances
/// the pair with the smallest (first member, second member) wins, where a
/// cluster is identified by its smallest item.
pub fn agglomerate(dist: ArrayView2<'_, f64>, linkage: Linkage) -> Vec<Merge> {
    let n = dist.nrows();
    let mut d = dist.to_owned();
    let mut active = vec![true; n];
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[[i, j]] < best.0 {
                    best = (d[[i, j]], i, j);
                }
            }
        }
        let (h, i, j) = best;
        let (ni, nj) = (sizes[i] as f64, sizes[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let (dik, djk) = (d[[i, k]], d[[j, k]]);
            let v = match linkage {
                Linkage::Weighted => 0.5 * (dik + djk),
                Linkage::Average => (ni * dik + nj * djk) / (ni + nj),
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
            };
            d[[i, k]] = v;
            d[[k, i]] = v;
        }
        active[j] = false;
        sizes[i] += sizes[j];
        let (a, b) = (ids[i].min(ids[j]), ids[i].max(ids[j]));
        merges.push(Merge { a, b, height: h, size: sizes[i] });
        ids[i] = n + step;
    }
    merges
}

/// Flat labels after applying all but the last `n_clusters − 1` merges;
/// labels are numbered in order of each cluster's smallest item.
pub fn cut_tree(merges: &[Merge], n: usize, n_clusters: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n + merges.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let keep = n.saturating_sub(n_clusters.max(1));
    for (step, m) in merges.iter().take(keep).enumerate() {
        let node = n + step;
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = node;
        parent[rb] = node;
    }
    let mut label_of_root = std::collections::HashMap::new();
    (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = label_of_root.len();
            *label_of_root.entry(r).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub merges: Vec<Merge>,
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub sizes: Vec<usize>,
    /// Mean over members of the mean IS against other subjects.
    pub mean_is: Vec<f64>,
    pub mean_igs: Vec<f64>,
    /// Cluster with the largest `mean_is − mean_igs`.
    pub candidate: usize,
}

pub fn cluster_profiles(
    profiles: &[SimilarityProfile],
    n_clusters: usize,
    metric: Distance,
    linkage: Linkage,
) -> Result<ClusterResult> {
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be >= 1".into()));
    }
    if profiles.len() < n_clusters {
        return Err(Error::TooFewProfiles {
            have: profiles.len(),
            need: n_clusters,
        });
    }
    let features = feature_matrix(profiles)?;
    let merges = agglomerate(distance_matrix(features.view(), metric).view(), linkage);
    let labels = cut_tree(&merges, profiles.len(), n_clusters);
    let mut sizes = vec![0usize; n_clusters];
    let mut mean_is = vec![0.0; n_clusters];
    let mut mean_igs = vec![0.0; n_clusters];
    for (p, &l) in profiles.iter().zip(&labels) {
        sizes[l] += 1;
        mean_is[l] += p.mean_other_is();
        mean_igs[l] += p.igs_value;
    }
    for l in 0..n_clusters {
        mean_is[l] /= sizes[l] as f64;
        mean_igs[l] /= sizes[l] as f64;
    }
    let mut candidate = 0;
    for l in 1..n_clusters {
        if mean_is[l] - mean_igs[l] > mean_is[candidate] - mean_igs[candidate] {
            candidate = l;
        }
    }
    Ok(ClusterResult {
        merges,
        labels,
        n_clusters,
        sizes,
        mean_is,
        mean_igs,
        candidate,
    })
}

/// Profiles × (IS_1..IS_S, IGS).
pub fn feature_matrix(profiles: &[SimilarityProfile]) -> Result<Array2<f64>> {
    let width = profiles.first().map_or(0, |p| p.is_values.len() + 1);
    let mut out = Array2::zeros((profiles.len(), width));
    for (i, p) in profiles.iter().enumerate() {
        if p.is_values.len() + 1 != width {
            return Err(Error::DimensionMismatch("profiles cover different cohorts".into()));
        }
        out.row_mut(i).assign(&Array1::from(p.features()));
    }
    Ok(out)
}

pub fn profiles_tsv(profiles: &[SimilarityProfile], subject_names: &[String]) -> String {
    let mut out = String::from("subject\tcomponent");
    for name in subject_names {
        let _ = write!(out, "\tIS_{name}");
    }
    out.push_str("\tIGS\n");
    for p in profiles {
        let _ = write!(out, "{}\t{}", subject_names[p.subject], p.component);
        for v in &p.is_values {
            let _ = write!(out, "\t{v}");
        }
        let _ = writeln!(out, "\t{}", p.igs_value);
    }
    out
}

/// Inverse of [`profiles_tsv`]: subject names and profiles.
pub fn parse_profiles_tsv(text: &str) -> Result<(Vec<String>, Vec<SimilarityProfile>)> {
    let bad = |line: usize, msg: &str| Error::InvalidShape(format!("profiles line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(0, "missing header"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[0] != "subject" || cols[1] != "component" || cols[cols.len() - 1] != "IGS" {
        return Err(bad(0, "unexpected header"));
    }
    let names: Vec<String> = cols[2..cols.len() - 1]
        .iter()
        .map(|c| c.strip_prefix("IS_").map(String::from).ok_or_else(|| bad(0, "IS column without IS_ prefix")))
        .collect::<Result<_>>()?;
    let mut profiles = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(bad(n, "wrong column count"));
        }
        let subject = names.iter().position(|s| s == f[0]).ok_or_else(|| bad(n, "unknown subject"))?;
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad(n, "bad number"));
        profiles.push(SimilarityProfile {
            subject,
            component: f[1].parse().map_err(|_| bad(n, "bad component index"))?,
            is_values: f[2..f.len() - 1].iter().map(|t| num(t)).collect::<Result<_>>()?,
            igs_value: num(f[f.len() - 1])?,
        });
    }
    Ok((names, profiles))
}

pub fn dominance_tsv(profiles: &[SimilarityProfile], subjects: &[SubjectDominance], subject_names: &[String]) -> String {
    let mut out = String::from("subject\tcomponent\tcount\tneeded\tpass\n");
    for p in profiles {
        let d = dominance_test(p);
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", subject_names[p.subject], p.component, d.count, d.needed, d.pass);
    }
    out.push_str("\nsubject\tcomponents\tpassing\tfraction\tpass\n");
    for s in subjects {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            subject_names[s.subject], s.n_components, s.n_pass, s.fraction, s.pass
        );
    }
    out
}

impl ClusterResult {
    pub fn clusters_tsv(&self, profiles: &[SimilarityProfile], subject_names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# candidate cluster = {}", self.candidate);
        out.push_str("cluster\tsize\tmean_is\tmean_igs\n");
        for l in 0..self.n_clusters {
            let _ = writeln!(out, "{l}\t{}\t{}\t{}", self.sizes[l], self.mean_is[l], self.mean_igs[l]);
        }
        out.push_str("\nsubject\tcomponent\tcluster\n");
        for (p, l) in profiles.iter().zip(&self.labels) {
            let _ = writeln!(out, "{}\t{}\t{l}", subject_names[p.subject], p.component);
        }
        out
    }

    pub fn dendrogram_tsv(&self) -> String {
        let mut out = String::from("step\ta\tb\theight\tsize\n");
        for (i, m) in self.merges.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{}\t{}\t{}", m.a, m.b, m.height, m.size);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn table(dims: [u32; 3], coords: Vec<[i32; 3]>) -> CoordinateTable {
        CoordinateTable::new(dims, coords).unwrap()
    }

    #[test]
    fn profiles_tsv_round_trip() {
        let names = vec!["sub-01".to_string(), "sub-02".to_string()];
        let profiles = vec![
            SimilarityProfile { subject: 0, component: 0, is_values: vec![1.0, 0.1 + 0.2], igs_value: 1.0 / 3.0 },
            SimilarityProfile { subject: 1, component: 3, is_values: vec![0.7, 1.0], igs_value: 0.0 },
        ];
        let (n, p) = parse_profiles_tsv(&profiles_tsv(&profiles, &names)).unwrap();
        assert_eq!(n, names);
        assert_eq!(p, profiles);
        assert!(parse_profiles_tsv("subject\tcomponent\tIGS\n").is_err());
        assert!(parse_profiles_tsv("subject\tcomponent\tIS_a\tIGS\nb\t0\t1\t0\n").is_err());
    }

    #[test]
    fn scatter_single_voxel_and_round_trip() {
        let t = table([3, 3, 3], vec![[1, 1, 1]]);
        let vol = project_to_grid(array![5.0].view(), &t).unwrap();
        assert_eq!(vol.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(vol[[1, 1, 1]], 5.0);
        let t = table([4, 3, 2], vec![[0, 0, 0], [3, 2, 1], [1, 2, 0], [2, 0, 1]]);
        let q = array![1.5, -2.0, 0.25, 7.0];
        let vol = project_to_grid(q.view(), &t).unwrap();
        assert_eq!(vol.sum(), q.sum());
        assert_eq!(gather(&vol, &t).unwrap(), q);
        for v in 0..4 {
            let c = t.coords()[v];
            assert_eq!(vol.as_slice().unwrap()[t.grid_index(v)], vol[[c[0] as usize, c[1] as usize, c[2] as usize]]);
        }
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(3.0, 9);
        assert_eq!(k.len(), 19);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..9 {
            assert_eq!(k[i], k[18 - i]);
        }
        assert_eq!(default_radius(3.0), 9);
    }

    #[test]
    fn blur_constant_interior_and_impulse() {
        let vol = Array3::from_elem((25, 25, 25), 2.0);
        let b = blur3d(&vol, 1.5, None).unwrap();
        // radius 5; cells at distance ≥ 5 from every face see no padding
        assert!((b[[12, 12, 12]] - 2.0).abs() < 1e-10);
        assert!((b[[5, 19, 10]] - 2.0).abs() < 1e-10);
        let mut delta = Array3::zeros((21, 21, 21));
        delta[[10, 10, 10]] = 1.0;
        let b = blur3d(&delta, 2.0, None).unwrap();
        assert!((b.sum() - 1.0).abs() < 1e-10);
        let k = gaussian_kernel(2.0, 6);
        assert!((b[[10, 12, 9]] - k[6] * k[8] * k[5]).abs() < 1e-15);
        assert!(blur3d(&delta, 0.0, None).is_err());
    }

    #[test]
    fn blur_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Array3<f64> = Array::from_shape_simple_fn((7, 8, 9), || StandardNormal.sample(&mut rng));
        let b: Array3<f64> = Array::from_shape_simple_fn((7, 8, 9), || StandardNormal.sample(&mut rng));
        let lhs = blur3d(&(&a + &b), 3.0, None).unwrap();
        let rhs = blur3d(&a, 3.0, None).unwrap() + blur3d(&b, 3.0, None).unwrap();
        assert!((&lhs - &rhs).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn cosine_cases() {
        let a = array![1.0, 2.0, -3.0];
        assert_eq!(cossim_abs(a.view(), a.view()).unwrap(), 1.0);
        assert_eq!(cossim_abs(a.view(), (-&a).view()).unwrap(), 1.0);
        assert_eq!(cossim_abs(array![1.0, 0.0].view(), array![0.0, 3.0].view()).unwrap(), 0.0);
        assert!(matches!(cossim_abs(a.view(), array![0.0, 0.0, 0.0].view()), Err(Error::ZeroNorm)));
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a: Array1<f64> = Array::from_shape_simple_fn(50, || StandardNormal.sample(&mut rng));
            let a = a.mapv(|v: f64| v * 1e3f64.powf(v));
            assert_eq!(cossim_abs(a.view(), a.view()).unwrap(), 1.0);
        }
    }

    #[test]
    fn best_match_tie_goes_to_first() {
        let ic = array![1.0, 0.0];
        let cands = vec![array![0.0, 1.0], array![2.0, 0.0], array![-1.0, 0.0]];
        assert_eq!(best_match(ic.view(), &cands).unwrap(), (1.0, 1));
    }

    #[test]
    fn dominance_examples() {
        let p = SimilarityProfile { subject: 1, component: 0, is_values: vec![1.0, 1.0, 1.0, 1.0], igs_value: 0.0 };
        assert!(dominance_test(&p).pass);
        let p = SimilarityProfile { subject: 0, component: 0, is_values: vec![1.0, 0.0, 0.0], igs_value: 1.0 };
        assert!(!dominance_test(&p).pass);
        // 4 others: needs 2; ties with IGS do not count
        let p = SimilarityProfile { subject: 0, component: 0, is_values: vec![1.0, 0.6, 0.5, 0.4, 0.5], igs_value: 0.5 };
        assert_eq!(dominance_test(&p), Dominance { count: 1, needed: 2, pass: false });
        let summary = cohort_dominance(&[p.clone(), SimilarityProfile { igs_value: 0.1, ..p }], 1);
        assert_eq!(summary[0].n_pass, 1);
        assert!(summary[0].pass);
    }

    #[test]
    fn weighted_manhattan_by_hand() {
        // |S| = 3
        let a = [1.0, 0.5, 0.2, 0.3];
        let b = [0.4, 1.0, 0.2, 0.1];
        let c = [0.5, 0.5, 1.0, 0.9];
        assert!((profile_distance(&a, &b, Distance::Manhattan) - (0.6 + 0.5 + 0.0 + 3.0 * 0.2)).abs() < 1e-15);
        assert!((profile_distance(&a, &c, Distance::Manhattan) - (0.5 + 0.0 + 0.8 + 3.0 * 0.6)).abs() < 1e-15);
        assert!((profile_distance(&b, &c, Distance::Manhattan) - (0.1 + 0.5 + 0.8 + 3.0 * 0.8)).abs() < 1e-15);
        let d = [1.0, 0.5, 0.2, 0.3 + 0.125];
        assert_eq!(profile_distance(&a, &d, Distance::Manhattan), 3.0 * 0.125);
    }

    #[test]
    fn wpgma_by_hand() {
        let d = array![
            [0.0, 2.0, 6.0, 10.0],
            [2.0, 0.0, 5.0, 9.0],
            [6.0, 5.0, 0.0, 4.0],
            [10.0, 9.0, 4.0, 0.0]
        ];
        let m = agglomerate(d.view(), Linkage::Weighted);
        assert_eq!(m[0], Merge { a: 0, b: 1, height: 2.0, size: 2 });
        assert_eq!(m[1], Merge { a: 2, b: 3, height: 4.0, size: 2 });
        // d({0,1},{2,3}) = mean(mean(6,5), mean(10,9)) = 7.5
        assert_eq!(m[2], Merge { a: 4, b: 5, height: 7.5, size: 4 });
        assert_eq!(cut_tree(&m, 4, 2), vec![0, 0, 1, 1]);
        assert_eq!(cut_tree(&m, 4, 4), vec![0, 1, 2, 3]);
        assert_eq!(cut_tree(&m, 4, 1), vec![0, 0, 0, 0]);
        let single = agglomerate(d.view(), Linkage::Single);
        assert_eq!(single[2].height, 5.0);
        let complete = agglomerate(d.view(), Linkage::Complete);
        assert_eq!(complete[2].height, 10.0);
    }

    #[test]
    fn identical_profiles_merge_at_zero() {
        let p = SimilarityProfile { subject: 0, component: 0, is_values: vec![1.0, 0.3], igs_value: 0.2 };
        let q = SimilarityProfile { component: 1, ..p.clone() };
        let r = cluster_profiles(&[p, q], 1, Distance::Manhattan, Linkage::Weighted).unwrap();
        assert_eq!(r.merges.len(), 1);
        assert_eq!(r.merges[0].height, 0.0);
    }

    #[test]
    fn too_few_profiles() {
        let p = SimilarityProfile { subject: 0, component: 0, is_values: vec![1.0], igs_value: 0.2 };
        assert!(matches!(
            cluster_profiles(&[p], 4, Distance::Manhattan, Linkage::Weighted),
            Err(Error::TooFewProfiles { have: 1, need: 4 })
        ));
    }
}
