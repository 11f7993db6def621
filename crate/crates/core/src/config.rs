//! Run configuration: flat `key = value` text with dotted keys.
//!
//! Sources apply in the order defaults < file < `SCN_*` environment < explicit
//! overrides (command-line flags). Every key serializes back to the same
//! value, so `parse(serialize(cfg)) == cfg`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data_model::TemporalSplit;
use crate::error::{Error, Result};
use crate::ica::IcaOptions;
use crate::lasso_ridge::PathScoring;
use crate::selection::{PermutationScheme, SelectionConfig, SignificanceConfig, Stage1Config, Stage2Config};
use crate::similarity::{Distance, Linkage};
use crate::synth::{PlantedSourceSpec, PlantedVarSpec};

pub const ENV_PREFIX: &str = "SCN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Sparse VAR(1) subjects with planted drivers.
    Var,
    /// Shared spatial sources with AR(1) time courses.
    Sources,
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Var => "var",
            SynthKind::Sources => "sources",
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "var" => Ok(SynthKind::Var),
            "sources" => Ok(SynthKind::Sources),
            _ => Err(Error::Config(format!("unknown synth kind '{s}' (var|sources)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub subjects: usize,
    pub time_points: usize,
    pub regions: usize,
    /// Innovation noise of the VAR cohort.
    pub noise: f64,
    /// Measurement noise of the source cohort.
    pub source_noise: f64,
    // var
    pub voxels: usize,
    pub drivers: usize,
    pub coupling: f64,
    pub driver_ar: f64,
    // sources
    pub grid: [u32; 3],
    pub sources: usize,
    pub populations: usize,
    /// Source left out of the group-baseline cohort written to `group_input/`.
    pub exclude_source: Option<usize>,
    pub blob_sigma: f64,
    pub blob_radius: f64,
    pub dropout: f64,
    pub time_ar: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let src = PlantedSourceSpec::default();
        SynthConfig {
            kind: SynthKind::Var,
            subjects: 5,
            time_points: 300,
            regions: 10,
            noise: 1.0,
            source_noise: 0.2,
            voxels: 600,
            drivers: 5,
            coupling: 1.75,
            driver_ar: 0.0,
            grid: src.grid,
            sources: src.n_sources,
            populations: src.n_populations,
            exclude_source: None,
            blob_sigma: src.blob_sigma,
            blob_radius: src.blob_radius,
            dropout: src.dropout,
            time_ar: src.time_ar,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cohort_dir: PathBuf,
    /// Subject directory names; empty means every `sub-*` directory.
    pub subjects: Vec<String>,
    pub output_dir: PathBuf,
    pub split_train: f64,
    pub split_val: f64,
    pub scale: bool,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub n_perm: usize,
    pub alpha: f64,
    pub scheme: PermutationScheme,
    pub ica_k: usize,
    pub ica: IcaOptions,
    pub blur_sigma: f64,
    /// Cohort whose concatenation gives the group baseline; defaults to `cohort_dir`.
    pub group_cohort_dir: Option<PathBuf>,
    /// Precomputed group maps (`K × cells`) and their coordinates.
    pub group_maps: Option<PathBuf>,
    pub group_coords: Option<PathBuf>,
    pub n_clusters: usize,
    pub distance: Distance,
    pub linkage: Linkage,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cohort_dir: PathBuf::from("cohort"),
            subjects: Vec::new(),
            output_dir: PathBuf::from("out"),
            split_train: 0.8,
            split_val: 0.1,
            scale: false,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            n_perm: 100,
            alpha: 0.05,
            scheme: PermutationScheme::Frozen,
            ica_k: 20,
            ica: IcaOptions::default(),
            blur_sigma: 3.0,
            group_cohort_dir: None,
            group_maps: None,
            group_coords: None,
            n_clusters: 4,
            distance: Distance::Manhattan,
            linkage: Linkage::Weighted,
            seed: 0,
            threads: 0,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let l = &self.stage1.solver;
        let p = &self.stage2.path;
        let grid = s.grid.map(|d| d.to_string()).join(",");
        vec![
            ("cohort.dir", self.cohort_dir.display().to_string()),
            ("cohort.subjects", self.subjects.join(",")),
            ("output.dir", self.output_dir.display().to_string()),
            ("split.train", self.split_train.to_string()),
            ("split.val", self.split_val.to_string()),
            ("preprocess.scale", self.scale.to_string()),
            ("stage1.n_lambdas", self.stage1.n_lambdas.to_string()),
            ("stage1.min_ratio", self.stage1.min_ratio.to_string()),
            ("stage1.rule", self.stage1.rule.as_str().to_string()),
            ("stage1.max_iter", l.max_iter.to_string()),
            ("stage1.tol", l.tol.to_string()),
            ("stage1.kkt_tol", l.kkt_tol.to_string()),
            ("stage1.max_polish_sweeps", l.max_polish_sweeps.to_string()),
            ("stage2.n_lambdas", p.n_lambdas.to_string()),
            ("stage2.min_ratio", p.min_ratio.to_string()),
            ("stage2.scoring", scoring_str(p.scoring).to_string()),
            ("stage2.max_sweeps", self.stage2.lasso.max_sweeps.to_string()),
            ("stage2.tol", self.stage2.lasso.tol.to_string()),
            ("stage2.kkt_tol", self.stage2.lasso.kkt_tol.to_string()),
            ("ridge.n_mu", self.stage2.ridge.n_mu.to_string()),
            ("ridge.mu_min", self.stage2.ridge.mu_min.to_string()),
            ("ridge.mu_max", self.stage2.ridge.mu_max.to_string()),
            ("significance.n_perm", self.n_perm.to_string()),
            ("significance.alpha", self.alpha.to_string()),
            ("significance.scheme", self.scheme.as_str().to_string()),
            ("ica.k", self.ica_k.to_string()),
            ("ica.max_iter", self.ica.max_iter.to_string()),
            ("ica.tol", self.ica.tol.to_string()),
            ("blur.sigma", self.blur_sigma.to_string()),
            ("group.cohort_dir", show_path(&self.group_cohort_dir)),
            ("group.maps", show_path(&self.group_maps)),
            ("group.coords", show_path(&self.group_coords)),
            ("cluster.n_clusters", self.n_clusters.to_string()),
            ("cluster.distance", self.distance.as_str().to_string()),
            ("cluster.linkage", self.linkage.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("synth.kind", s.kind.as_str().to_string()),
            ("synth.subjects", s.subjects.to_string()),
            ("synth.time_points", s.time_points.to_string()),
            ("synth.regions", s.regions.to_string()),
            ("synth.noise", s.noise.to_string()),
            ("synth.source_noise", s.source_noise.to_string()),
            ("synth.voxels", s.voxels.to_string()),
            ("synth.drivers", s.drivers.to_string()),
            ("synth.coupling", s.coupling.to_string()),
            ("synth.driver_ar", s.driver_ar.to_string()),
            ("synth.grid", grid),
            ("synth.sources", s.sources.to_string()),
            ("synth.populations", s.populations.to_string()),
            ("synth.exclude_source", s.exclude_source.map(|e| e.to_string()).unwrap_or_default()),
            ("synth.blob_sigma", s.blob_sigma.to_string()),
            ("synth.blob_radius", s.blob_radius.to_string()),
            ("synth.dropout", s.dropout.to_string()),
            ("synth.time_ar", s.time_ar.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synth;
        match key {
            "cohort.dir" => self.cohort_dir = PathBuf::from(v),
            "cohort.subjects" => {
                self.subjects = v.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
            }
            "output.dir" => self.output_dir = PathBuf::from(v),
            "split.train" => self.split_train = parse(key, v)?,
            "split.val" => self.split_val = parse(key, v)?,
            "preprocess.scale" => self.scale = parse(key, v)?,
            "stage1.n_lambdas" => self.stage1.n_lambdas = parse(key, v)?,
            "stage1.min_ratio" => self.stage1.min_ratio = parse(key, v)?,
            "stage1.rule" => self.stage1.rule = v.parse()?,
            "stage1.max_iter" => self.stage1.solver.max_iter = parse(key, v)?,
            "stage1.tol" => self.stage1.solver.tol = parse(key, v)?,
            "stage1.kkt_tol" => self.stage1.solver.kkt_tol = parse(key, v)?,
            "stage1.max_polish_sweeps" => self.stage1.solver.max_polish_sweeps = parse(key, v)?,
            "stage2.n_lambdas" => self.stage2.path.n_lambdas = parse(key, v)?,
            "stage2.min_ratio" => self.stage2.path.min_ratio = parse(key, v)?,
            "stage2.scoring" => {
                self.stage2.path.scoring = match v {
                    "unshrunk" => PathScoring::Unshrunk,
                    "shrunk" => PathScoring::Shrunk,
                    _ => return Err(Error::Config(format!("{key}: unknown scoring '{v}' (unshrunk|shrunk)"))),
                }
            }
            "stage2.max_sweeps" => self.stage2.lasso.max_sweeps = parse(key, v)?,
            "stage2.tol" => self.stage2.lasso.tol = parse(key, v)?,
            "stage2.kkt_tol" => self.stage2.lasso.kkt_tol = parse(key, v)?,
            "ridge.n_mu" => self.stage2.ridge.n_mu = parse(key, v)?,
            "ridge.mu_min" => self.stage2.ridge.mu_min = parse(key, v)?,
            "ridge.mu_max" => self.stage2.ridge.mu_max = parse(key, v)?,
            "significance.n_perm" => self.n_perm = parse(key, v)?,
            "significance.alpha" => self.alpha = parse(key, v)?,
            "significance.scheme" => self.scheme = v.parse()?,
            "ica.k" => self.ica_k = parse(key, v)?,
            "ica.max_iter" => self.ica.max_iter = parse(key, v)?,
            "ica.tol" => self.ica.tol = parse(key, v)?,
            "blur.sigma" => self.blur_sigma = parse(key, v)?,
            "group.cohort_dir" => self.group_cohort_dir = parse_path(v),
            "group.maps" => self.group_maps = parse_path(v),
            "group.coords" => self.group_coords = parse_path(v),
            "cluster.n_clusters" => self.n_clusters = parse(key, v)?,
            "cluster.distance" => self.distance = v.parse()?,
            "cluster.linkage" => self.linkage = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "synth.kind" => s.kind = v.parse()?,
            "synth.subjects" => s.subjects = parse(key, v)?,
            "synth.time_points" => s.time_points = parse(key, v)?,
            "synth.regions" => s.regions = parse(key, v)?,
            "synth.noise" => s.noise = parse(key, v)?,
            "synth.source_noise" => s.source_noise = parse(key, v)?,
            "synth.voxels" => s.voxels = parse(key, v)?,
            "synth.drivers" => s.drivers = parse(key, v)?,
            "synth.coupling" => s.coupling = parse(key, v)?,
            "synth.driver_ar" => s.driver_ar = parse(key, v)?,
            "synth.grid" => {
                let dims: Vec<u32> = v.split(',').map(|d| parse(key, d.trim())).collect::<Result<_>>()?;
                s.grid = dims
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three comma-separated sizes, got '{v}'")))?;
            }
            "synth.sources" => s.sources = parse(key, v)?,
            "synth.populations" => s.populations = parse(key, v)?,
            "synth.exclude_source" => s.exclude_source = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "synth.blob_sigma" => s.blob_sigma = parse(key, v)?,
            "synth.blob_radius" => s.blob_radius = parse(key, v)?,
            "synth.dropout" => s.dropout = parse(key, v)?,
            "synth.time_ar" => s.time_ar = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected 'key = value'", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("{origin}:{}: duplicate key '{key}'", n + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip_prefix(e))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, "<config>")?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `SCN_STAGE1_N_LAMBDAS` sets `stage1.n_lambdas`, and so on.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let names: Vec<(String, &str)> = RunConfig::keys().into_iter().map(|k| (env_name(k), k)).collect();
        let mut hits: Vec<(&str, String)> = Vec::new();
        for (name, value) in vars {
            if let Some((_, key)) = names.iter().find(|(n, _)| n == name.as_ref()) {
                hits.push((key, value.as_ref().to_string()));
            }
        }
        // apply in key order so the result does not depend on environment order
        hits.sort_by_key(|(k, _)| *k);
        for (key, value) in hits {
            self.set(key, &value)
                .map_err(|e| Error::Config(format!("{}: {}", env_name(key), strip_prefix(e))))?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the environment.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("split.train", self.split_train),
            ("split.val", self.split_val),
            ("stage1.min_ratio", self.stage1.min_ratio),
            ("stage1.kkt_tol", self.stage1.solver.kkt_tol),
            ("stage2.min_ratio", self.stage2.path.min_ratio),
            ("stage2.tol", self.stage2.lasso.tol),
            ("stage2.kkt_tol", self.stage2.lasso.kkt_tol),
            ("ridge.mu_min", self.stage2.ridge.mu_min),
            ("ridge.mu_max", self.stage2.ridge.mu_max),
            ("significance.alpha", self.alpha),
            ("ica.tol", self.ica.tol),
            ("blur.sigma", self.blur_sigma),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{key} must be a positive number, got {v}"));
            }
        }
        if self.split_train + self.split_val >= 1.0 {
            return bad("split.train + split.val must leave a test segment".into());
        }
        if self.stage1.min_ratio >= 1.0 || self.stage2.path.min_ratio >= 1.0 {
            return bad("min_ratio must be below 1".into());
        }
        if self.stage2.ridge.mu_min > self.stage2.ridge.mu_max {
            return bad("ridge.mu_min exceeds ridge.mu_max".into());
        }
        let counts = [
            ("stage1.n_lambdas", self.stage1.n_lambdas),
            ("stage2.n_lambdas", self.stage2.path.n_lambdas),
            ("ridge.n_mu", self.stage2.ridge.n_mu),
            ("significance.n_perm", self.n_perm),
            ("ica.k", self.ica_k),
            ("ica.max_iter", self.ica.max_iter),
            ("cluster.n_clusters", self.n_clusters),
        ];
        for (key, v) in counts {
            if v == 0 {
                return bad(format!("{key} must be positive"));
            }
        }
        if self.group_maps.is_some() != self.group_coords.is_some() {
            return bad("group.maps and group.coords must be given together".into());
        }
        Ok(())
    }

    pub fn split_for(&self, t: usize) -> Result<TemporalSplit> {
        TemporalSplit::from_fractions(t, self.split_train, self.split_val)
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            stage1: self.stage1,
            stage2: self.stage2,
        }
    }

    pub fn significance(&self) -> SignificanceConfig {
        SignificanceConfig {
            n_perm: self.n_perm,
            alpha: self.alpha,
            scheme: self.scheme,
            seed: self.seed,
        }
    }

    /// Digest of every setting that can change results; the output location
    /// and the thread count are left out.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for (k, v) in self.entries() {
            if k != "output.dir" && k != "threads" {
                let _ = writeln!(text, "{k} = {v}");
            }
        }
        crate::workflow::sha256_hex(text.as_bytes())
    }

    pub fn var_spec(&self, subject: usize) -> Result<PlantedVarSpec> {
        let s = &self.synth;
        PlantedVarSpec::random(
            s.voxels,
            s.time_points,
            s.regions,
            s.drivers,
            s.coupling,
            s.driver_ar,
            s.noise,
            self.seed.wrapping_add(subject as u64),
        )
    }

    pub fn source_spec(&self) -> PlantedSourceSpec {
        let s = &self.synth;
        PlantedSourceSpec {
            grid: s.grid,
            n_sources: s.sources,
            n_subjects: s.subjects,
            n_populations: s.populations,
            time_points: s.time_points,
            n_regions: s.regions,
            blob_sigma: s.blob_sigma,
            blob_radius: s.blob_radius,
            dropout: s.dropout,
            noise: s.source_noise,
            time_ar: s.time_ar,
            seed: self.seed,
        }
    }
}

fn scoring_str(s: PathScoring) -> &'static str {
    match s {
        PathScoring::Unshrunk => "unshrunk",
        PathScoring::Shrunk => "shrunk",
    }
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

/// `#` starts a comment at the beginning of a line or after whitespace, so
/// paths such as `run#2` survive.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
