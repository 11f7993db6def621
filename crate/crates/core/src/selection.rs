//! Two-stage voxel selection, the final ridge model and the permutation
//! significance test.
//!
//! Stage 1 fits, for every atlas region, a group-sparse model predicting all
//! voxels outside the region from the region's voxels one step earlier. The
//! union of surviving predictors is `V_S1`. Stage 2 fits one LASSO per target
//! voxel on the `V_S1` predictors, then a ridge model restricted to each LASSO
//! support. All region and voxel loops run in parallel but collect in index
//! order, so results do not depend on the thread count.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data_model::{AtlasPartition, FitData, LagBlock, SubjectData};
use crate::error::{Error, Result};
use crate::l21::{unshrunk_refit, L21Gram, L21Options};
use crate::lasso_ridge::{
    lasso_path_select_gram, ridge_on_support_select, select_min, tied_or_better, DesignGram, LassoOptions,
    PathConfig, RidgeGridConfig, TargetGram,
};
use crate::linalg::linspace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Config {
    pub n_lambdas: usize,
    pub min_ratio: f64,
    pub rule: SelectionRule,
    pub solver: L21Options,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            n_lambdas: 20,
            min_ratio: 1e-3,
            rule: SelectionRule::Min,
            solver: L21Options::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage2Config {
    pub path: PathConfig,
    pub lasso: LassoOptions,
    pub ridge: RidgeGridConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

/// How a point of the λ path is chosen from its validation errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Smallest validation MSE.
    Min,
    /// Largest λ whose validation MSE is within one standard error of the
    /// smallest. The standard error is taken over validation time points,
    /// since errors of different targets at one time point are correlated.
    OneSe,
}

impl SelectionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionRule::Min => "min",
            SelectionRule::OneSe => "one_se",
        }
    }

    /// Index into path-ordered (largest λ first) errors.
    pub fn select(self, errors: &[f64], std_errors: &[f64], null_mse: f64) -> Option<usize> {
        let best = select_min(errors, null_mse)?;
        match self {
            SelectionRule::Min => Some(best),
            SelectionRule::OneSe => {
                let threshold = errors[best] + std_errors[best];
                errors.iter().position(|&e| e.is_finite() && tied_or_better(e, threshold, null_mse))
            }
        }
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(SelectionRule::Min),
            "one_se" => Ok(SelectionRule::OneSe),
            _ => Err(Error::Config(format!("unknown selection rule '{s}' (min|one_se)"))),
        }
    }
}

/// What the shuffled surrogate models refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationScheme {
    /// Stage-1 voxel set held fixed; stage 2 and ridge refit.
    Frozen,
    /// Both stages rerun on the shuffled data.
    Full,
}

impl PermutationScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            PermutationScheme::Frozen => "frozen",
            PermutationScheme::Full => "full",
        }
    }
}

impl std::str::FromStr for PermutationScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(PermutationScheme::Frozen),
            "full" => Ok(PermutationScheme::Full),
            _ => Err(Error::Config(format!("unknown permutation scheme '{s}' (frozen|full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceConfig {
    pub n_perm: usize,
    pub alpha: f64,
    pub scheme: PermutationScheme,
    pub seed: u64,
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        SignificanceConfig {
            n_perm: 100,
            alpha: 0.05,
            scheme: PermutationScheme::Frozen,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub val_mse: f64,
    /// Standard error of `val_mse` over validation time points.
    pub val_se: f64,
    pub n_active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSelection {
    pub region: u32,
    pub n_voxels: usize,
    pub lambda: f64,
    pub lambda_max: f64,
    /// Selected voxels, as global indices.
    pub active: Vec<usize>,
    pub val_mse: f64,
    pub certified: bool,
    pub path: Vec<PathPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Result {
    pub regions: Vec<RegionSelection>,
    /// `V_S1`, ascending.
    pub union: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFit {
    pub lambda: f64,
    pub lambda_max: f64,
    /// Positions within the stage-1 voxel set.
    pub support: Vec<usize>,
    pub lasso_val_mse: f64,
    pub mu: f64,
    pub ridge_val_mse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Result {
    /// Stage-1 voxels, the row order of `w_ridge`.
    pub voxel_set: Vec<usize>,
    pub fits: Vec<VoxelFit>,
    /// Union of the per-voxel supports, as global indices, ascending.
    pub selected: Vec<usize>,
    /// `|V_S1| × V`; column `j` predicts voxel `j`.
    pub w_ridge: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub observed: Array1<f64>,
    /// `V × n_perm` test errors of the surrogate models.
    pub null: Array2<f64>,
    pub p_values: Array1<f64>,
    pub alpha: f64,
    pub fraction_significant: f64,
    pub scheme: PermutationScheme,
    pub seed: u64,
}

impl SignificanceReport {
    pub fn significant(&self) -> Vec<usize> {
        self.p_values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p <= self.alpha)
            .map(|(j, _)| j)
            .collect()
    }
}

fn mean_sq_rows(resid: &Array2<f64>) -> Array1<f64> {
    let n = resid.ncols().max(1) as f64;
    resid.map_axis(Axis(1), |r| r.dot(&r) / n)
}

/// Mean squared residual (targets × time) and its standard error across time points.
fn mse_with_se(resid: ArrayView2<'_, f64>) -> (f64, f64) {
    let per_t = resid.map_axis(Axis(0), |c| c.dot(&c) / c.len().max(1) as f64);
    let n = per_t.len();
    let mean = per_t.mean().unwrap_or(0.0);
    if n < 2 {
        return (mean, 0.0);
    }
    let var = per_t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn mean_sq(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().map(|v| v * v).sum::<f64>() / n
}

pub fn run_stage1(subject: &SubjectData, cfg: &Stage1Config) -> Result<Stage1Result> {
    stage1_on(&subject.fit_data(), subject.atlas(), cfg)
}

fn stage1_on(fit: &FitData, atlas: &AtlasPartition, cfg: &Stage1Config) -> Result<Stage1Result> {
    if cfg.n_lambdas == 0 {
        return Err(Error::InvalidArgument("stage 1 needs at least one lambda".into()));
    }
    let members = atlas.region_voxels();
    let regions: Vec<RegionSelection> = members
        .par_iter()
        .enumerate()
        .map(|(i, voxels)| fit_region(fit, i as u32 + 1, voxels, cfg))
        .collect::<Result<_>>()?;
    let mut union: Vec<usize> = regions.iter().flat_map(|r| r.active.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    Ok(Stage1Result { regions, union })
}

fn fit_region(fit: &FitData, region: u32, voxels: &[usize], cfg: &Stage1Config) -> Result<RegionSelection> {
    let v = fit.voxels();
    let mut inside = vec![false; v];
    for &j in voxels {
        inside[j] = true;
    }
    let complement: Vec<usize> = (0..v).filter(|&j| !inside[j]).collect();
    let empty = |lambda_max: f64| RegionSelection {
        region,
        n_voxels: voxels.len(),
        lambda: lambda_max,
        lambda_max,
        active: Vec::new(),
        val_mse: f64::NAN,
        certified: true,
        path: Vec::new(),
    };
    if complement.is_empty() {
        return Ok(empty(0.0));
    }
    let x = fit.train.pred.select(Axis(0), voxels);
    let y = fit.train.next.select(Axis(0), &complement);
    let xv = fit.val.pred.select(Axis(0), voxels);
    let yv = fit.val.next.select(Axis(0), &complement);
    let null_mse = mean_sq(yv.view());

    let gram = L21Gram::new(y.view(), x.view())?;
    let lambda_max = gram.lambda_max();
    if lambda_max == 0.0 {
        let mut out = empty(0.0);
        out.val_mse = null_mse;
        return Ok(out);
    }
    if voxels.len() + 1 >= x.ncols() {
        log::warn!(
            "region {region}: {} voxels for {} training pairs; dense refits will be skipped",
            voxels.len(),
            x.ncols()
        );
    }
    let lambdas = linspace(lambda_max, cfg.min_ratio * lambda_max, cfg.n_lambdas);
    let mut warm: Option<Array2<f64>> = None;
    let mut fits = Vec::with_capacity(lambdas.len());
    let mut errors = Vec::with_capacity(lambdas.len());
    let mut std_errors = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let f = gram.solve(lambda, &cfg.solver, warm.as_ref())?;
        warm = Some(f.b.clone());
        let (err, se) = match unshrunk_refit(y.view(), x.view(), &f.active_columns) {
            Ok(w) => mse_with_se((&yv - &w.dot(&xv)).view()),
            Err(Error::SingularSystem(_)) => {
                log::warn!(
                    "region {region}: refit on {} voxels is singular at lambda {lambda:e}; skipped",
                    f.active_columns.len()
                );
                (f64::INFINITY, f64::INFINITY)
            }
            Err(e) => return Err(e),
        };
        errors.push(err);
        std_errors.push(se);
        fits.push(f);
    }
    let best = cfg.rule.select(&errors, &std_errors, null_mse).unwrap_or(0);
    let path = (0..lambdas.len())
        .map(|i| PathPoint {
            lambda: lambdas[i],
            val_mse: errors[i],
            val_se: std_errors[i],
            n_active: fits[i].active_columns.len(),
        })
        .collect();
    let chosen = &fits[best];
    if !chosen.certified {
        log::warn!(
            "region {region}: optimality residual {:e} at the chosen lambda",
            chosen.kkt_residual
        );
    }
    Ok(RegionSelection {
        region,
        n_voxels: voxels.len(),
        lambda: lambdas[best],
        lambda_max,
        active: chosen.active_columns.iter().map(|&k| voxels[k]).collect(),
        val_mse: errors[best],
        certified: chosen.certified,
        path,
    })
}

pub fn run_stage2(subject: &SubjectData, stage1: &Stage1Result, cfg: &Stage2Config) -> Result<Stage2Result> {
    stage2_on(&subject.fit_data(), &stage1.union, cfg)
}

/// Stage 2 from a stored stage-1 voxel set (ascending global indices).
pub fn run_stage2_on(subject: &SubjectData, voxel_set: &[usize], cfg: &Stage2Config) -> Result<Stage2Result> {
    if let Some(&j) = voxel_set.iter().find(|&&j| j >= subject.voxels()) {
        return Err(Error::DimensionMismatch(format!(
            "stage-1 voxel {j} outside a subject of {} voxels",
            subject.voxels()
        )));
    }
    stage2_on(&subject.fit_data(), voxel_set, cfg)
}

/// Shared predictor statistics for stage 2 over a fixed voxel set.
struct Stage2Design {
    design: DesignGram,
    /// `|V_S1| × V` training cross products.
    c: Array2<f64>,
    y_sq: Array1<f64>,
    c_val: Array2<f64>,
    yv_sq: Array1<f64>,
}

impl Stage2Design {
    fn new(train_pred: ArrayView2<'_, f64>, train: &LagBlock, val: &LagBlock, voxel_set: &[usize]) -> Result<Self> {
        let val_pred = val.pred.select(Axis(0), voxel_set);
        let design = DesignGram::new(train_pred, val_pred.view())?;
        Ok(Stage2Design {
            design,
            c: train_pred.dot(&train.next.t()),
            y_sq: train.next.map_axis(Axis(1), |r| r.dot(&r)),
            c_val: val_pred.dot(&val.next.t()),
            yv_sq: val.next.map_axis(Axis(1), |r| r.dot(&r)),
        })
    }

    fn fit_all(&self, cfg: &Stage2Config) -> Result<(Vec<VoxelFit>, Array2<f64>)> {
        let v = self.c.ncols();
        let columns: Vec<(VoxelFit, Array1<f64>)> = (0..v)
            .into_par_iter()
            .map(|j| {
                let stats = TargetGram {
                    c: self.c.column(j).to_owned(),
                    y_sq: self.y_sq[j],
                    c_val: self.c_val.column(j).to_owned(),
                    yv_sq: self.yv_sq[j],
                };
                let sel = lasso_path_select_gram(&self.design, &stats, &cfg.path, &cfg.lasso)?;
                let ridge = ridge_on_support_select(&self.design, &stats, &sel.solution.support, None, &cfg.ridge)?;
                let fit = VoxelFit {
                    lambda: sel.lambda,
                    lambda_max: sel.lambda_max,
                    support: sel.solution.support,
                    lasso_val_mse: sel.val_mse,
                    mu: ridge.mu,
                    ridge_val_mse: ridge.val_mse,
                    converged: sel.solution.converged,
                };
                Ok((fit, ridge.solution.coefficients))
            })
            .collect::<Result<_>>()?;
        let mut w = Array2::zeros((self.design.n_predictors(), v));
        let mut fits = Vec::with_capacity(v);
        for (j, (fit, col)) in columns.into_iter().enumerate() {
            w.column_mut(j).assign(&col);
            fits.push(fit);
        }
        Ok((fits, w))
    }
}

fn stage2_on(fit: &FitData, voxel_set: &[usize], cfg: &Stage2Config) -> Result<Stage2Result> {
    if voxel_set.is_empty() {
        return Err(Error::EmptyStage1);
    }
    let train_pred = fit.train.pred.select(Axis(0), voxel_set);
    let d = Stage2Design::new(train_pred.view(), &fit.train, &fit.val, voxel_set)?;
    let (fits, w_ridge) = d.fit_all(cfg)?;
    let unconverged = fits.iter().filter(|f| !f.converged).count();
    if unconverged > 0 {
        log::warn!("stage 2: {unconverged} voxel fits hit the sweep limit");
    }
    let mut used = vec![false; voxel_set.len()];
    for f in &fits {
        for &k in &f.support {
            used[k] = true;
        }
    }
    let selected = voxel_set
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(&j, _)| j)
        .collect();
    Ok(Stage2Result {
        voxel_set: voxel_set.to_vec(),
        fits,
        selected,
        w_ridge,
    })
}

/// Per-voxel test MSE of the model `w` (`|voxel_set| × V`).
pub fn test_mse(test: &LagBlock, voxel_set: &[usize], w: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if w.dim() != (voxel_set.len(), test.next.nrows()) {
        return Err(Error::DimensionMismatch(format!(
            "model is {:?}, expected ({}, {})",
            w.dim(),
            voxel_set.len(),
            test.next.nrows()
        )));
    }
    let pred = if voxel_set.is_empty() {
        Array2::zeros(test.next.dim())
    } else {
        w.t().dot(&test.pred.select(Axis(0), voxel_set))
    };
    Ok(mean_sq_rows(&(&test.next - &pred)))
}

fn permutation(seed: u64, index: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

pub fn significance_test(
    subject: &SubjectData,
    stage2: &Stage2Result,
    selection: &SelectionConfig,
    cfg: &SignificanceConfig,
) -> Result<SignificanceReport> {
    significance_test_model(subject, &stage2.voxel_set, stage2.w_ridge.view(), selection, cfg)
}

/// Permutation test for a fitted model given as its stage-1 voxel set and
/// ridge matrix. Surrogates shuffle the time order of the training
/// predictors while targets, validation and test data stay aligned; the
/// p-value of voxel `j` is `(1 + #{surrogate MSE ≤ observed}) / (1 + n_perm)`.
pub fn significance_test_model(
    subject: &SubjectData,
    voxel_set: &[usize],
    w: ArrayView2<'_, f64>,
    selection: &SelectionConfig,
    cfg: &SignificanceConfig,
) -> Result<SignificanceReport> {
    if cfg.n_perm == 0 {
        return Err(Error::InvalidArgument("significance test needs n_perm >= 1".into()));
    }
    let fit = subject.fit_data();
    let test = subject.test_data();
    let observed = test_mse(&test, voxel_set, w)?;
    let n_train = fit.train.pred.ncols();
    let v = fit.voxels();

    let null_cols: Vec<Array1<f64>> = match cfg.scheme {
        PermutationScheme::Frozen => {
            if voxel_set.is_empty() {
                return Err(Error::EmptyStage1);
            }
            let train_pred = fit.train.pred.select(Axis(0), voxel_set);
            let base = Stage2Design::new(train_pred.view(), &fit.train, &fit.val, voxel_set)?;
            (0..cfg.n_perm)
                .into_par_iter()
                .map(|b| {
                    let perm = permutation(cfg.seed, b, n_train);
                    let shuffled = train_pred.select(Axis(1), &perm);
                    let d = Stage2Design {
                        design: base.design.clone(),
                        c: shuffled.dot(&fit.train.next.t()),
                        y_sq: base.y_sq.clone(),
                        c_val: base.c_val.clone(),
                        yv_sq: base.yv_sq.clone(),
                    };
                    let (_, wb) = d.fit_all(&selection.stage2)?;
                    test_mse(&test, voxel_set, wb.view())
                })
                .collect::<Result<_>>()?
        }
        PermutationScheme::Full => (0..cfg.n_perm)
            .into_par_iter()
            .map(|b| {
                let perm = permutation(cfg.seed, b, n_train);
                let shuffled = fit.with_shuffled_train_predictors(&perm)?;
                let s1 = stage1_on(&shuffled, subject.atlas(), &selection.stage1)?;
                if s1.union.is_empty() {
                    return test_mse(&test, &[], Array2::zeros((0, v)).view());
                }
                let s2 = stage2_on(&shuffled, &s1.union, &selection.stage2)?;
                test_mse(&test, &s2.voxel_set, s2.w_ridge.view())
            })
            .collect::<Result<_>>()?,
    };

    let mut null = Array2::zeros((v, cfg.n_perm));
    for (b, col) in null_cols.iter().enumerate() {
        null.column_mut(b).assign(col);
    }
    let p_values = Array1::from_iter((0..v).map(|j| {
        let hits = null.row(j).iter().filter(|&&m| m <= observed[j]).count();
        (1 + hits) as f64 / (1 + cfg.n_perm) as f64
    }));
    let n_sig = p_values.iter().filter(|&&p| p <= cfg.alpha).count();
    Ok(SignificanceReport {
        fraction_significant: n_sig as f64 / v as f64,
        observed,
        null,
        p_values,
        alpha: cfg.alpha,
        scheme: cfg.scheme,
        seed: cfg.seed,
    })
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

impl Stage1Result {
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "regions = {}", self.regions.len());
        let _ = writeln!(out, "selected = {}", self.union.len());
        let _ = writeln!(out, "selected_voxels = {}", join(&self.union));
        let _ = writeln!(out, "region\tvoxels\tlambda\tlambda_max\tn_active\tval_mse\tcertified");
        for r in &self.regions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.region,
                r.n_voxels,
                r.lambda,
                r.lambda_max,
                r.active.len(),
                r.val_mse,
                r.certified
            );
        }
        let _ = writeln!(out, "path\tregion\tlambda\tval_mse\tval_se\tn_active");
        for r in &self.regions {
            for p in &r.path {
                let _ = writeln!(
                    out,
                    "path\t{}\t{}\t{}\t{}\t{}",
                    r.region, p.lambda, p.val_mse, p.val_se, p.n_active
                );
            }
        }
        out
    }
}

impl Stage2Result {
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stage1_voxels = {}", join(&self.voxel_set));
        let _ = writeln!(out, "selected = {}", self.selected.len());
        let _ = writeln!(out, "selected_voxels = {}", join(&self.selected));
        let _ = writeln!(out, "voxel\tlambda\tlambda_max\tsupport\tlasso_val_mse\tmu\tridge_val_mse\tconverged");
        for (j, f) in self.fits.iter().enumerate() {
            let _ = writeln!(
                out,
                "{j}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                f.lambda, f.lambda_max, f.support.len(), f.lasso_val_mse, f.mu, f.ridge_val_mse, f.converged
            );
        }
        out
    }

    /// Global indices of the stage-1 voxels with a nonzero ridge row.
    pub fn selected_from_model(voxel_set: &[usize], w: ArrayView2<'_, f64>) -> Vec<usize> {
        voxel_set
            .iter()
            .zip(w.axis_iter(Axis(0)))
            .filter(|(_, row)| row.iter().any(|&x| x != 0.0))
            .map(|(&j, _)| j)
            .collect()
    }
}

impl SignificanceReport {
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scheme = {}", self.scheme.as_str());
        let _ = writeln!(out, "n_perm = {}", self.null.ncols());
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "fraction_significant = {}", self.fraction_significant);
        let _ = writeln!(out, "voxel\tobserved_mse\tp_value");
        for (j, (o, p)) in self.observed.iter().zip(&self.p_values).enumerate() {
            let _ = writeln!(out, "{j}\t{o}\t{p}");
        }
        out
    }
}

/// Reads a whitespace-separated index list stored under `key` in a report.
pub fn parse_voxel_list(report: &str, key: &str) -> Result<Vec<usize>> {
    let prefix = format!("{key} =");
    let line = report
        .lines()
        .find(|l| l.starts_with(&prefix))
        .ok_or_else(|| Error::InvalidArgument(format!("report has no '{key}' entry")))?;
    line[prefix.len()..]
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad voxel index '{t}' under '{key}'")))
        })
        .collect()
}
