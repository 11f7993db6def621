//! Per-target LASSO by cyclic coordinate descent and support-constrained
//! ridge regression.
//!
//! Conventions follow the multi-target solver: predictors are stored one per
//! row (`p × n`), the loss is the raw sum of squares `‖y − Xᵀw‖²` with no
//! `1/n` factor, and the penalty is `λ‖w‖₁`. All solvers work on the Gram
//! quantities `G = X Xᵀ` and `c = X y`, so one `G` serves every target that
//! shares a design.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{linspace, logspace, Cholesky};

/// Relative slack within which two validation errors count as tied.
const TIE_RTOL: f64 = 1e-9;
/// Absolute tie slack, as a fraction of the validation mean square.
const TIE_ATOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub target: ArrayView1<'a, f64>,
    /// p × n
    pub predictors: ArrayView2<'a, f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    /// Sweeps stop once every coordinate moves the fit by less than
    /// `tol · ‖y‖` and the optimality check passes.
    pub tol: f64,
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_sweeps: 1000,
            tol: 1e-9,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVectorSolution {
    pub coefficients: Array1<f64>,
    /// Indices with nonzero coefficients, ascending.
    pub support: Vec<usize>,
    /// Largest optimality violation relative to λ (0 for closed-form fits).
    pub kkt_residual: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub objective_trace: Vec<f64>,
}

impl SparseVectorSolution {
    fn from_coefficients(coefficients: Array1<f64>) -> Self {
        let support = support_of(coefficients.view());
        SparseVectorSolution {
            coefficients,
            support,
            kkt_residual: 0.0,
            converged: true,
            sweeps: 0,
            objective_trace: Vec::new(),
        }
    }

    /// Turns a flagged non-converged iterate into an error.
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                solver: "lasso coordinate descent",
                iterations: self.sweeps,
            })
        }
    }
}

fn support_of(w: ArrayView1<'_, f64>) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_pair(target: ArrayView1<'_, f64>, predictors: ArrayView2<'_, f64>) -> Result<()> {
    if target.len() != predictors.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} time points, predictors {}",
            target.len(),
            predictors.ncols()
        )));
    }
    if target.iter().chain(predictors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite values in regression problem".into()));
    }
    Ok(())
}

/// `2 · max_j |⟨x_j, y⟩|`: the smallest λ with an all-zero solution.
pub fn lasso_lambda_max(target: ArrayView1<'_, f64>, predictors: ArrayView2<'_, f64>) -> f64 {
    2.0 * predictors.dot(&target).fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn solve_lasso(problem: &LassoProblem<'_>, opts: &LassoOptions) -> Result<SparseVectorSolution> {
    check_pair(problem.target, problem.predictors)?;
    let g = problem.predictors.dot(&problem.predictors.t());
    let c = problem.predictors.dot(&problem.target);
    let y_sq = problem.target.dot(&problem.target);
    solve_lasso_gram(g.view(), c.view(), y_sq, problem.lambda, opts, None)
}

/// Coordinate descent on `y_sq − 2cᵀw + wᵀGw + λ‖w‖₁`.
pub fn solve_lasso_gram(
    g: ArrayView2<'_, f64>,
    c: ArrayView1<'_, f64>,
    y_sq: f64,
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&Array1<f64>>,
) -> Result<SparseVectorSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = c.len();
    let lambda_max = 2.0 * c.fold(0.0f64, |m, v| m.max(v.abs()));
    let objective = |w: &Array1<f64>, q: &Array1<f64>| {
        y_sq - 2.0 * c.dot(w) + w.dot(q) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    };

    if lambda >= lambda_max {
        let w = Array1::zeros(p);
        let q = Array1::zeros(p);
        let mut sol = SparseVectorSolution::from_coefficients(w);
        sol.objective_trace = vec![objective(&sol.coefficients, &q)];
        return Ok(sol);
    }

    let mut w = match warm {
        Some(w0) if w0.len() == p => w0.clone(),
        _ => Array1::zeros(p),
    };
    let mut q = g.dot(&w);
    let scale = if lambda > 0.0 { lambda } else { lambda_max };
    let fit_tol = opts.tol * y_sq.max(0.0).sqrt();
    let mut trace = vec![objective(&w, &q)];
    let mut converged = false;
    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    let mut pattern = sign_pattern(&w);
    let mut tried: Option<Vec<(usize, bool)>> = None;

    while sweeps < opts.max_sweeps {
        let mut max_move = 0.0f64;
        for j in 0..p {
            let gjj = g[[j, j]];
            if gjj <= 0.0 {
                continue;
            }
            let rho = c[j] - q[j] + gjj * w[j];
            let new = soft_threshold(rho, 0.5 * lambda) / gjj;
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                q.scaled_add(delta, &g.column(j));
                max_move = max_move.max(delta.abs() * gjj.sqrt());
            }
        }
        sweeps += 1;
        // Once the sign pattern settles, solve the stationarity equations on
        // it directly; correlated predictors otherwise take many sweeps.
        let current = sign_pattern(&w);
        if current == pattern && !current.is_empty() && tried.as_ref() != Some(&current) {
            if let Some((w_exact, q_exact)) = solve_on_pattern(g, c, lambda, &current) {
                let k = lasso_kkt(&w_exact, &q_exact, c, lambda, scale);
                if k <= opts.kkt_tol {
                    w = w_exact;
                    q = q_exact;
                    trace.push(objective(&w, &q));
                    kkt = k;
                    converged = true;
                    break;
                }
            }
            tried = Some(current.clone());
        }
        pattern = current;
        trace.push(objective(&w, &q));
        if max_move <= fit_tol {
            kkt = lasso_kkt(&w, &q, c, lambda, scale);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        kkt = lasso_kkt(&w, &q, c, lambda, scale);
        log::debug!("lasso: stopped after {sweeps} sweeps, kkt residual {kkt:e}");
    }
    let support = support_of(w.view());
    Ok(SparseVectorSolution {
        coefficients: w,
        support,
        kkt_residual: kkt,
        converged,
        sweeps,
        objective_trace: trace,
    })
}

fn sign_pattern(w: &Array1<f64>) -> Vec<(usize, bool)> {
    w.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, *v > 0.0))
        .collect()
}

/// `G_AA w_A = c_A − (λ/2)·s_A`; `None` if the system is singular or the
/// solution leaves the sign pattern.
fn solve_on_pattern(
    g: ArrayView2<'_, f64>,
    c: ArrayView1<'_, f64>,
    lambda: f64,
    pattern: &[(usize, bool)],
) -> Option<(Array1<f64>, Array1<f64>)> {
    let idx: Vec<usize> = pattern.iter().map(|(j, _)| *j).collect();
    let g_aa = g.select(Axis(0), &idx).select(Axis(1), &idx);
    let rhs = Array1::from_iter(
        pattern
            .iter()
            .map(|&(j, pos)| c[j] - 0.5 * lambda * if pos { 1.0 } else { -1.0 }),
    );
    let w_a = Cholesky::new(g_aa.view()).ok()?.solve_vec(rhs.view());
    if pattern.iter().zip(w_a.iter()).any(|(&(_, pos), &v)| v == 0.0 || (v > 0.0) != pos) {
        return None;
    }
    let mut w = Array1::zeros(c.len());
    for (&j, &v) in idx.iter().zip(w_a.iter()) {
        w[j] = v;
    }
    let q = g.dot(&w);
    Some((w, q))
}

fn lasso_kkt(w: &Array1<f64>, q: &Array1<f64>, c: ArrayView1<'_, f64>, lambda: f64, scale: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..w.len() {
        // 2⟨x_j, Xᵀw − y⟩
        let grad = 2.0 * (q[j] - c[j]);
        let violation = if w[j] == 0.0 {
            (grad.abs() - lambda).max(0.0)
        } else {
            (grad + lambda * w[j].signum()).abs()
        };
        worst = worst.max(violation / scale);
    }
    worst
}

/// How candidate supports on a λ path are scored on validation data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathScoring {
    /// Least-squares refit on the LASSO support.
    Unshrunk,
    /// The LASSO coefficients themselves.
    Shrunk,
}

/// Sufficient statistics of a shared design on the fitting and validation
/// windows.
#[derive(Debug, Clone)]
pub struct DesignGram {
    pub g: Array2<f64>,
    pub g_val: Array2<f64>,
    pub n_val: usize,
}

impl DesignGram {
    pub fn new(predictors: ArrayView2<'_, f64>, val_predictors: ArrayView2<'_, f64>) -> Result<Self> {
        if predictors.nrows() != val_predictors.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} training predictors, {} validation predictors",
                predictors.nrows(),
                val_predictors.nrows()
            )));
        }
        if val_predictors.ncols() == 0 {
            return Err(Error::InvalidShape("empty validation window".into()));
        }
        Ok(DesignGram {
            g: predictors.dot(&predictors.t()),
            g_val: val_predictors.dot(&val_predictors.t()),
            n_val: val_predictors.ncols(),
        })
    }

    pub fn n_predictors(&self) -> usize {
        self.g.nrows()
    }
}

/// Per-target statistics against a [`DesignGram`].
#[derive(Debug, Clone)]
pub struct TargetGram {
    pub c: Array1<f64>,
    pub y_sq: f64,
    pub c_val: Array1<f64>,
    pub yv_sq: f64,
}

impl TargetGram {
    pub fn new(
        target: ArrayView1<'_, f64>,
        predictors: ArrayView2<'_, f64>,
        val_target: ArrayView1<'_, f64>,
        val_predictors: ArrayView2<'_, f64>,
    ) -> Result<Self> {
        check_pair(target, predictors)?;
        check_pair(val_target, val_predictors)?;
        Ok(TargetGram {
            c: predictors.dot(&target),
            y_sq: target.dot(&target),
            c_val: val_predictors.dot(&val_target),
            yv_sq: val_target.dot(&val_target),
        })
    }

    pub fn lambda_max(&self) -> f64 {
        2.0 * self.c.fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Validation mean squared error of coefficients `w`.
    pub fn val_mse(&self, design: &DesignGram, w: &Array1<f64>) -> f64 {
        let sse = self.yv_sq - 2.0 * self.c_val.dot(w) + w.dot(&design.g_val.dot(w));
        sse.max(0.0) / design.n_val as f64
    }

    fn null_mse(&self, design: &DesignGram) -> f64 {
        self.yv_sq / design.n_val as f64
    }
}

pub(crate) fn tied_or_better(candidate: f64, best: f64, null_mse: f64) -> bool {
    candidate <= best * (1.0 + TIE_RTOL) + TIE_ATOL * null_mse
}

/// Picks the index of the smallest error, preferring the earliest entry among
/// ties (callers order candidates from most to least regularized).
pub(crate) fn select_min(errors: &[f64], null_mse: f64) -> Option<usize> {
    let best = errors.iter().copied().filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    errors.iter().position(|&e| e.is_finite() && tied_or_better(e, best, null_mse))
}

/// OLS restricted to `support`; zeros elsewhere.
pub fn refit_on_support(g: ArrayView2<'_, f64>, c: ArrayView1<'_, f64>, support: &[usize]) -> Result<Array1<f64>> {
    ridge_on_support_gram(g, c, support, 0.0)
}

fn ridge_on_support_gram(
    g: ArrayView2<'_, f64>,
    c: ArrayView1<'_, f64>,
    support: &[usize],
    mu: f64,
) -> Result<Array1<f64>> {
    let mut w = Array1::zeros(c.len());
    if support.is_empty() {
        return Ok(w);
    }
    let mut gs = g.select(Axis(0), support).select(Axis(1), support);
    for k in 0..support.len() {
        gs[[k, k]] += mu;
    }
    let cs = Array1::from_iter(support.iter().map(|&j| c[j]));
    let ws = Cholesky::new(gs.view())?.solve_vec(cs.view());
    for (k, &j) in support.iter().enumerate() {
        w[j] = ws[k];
    }
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct PathSelection {
    pub solution: SparseVectorSolution,
    pub lambda: f64,
    pub lambda_max: f64,
    pub val_mse: f64,
    /// `(λ, validation MSE, support size)` for every path point.
    pub path: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub n_lambdas: usize,
    /// Smallest λ on the path as a fraction of λ_max.
    pub min_ratio: f64,
    pub scoring: PathScoring,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            n_lambdas: 10,
            min_ratio: 1e-3,
            scoring: PathScoring::Unshrunk,
        }
    }
}

/// Fits `n_lambdas` linearly spaced λ from λ_max down to `min_ratio · λ_max`
/// and keeps the fit with the lowest validation error (ties go to the larger λ).
pub fn lasso_path_select(
    target: ArrayView1<'_, f64>,
    predictors: ArrayView2<'_, f64>,
    val_predictors: ArrayView2<'_, f64>,
    val_target: ArrayView1<'_, f64>,
    cfg: &PathConfig,
    opts: &LassoOptions,
) -> Result<PathSelection> {
    let design = DesignGram::new(predictors, val_predictors)?;
    let stats = TargetGram::new(target, predictors, val_target, val_predictors)?;
    lasso_path_select_gram(&design, &stats, cfg, opts)
}

pub fn lasso_path_select_gram(
    design: &DesignGram,
    stats: &TargetGram,
    cfg: &PathConfig,
    opts: &LassoOptions,
) -> Result<PathSelection> {
    if cfg.n_lambdas == 0 {
        return Err(Error::InvalidArgument("lambda path needs at least one point".into()));
    }
    let lambda_max = stats.lambda_max();
    let lambdas = linspace(lambda_max, cfg.min_ratio * lambda_max, cfg.n_lambdas);
    let mut fits = Vec::with_capacity(lambdas.len());
    let mut errors = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Array1<f64>> = None;
    for &lambda in &lambdas {
        let sol = solve_lasso_gram(design.g.view(), stats.c.view(), stats.y_sq, lambda, opts, warm.as_ref())?;
        warm = Some(sol.coefficients.clone());
        let scored = match cfg.scoring {
            PathScoring::Shrunk => Some(sol.coefficients.clone()),
            PathScoring::Unshrunk => match refit_on_support(design.g.view(), stats.c.view(), &sol.support) {
                Ok(w) => Some(w),
                Err(Error::SingularSystem(msg)) => {
                    log::debug!("lasso path: refit skipped at lambda {lambda:e}: {msg}");
                    None
                }
                Err(e) => return Err(e),
            },
        };
        errors.push(scored.map_or(f64::INFINITY, |w| stats.val_mse(design, &w)));
        fits.push(sol);
    }
    let null = stats.null_mse(design);
    let best = select_min(&errors, null).unwrap_or(0);
    let path = lambdas
        .iter()
        .zip(&errors)
        .zip(&fits)
        .map(|((&l, &e), f)| (l, e, f.support.len()))
        .collect();
    Ok(PathSelection {
        val_mse: errors[best],
        lambda: lambdas[best],
        lambda_max,
        solution: fits.swap_remove(best),
        path,
    })
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub solution: SparseVectorSolution,
    pub mu: f64,
    pub val_mse: f64,
}

/// Default ridge grid: `n` log-spaced values over `[lo, hi] · trace(G_S)/|S|`.
pub fn default_mu_grid(g: ArrayView2<'_, f64>, support: &[usize], n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if support.is_empty() {
        return Vec::new();
    }
    let mean_diag = support.iter().map(|&j| g[[j, j]]).sum::<f64>() / support.len() as f64;
    logspace(lo * mean_diag, hi * mean_diag, n)
}

/// Ridge regression restricted to `support`, with μ picked from `mu_grid` (or
/// the default grid) by validation error; ties go to the larger μ.
pub fn ridge_on_support(
    target: ArrayView1<'_, f64>,
    predictors: ArrayView2<'_, f64>,
    support: &[usize],
    mu_grid: Option<&[f64]>,
    val_predictors: ArrayView2<'_, f64>,
    val_target: ArrayView1<'_, f64>,
) -> Result<RidgeFit> {
    let design = DesignGram::new(predictors, val_predictors)?;
    let stats = TargetGram::new(target, predictors, val_target, val_predictors)?;
    ridge_on_support_select(&design, &stats, support, mu_grid, &RidgeGridConfig::default())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeGridConfig {
    pub n_mu: usize,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Default for RidgeGridConfig {
    fn default() -> Self {
        RidgeGridConfig {
            n_mu: 8,
            mu_min: 1e-6,
            mu_max: 1e2,
        }
    }
}

pub fn ridge_on_support_select(
    design: &DesignGram,
    stats: &TargetGram,
    support: &[usize],
    mu_grid: Option<&[f64]>,
    grid_cfg: &RidgeGridConfig,
) -> Result<RidgeFit> {
    let p = design.n_predictors();
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("support index {bad} outside {p} predictors")));
    }
    if support.is_empty() {
        return Ok(RidgeFit {
            solution: SparseVectorSolution::from_coefficients(Array1::zeros(p)),
            mu: 0.0,
            val_mse: stats.null_mse(design),
        });
    }
    let grid = match mu_grid {
        Some(g) => g.to_vec(),
        None => default_mu_grid(design.g.view(), support, grid_cfg.n_mu, grid_cfg.mu_min, grid_cfg.mu_max),
    };
    if grid.is_empty() || grid.iter().any(|&m| !(m >= 0.0)) {
        return Err(Error::InvalidArgument("ridge grid must be nonempty and nonnegative".into()));
    }
    // most regularized first so that ties resolve toward larger μ
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut fits = Vec::with_capacity(grid.len());
    let mut errors = Vec::with_capacity(grid.len());
    for &k in &order {
        match ridge_on_support_gram(design.g.view(), stats.c.view(), support, grid[k]) {
            Ok(w) => {
                errors.push(stats.val_mse(design, &w));
                fits.push(Some(w));
            }
            Err(Error::SingularSystem(_)) => {
                errors.push(f64::INFINITY);
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let best = select_min(&errors, stats.null_mse(design))
        .ok_or_else(|| Error::SingularSystem("every ridge grid point is singular".into()))?;
    let w = fits[best].take().expect("finite error implies a fit");
    Ok(RidgeFit {
        solution: SparseVectorSolution::from_coefficients(w),
        mu: grid[order[best]],
        val_mse: errors[best],
    })
}
