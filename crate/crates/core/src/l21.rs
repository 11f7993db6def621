//! Column-group-sparse multi-target regression
//!
//! ```text
//! min_W ‖Y − W X‖_F² + λ Σ_j ‖W[:, j]‖₂
//! ```
//!
//! with `Y` (m × n targets), `X` (p × n predictors) and `W` (m × p). Zero
//! columns of `W` drop the matching predictor for every target at once.
//!
//! The solver is the reweighting scheme `D_jj = 1 / (2‖w_j‖)`,
//! `W = Y Xᵀ (X Xᵀ + λD)⁻¹`. Every iterate has the form `W = C B` with
//! `C = Y Xᵀ` and `B` a p × p matrix, so the iteration is carried out on `B`
//! using only `G = X Xᵀ`, `H = Cᵀ C` and `‖Y‖²`; the cost no longer depends on
//! the number of targets. The reweighting map only depends on the column
//! norms, so it is extrapolated (Anderson, in log space, with a fallback to
//! the plain step whenever the objective would rise), and columns whose block
//! minimizer is already zero are dropped from it. Reweighting never produces
//! exact zeros, so the result is finished with exact block-coordinate sweeps (each one a group
//! soft-threshold) until the optimality conditions hold to `kkt_tol`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy)]
pub struct L21Problem<'a> {
    /// m × n
    pub targets: ArrayView2<'a, f64>,
    /// p × n
    pub predictors: ArrayView2<'a, f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L21Options {
    /// Floor on column norms inside the reweighting.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Relative objective change counted as a stall of the reweighting phase.
    pub tol: f64,
    /// Relative optimality residual required for certification.
    pub kkt_tol: f64,
    pub max_polish_sweeps: usize,
    /// Columns below this fraction of the largest column norm are zeroed.
    pub zero_rtol: f64,
    /// Reweighting drops columns that fall below this fraction of the largest
    /// norm; the polish phase revives any that were dropped wrongly.
    pub prune_rtol: f64,
}

impl Default for L21Options {
    fn default() -> Self {
        L21Options {
            epsilon: 1e-10,
            max_iter: 500,
            tol: 1e-13,
            kkt_tol: 1e-6,
            max_polish_sweeps: 20_000,
            zero_rtol: 1e-8,
            prune_rtol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct L21Solution {
    /// m × p
    pub coefficients: Array2<f64>,
    pub active_columns: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Largest optimality violation relative to λ.
    pub kkt_residual: f64,
    pub certified: bool,
}

/// `2 · max_j ‖Y x_jᵀ‖₂`: the smallest λ whose solution is identically zero.
pub fn lambda21_max(targets: ArrayView2<'_, f64>, predictors: ArrayView2<'_, f64>) -> f64 {
    let c = targets.dot(&predictors.t());
    2.0 * c
        .axis_iter(Axis(1))
        .map(|col| col.dot(&col).sqrt())
        .fold(0.0, f64::max)
}

/// `‖W‖_{2,1}`: sum of Euclidean column norms.
pub fn l21_norm(w: ArrayView2<'_, f64>) -> f64 {
    w.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).sum()
}

pub fn objective(problem: &L21Problem<'_>, w: ArrayView2<'_, f64>) -> f64 {
    let resid = &problem.targets - &w.dot(&problem.predictors);
    resid.iter().map(|r| r * r).sum::<f64>() + problem.lambda * l21_norm(w)
}

pub fn solve_l21(problem: &L21Problem<'_>, opts: &L21Options) -> Result<L21Solution> {
    let gram = L21Gram::new(problem.targets, problem.predictors)?;
    let fit = gram.solve(problem.lambda, opts, None)?;
    Ok(gram.into_solution(fit))
}

/// Solves along `lambdas` in the given order, warm-starting each fit from the
/// previous one.
pub fn solve_l21_path(
    targets: ArrayView2<'_, f64>,
    predictors: ArrayView2<'_, f64>,
    lambdas: &[f64],
    opts: &L21Options,
) -> Result<Vec<L21Solution>> {
    let gram = L21Gram::new(targets, predictors)?;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Array2<f64>> = None;
    for &lambda in lambdas {
        let fit = gram.solve(lambda, opts, warm.as_ref())?;
        warm = Some(fit.b.clone());
        out.push(gram.into_solution(fit));
    }
    Ok(out)
}

/// OLS restricted to `active` predictor rows; zero coefficients elsewhere.
pub fn unshrunk_refit(
    targets: ArrayView2<'_, f64>,
    predictors: ArrayView2<'_, f64>,
    active: &[usize],
) -> Result<Array2<f64>> {
    check_shapes(targets, predictors)?;
    let mut w = Array2::zeros((targets.nrows(), predictors.nrows()));
    if active.is_empty() {
        return Ok(w);
    }
    let xs = predictors.select(Axis(0), active);
    let chol = Cholesky::new(xs.dot(&xs.t()).view())?;
    // W_S = Y X_Sᵀ (X_S X_Sᵀ)⁻¹, solved in transposed form
    let ws_t = chol.solve(xs.dot(&targets.t()).view());
    for (k, &j) in active.iter().enumerate() {
        w.column_mut(j).assign(&ws_t.row(k));
    }
    Ok(w)
}

fn check_shapes(targets: ArrayView2<'_, f64>, predictors: ArrayView2<'_, f64>) -> Result<()> {
    if targets.ncols() != predictors.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} time points, predictors {}",
            targets.ncols(),
            predictors.ncols()
        )));
    }
    if targets.iter().chain(predictors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite values in l21 problem".into()));
    }
    Ok(())
}

/// Sufficient statistics of one problem, reusable across a λ path.
#[derive(Debug, Clone)]
pub struct L21Gram {
    /// X Xᵀ
    g: Array2<f64>,
    /// Y Xᵀ
    c: Array2<f64>,
    /// Cᵀ C
    h: Array2<f64>,
    y_sq: f64,
}

/// Block-coordinate sweeps between optimality checks.
const POLISH_CHECK_EVERY: usize = 8;
/// Consecutive stalled reweighting steps that end the phase.
const STALL_LIMIT: usize = 5;
/// Reweighting restarts that pick up newly violating columns.
const REWEIGHT_ROUNDS: usize = 3;
/// Past reweighting steps combined by the extrapolation.
const ANDERSON_DEPTH: usize = 5;

/// Anderson extrapolation of the fixed point `x = g(x)` from `(x_i, g(x_i))`.
fn anderson(history: &[(Array1<f64>, Array1<f64>)]) -> Option<Array1<f64>> {
    let h = history.len();
    if h < 2 {
        return None;
    }
    let resid: Vec<Array1<f64>> = history.iter().map(|(x, g)| g - x).collect();
    let k = h - 1;
    let df: Vec<Array1<f64>> = (0..k).map(|i| &resid[i + 1] - &resid[i]).collect();
    let mut normal = Array2::zeros((k, k));
    let mut rhs = Array1::zeros(k);
    for i in 0..k {
        for j in 0..k {
            normal[[i, j]] = df[i].dot(&df[j]);
        }
        rhs[i] = df[i].dot(&resid[k]);
    }
    let ridge = 1e-10 * normal.diag().sum().max(f64::MIN_POSITIVE);
    for i in 0..k {
        normal[[i, i]] += ridge;
    }
    let gamma = Cholesky::new(normal.view()).ok()?.solve_vec(rhs.view());
    let mut x = history[k].1.clone();
    for i in 0..k {
        x.scaled_add(-gamma[i], &(&history[i + 1].1 - &history[i].1));
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct Eval {
    b: Array2<f64>,
    objective: f64,
    norms: Array1<f64>,
    /// B G
    bg: Array2<f64>,
}

impl Eval {
    fn b_col(&self, j: usize) -> ndarray::ArrayView1<'_, f64> {
        self.b.column(j)
    }
}

/// Solution in coefficient space: `W = C · b`.
#[derive(Debug, Clone)]
pub struct L21Fit {
    pub lambda: f64,
    pub b: Array2<f64>,
    pub active_columns: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub certified: bool,
}

impl L21Gram {
    pub fn new(targets: ArrayView2<'_, f64>, predictors: ArrayView2<'_, f64>) -> Result<Self> {
        check_shapes(targets, predictors)?;
        if predictors.nrows() == 0 {
            return Err(Error::EmptySubset);
        }
        if predictors.nrows() > predictors.ncols() {
            log::debug!(
                "l21: {} predictors exceed {} time points",
                predictors.nrows(),
                predictors.ncols()
            );
        }
        let g = predictors.dot(&predictors.t());
        let c = targets.dot(&predictors.t());
        let h = c.t().dot(&c);
        let y_sq = targets.iter().map(|v| v * v).sum();
        Ok(L21Gram { g, c, h, y_sq })
    }

    pub fn n_predictors(&self) -> usize {
        self.g.nrows()
    }

    pub fn lambda_max(&self) -> f64 {
        2.0 * (0..self.n_predictors())
            .map(|j| self.h[[j, j]].max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// m × p coefficient matrix of a fit.
    pub fn coefficients(&self, fit: &L21Fit) -> Array2<f64> {
        self.c.dot(&fit.b)
    }

    pub fn into_solution(&self, fit: L21Fit) -> L21Solution {
        let mut coefficients = self.coefficients(&fit);
        let mut active = vec![false; self.n_predictors()];
        for &j in &fit.active_columns {
            active[j] = true;
        }
        for (j, mut col) in coefficients.axis_iter_mut(Axis(1)).enumerate() {
            if !active[j] {
                col.fill(0.0);
            }
        }
        L21Solution {
            coefficients,
            active_columns: fit.active_columns,
            objective_trace: fit.objective_trace,
            iterations: fit.iterations,
            kkt_residual: fit.kkt_residual,
            certified: fit.certified,
        }
    }

    fn col_norms(&self, b: &Array2<f64>) -> Array1<f64> {
        self.evaluate(b, 0.0).norms
    }

    fn evaluate(&self, b: &Array2<f64>, lambda: f64) -> Eval {
        self.evaluate_with(b, b.dot(&self.g), lambda)
    }

    fn evaluate_with(&self, b: &Array2<f64>, bg: Array2<f64>, lambda: f64) -> Eval {
        let hb = self.h.dot(b);
        let norms = Array1::from_iter(
            (0..b.ncols()).map(|j| b.column(j).dot(&hb.column(j)).max(0.0).sqrt()),
        );
        let cross = (b * &self.h).sum();
        // tr(B G Bᵀ H) = Σ (B G) ⊙ (H B)
        let quad = (&bg * &hb).sum();
        let loss = (self.y_sq - 2.0 * cross + quad).max(0.0);
        Eval {
            b: b.clone(),
            objective: loss + lambda * norms.sum(),
            norms,
            bg,
        }
    }

    /// `‖Y − C B X‖² + λ Σ‖C b_j‖` evaluated through the Gram matrices.
    pub fn objective(&self, b: &Array2<f64>, lambda: f64) -> f64 {
        self.evaluate(b, lambda).objective
    }

    /// Largest optimality violation, relative to `scale`.
    fn kkt_residual(&self, b: &Array2<f64>, lambda: f64, scale: f64) -> f64 {
        self.kkt_from(&self.evaluate(b, lambda), lambda, scale)
    }

    fn kkt_from(&self, e: &Eval, lambda: f64, scale: f64) -> f64 {
        self.violations(e, lambda).fold(0.0f64, |m, &v| m.max(v)) / scale
    }

    /// Per-column optimality violations (absolute).
    fn violations(&self, e: &Eval, lambda: f64) -> Array1<f64> {
        Array1::from_iter((0..self.n_predictors()).map(|j| {
            // gradient of the loss w.r.t. column j is 2 C v with v = B G_j − e_j;
            // v is formed explicitly since it is small near the optimum
            let mut v = e.bg.column(j).to_owned();
            v[j] -= 1.0;
            v *= 2.0;
            let norm_j = e.norms[j];
            if norm_j > 0.0 {
                v.scaled_add(lambda / norm_j, &e.b_col(j));
            }
            let size = v.dot(&self.h.dot(&v)).max(0.0).sqrt();
            if norm_j > 0.0 { size } else { (size - lambda).max(0.0) }
        }))
    }

    /// Exact minimization over column `j` with the others fixed.
    fn block_update(&self, b: &mut Array2<f64>, j: usize, lambda: f64) {
        let gjj = self.g[[j, j]];
        if gjj <= 0.0 {
            b.column_mut(j).fill(0.0);
            return;
        }
        // partial residual correlation r_j = C u, u = e_j − B G_j + b_j G_jj
        let mut u = b.dot(&self.g.column(j));
        u.mapv_inplace(|x| -x);
        u.scaled_add(gjj, &b.column(j));
        u[j] += 1.0;
        let r_norm = u.dot(&self.h.dot(&u)).max(0.0).sqrt();
        let shrink = if r_norm > 0.0 {
            (1.0 - lambda / (2.0 * r_norm)).max(0.0)
        } else {
            0.0
        };
        if shrink == 0.0 {
            b.column_mut(j).fill(0.0);
        } else {
            b.column_mut(j).assign(&(u * (shrink / gjj)));
        }
    }

    pub fn solve(&self, lambda: f64, opts: &L21Options, warm: Option<&Array2<f64>>) -> Result<L21Fit> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        let p = self.n_predictors();
        let lambda_max = self.lambda_max();
        let scale = if lambda > 0.0 { lambda } else { lambda_max.max(f64::MIN_POSITIVE) };

        if lambda >= lambda_max {
            // the zero matrix satisfies the optimality conditions exactly
            let b = Array2::zeros((p, p));
            return Ok(L21Fit {
                lambda,
                objective_trace: vec![self.objective(&b, lambda)],
                b,
                active_columns: Vec::new(),
                iterations: 0,
                kkt_residual: 0.0,
                certified: true,
            });
        }

        let identity = Array2::<f64>::eye(p);
        if lambda == 0.0 {
            let b = Cholesky::new(self.g.view())?.inverse();
            let kkt = self.kkt_residual(&b, 0.0, scale);
            return Ok(self.finish(lambda, b, vec![], 1, kkt, opts));
        }

        let mut b = match warm {
            Some(w) if w.dim() == (p, p) => w.clone(),
            _ => {
                let a = &self.g + &(&identity * lambda);
                Cholesky::new(a.view())?.inverse()
            }
        };
        let mut eval = self.evaluate(&b, lambda);
        let mut trace = vec![eval.objective];
        let mut iterations = 0;
        let mut kkt = f64::INFINITY;
        for _ in 0..REWEIGHT_ROUNDS {
            let (b_irls, its) = self.reweight(lambda, opts, scale, iterations, &eval, &mut trace)?;
            b = b_irls;
            iterations += its;
            eval = self.evaluate(&b, lambda);
            kkt = self.kkt_from(&eval, lambda, scale);
            if kkt <= opts.kkt_tol || iterations >= opts.max_iter {
                break;
            }
        }
        let mut sweeps = 0;
        while kkt > opts.kkt_tol && sweeps < opts.max_polish_sweeps {
            for _ in 0..POLISH_CHECK_EVERY.min(opts.max_polish_sweeps - sweeps) {
                for j in 0..p {
                    self.block_update(&mut b, j, lambda);
                }
                sweeps += 1;
            }
            eval = self.evaluate(&b, lambda);
            trace.push(eval.objective);
            kkt = self.kkt_from(&eval, lambda, scale);
        }
        Ok(self.finish(lambda, b, trace, iterations + sweeps, kkt, opts))
    }

    /// Restriction to a subset of predictors (the fitted-space view only).
    fn restrict(&self, cols: &[usize]) -> L21Gram {
        L21Gram {
            g: self.g.select(Axis(0), cols).select(Axis(1), cols),
            c: Array2::zeros((0, cols.len())),
            h: self.h.select(Axis(0), cols).select(Axis(1), cols),
            y_sq: self.y_sq,
        }
    }

    /// Reweighted least squares from `start`, on a shrinking active set.
    fn reweight(
        &self,
        lambda: f64,
        opts: &L21Options,
        scale: f64,
        done: usize,
        start: &Eval,
        trace: &mut Vec<f64>,
    ) -> Result<(Array2<f64>, usize)> {
        let p = self.n_predictors();
        let keep = |norms: &Array1<f64>| {
            let max_norm = norms.fold(0.0f64, |m, &v| m.max(v));
            let cut = opts.prune_rtol * max_norm;
            (0..norms.len()).filter(|&j| norms[j] > cut && norms[j] > 0.0).collect::<Vec<_>>()
        };
        let mut active = keep(&start.norms);
        // zero columns that violate optimality enter at the typical active size
        let violations = self.violations(start, lambda);
        let entry = if active.is_empty() {
            1.0
        } else {
            active.iter().map(|&j| start.norms[j]).sum::<f64>() / active.len() as f64
        };
        let mut start_norms = start.norms.clone();
        for j in 0..p {
            if violations[j] > opts.kkt_tol * scale && !active.contains(&j) {
                start_norms[j] = entry;
                active.push(j);
            }
        }
        active.sort_unstable();
        let mut norms = start_norms.select(Axis(0), &active);
        let mut sub = self.restrict(&active);
        let mut inv = Array2::zeros((active.len(), active.len()));
        let mut iterations = 0;
        let mut stalled = 0;
        // (log weights in, log norms out) pairs for Anderson extrapolation
        let mut history: Vec<(Array1<f64>, Array1<f64>)> = Vec::new();
        let mut plain: Option<Array1<f64>> = None;
        while iterations < opts.max_iter.saturating_sub(done) && !active.is_empty() {
            let k = active.len();
            let delta = norms.mapv(|n| lambda / (2.0 * n.max(opts.epsilon)));
            let mut a = sub.g.clone();
            for j in 0..k {
                a[[j, j]] += delta[j];
            }
            let step = Cholesky::new(a.view())?.inverse();
            iterations += 1;
            // B (G + Δ) = I, so B G = I − B Δ without another product
            let mut bg = &step * &delta.view().insert_axis(Axis(0));
            bg.mapv_inplace(|v| -v);
            for j in 0..k {
                bg[[j, j]] += 1.0;
            }
            let e = sub.evaluate_with(&step, bg, lambda);
            let prev = *trace.last().unwrap();
            if let Some(fallback) = plain.take() {
                if e.objective > prev {
                    // extrapolation overshot; retake the plain reweighting step
                    history.clear();
                    norms = fallback;
                    continue;
                }
            }
            inv = step;
            trace.push(e.objective);
            // the Gram-form objective loses precision near the optimum, so a
            // stall only ends the phase once it persists
            if (prev - e.objective).abs() <= opts.tol * e.objective.abs().max(f64::MIN_POSITIVE) {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if stalled >= STALL_LIMIT || sub.kkt_from(&e, lambda, scale) <= opts.kkt_tol {
                break;
            }
            // zero is the exact block minimizer of column a given the others when
            // 2 (G_aa + δ_a) ‖C b_a‖ ≤ λ, since the partial residual is (G_aa + δ_a) b_a
            let kept: Vec<usize> = keep(&e.norms)
                .into_iter()
                .filter(|&a| 2.0 * (sub.g[[a, a]] + delta[a]) * e.norms[a] > lambda)
                .collect();
            if kept.len() < k {
                inv = inv.select(Axis(0), &kept).select(Axis(1), &kept);
                norms = e.norms.select(Axis(0), &kept);
                active = kept.iter().map(|&j| active[j]).collect();
                sub = self.restrict(&active);
                history.clear();
                continue;
            }
            let floor = |v: &Array1<f64>| v.mapv(|n| n.max(opts.epsilon).ln());
            history.push((floor(&norms), floor(&e.norms)));
            if history.len() > ANDERSON_DEPTH + 1 {
                history.remove(0);
            }
            match anderson(&history) {
                Some(x) => {
                    plain = Some(e.norms.clone());
                    norms = x.mapv(f64::exp);
                }
                None => norms = e.norms,
            }
        }
        let mut b = Array2::zeros((p, p));
        if inv.nrows() == active.len() {
            for (a, &i) in active.iter().enumerate() {
                for (c, &j) in active.iter().enumerate() {
                    b[[i, j]] = inv[[a, c]];
                }
            }
        }
        Ok((b, iterations))
    }

    fn finish(
        &self,
        lambda: f64,
        mut b: Array2<f64>,
        mut trace: Vec<f64>,
        iterations: usize,
        kkt: f64,
        opts: &L21Options,
    ) -> L21Fit {
        let norms = self.col_norms(&b);
        let max_norm = norms.fold(0.0f64, |m, &v| m.max(v));
        let mut active = Vec::new();
        let mut zeroed = false;
        for (j, &nj) in norms.iter().enumerate() {
            if nj > opts.zero_rtol * max_norm && nj > 0.0 {
                active.push(j);
            } else if b.column(j).iter().any(|&v| v != 0.0) {
                b.column_mut(j).fill(0.0);
                zeroed = true;
            }
        }
        let scale = if lambda > 0.0 { lambda } else { self.lambda_max().max(f64::MIN_POSITIVE) };
        let kkt = if zeroed { self.kkt_residual(&b, lambda, scale) } else { kkt };
        if trace.is_empty() {
            trace.push(self.objective(&b, lambda));
        }
        L21Fit {
            lambda,
            b,
            active_columns: active,
            objective_trace: trace,
            iterations,
            kkt_residual: kkt,
            certified: kkt <= opts.kkt_tol,
        }
    }
}
