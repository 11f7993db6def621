//! Reference implementations used as oracles: deliberately naive and
//! independent of the library's solvers.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    // inverse CDF
    let u: f64 = rng.random_range(-0.5..0.5);
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn frob_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn col_norm(m: &Array2<f64>, j: usize) -> f64 {
    m.column(j).dot(&m.column(j)).sqrt()
}

/// `‖Y − W X‖²_F + λ Σ_j ‖w_j‖₂`
pub fn l21_objective(y: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, w: &Array2<f64>, lambda: f64) -> f64 {
    let r = &y - &w.dot(&x);
    frob_sq(&r) + lambda * (0..w.ncols()).map(|j| col_norm(w, j)).sum::<f64>()
}

/// Largest eigenvalue of `X Xᵀ` by power iteration.
fn top_eigenvalue(x: ArrayView2<'_, f64>) -> f64 {
    let g = x.dot(&x.t());
    let mut v = Array1::from_elem(g.nrows(), 1.0);
    let mut est = 0.0;
    for _ in 0..500 {
        let gv = g.dot(&v);
        est = gv.dot(&gv).sqrt();
        if est == 0.0 {
            return 0.0;
        }
        v = gv / est;
    }
    est
}

/// Accelerated proximal gradient with function-value restarts.
pub fn l21_prox_gradient(y: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, lambda: f64, iters: usize) -> Array2<f64> {
    let step = 1.0 / (2.0 * top_eigenvalue(x) * 1.01);
    let prox = |v: Array2<f64>| -> Array2<f64> {
        let mut out = v;
        for j in 0..out.ncols() {
            let n = col_norm(&out, j);
            let shrink = if n > 0.0 { (1.0 - step * lambda / n).max(0.0) } else { 0.0 };
            out.column_mut(j).mapv_inplace(|a| a * shrink);
        }
        out
    };
    let mut w = Array2::<f64>::zeros((y.nrows(), x.nrows()));
    let mut z = w.clone();
    let mut t = 1.0f64;
    let mut f_prev = l21_objective(y, x, &w, lambda);
    for _ in 0..iters {
        let grad = (z.dot(&x) - y).dot(&x.t()) * 2.0;
        let w_next = prox(&z - &(grad * step));
        let f = l21_objective(y, x, &w_next, lambda);
        if f > f_prev {
            // restart momentum
            t = 1.0;
            z = w.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &w_next + &((&w_next - &w) * ((t - 1.0) / t_next));
        let done = (f_prev - f).abs() <= 1e-16 * f.abs() && (&w_next - &w).iter().all(|d| d.abs() < 1e-15);
        w = w_next;
        t = t_next;
        f_prev = f;
        if done {
            break;
        }
    }
    w
}

/// Worst optimality violation relative to λ: for active columns
/// `‖g_j + λ w_j/‖w_j‖‖ / λ`, for zero columns `(‖g_j‖ − λ)₊ / λ`.
pub fn l21_kkt(y: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, w: &Array2<f64>, lambda: f64) -> (f64, f64) {
    let grad = (w.dot(&x) - y).dot(&x.t()) * 2.0;
    let (mut active, mut inactive) = (0.0f64, 0.0f64);
    for j in 0..w.ncols() {
        let n = col_norm(w, j);
        let g = grad.column(j);
        if n > 0.0 {
            let d = &g + &(&w.column(j) * (lambda / n));
            active = active.max(d.dot(&d).sqrt() / lambda);
        } else {
            inactive = inactive.max((g.dot(&g).sqrt() - lambda).max(0.0) / lambda);
        }
    }
    (active, inactive)
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Rows form an orthonormal set in `R^n` (Gram–Schmidt on Gaussian draws).
pub fn orthonormal_rows(rng: &mut ChaCha8Rng, p: usize, n: usize) -> Array2<f64> {
    let mut q = gaussian(rng, p, n);
    for i in 0..p {
        for k in 0..i {
            let proj = q.row(i).dot(&q.row(k));
            let rk = q.row(k).to_owned();
            q.row_mut(i).scaled_add(-proj, &rk);
        }
        let n = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|v| v / n);
    }
    q
}

/// Direct triple-sum convolution with a separable Gaussian and zero padding.
pub fn brute_force_blur(vol: &Array3<f64>, sigma: f64, radius: usize) -> Array3<f64> {
    let r = radius as i64;
    let g: Vec<f64> = (-r..=r).map(|o| (-((o * o) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(3);
    let (nx, ny, nz) = vol.dim();
    let mut out = Array3::zeros((nx, ny, nz));
    for ((i, j, k), o) in out.indexed_iter_mut() {
        let mut acc = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    let (x, y, z) = (i as i64 + a, j as i64 + b, k as i64 + c);
                    if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
                        continue;
                    }
                    let w = g[(a + r) as usize] * g[(b + r) as usize] * g[(c + r) as usize];
                    acc += w * vol[[x as usize, y as usize, z as usize]];
                }
            }
        }
        *o = acc / norm;
    }
    out
}

pub fn abs_corr(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let am = a.mean().unwrap();
    let bm = b.mean().unwrap();
    let ac = a.mapv(|v| v - am);
    let bc = b.mapv(|v| v - bm);
    (ac.dot(&bc) / (ac.dot(&ac) * bc.dot(&bc)).sqrt()).abs()
}

/// Best assignment of estimated to true rows by exhaustive search over
/// permutations; returns the smallest matched |correlation|.
pub fn best_permutation_match(est: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> f64 {
    let k = truth.nrows();
    let corr = Array2::from_shape_fn((k, est.nrows()), |(i, j)| abs_corr(truth.row(i), est.row(j)));
    let mut best = 0.0f64;
    let mut perm: Vec<usize> = (0..est.nrows()).collect();
    permute(&mut perm, 0, &mut |p| {
        let worst = (0..k).map(|i| corr[[i, p[i]]]).fold(f64::INFINITY, f64::min);
        best = best.max(worst);
    });
    best
}

fn permute(v: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == v.len() {
        f(v);
        return;
    }
    for j in i..v.len() {
        v.swap(i, j);
        permute(v, i + 1, f);
        v.swap(i, j);
    }
}

pub fn max_abs_diff<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn select_rows(m: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}
