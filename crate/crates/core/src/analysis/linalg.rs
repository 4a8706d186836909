//! Power-iteration routines on small dense matrices.

use serde::Serialize;

use crate::error::{BicError, Result};
use crate::numerics::Tensor;

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 10_000;

/// Outcome of a power iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dominant {
    /// Largest singular value of the input.
    pub value: f64,
    /// Rayleigh quotient `vᵀ m v` of the converged direction. For symmetric
    /// inputs this is the signed largest-magnitude eigenvalue.
    pub rayleigh: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Dominant {
    /// Non-convergence diagnostic, if any.
    pub fn diagnostic(&self) -> Option<String> {
        (!self.converged).then(|| {
            format!(
                "power iteration stopped after {} iterations without reaching tolerance {POWER_TOL:e}",
                self.iterations
            )
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mat_vec(m: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|r| (0..n).map(|c| m[r * n + c] * v[c]).sum()).collect()
}

fn mat_t_vec(m: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|c| (0..n).map(|r| m[r * n + c] * v[r]).sum()).collect()
}

/// Deterministic start that is not orthogonal to any coordinate axis.
fn start(n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0) / n as f64).collect();
    let s = norm(&v);
    v.into_iter().map(|x| x / s).collect()
}

/// Dominant value of a square matrix: the largest singular value, found by
/// power iteration on `mᵀm`. For a symmetric matrix this is the largest
/// eigenvalue magnitude. Stops when the residual `‖mᵀm v − λ v‖` drops to
/// `tol · max(1, λ)` or after `max_iter` steps, in which case `converged`
/// is false.
pub fn dominant_value_with(m: &Tensor<f64>, tol: f64, max_iter: usize) -> Result<Dominant> {
    let n = m.rows();
    if n == 0 || m.cols() != n {
        return Err(BicError::dim("dominant_value", &m.shape(), &[n, n]));
    }
    if !m.all_finite() {
        return Err(BicError::Numeric {
            param: "matrix".into(),
            message: "non-finite entry".into(),
        });
    }
    let a = m.data();
    let mut v = start(n);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iter {
        iterations = it;
        let w = mat_t_vec(a, n, &mat_vec(a, n, &v));
        let s = norm(&w);
        if s == 0.0 {
            // m v = 0 for the start vector; with a nonnegative start this only
            // happens for matrices whose dominant value is 0 along it
            converged = m.data().iter().all(|&x| x == 0.0);
            break;
        }
        // residual of the mᵀm eigen-equation at the current iterate
        let lam: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let resid = w.iter().zip(&v).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / s).collect();
        if resid <= tol * lam.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let mv = mat_vec(a, n, &v);
    let value = norm(&mv);
    let mut rayleigh = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
    if is_symmetric(a, n) {
        // v spans the eigenvectors of λ and −λ when both have the top
        // magnitude; Rayleigh-Ritz on span{v, m v} separates them
        if let Some((theta, u)) = ritz_pair(a, n, &v, &mv) {
            if residual(a, n, &u, theta) < residual(a, n, &v, rayleigh) {
                rayleigh = theta;
                v = u;
            }
        }
    }
    Ok(Dominant {
        value,
        rayleigh,
        vector: v,
        iterations,
        converged,
    })
}

fn residual(a: &[f64], n: usize, v: &[f64], lam: f64) -> f64 {
    let mv = mat_vec(a, n, v);
    mv.iter().zip(v).map(|(x, y)| (x - lam * y).powi(2)).sum::<f64>().sqrt()
}

fn is_symmetric(a: &[f64], n: usize) -> bool {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (0..n).all(|i| (0..i).all(|j| (a[i * n + j] - a[j * n + i]).abs() <= 1e-12 * scale))
}

/// Largest-magnitude Ritz value and vector of symmetric `m` on span{v, mv}.
fn ritz_pair(a: &[f64], n: usize, v: &[f64], mv: &[f64]) -> Option<(f64, Vec<f64>)> {
    let along: f64 = mv.iter().zip(v).map(|(x, y)| x * y).sum();
    let w: Vec<f64> = mv.iter().zip(v).map(|(x, y)| x - along * y).collect();
    let wn = norm(&w);
    if wn <= 1e-14 * norm(mv).max(1e-300) {
        return None;
    }
    let mut q: Vec<f64> = w.iter().map(|x| x / wn).collect();
    // second Gram-Schmidt pass; w can be tiny next to mv
    let back: f64 = q.iter().zip(v).map(|(x, y)| x * y).sum();
    q.iter_mut().zip(v).for_each(|(x, y)| *x -= back * y);
    let qn = norm(&q);
    q.iter_mut().for_each(|x| *x /= qn);
    let mq = mat_vec(a, n, &q);
    let (t11, t12, t22) = (along, mv.iter().zip(&q).map(|(x, y)| x * y).sum::<f64>(), mq.iter().zip(&q).map(|(x, y)| x * y).sum::<f64>());
    let mid = 0.5 * (t11 + t22);
    let rad = (0.25 * (t11 - t22).powi(2) + t12 * t12).sqrt();
    let theta = if (mid + rad).abs() >= (mid - rad).abs() { mid + rad } else { mid - rad };
    // eigenvector of the 2×2 projection, from whichever row is better conditioned
    let (y0, y1) = if (theta - t11).abs() >= (theta - t22).abs() { (t12, theta - t11) } else { (theta - t22, t12) };
    let yn = (y0 * y0 + y1 * y1).sqrt();
    if yn == 0.0 {
        return None;
    }
    let u: Vec<f64> = v.iter().zip(&q).map(|(a, b)| (y0 * a + y1 * b) / yn).collect();
    Some((theta, u))
}

/// [`dominant_value_with`] at the default tolerance and iteration budget.
pub fn dominant_eigenvalue(m: &Tensor<f64>) -> Result<Dominant> {
    dominant_value_with(m, POWER_TOL, POWER_MAX_ITER)
}

/// Projection of row vectors onto their first two principal components.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Pca2 {
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

/// PCA to two dimensions by power iteration with deflation on the sample
/// covariance. Each component's sign is fixed so that its largest-magnitude
/// entry is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca2> {
    let n = rows.len();
    if n == 0 {
        return Err(BicError::EmptyDataset("no vectors to project".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(BicError::Size("vectors have different lengths".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / denom;
            }
        }
    }
    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for k in 0..2.min(d) {
        let t = Tensor::new(d, d, cov.clone())?;
        let dom = dominant_value_with(&t, 1e-10, POWER_MAX_ITER)?;
        let mut v = dom.vector;
        let lam = dom.rayleigh.max(0.0);
        let pivot = v.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lam * v[i] * v[j];
            }
        }
        explained[k] = lam;
        components[k] = if lam > 0.0 { v } else { vec![0.0; d] };
    }
    let coords = centered
        .iter()
        .map(|r| {
            let p = |c: &[f64]| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca2 { components, explained_variance: explained, coords })
}
