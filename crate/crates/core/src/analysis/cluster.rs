//! k-means with k-means++ seeding and clustering agreement scores.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{BicError, Result};
use crate::numerics::{derive_seed, rng_from};

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut best: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &w) in best.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(points[idx].clone());
        for (b, p) in best.iter_mut().zip(points) {
            *b = b.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let d = points[0].len();
    let mut assignments = vec![0; points.len()];
    for it in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let mut bi = 0;
            let mut bd = f64::INFINITY;
            for (ci, c) in centroids.iter().enumerate() {
                let dd = sq_dist(p, c);
                if dd < bd {
                    bd = dd;
                    bi = ci;
                }
            }
            if *a != bi {
                *a = bi;
                changed = true;
            }
        }
        if !changed && it > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = assignments.iter().zip(points).map(|(&a, p)| sq_dist(p, &centroids[a])).sum();
    KMeans { assignments, centroids, inertia }
}

/// Best of `restarts` k-means++ runs by inertia. Seeded, so repeatable.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || restarts == 0 {
        return Err(BicError::Config("k and restarts must be positive".into()));
    }
    if points.len() < k {
        return Err(BicError::Size(format!("{} points cannot form {k} clusters", points.len())));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(BicError::Size("points have different dimensions".into()));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts {
        let mut rng = rng_from(derive_seed(seed, &[r as u64]));
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and their harmonic mean. Degenerate cases
/// follow the usual convention: a single class gives homogeneity 1, a
/// single cluster gives completeness 1.
pub fn v_measure(labels: &[usize], clusters: &[usize]) -> Result<VMeasure> {
    if labels.len() != clusters.len() {
        return Err(BicError::Size("labels and clusters differ in length".into()));
    }
    if labels.is_empty() {
        return Err(BicError::EmptyDataset("no samples to score".into()));
    }
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut by_class: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    for (&c, &k) in labels.iter().zip(clusters) {
        *joint.entry((c, k)).or_default() += 1;
        *by_class.entry(c).or_default() += 1;
        *by_cluster.entry(k).or_default() += 1;
    }
    let h_c = entropy(by_class.values().copied(), n);
    let h_k = entropy(by_cluster.values().copied(), n);
    // H(C|K) = H(C,K) - H(K)
    let h_ck = entropy(joint.values().copied(), n);
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - (h_ck - h_k) / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - (h_ck - h_c) / h_k };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure { homogeneity, completeness, v_measure: v })
}
