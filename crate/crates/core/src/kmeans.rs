//! Lloyd's k-means with k-means++ seeding over flat row-major point sets.
//! Shared by theme extraction (2-D ab points) and the texture library
//! (descriptor vectors).

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    /// Stop once no center moves further than this (Euclidean).
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig { k, max_iterations: 50, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    /// Row-major `centers.len() / dim` centers. May hold fewer than `k` rows
    /// when the input has fewer than `k` distinct points.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub cost_history: Vec<f64>,
}

impl KMeans {
    pub fn num_centers(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..][..self.dim]
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub(crate) fn nearest(point: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len() / dim;
    let first = rng.random_range(0..n);
    let mut centers = points[first * dim..][..dim].to_vec();
    let mut d2: Vec<f64> = points.chunks_exact(dim).map(|p| sq_dist(p, &centers[..dim])).collect();
    while centers.len() / dim < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // every point coincides with a chosen center
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        if d2[pick] <= 0.0 {
            pick = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
        }
        let chosen = points[pick * dim..][..dim].to_vec();
        for (slot, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *slot = slot.min(sq_dist(p, &chosen));
        }
        centers.extend(chosen);
    }
    centers
}

pub fn kmeans<R: Rng + ?Sized>(points: &[f64], dim: usize, cfg: &KMeansConfig, rng: &mut R) -> Result<KMeans> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!("{} values do not form {dim}-dimensional points", points.len())));
    }
    let n = points.len() / dim;
    if cfg.k == 0 || n < cfg.k {
        return Err(Error::InvalidArgument(format!("k-means needs at least k={} points, got {n}", cfg.k)));
    }
    let mut centers = seed_plus_plus(points, dim, cfg.k, rng);
    let k = centers.len() / dim;
    let mut assignments = vec![0usize; n];
    let mut counts = vec![0usize; k];
    let mut cost_history = Vec::new();

    for _ in 0..cfg.max_iterations.max(1) {
        let mut cost = 0.0;
        for (a, p) in assignments.iter_mut().zip(points.chunks_exact(dim)) {
            let (i, d) = nearest(p, &centers, dim);
            *a = i;
            cost += d;
        }
        cost_history.push(cost);

        let mut sums = vec![0.0; k * dim];
        counts.iter_mut().for_each(|c| *c = 0);
        for (&a, p) in assignments.iter().zip(points.chunks_exact(dim)) {
            counts[a] += 1;
            for (s, &v) in sums[a * dim..][..dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // an empty cluster keeps its previous center
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c * dim..][..dim].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centers[c * dim..][..dim]).sqrt());
            centers[c * dim..][..dim].copy_from_slice(&updated);
        }
        if shift < cfg.tolerance {
            break;
        }
    }

    // final assignment against the settled centers
    counts.iter_mut().for_each(|c| *c = 0);
    let mut cost = 0.0;
    for (a, p) in assignments.iter_mut().zip(points.chunks_exact(dim)) {
        let (i, d) = nearest(p, &centers, dim);
        *a = i;
        counts[i] += 1;
        cost += d;
    }
    cost_history.push(cost);

    Ok(KMeans { dim, centers, assignments, counts, cost_history })
}
