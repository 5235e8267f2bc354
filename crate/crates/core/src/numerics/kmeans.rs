use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::error::{ApnetError, Result};

use super::matrix::DenseMatrix;
use super::rng::SeededRng;

/// Result of a k-means run, including the SSE after every Lloyd iteration.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centroids: DenseMatrix,
    pub assignments: Vec<usize>,
    pub sse_history: Vec<f64>,
}

pub fn kmeans(points: &DenseMatrix, k: usize, max_iters: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    kmeans_fit(points, k, max_iters, rng).map(|fit| fit.centroids)
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// A cluster that loses all its points is re-seeded with the point farthest
/// from its current centroid, so every returned centroid owns at least one point.
pub fn kmeans_fit(points: &DenseMatrix, k: usize, max_iters: usize, rng: &mut SeededRng) -> Result<KMeansFit> {
    let n = points.rows();
    if k == 0 {
        return Err(ApnetError::InvalidArgument("k-means needs k >= 1".into()));
    }
    if k > n {
        return Err(ApnetError::InvalidArgument(format!(
            "k-means with k = {k} but only {n} points"
        )));
    }
    if max_iters == 0 {
        return Err(ApnetError::InvalidArgument("k-means needs max_iters >= 1".into()));
    }

    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut sse_history = Vec::new();

    for _ in 0..max_iters {
        let mut changed = assign(points, &centroids, &mut assignments);
        changed |= fix_empty_clusters(points, &centroids, &mut assignments, k);
        update(points, &assignments, &mut centroids);
        sse_history.push(sse(points, &centroids, &assignments));
        if !changed {
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        assignments,
        sse_history,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

fn seed_plus_plus(points: &DenseMatrix, k: usize, rng: &mut SeededRng) -> DenseMatrix {
    let n = points.rows();
    let mut chosen = vec![rng.below(n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng.inner()),
            // all remaining mass is zero (duplicate points): pick any unchosen row
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.below(free.len())]
            }
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn assign(points: &DenseMatrix, centroids: &DenseMatrix, assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, slot) in assignments.iter_mut().enumerate() {
        let p = points.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.rows() {
            let d = sq_dist(p, centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if *slot != best {
            *slot = best;
            changed = true;
        }
    }
    changed
}

fn fix_empty_clusters(points: &DenseMatrix, centroids: &DenseMatrix, assignments: &mut [usize], k: usize) -> bool {
    let mut changed = false;
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return changed;
        };
        // farthest point among clusters that can spare one
        let far = (0..points.rows())
            .filter(|&i| counts[assignments[i]] > 1)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(assignments[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if d <= bd => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("k <= n guarantees a cluster with two or more points");
        assignments[far] = empty;
        changed = true;
    }
}

fn update(points: &DenseMatrix, assignments: &[usize], centroids: &mut DenseMatrix) {
    let dim = points.cols();
    let k = centroids.rows();
    let mut sums = DenseMatrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        let count = counts[c] as f64;
        for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
            *dst = s / count;
        }
    }
}

fn sse(points: &DenseMatrix, centroids: &DenseMatrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points.row(i), centroids.row(a)))
        .sum()
}
