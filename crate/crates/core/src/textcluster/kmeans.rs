//! Lloyd's k-means with k-means++ seeding.
//!
//! Deterministic given (vectors, k, seed): ties in the nearest-centroid
//! assignment break to the lowest centroid index, and empty clusters are
//! repaired by reseeding with the point farthest from its centroid.

use rand::Rng;

use crate::scalar::{sq_dist, Real};
use crate::seedstream::rng_from;

use super::tfidf::DocumentVectors;
use super::ClusterError;

pub const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T: Real> {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    /// Sum of squared distances of each point to its assigned centroid.
    pub inertia: T,
    /// Inertia after each assignment step; non-increasing.
    pub inertia_trace: Vec<T>,
    pub iterations: usize,
}

fn nearest_centroid<T: Real>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = sq_dist(point, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

fn plus_plus_init<T: Real>(rows: &[Vec<T>], k: usize, seed: u64) -> Vec<Vec<T>> {
    let n = rows.len();
    let mut rng = rng_from(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));

    while chosen.len() < k {
        let weights: Vec<T> = rows
            .iter()
            .map(|row| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(row, &rows[c]))
                    .fold(T::infinity(), T::min)
            })
            .collect();
        let total: T = weights.iter().copied().sum();
        if total > T::zero() {
            let target = T::from_f64(rng.random::<f64>()).expect("f64 fits scalar") * total;
            let mut acc = T::zero();
            let mut picked = n - 1;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if acc >= target && w > T::zero() {
                    picked = i;
                    break;
                }
            }
            chosen.push(picked);
        } else {
            // All remaining points coincide with existing centroids; take the
            // first unchosen index.
            let next = (0..n).find(|i| !chosen.contains(i)).expect("k <= n");
            chosen.push(next);
        }
    }
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

/// Reseed each empty cluster with the point farthest from its centroid,
/// never emptying another cluster in the process.
fn repair_empty_clusters<T: Real>(
    rows: &[Vec<T>],
    labels: &mut [usize],
    centroids: &mut [Vec<T>],
    counts: &mut [usize],
) {
    for j in 0..centroids.len() {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<(usize, T)> = None;
        for (i, row) in rows.iter().enumerate() {
            if counts[labels[i]] <= 1 {
                continue;
            }
            let d = sq_dist(row, &centroids[labels[i]]);
            let better = match best {
                None => true,
                Some((_, bd)) => d > bd,
            };
            if better {
                best = Some((i, d));
            }
        }
        let (stolen, _) = best.expect("a cluster with >= 2 members exists while one is empty");
        counts[labels[stolen]] -= 1;
        labels[stolen] = j;
        counts[j] = 1;
        centroids[j] = rows[stolen].clone();
    }
}

/// Cluster the document vectors into `k` groups.
pub fn kmeans<T: Real>(
    vectors: &DocumentVectors<T>,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment<T>, ClusterError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    let rows = &vectors.rows;
    let dims = vectors.dims();

    let mut centroids = plus_plus_init(rows, k, seed);
    let mut labels = vec![usize::MAX; n];
    let mut inertia_trace: Vec<T> = Vec::new();
    let mut iterations = 0;

    for _ in 0..MAX_ITERS {
        iterations += 1;

        let prev_labels = labels.clone();
        let mut counts = vec![0usize; k];
        for (i, row) in rows.iter().enumerate() {
            let (j, _) = nearest_centroid(row, &centroids);
            labels[i] = j;
            counts[j] += 1;
        }
        repair_empty_clusters(rows, &mut labels, &mut centroids, &mut counts);

        let inertia: T = rows
            .iter()
            .zip(&labels)
            .map(|(row, &j)| sq_dist(row, &centroids[j]))
            .sum();
        inertia_trace.push(inertia);

        if labels == prev_labels {
            break;
        }

        let mut sums = vec![vec![T::zero(); dims]; k];
        for (row, &j) in rows.iter().zip(&labels) {
            for (s, &v) in sums[j].iter_mut().zip(row) {
                *s += v;
            }
        }
        for (j, sum) in sums.into_iter().enumerate() {
            let cnt = T::from_count(counts[j]);
            centroids[j] = sum.into_iter().map(|v| v / cnt).collect();
        }
    }

    let inertia = *inertia_trace.last().expect("at least one iteration");
    Ok(ClusterAssignment {
        k,
        labels,
        centroids,
        inertia,
        inertia_trace,
        iterations,
    })
}
