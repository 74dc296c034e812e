//! Silhouette score for a cluster assignment.
//!
//! For each point, `a` is its mean distance to the other members of its
//! cluster and `b` the smallest mean distance to any other cluster; the
//! point's silhouette is `(b - a) / max(a, b)`, with singletons contributing
//! exactly 0. The score is the mean over all points, in [-1, 1].

use crate::scalar::{dist, Real};

use super::kmeans::ClusterAssignment;
use super::tfidf::DocumentVectors;
use super::ClusterError;

pub fn silhouette<T: Real>(
    vectors: &DocumentVectors<T>,
    assignment: &ClusterAssignment<T>,
) -> Result<T, ClusterError> {
    let n = vectors.len();
    let k = assignment.k;
    if k < 2 || k > n.saturating_sub(1) {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    assert_eq!(assignment.labels.len(), n, "assignment must match vectors");

    let mut cluster_sizes = vec![0usize; k];
    for &label in &assignment.labels {
        cluster_sizes[label] += 1;
    }

    // Per point, sum of distances to each cluster.
    let rows = &vectors.rows;
    let mut total = T::zero();
    for i in 0..n {
        let own = assignment.labels[i];
        if cluster_sizes[own] == 1 {
            continue; // singleton contributes 0
        }
        let mut sums = vec![T::zero(); k];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[assignment.labels[j]] += dist(&rows[i], &rows[j]);
        }
        let a = sums[own] / T::from_count(cluster_sizes[own] - 1);
        let mut b = T::infinity();
        for c in 0..k {
            if c == own || cluster_sizes[c] == 0 {
                continue;
            }
            let mean = sums[c] / T::from_count(cluster_sizes[c]);
            if mean < b {
                b = mean;
            }
        }
        let denom = a.max(b);
        if denom > T::zero() {
            total += (b - a) / denom;
        }
    }
    Ok(total / T::from_count(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcluster::kmeans::kmeans;

    fn raw_vectors(rows: Vec<Vec<f64>>) -> DocumentVectors<f64> {
        let dims = rows[0].len();
        DocumentVectors {
            vocabulary: (0..dims).map(|i| format!("t{i}")).collect(),
            doc_ids: (0..rows.len()).map(|i| format!("d{i}")).collect(),
            rows,
        }
    }

    fn assignment_with_labels(
        vectors: &DocumentVectors<f64>,
        k: usize,
        labels: Vec<usize>,
    ) -> ClusterAssignment<f64> {
        let dims = vectors.dims();
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (row, &l) in vectors.rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
            .collect();
        ClusterAssignment {
            k,
            labels,
            centroids,
            inertia: 0.0,
            inertia_trace: vec![0.0],
            iterations: 1,
        }
    }

    /// Naive definitional oracle, written independently of the
    /// implementation above: per-point loops straight from the definition.
    pub(crate) fn silhouette_oracle(rows: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let n = rows.len();
        let mut acc = 0.0;
        for i in 0..n {
            let own = labels[i];
            let own_size = labels.iter().filter(|&&l| l == own).count();
            if own_size == 1 {
                continue;
            }
            let a = {
                let mut s = 0.0;
                for j in 0..n {
                    if j != i && labels[j] == own {
                        s += dist(&rows[i], &rows[j]);
                    }
                }
                s / (own_size - 1) as f64
            };
            let mut b = f64::INFINITY;
            for c in 0..k {
                if c == own {
                    continue;
                }
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mean = members
                    .iter()
                    .map(|&j| dist(&rows[i], &rows[j]))
                    .sum::<f64>()
                    / members.len() as f64;
                b = b.min(mean);
            }
            let denom = a.max(b);
            if denom > 0.0 {
                acc += (b - a) / denom;
            }
        }
        acc / n as f64
    }

    #[test]
    fn two_tight_far_clusters_score_high() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.01, 0.0],
            vec![0.0, 0.01],
            vec![100.0, 100.0],
            vec![100.01, 100.0],
            vec![100.0, 100.01],
        ];
        let v = raw_vectors(rows);
        let a = assignment_with_labels(&v, 2, vec![0, 0, 0, 1, 1, 1]);
        let s = silhouette(&v, &a).unwrap();
        assert!(s > 0.9, "score {s}");
    }

    #[test]
    fn six_hand_placed_points_match_the_oracle() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![0.5, 1.5],
            vec![4.0, 4.0],
            vec![5.0, 3.5],
            vec![9.0, 0.0],
        ];
        let labels = vec![0, 0, 0, 1, 1, 2];
        let v = raw_vectors(rows.clone());
        let a = assignment_with_labels(&v, 3, labels.clone());
        let got = silhouette(&v, &a).unwrap();
        let want = silhouette_oracle(&rows, &labels, 3);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn singleton_contributes_zero() {
        // Two points in one cluster, one singleton. The singleton's term is
        // 0, so the score is the mean of the two non-singleton terms.
        let rows = vec![vec![0.0], vec![1.0], vec![10.0]];
        let labels = vec![0, 0, 1];
        let v = raw_vectors(rows.clone());
        let a = assignment_with_labels(&v, 2, labels.clone());
        let got = silhouette(&v, &a).unwrap();
        // Point 0: a = 1, b = 10           -> (10-1)/10 = 0.9
        // Point 1: a = 1, b = 9            -> (9-1)/9
        // Point 2: singleton               -> 0
        let want = (0.9 + 8.0 / 9.0) / 3.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((got - silhouette_oracle(&rows, &labels, 2)).abs() < 1e-12);
    }

    #[test]
    fn k_bounds_are_enforced() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let v = raw_vectors(rows);
        let a1 = assignment_with_labels(&v, 1, vec![0, 0, 0]);
        assert!(matches!(
            silhouette(&v, &a1),
            Err(ClusterError::KOutOfRange { .. })
        ));
        let a3 = assignment_with_labels(&v, 3, vec![0, 1, 2]);
        assert!(matches!(
            silhouette(&v, &a3),
            Err(ClusterError::KOutOfRange { .. })
        ));
    }

    #[test]
    fn matches_oracle_on_kmeans_outputs() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = f64::from(i);
                vec![(t * 0.37).sin() * 3.0, (t * 0.71).cos() * 2.0]
            })
            .collect();
        let v = raw_vectors(rows.clone());
        for k in 2..8 {
            let a = kmeans(&v, k, 17).unwrap();
            let got = silhouette(&v, &a).unwrap();
            let want = silhouette_oracle(&rows, &a.labels, k);
            assert!((got - want).abs() < 1e-9, "k={k}: {got} vs {want}");
        }
    }
}
