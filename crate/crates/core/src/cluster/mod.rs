//! Clustering engines: exact univariate k-means, Lloyd's k-means for vectors,
//! and agglomerative hierarchical clustering.

mod ckmeans;
mod hierarchy;
mod lloyd;

pub use ckmeans::{ckmeans_1d, Ckmeans1d};
pub use hierarchy::{cut_dendrogram, hierarchical, Dendrogram, Linkage, Merge};
pub use lloyd::{lloyd_kmeans, LloydConfig, LloydFit};

use serde::Serialize;

/// Assignment of `n` points to `k` ordered clusters.
///
/// Labels run from 1 to `k`; cluster 1 has the highest centroid (the worst
/// affected entities when the values are counts).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    /// `centroids[j - 1]` belongs to cluster `j`. Univariate centroids have length 1.
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Member indices of each cluster, `members()[j - 1]` for label `j`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(i);
        }
        out
    }
}

/// Within-cluster sum of squares computed directly from the labels.
///
/// `points[i]` is point `i`; centroids are recomputed as member means.
pub fn wcss_of(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l - 1] += 1;
        for (s, v) in sums[l - 1].iter_mut().zip(p) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
        .collect();
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &means[l - 1])).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relabels clusters so label 1 has the largest centroid mean component.
///
/// `raw_labels` are 0-based; ties keep the original cluster order.
pub(crate) fn order_descending(raw_labels: &[usize], centroids: Vec<Vec<f64>>, wcss: f64) -> Partition {
    let mean = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len().max(1) as f64;
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| mean(&centroids[b]).total_cmp(&mean(&centroids[a])).then(a.cmp(&b)));
    let mut rank = vec![0; centroids.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r + 1;
    }
    let labels = raw_labels.iter().map(|&l| rank[l]).collect();
    let centroids = order.iter().map(|&c| centroids[c].clone()).collect();
    Partition {
        labels,
        centroids,
        wcss,
    }
}
