use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{order_descending, sq_dist, wcss_of, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LloydConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the relative objective improvement falls to this value.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydFit {
    pub partition: Partition,
    /// Empty clusters refilled during the winning restart.
    pub repairs: usize,
    /// Objective after each update step of the winning restart.
    pub history: Vec<f64>,
}

/// Best of `restarts` Lloyd runs with k-means++ seeding.
pub fn lloyd_kmeans(points: &[Vec<f64>], k: usize, config: &LloydConfig) -> Result<LloydFit> {
    let n = points.len();
    if n == 0 {
        return Err(Error::domain("k-means on empty input"));
    }
    if k == 0 || k > n {
        return Err(Error::domain(format!("cluster count {k} outside 1..={n}")));
    }
    if config.restarts == 0 {
        return Err(Error::domain("k-means needs at least one restart"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::domain("k-means points have mixed dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Run> = None;
    for _ in 0..config.restarts {
        let run = single_run(points, k, config, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let labels1: Vec<usize> = run.labels.iter().map(|l| l + 1).collect();
    let wcss = wcss_of(points, &labels1, k);
    Ok(LloydFit {
        partition: order_descending(&run.labels, run.centroids, wcss),
        repairs: run.repairs,
        history: run.history,
    })
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective: f64,
    repairs: usize,
    history: Vec<f64>,
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn single_run(points: &[Vec<f64>], k: usize, config: &LloydConfig, rng: &mut ChaCha8Rng) -> Run {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut repairs = 0;
    for _ in 0..config.max_iter.max(1) {
        let assigned: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let changed = assigned != labels;
        labels = assigned;

        // refill empty clusters with the point farthest from its centroid,
        // taken from a cluster that keeps at least one member
        loop {
            let mut sizes = vec![0usize; k];
            for &l in &labels {
                sizes[l] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let mut far = None;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if sizes[labels[i]] < 2 {
                    continue;
                }
                let d = sq_dist(p, &centroids[labels[i]]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            let i = far.expect("k <= n leaves a cluster with two members");
            labels[i] = empty;
            centroids[empty] = points[i].clone();
            repairs += 1;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &m) in centroids.iter_mut().zip(sums).zip(&counts) {
            *c = s.into_iter().map(|v| v / m as f64).collect();
        }
        let objective: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum();
        let prev = history.last().copied();
        history.push(objective);
        if !changed {
            break;
        }
        if let Some(prev) = prev {
            if prev - objective <= config.tol * prev {
                break;
            }
        }
    }
    Run {
        labels,
        centroids,
        objective: *history.last().expect("at least one iteration"),
        repairs,
        history,
    }
}
