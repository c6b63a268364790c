//! Daily cluster-count estimation.
//!
//! Six validity indices each pick a cluster count from a scan range; their
//! mean is exponentially smoothed over time and rounded to the integer count
//! used for the day's clustering.

use serde::{Deserialize, Serialize};

use crate::cluster::{lloyd_kmeans, Ckmeans1d, LloydConfig};
use crate::error::{Error, Result};

pub const INDEX_NAMES: [&str; 6] = ["ptbiserial", "silhouette", "kl", "cindex", "mcclain", "dunn"];

/// Points observed on one date.
#[derive(Debug, Clone, Copy)]
pub enum Points<'a> {
    Scalar(&'a [f64]),
    /// One row per entity.
    Vector(&'a [Vec<f64>]),
}

impl Points<'_> {
    pub fn len(&self) -> usize {
        match self {
            Points::Scalar(v) => v.len(),
            Points::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Points::Scalar(_) => 1,
            Points::Vector(v) => v.first().map_or(0, Vec::len),
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            Points::Scalar(v) => (v[i] - v[j]).abs(),
            Points::Vector(v) => crate::cluster::sq_dist(&v[i], &v[j]).sqrt(),
        }
    }

    /// Number of distinct points.
    pub fn distinct(&self) -> usize {
        match self {
            Points::Scalar(v) => {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                s.dedup();
                s.len()
            }
            Points::Vector(v) => {
                let mut s = v.to_vec();
                s.sort_by(|a, b| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                s.dedup();
                s.len()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl Default for KRange {
    fn default() -> Self {
        KRange { min: 2, max: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    /// Chosen count per index, in [`INDEX_NAMES`] order.
    pub per_index: [usize; 6],
    pub k_av: f64,
    /// Fewer than two distinct points: every index reports 1.
    pub degenerate: bool,
}

impl KEstimate {
    fn degenerate() -> Self {
        KEstimate {
            per_index: [1; 6],
            k_av: 1.0,
            degenerate: true,
        }
    }
}

/// Raw scores of the six indices for one candidate partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexScores {
    pub ptbiserial: f64,
    pub silhouette: f64,
    pub cindex: f64,
    pub mcclain: f64,
    pub dunn: f64,
}

/// Pairwise distances in upper-triangular order with a sorted copy for the C-index.
pub struct PairDistances {
    n: usize,
    values: Vec<f64>,
    sorted_prefix: Vec<f64>,
}

impl PairDistances {
    pub fn new(points: &Points<'_>) -> Self {
        let n = points.len();
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                values.push(points.distance(i, j));
            }
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let mut sorted_prefix = Vec::with_capacity(sorted.len() + 1);
        sorted_prefix.push(0.0);
        let mut acc = 0.0;
        for v in &sorted {
            acc += v;
            sorted_prefix.push(acc);
        }
        PairDistances {
            n,
            values,
            sorted_prefix,
        }
    }
}

/// Evaluates every index except KL (which needs neighbouring `k`) on one partition.
///
/// Undefined scores come back as `NaN`.
pub fn score_partition(dist: &PairDistances, labels: &[usize], k: usize) -> IndexScores {
    let n = dist.n;
    let mut within_sum = 0.0;
    let mut within_n = 0usize;
    let mut between_sum = 0.0;
    let mut between_n = 0usize;
    let mut min_between = f64::INFINITY;
    let mut max_within = 0.0f64;
    // per point, summed distance to each cluster
    let mut to_cluster = vec![0.0; n * k];
    let mut p = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist.values[p];
            p += 1;
            to_cluster[i * k + labels[j] - 1] += d;
            to_cluster[j * k + labels[i] - 1] += d;
            if labels[i] == labels[j] {
                within_sum += d;
                within_n += 1;
                max_within = max_within.max(d);
            } else {
                between_sum += d;
                between_n += 1;
                min_between = min_between.min(d);
            }
        }
    }
    let total_n = within_n + between_n;

    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l - 1] += 1;
    }
    let silhouette = if k < 2 {
        f64::NAN
    } else {
        let mut s = 0.0;
        for i in 0..n {
            let own = labels[i] - 1;
            if sizes[own] < 2 {
                continue; // singleton contributes 0
            }
            let a = to_cluster[i * k + own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| to_cluster[i * k + c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                s += (b - a) / m;
            }
        }
        s / n as f64
    };

    let ptbiserial = if within_n == 0 || between_n == 0 {
        f64::NAN
    } else {
        let mean = (within_sum + between_sum) / total_n as f64;
        let var = dist.values.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / total_n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            let mw = within_sum / within_n as f64;
            let mb = between_sum / between_n as f64;
            (mb - mw) * ((within_n * between_n) as f64).sqrt() / total_n as f64 / sd
        } else {
            f64::NAN
        }
    };

    let cindex = if within_n == 0 {
        f64::NAN
    } else {
        let s_min = dist.sorted_prefix[within_n];
        let s_max = dist.sorted_prefix[total_n] - dist.sorted_prefix[total_n - within_n];
        // the two sums add the same terms in different orders
        let num = within_sum - s_min;
        if s_max > s_min && num <= 1e-12 * s_max {
            0.0
        } else if s_max > s_min {
            num / (s_max - s_min)
        } else {
            f64::NAN
        }
    };

    let mcclain = if within_n == 0 || between_n == 0 || between_sum == 0.0 {
        f64::NAN
    } else {
        (within_sum / within_n as f64) / (between_sum / between_n as f64)
    };

    let dunn = if between_n == 0 {
        f64::NAN
    } else if max_within > 0.0 {
        min_between / max_within
    } else {
        f64::INFINITY
    };

    IndexScores {
        ptbiserial,
        silhouette,
        cindex,
        mcclain,
        dunn,
    }
}

/// KL values over a contiguous run of WCSS values `w[0..]` for `k = k0, k0+1, ...`.
///
/// The first and last entries are `None`: they lack a neighbour on one side.
pub fn kl_values(w: &[f64], k0: usize, dim: usize) -> Vec<Option<f64>> {
    let p = 2.0 / dim as f64;
    let diff = |idx: usize| {
        let k = (k0 + idx) as f64;
        (k - 1.0).powf(p) * w[idx - 1] - k.powf(p) * w[idx]
    };
    (0..w.len())
        .map(|idx| {
            if idx == 0 || idx + 1 >= w.len() {
                return None;
            }
            let v = diff(idx).abs() / diff(idx + 1).abs();
            (!v.is_nan()).then_some(v)
        })
        .collect()
}

/// Scores within `TIE_TOL` relative of each other count as equal, so the
/// lower `k` wins regardless of summation order.
const TIE_TOL: f64 = 1e-9;

fn arg_best(scores: &[(usize, f64)], maximize: bool) -> Option<usize> {
    let scale = scores
        .iter()
        .filter(|(_, s)| s.is_finite())
        .fold(0.0f64, |a, (_, s)| a.max(s.abs()));
    let tol = TIE_TOL * scale.max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, f64)> = None;
    for &(k, s) in scores {
        if s.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) if s == b => false,
            Some((_, b)) => {
                let gain = if maximize { s - b } else { b - s };
                gain > tol
            }
        };
        if better {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Picks a cluster count with each index and averages the six choices.
///
/// Univariate data is partitioned optimally; vector data with Lloyd's
/// algorithm. The scan is capped at `n - 1` and at the number of distinct
/// points. An index with no defined score anywhere falls back to the lowest
/// scanned `k`.
pub fn index_scores(points: Points<'_>, range: KRange, lloyd: &LloydConfig) -> Result<KEstimate> {
    if range.min == 0 || range.min > range.max {
        return Err(Error::domain(format!(
            "invalid k scan range {}..={}",
            range.min, range.max
        )));
    }
    let n = points.len();
    let distinct = points.distinct();
    if distinct < 2 {
        return Ok(KEstimate::degenerate());
    }
    let k_hi = range.max.min(n - 1).min(distinct);
    let k_lo = range.min;
    if k_hi < k_lo {
        return Err(Error::domain(format!(
            "k scan range {k_lo}..={} is empty for {n} points ({distinct} distinct)",
            range.max
        )));
    }
    // WCSS is needed one step beyond each end of the scan for KL
    let w_lo = (k_lo - 1).max(1);
    let w_hi = (k_hi + 1).min(n);

    let dist = PairDistances::new(&points);
    let mut wcss = Vec::with_capacity(w_hi - w_lo + 1);
    let mut labels_by_k = Vec::with_capacity(k_hi - k_lo + 1);
    match points {
        Points::Scalar(v) => {
            let table = Ckmeans1d::new(v, w_hi)?;
            for k in w_lo..=w_hi {
                let part = table.partition(k)?;
                wcss.push(part.wcss);
                if (k_lo..=k_hi).contains(&k) {
                    labels_by_k.push(part.labels);
                }
            }
        }
        Points::Vector(v) => {
            for k in w_lo..=w_hi {
                let fit = lloyd_kmeans(v, k, lloyd)?;
                wcss.push(fit.partition.wcss);
                if (k_lo..=k_hi).contains(&k) {
                    labels_by_k.push(fit.partition.labels);
                }
            }
        }
    }

    let kl = kl_values(&wcss, w_lo, points.dim());
    let mut cols: [Vec<(usize, f64)>; 6] = Default::default();
    for (offset, labels) in labels_by_k.iter().enumerate() {
        let k = k_lo + offset;
        let s = score_partition(&dist, labels, k);
        cols[0].push((k, s.ptbiserial));
        cols[1].push((k, s.silhouette));
        cols[2].push((k, kl[k - w_lo].unwrap_or(f64::NAN)));
        cols[3].push((k, s.cindex));
        cols[4].push((k, s.mcclain));
        cols[5].push((k, s.dunn));
    }
    const MAXIMIZE: [bool; 6] = [true, true, true, false, false, true];
    let mut per_index = [k_lo; 6];
    for (slot, (col, max)) in per_index.iter_mut().zip(cols.iter().zip(MAXIMIZE)) {
        if let Some(k) = arg_best(col, max) {
            *slot = k;
        }
    }
    let k_av = per_index.iter().sum::<usize>() as f64 / 6.0;
    Ok(KEstimate {
        per_index,
        k_av,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedK {
    pub alpha: f64,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub k_hat: Vec<usize>,
}

/// Simple exponential smoothing followed by round-half-up, floored at 1.
pub fn smooth_k(raw: &[f64], alpha: f64) -> Result<SmoothedK> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("smoothing weight {alpha} outside (0, 1]")));
    }
    let Some(&first) = raw.first() else {
        return Err(Error::domain("cannot smooth an empty sequence"));
    };
    let mut smoothed = Vec::with_capacity(raw.len());
    let mut s = first;
    smoothed.push(s);
    for &r in &raw[1..] {
        // this form leaves s unchanged when r == s
        s += alpha * (r - s);
        smoothed.push(s);
    }
    let k_hat = smoothed
        .iter()
        .map(|s| ((s + 0.5).floor() as i64).max(1) as usize)
        .collect();
    Ok(SmoothedK {
        alpha,
        raw: raw.to_vec(),
        smoothed,
        k_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two evenly spaced triples; between/within distance ratio is 500.
    fn two_groups() -> Vec<f64> {
        vec![0.0, 0.01, 0.02, 10.0, 10.01, 10.02]
    }

    #[test]
    fn separated_groups_pick_two_everywhere() {
        let v = two_groups();
        let est = index_scores(Points::Scalar(&v), KRange::default(), &LloydConfig::default()).unwrap();
        assert_eq!(est.per_index, [2; 6]);
        assert_eq!(est.k_av, 2.0);
        assert!(!est.degenerate);
    }

    #[test]
    fn separated_vector_groups_pick_two() {
        let pts: Vec<Vec<f64>> = two_groups().iter().map(|x| vec![*x, x * 0.5 + 1.0, *x]).collect();
        let est = index_scores(Points::Vector(&pts), KRange::default(), &LloydConfig::default()).unwrap();
        assert_eq!(est.per_index, [2; 6]);
    }

    /// Direct evaluation of each index from its definition on the k = 2 split.
    #[test]
    fn scores_match_direct_formulas() {
        let v = [0.0, 1.0, 3.0, 7.0, 8.0];
        let labels = [2, 2, 2, 1, 1];
        let dist = PairDistances::new(&Points::Scalar(&v));
        let s = score_partition(&dist, &labels, 2);

        let mut within = Vec::new();
        let mut between = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                let d = (v[i] - v[j]).abs();
                if labels[i] == labels[j] {
                    within.push(d)
                } else {
                    between.push(d)
                }
            }
        }
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        assert!((s.mcclain - mean(&within) / mean(&between)).abs() < 1e-12);
        assert!((s.dunn - 4.0 / 3.0).abs() < 1e-12);

        let mut all: Vec<f64> = within.iter().chain(&between).copied().collect();
        all.sort_by(f64::total_cmp);
        let nw = within.len();
        let smin: f64 = all[..nw].iter().sum();
        let smax: f64 = all[all.len() - nw..].iter().sum();
        let c = (within.iter().sum::<f64>() - smin) / (smax - smin);
        assert!((s.cindex - c).abs() < 1e-12);

        // point-biserial as the Pearson correlation with a 0/1 indicator
        let ind: Vec<f64> = within.iter().map(|_| 0.0).chain(between.iter().map(|_| 1.0)).collect();
        let dv: Vec<f64> = within.iter().chain(&between).copied().collect();
        let (md, mi) = (mean(&dv), mean(&ind));
        let cov: f64 = dv.iter().zip(&ind).map(|(a, b)| (a - md) * (b - mi)).sum();
        let sd = dv.iter().map(|a| (a - md).powi(2)).sum::<f64>().sqrt();
        let si = ind.iter().map(|b| (b - mi).powi(2)).sum::<f64>().sqrt();
        assert!((s.ptbiserial - cov / (sd * si)).abs() < 1e-12);

        let sil = |i: usize| {
            let own: Vec<f64> = (0..5)
                .filter(|&j| j != i && labels[j] == labels[i])
                .map(|j| (v[i] - v[j]).abs())
                .collect();
            let other: Vec<f64> = (0..5)
                .filter(|&j| labels[j] != labels[i])
                .map(|j| (v[i] - v[j]).abs())
                .collect();
            let (a, b) = (mean(&own), mean(&other));
            (b - a) / a.max(b)
        };
        let expect = (0..5).map(sil).sum::<f64>() / 5.0;
        assert!((s.silhouette - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_from_definition() {
        let w = [100.0, 10.0, 4.0, 3.0];
        let kl = kl_values(&w, 1, 1);
        assert_eq!(kl[0], None);
        assert_eq!(kl[3], None);
        // DIFF(k) = (k-1)^2 W_{k-1} - k^2 W_k for p = 1
        let diff2: f64 = 1.0 * 100.0 - 4.0 * 10.0;
        let diff3: f64 = 4.0 * 10.0 - 9.0 * 4.0;
        let diff4: f64 = 9.0 * 4.0 - 16.0 * 3.0;
        assert!((kl[1].unwrap() - diff2.abs() / diff3.abs()).abs() < 1e-12);
        assert!((kl[2].unwrap() - diff3.abs() / diff4.abs()).abs() < 1e-12);
    }

    #[test]
    fn kl_skips_the_ends_when_the_scan_reaches_one() {
        let v: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        // k_min = 1 has no W_0 and is skipped by KL; the scan still succeeds
        let est = index_scores(Points::Scalar(&v), KRange { min: 1, max: 5 }, &LloydConfig::default()).unwrap();
        assert!(est.per_index[2] >= 2);
    }

    #[test]
    fn identical_values_are_degenerate() {
        let v = [3.0; 8];
        let est = index_scores(Points::Scalar(&v), KRange::default(), &LloydConfig::default()).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.k_av, 1.0);
    }

    #[test]
    fn scan_is_capped_by_distinct_values() {
        let v = [1.0, 1.0, 1.0, 4.0, 4.0, 4.0];
        let est = index_scores(Points::Scalar(&v), KRange::default(), &LloydConfig::default()).unwrap();
        assert_eq!(est.per_index, [2; 6]);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let v = [1.0, 2.0, 3.0];
        assert!(index_scores(Points::Scalar(&v), KRange { min: 0, max: 3 }, &LloydConfig::default()).is_err());
        assert!(index_scores(Points::Scalar(&v), KRange { min: 4, max: 3 }, &LloydConfig::default()).is_err());
        assert!(index_scores(Points::Scalar(&v), KRange { min: 3, max: 5 }, &LloydConfig::default()).is_err());
    }

    #[test]
    fn smoothing_examples() {
        let c = smooth_k(&[3.4; 10], 0.3).unwrap();
        assert!(c.k_hat.iter().all(|&k| k == 3));
        let raw = [1.2, 5.5, 2.49, 7.0];
        assert_eq!(smooth_k(&raw, 1.0).unwrap().k_hat, vec![1, 6, 2, 7]);
        assert!(smooth_k(&raw, 0.0).is_err());
        assert!(smooth_k(&raw, 1.5).is_err());
        assert!(smooth_k(&[], 0.5).is_err());
        assert_eq!(smooth_k(&[0.2, 0.1], 0.5).unwrap().k_hat, vec![1, 1]);
    }

    #[test]
    fn step_response_follows_geometric_convergence() {
        let mut raw = vec![2.0; 4];
        raw.extend(std::iter::repeat_n(10.0, 16));
        let out = smooth_k(&raw, 0.3).unwrap();
        for t in 4..raw.len() {
            // 1-based t' = t + 1; s(t') = 10 - 8 * 0.7^(t' - 4)
            let closed = 10.0 - 8.0 * 0.7f64.powi(t as i32 - 3);
            assert!((out.smoothed[t] - closed).abs() < 1e-12);
        }
        assert!(out.k_hat.windows(2).all(|w| w[1] >= w[0]));
        let first_ten = out.k_hat.iter().position(|&k| k == 10).unwrap();
        assert!(first_ten >= 4 + 6, "reached 10 at index {first_ten}");
        assert_eq!(first_ten, 11);
    }

    proptest! {
        #[test]
        fn choices_survive_positive_affine_rescaling(
            v in proptest::collection::vec(0.0f64..12.0, 6..30),
            a in 0.5f64..8.0,
            b in -3.0f64..3.0,
        ) {
            let base = index_scores(Points::Scalar(&v), KRange::default(), &LloydConfig::default()).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let est = index_scores(Points::Scalar(&scaled), KRange::default(), &LloydConfig::default()).unwrap();
            for (i, name) in INDEX_NAMES.iter().enumerate() {
                prop_assert_eq!(base.per_index[i], est.per_index[i], "index {}", name);
            }
        }

        #[test]
        fn constant_sequences_are_fixed_points(c in 0.0f64..30.0, n in 1usize..40, alpha in 0.01f64..1.0) {
            let out = smooth_k(&vec![c; n], alpha).unwrap();
            let expect = ((c + 0.5).floor() as usize).max(1);
            prop_assert!(out.k_hat.iter().all(|&k| k == expect));
            for (s, k) in out.smoothed.iter().zip(&out.k_hat) {
                prop_assert!((s - *k as f64).abs() <= 0.5 || *k == 1);
            }
        }
    }
}
