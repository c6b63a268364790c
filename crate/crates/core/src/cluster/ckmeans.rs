use crate::error::{Error, Result};

use super::{order_descending, wcss_of, Partition};

/// Optimal 1-D k-means by dynamic programming over the sorted values.
///
/// One table is filled for every cluster count up to `k_max`, so the optimal
/// objective and partition for any smaller `k` can be read off without
/// recomputation. `cost[j][t]` is the least within-cluster sum of squares of
/// the first `t + 1` sorted values split into `j + 1` intervals.
#[derive(Debug, Clone)]
pub struct Ckmeans1d {
    /// Original index of each sorted position.
    order: Vec<usize>,
    sorted: Vec<f64>,
    cost: Vec<Vec<f64>>,
    /// First sorted index of the last interval in the optimum for `cost[j][t]`.
    split: Vec<Vec<usize>>,
}

impl Ckmeans1d {
    pub fn new(values: &[f64], k_max: usize) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::domain("ckmeans on empty input"));
        }
        if k_max == 0 || k_max > n {
            return Err(Error::domain(format!("cluster count {k_max} outside 1..={n}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value {v}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();

        // shift by the median to keep the prefix sums well conditioned
        let shift = sorted[n / 2];
        let mut s1 = vec![0.0; n + 1];
        let mut s2 = vec![0.0; n + 1];
        for (i, v) in sorted.iter().enumerate() {
            let c = v - shift;
            s1[i + 1] = s1[i] + c;
            s2[i + 1] = s2[i] + c * c;
        }
        // sum of squares of sorted[lo..=hi] around its mean
        let ssq = |lo: usize, hi: usize| {
            let m = (hi - lo + 1) as f64;
            let s = s1[hi + 1] - s1[lo];
            (s2[hi + 1] - s2[lo] - s * s / m).max(0.0)
        };

        let mut cost = vec![vec![f64::INFINITY; n]; k_max];
        let mut split = vec![vec![0usize; n]; k_max];
        for (t, c) in cost[0].iter_mut().enumerate() {
            *c = ssq(0, t);
        }
        for j in 1..k_max {
            for t in j..n {
                let mut best = f64::INFINITY;
                let mut arg = j;
                for s in j..=t {
                    let c = cost[j - 1][s - 1] + ssq(s, t);
                    if c < best {
                        best = c;
                        arg = s;
                    }
                }
                cost[j][t] = best;
                split[j][t] = arg;
            }
        }
        Ok(Ckmeans1d {
            order,
            sorted,
            cost,
            split,
        })
    }

    pub fn k_max(&self) -> usize {
        self.cost.len()
    }

    /// Optimal objective for `k` clusters as tracked by the table.
    pub fn objective(&self, k: usize) -> Option<f64> {
        (1..=self.k_max())
            .contains(&k)
            .then(|| self.cost[k - 1][self.sorted.len() - 1])
    }

    /// Sorted-order interval bounds `[lo, hi]` of each cluster, ascending.
    pub fn intervals(&self, k: usize) -> Result<Vec<(usize, usize)>> {
        if !(1..=self.k_max()).contains(&k) {
            return Err(Error::domain(format!("cluster count {k} outside 1..={}", self.k_max())));
        }
        let mut out = Vec::with_capacity(k);
        let mut hi = self.sorted.len() - 1;
        for j in (0..k).rev() {
            let lo = if j == 0 { 0 } else { self.split[j][hi] };
            out.push((lo, hi));
            if j > 0 {
                hi = lo - 1;
            }
        }
        out.reverse();
        Ok(out)
    }

    pub fn partition(&self, k: usize) -> Result<Partition> {
        let intervals = self.intervals(k)?;
        let n = self.sorted.len();
        let mut raw = vec![0usize; n];
        let mut centroids = Vec::with_capacity(k);
        for (c, &(lo, hi)) in intervals.iter().enumerate() {
            let members = &self.sorted[lo..=hi];
            centroids.push(vec![members.iter().sum::<f64>() / members.len() as f64]);
            for pos in lo..=hi {
                raw[self.order[pos]] = c;
            }
        }
        let mut points = vec![Vec::new(); n];
        for (pos, &i) in self.order.iter().enumerate() {
            points[i] = vec![self.sorted[pos]];
        }
        let wcss = wcss_of(&points, &raw.iter().map(|l| l + 1).collect::<Vec<_>>(), k);
        Ok(order_descending(&raw, centroids, wcss))
    }
}

/// Globally optimal `k`-clustering of univariate data.
pub fn ckmeans_1d(values: &[f64], k: usize) -> Result<Partition> {
    Ckmeans1d::new(values, k)?.partition(k)
}
