use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Complete,
    #[default]
    Ward,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "ward" => Ok(Linkage::Ward),
            other => Err(Error::config(format!("unknown linkage '{other}'"))),
        }
    }
}

/// One agglomeration step. Leaves are nodes `0..n`; the node created at step
/// `s` is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub step: usize,
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub linkage: Linkage,
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

fn check_distances(dist: &Array2<f64>) -> Result<usize> {
    let (n, m) = dist.dim();
    if n != m {
        return Err(Error::domain(format!("distance matrix is {n}x{m}, not square")));
    }
    if n == 0 {
        return Err(Error::domain("distance matrix is empty"));
    }
    let scale = dist.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        if dist[[i, i]] != 0.0 {
            return Err(Error::domain(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = dist[[i, j]];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("invalid distance {v} at ({i}, {j})")));
            }
            if (v - dist[[j, i]]).abs() > 1e-12 * scale {
                return Err(Error::domain(format!("distance matrix asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(n)
}

/// Agglomerative clustering under the given linkage.
///
/// The closest pair of active clusters is merged at each step; ties go to
/// the pair with the lowest slot indices. Distances are updated with the
/// Lance-Williams recurrences.
pub fn hierarchical(dist: &Array2<f64>, linkage: Linkage, leaves: Vec<String>) -> Result<Dendrogram> {
    let n = check_distances(dist)?;
    if leaves.len() != n {
        return Err(Error::domain(format!("{} leaf labels for {n} points", leaves.len())));
    }
    let mut d = dist.clone();
    let mut active: Vec<bool> = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[[i, j]] < best.2 {
                    best = (i, j, d[[i, j]]);
                }
            }
        }
        let (a, b, height) = best;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dak, dbk) = (d[[a, k]], d[[b, k]]);
            let updated = match linkage {
                Linkage::Average => (na * dak + nb * dbk) / (na + nb),
                Linkage::Complete => dak.max(dbk),
                Linkage::Ward => {
                    let nk = size[k] as f64;
                    let v = ((na + nk) * dak * dak + (nb + nk) * dbk * dbk - nk * height * height) / (na + nb + nk);
                    v.max(0.0).sqrt()
                }
            };
            d[[a, k]] = updated;
            d[[k, a]] = updated;
        }
        merges.push(Merge {
            step,
            left: node[a],
            right: node[b],
            height,
            size: size[a] + size[b],
        });
        active[b] = false;
        size[a] += size[b];
        node[a] = n + step;
    }
    Ok(Dendrogram {
        linkage,
        leaves,
        merges,
    })
}

/// Labels from cutting the tree into `k` groups (undoing the `k - 1` last merges).
///
/// Group 1 contains leaf 0; the rest are numbered by their first leaf.
pub fn cut_dendrogram(dendro: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendro.leaves.len();
    if k == 0 || k > n {
        return Err(Error::domain(format!("cut into {k} groups outside 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in dendro.merges.iter().take(n - k) {
        let l = find(&mut parent, m.left);
        let r = find(&mut parent, m.right);
        let new = n + m.step;
        parent[l] = new;
        parent[r] = new;
    }
    let mut root_label = std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = root_label.len() + 1;
        labels.push(*root_label.entry(root).or_insert(next));
    }
    Ok(labels)
}

impl Dendrogram {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invariant(e.to_string()))
    }

    /// Newick string with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        let n = self.leaves.len();
        let mut out = String::new();
        if n == 1 {
            out.push_str(&newick_label(&self.leaves[0]));
        } else {
            self.write_node(2 * n - 2, &mut out);
        }
        out.push(';');
        out
    }

    fn height_of(&self, node: usize) -> f64 {
        let n = self.leaves.len();
        if node < n {
            0.0
        } else {
            self.merges[node - n].height
        }
    }

    fn write_node(&self, node: usize, out: &mut String) {
        let n = self.leaves.len();
        if node < n {
            out.push_str(&newick_label(&self.leaves[node]));
            return;
        }
        let m = &self.merges[node - n];
        out.push('(');
        for (i, child) in [m.left, m.right].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.write_node(child, out);
            let _ = write!(out, ":{}", m.height - self.height_of(child));
        }
        out.push(')');
    }
}

fn newick_label(s: &str) -> String {
    s.chars()
        .map(|c| if "():;,[]' \t".contains(c) { '_' } else { c })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    const ALL: [Linkage; 3] = [Linkage::Average, Linkage::Complete, Linkage::Ward];

    #[test]
    fn unique_nearest_pair_merges_first() {
        let d = array![[0.0, 1.0, 10.0], [1.0, 0.0, 10.0], [10.0, 10.0, 0.0]];
        for l in ALL {
            let t = hierarchical(&d, l, labels(3)).unwrap();
            assert_eq!((t.merges[0].left, t.merges[0].right, t.merges[0].height), (0, 1, 1.0));
            assert_eq!(t.merges.len(), 2);
            assert_eq!(t.merges[1].size, 3);
        }
    }

    #[test]
    fn two_points_merge_once() {
        let d = array![[0.0, 2.5], [2.5, 0.0]];
        let t = hierarchical(&d, Linkage::Ward, labels(2)).unwrap();
        assert_eq!(
            t.merges,
            vec![Merge {
                step: 0,
                left: 0,
                right: 1,
                height: 2.5,
                size: 2
            }]
        );
        assert_eq!(t.to_newick(), "(p0:2.5,p1:2.5);");
    }

    #[test]
    fn two_tight_pairs_split_at_the_top() {
        // points 0,2 close and 1,3 close; every merge order must join pairs first
        let pts = [0.0f64, 10.0, 0.5, 10.4];
        let d = Array2::from_shape_fn((4, 4), |(i, j)| (pts[i] - pts[j]).abs());
        for l in ALL {
            let t = hierarchical(&d, l, labels(4)).unwrap();
            assert_eq!(cut_dendrogram(&t, 2).unwrap(), vec![1, 2, 1, 2], "{l:?}");
            let first_two: Vec<(usize, usize)> = t.merges[..2].iter().map(|m| (m.left, m.right)).collect();
            assert!(first_two.contains(&(0, 2)) && first_two.contains(&(1, 3)));
        }
    }

    #[test]
    fn ties_take_the_lowest_pair() {
        let d = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let t = hierarchical(&d, Linkage::Average, labels(4)).unwrap();
        assert_eq!((t.merges[0].left, t.merges[0].right), (0, 1));
        // slot 0 now holds node 4, and (slot 0, slot 2) is the lowest tied pair
        assert_eq!((t.merges[1].left, t.merges[1].right), (4, 2));
    }

    #[test]
    fn rejects_invalid_matrices() {
        let asym = array![[0.0, 1.0], [2.0, 0.0]];
        assert!(hierarchical(&asym, Linkage::Ward, labels(2)).is_err());
        let neg = array![[0.0, -1.0], [-1.0, 0.0]];
        assert!(hierarchical(&neg, Linkage::Ward, labels(2)).is_err());
        let diag = array![[1.0, 1.0], [1.0, 0.0]];
        assert!(hierarchical(&diag, Linkage::Ward, labels(2)).is_err());
        let ok = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(hierarchical(&ok, Linkage::Ward, labels(3)).is_err());
    }

    #[test]
    fn cut_extremes() {
        let d = array![[0.0, 1.0, 4.0], [1.0, 0.0, 3.0], [4.0, 3.0, 0.0]];
        let t = hierarchical(&d, Linkage::Complete, labels(3)).unwrap();
        assert_eq!(cut_dendrogram(&t, 1).unwrap(), vec![1, 1, 1]);
        assert_eq!(cut_dendrogram(&t, 3).unwrap(), vec![1, 2, 3]);
        assert!(cut_dendrogram(&t, 0).is_err());
        assert!(cut_dendrogram(&t, 4).is_err());
    }

    #[test]
    fn json_round_trip_and_newick_shape() {
        let d = array![[0.0, 1.0, 4.0], [1.0, 0.0, 3.0], [4.0, 3.0, 0.0]];
        let t = hierarchical(&d, Linkage::Average, vec!["a b".into(), "c".into(), "d".into()]).unwrap();
        let back: Dendrogram = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.to_newick(), "((a_b:1,c:1):2.5,d:3.5);");
    }

    proptest! {
        #[test]
        fn heights_are_monotone(pts in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 2), 2..20)) {
            let n = pts.len();
            let d = Array2::from_shape_fn((n, n), |(i, j)| {
                pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            });
            for l in ALL {
                let t = hierarchical(&d, l, labels(n)).unwrap();
                prop_assert_eq!(t.merges.len(), n - 1);
                for w in t.merges.windows(2) {
                    prop_assert!(w[1].height >= w[0].height - 1e-12, "{:?} {:?}", l, t.merges);
                }
                // each node is consumed exactly once
                let mut used = vec![0; 2 * n - 1];
                for m in &t.merges {
                    used[m.left] += 1;
                    used[m.right] += 1;
                }
                prop_assert!(used[..2 * n - 2].iter().all(|&c| c == 1));
                prop_assert_eq!(t.merges.last().unwrap().size, n);
            }
        }
    }
}
