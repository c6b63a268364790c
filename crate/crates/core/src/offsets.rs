//! Temporal offsets between the two series.
//!
//! The series evolution offset aligns the smoothed cluster-count curves in
//! L1; the cluster consistency offset aligns the per-date matrices by the
//! mean Frobenius difference over all date pairs at that lag. A positive
//! offset means series Y trails series X.

use std::fmt;

use chrono::NaiveDate;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::{frobenius_distance, MatrixKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRange {
    pub min: i64,
    pub max: i64,
}

impl ScanRange {
    pub fn new(min: i64, max: i64) -> Result<Self> {
        if min > max {
            return Err(Error::config(format!("empty scan range {min}..={max}")));
        }
        Ok(ScanRange { min, max })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Mean over the overlapping dates.
    #[default]
    Normalized,
    /// Plain sum over the overlap.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetKind {
    SeriesEvolution,
    Consistency(MatrixKind),
}

impl fmt::Display for OffsetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffsetKind::SeriesEvolution => f.write_str("series_evolution"),
            OffsetKind::Consistency(k) => write!(f, "consistency:{k}"),
        }
    }
}

impl Serialize for OffsetKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetResult {
    pub kind: OffsetKind,
    pub offset: i64,
    pub objective_min: f64,
    /// `(offset, objective)` for every evaluated candidate, ascending.
    pub objective_curve: Vec<(i64, f64)>,
    pub scan: ScanRange,
    pub start_date: Option<NaiveDate>,
}

fn pick(kind: OffsetKind, scan: ScanRange, curve: Vec<(i64, f64)>) -> Result<OffsetResult> {
    let mut best: Option<(i64, f64)> = None;
    for &(o, v) in &curve {
        let better = match best {
            None => true,
            Some((bo, bv)) => v < bv || (v == bv && (o.abs(), o) < (bo.abs(), bo)),
        };
        if better {
            best = Some((o, v));
        }
    }
    let (offset, objective_min) = best.ok_or_else(|| {
        Error::domain(format!(
            "no candidate offset in {}..={} overlaps the data",
            scan.min, scan.max
        ))
    })?;
    Ok(OffsetResult {
        kind,
        offset,
        objective_min,
        objective_curve: curve,
        scan,
        start_date: None,
    })
}

/// L1 distance between `kx(t)` and `ky(t + offset)` over their overlap.
pub fn series_evolution_objective(kx: &[f64], ky: &[f64], offset: i64, mode: Normalization) -> Option<f64> {
    let t_len = kx.len() as i64;
    let lo = 0.max(-offset);
    let hi = t_len.min(t_len - offset);
    if hi <= lo {
        return None;
    }
    let sum: f64 = (lo..hi)
        .map(|t| (kx[t as usize] - ky[(t + offset) as usize]).abs())
        .sum();
    Some(match mode {
        Normalization::Normalized => sum / (hi - lo) as f64,
        Normalization::Unnormalized => sum,
    })
}

pub fn series_evolution_offset(kx: &[f64], ky: &[f64], scan: ScanRange, mode: Normalization) -> Result<OffsetResult> {
    if kx.len() != ky.len() {
        return Err(Error::domain(format!(
            "cluster-count curves differ in length ({} vs {})",
            kx.len(),
            ky.len()
        )));
    }
    let curve = (scan.min..=scan.max)
        .filter_map(|o| series_evolution_objective(kx, ky, o, mode).map(|v| (o, v)))
        .collect();
    pick(OffsetKind::SeriesEvolution, scan, curve)
}

/// Mean of `||mx(s) - my(s + offset)||_F` over every valid `s`.
pub fn consistency_objective(mx: &[Array2<f64>], my: &[Array2<f64>], offset: i64) -> Option<f64> {
    let t_len = mx.len() as i64;
    if offset.abs() >= t_len {
        return None;
    }
    let lo = 0.max(-offset);
    let hi = t_len.min(t_len - offset);
    let sum: f64 = (lo..hi)
        .map(|s| frobenius_distance(&mx[s as usize], &my[(s + offset) as usize]))
        .sum();
    Some(sum / (t_len - offset.abs()) as f64)
}

pub fn consistency_offset(
    mx: &[Array2<f64>],
    my: &[Array2<f64>],
    scan: ScanRange,
    kind: MatrixKind,
) -> Result<OffsetResult> {
    if mx.len() != my.len() {
        return Err(Error::domain(format!(
            "matrix sequences differ in length ({} vs {})",
            mx.len(),
            my.len()
        )));
    }
    if let Some(first) = mx.first() {
        if mx.iter().chain(my).any(|m| m.dim() != first.dim()) {
            return Err(Error::domain("matrix sequences mix sizes"));
        }
    }
    let curve: Vec<(i64, f64)> = (scan.min..=scan.max)
        .into_par_iter()
        .filter_map(|o| consistency_objective(mx, my, o).map(|v| (o, v)))
        .collect();
    pick(OffsetKind::Consistency(kind), scan, curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveShape {
    /// Every candidate has the same objective.
    Plateau,
    /// Number of local minima (runs of equal values count once).
    LocalMinima(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveReport {
    pub rows: Vec<(i64, f64)>,
    pub shape: CurveShape,
}

impl CurveReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("offset,objective\n");
        for (o, v) in &self.rows {
            s.push_str(&format!("{o},{v}\n"));
        }
        s
    }
}

pub fn offset_curve_report(result: &OffsetResult) -> CurveReport {
    let mut rows = result.objective_curve.clone();
    rows.sort_by_key(|r| r.0);
    let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let shape = if vals.windows(2).all(|w| w[0] == w[1]) {
        CurveShape::Plateau
    } else {
        // collapse equal neighbours, then count strict minima
        let mut runs: Vec<f64> = Vec::new();
        for v in vals {
            if runs.last() != Some(&v) {
                runs.push(v);
            }
        }
        let count = (0..runs.len())
            .filter(|&i| (i == 0 || runs[i - 1] > runs[i]) && (i + 1 == runs.len() || runs[i + 1] > runs[i]))
            .count();
        CurveShape::LocalMinima(count)
    };
    CurveReport { rows, shape }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrices::{affinity, distance_matrix_1d};
    use proptest::prelude::*;

    fn planted(len: usize, lag: usize) -> (Vec<f64>, Vec<f64>) {
        let kx: Vec<f64> = (0..len)
            .map(|t| (2.0 + 10.0 * ((t as f64) / 9.0).sin().abs()).round())
            .collect();
        let ky: Vec<f64> = (0..len).map(|t| kx[t.saturating_sub(lag)]).collect();
        (kx, ky)
    }

    #[test]
    fn series_offset_recovers_planted_shift() {
        for lag in [0usize, 3, 11, 25] {
            let (kx, ky) = planted(90, lag);
            for mode in [Normalization::Normalized, Normalization::Unnormalized] {
                let r = series_evolution_offset(&kx, &ky, ScanRange::new(0, 40).unwrap(), mode).unwrap();
                assert_eq!(r.offset, lag as i64);
                assert_eq!(r.objective_min, 0.0);
            }
        }
    }

    #[test]
    fn constant_curves_tie_to_zero() {
        let k = vec![4.0; 30];
        let r = series_evolution_offset(&k, &k, ScanRange::new(-5, 5).unwrap(), Normalization::Normalized).unwrap();
        assert_eq!(r.offset, 0);
        assert_eq!(offset_curve_report(&r).shape, CurveShape::Plateau);
    }

    #[test]
    fn empty_overlap_is_an_error() {
        let k = vec![1.0; 5];
        assert!(series_evolution_offset(&k, &k, ScanRange::new(5, 9).unwrap(), Normalization::Normalized).is_err());
        assert!(
            series_evolution_offset(&k, &k[..4], ScanRange::new(0, 1).unwrap(), Normalization::Normalized).is_err()
        );
        assert!(ScanRange::new(3, 1).is_err());
    }

    fn matrix_seq(len: usize, lag: usize) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let day = |t: usize| {
            let v: Vec<f64> = (0..6)
                .map(|i| ((i + 1) as f64 * 0.3 * t as f64).sin() * (i as f64 + 1.0))
                .collect();
            affinity(&distance_matrix_1d(&v))
        };
        let mx: Vec<_> = (0..len).map(day).collect();
        let my: Vec<_> = (0..len).map(|t| day(t.saturating_sub(lag))).collect();
        (mx, my)
    }

    #[test]
    fn consistency_recovers_planted_shift() {
        let (mx, my) = matrix_seq(60, 7);
        let r = consistency_offset(&mx, &my, ScanRange::new(0, 20).unwrap(), MatrixKind::Affinity).unwrap();
        assert_eq!(r.offset, 7);
        assert_eq!(r.objective_min, 0.0);
        assert_eq!(r.kind.to_string(), "consistency:aff");
    }

    #[test]
    fn rewritten_positive_form_agrees() {
        let (mx, my) = matrix_seq(40, 5);
        let t = mx.len();
        for tau in 1..20usize {
            let general = consistency_objective(&mx, &my, tau as i64).unwrap();
            let rewritten = (0..t - tau)
                .map(|s| frobenius_distance(&mx[s], &my[s + tau]))
                .sum::<f64>()
                / (t - tau) as f64;
            assert!((general - rewritten).abs() <= 1e-12);
        }
        assert!(consistency_objective(&mx, &my, 40).is_none());
        assert!(consistency_objective(&mx, &my, -39).is_some());
    }

    #[test]
    fn curve_shape_counts_minima() {
        let mk = |vals: &[f64]| OffsetResult {
            kind: OffsetKind::SeriesEvolution,
            offset: 0,
            objective_min: 0.0,
            objective_curve: vals.iter().enumerate().map(|(i, v)| (i as i64, *v)).collect(),
            scan: ScanRange {
                min: 0,
                max: vals.len() as i64 - 1,
            },
            start_date: None,
        };
        assert_eq!(
            offset_curve_report(&mk(&[3.0, 2.0, 1.0, 2.0])).shape,
            CurveShape::LocalMinima(1)
        );
        assert_eq!(
            offset_curve_report(&mk(&[1.0, 2.0, 1.0, 2.0])).shape,
            CurveShape::LocalMinima(2)
        );
        assert_eq!(
            offset_curve_report(&mk(&[3.0, 1.0, 1.0, 2.0])).shape,
            CurveShape::LocalMinima(1)
        );
        let report = offset_curve_report(&mk(&[2.0, 1.0]));
        assert_eq!(report.to_csv(), "offset,objective\n0,2\n1,1\n");
    }

    proptest! {
        #[test]
        fn consistency_ignores_entity_order(seed in 0u64..500, lag in 0usize..6) {
            let (mx, my) = matrix_seq(25, lag);
            let n = 6;
            let perm: Vec<usize> = (0..n).map(|i| (i * 5 + seed as usize) % n).collect();
            let permute = |m: &Array2<f64>| Array2::from_shape_fn((n, n), |(i, j)| m[[perm[i], perm[j]]]);
            let px: Vec<_> = mx.iter().map(permute).collect();
            let py: Vec<_> = my.iter().map(permute).collect();
            for tau in 0..10 {
                let a = consistency_objective(&mx, &my, tau).unwrap();
                let b = consistency_objective(&px, &py, tau).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
            }
        }
    }
}
