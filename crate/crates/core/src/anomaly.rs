//! Per-entity anomalies in the progression from series X to series Y.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CountPanel;

/// Which Y date is paired with X date `t`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagDirection {
    /// `Aff_Y(t + tau)`.
    #[default]
    Forward,
    /// `Aff_Y(t - tau)`.
    Backward,
}

impl LagDirection {
    pub fn paired(self, t: usize, tau: i64, len: usize) -> Option<usize> {
        let p = match self {
            LagDirection::Forward => t as i64 + tau,
            LagDirection::Backward => t as i64 - tau,
        };
        (0..len as i64).contains(&p).then_some(p as usize)
    }
}

/// Entities whose X count on `as_of` reaches `threshold`, in panel order.
pub fn filter_entities(panel_x: &CountPanel, threshold: f64, as_of: usize) -> Result<Vec<usize>> {
    if as_of >= panel_x.n_dates() {
        return Err(Error::domain(format!(
            "as-of index {as_of} outside the {} dates",
            panel_x.n_dates()
        )));
    }
    let keep: Vec<usize> = (0..panel_x.n_entities())
        .filter(|&i| panel_x.value(i, as_of) >= threshold)
        .collect();
    if keep.is_empty() {
        return Err(Error::domain(format!(
            "no entity reaches {threshold} on {}; lower the filter threshold",
            panel_x.dates()[as_of]
        )));
    }
    Ok(keep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InconsistencyMatrix {
    pub values: Array2<f64>,
    /// Index of the X date.
    pub x_date: usize,
    /// Index of the paired Y date.
    pub y_date: usize,
    pub tau: i64,
    /// Panel indices of the rows/columns.
    pub subset: Vec<usize>,
}

pub fn inconsistency(
    aff_x: &[Array2<f64>],
    aff_y: &[Array2<f64>],
    tau: i64,
    t: usize,
    subset: &[usize],
    direction: LagDirection,
) -> Result<InconsistencyMatrix> {
    if subset.is_empty() {
        return Err(Error::domain("empty entity subset"));
    }
    if t >= aff_x.len() {
        return Err(Error::domain(format!("date index {t} outside {} dates", aff_x.len())));
    }
    let y_date = direction
        .paired(t, tau, aff_y.len())
        .ok_or_else(|| Error::domain(format!("date index {t} paired at lag {tau} falls outside the series")))?;
    let (ax, ay) = (&aff_x[t], &aff_y[y_date]);
    if ax.dim() != ay.dim() {
        return Err(Error::domain("affinity matrices differ in size"));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= ax.nrows()) {
        return Err(Error::domain(format!("entity index {bad} out of range")));
    }
    let m = subset.len();
    let values = Array2::from_shape_fn((m, m), |(a, b)| {
        let (i, j) = (subset[a], subset[b]);
        (ax[[i, j]] - ay[[i, j]]).abs()
    });
    Ok(InconsistencyMatrix {
        values,
        x_date: t,
        y_date,
        tau,
        subset: subset.to_vec(),
    })
}

/// Column sums of the inconsistency matrix, one per subset entity.
pub fn anomaly_scores(inc: &InconsistencyMatrix) -> Vec<f64> {
    inc.values.columns().into_iter().map(|c| c.sum()).collect()
}

/// `(position, score)` sorted by descending score; ties keep position order.
pub fn rank_scores(scores: &[f64]) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LdrEntry {
    pub entity: usize,
    pub value: f64,
    /// The denominator sits at the preprocessing floor of 1.
    pub floored: bool,
}

/// `y(t) / x(t - tau)` for every entity.
pub fn ldr(panel_x: &CountPanel, panel_y: &CountPanel, tau: i64, t: usize) -> Result<Vec<LdrEntry>> {
    if panel_x.n_dates() != panel_y.n_dates() || panel_x.n_entities() != panel_y.n_entities() {
        return Err(Error::domain("panels are not aligned"));
    }
    if t >= panel_y.n_dates() {
        return Err(Error::domain(format!(
            "date index {t} outside {} dates",
            panel_y.n_dates()
        )));
    }
    let src = t as i64 - tau;
    if src < 0 || src >= panel_x.n_dates() as i64 {
        return Err(Error::domain(format!(
            "lag-adjusted rate needs date index {t} > lag {tau}"
        )));
    }
    let src = src as usize;
    Ok((0..panel_x.n_entities())
        .map(|i| {
            let denom = panel_x.value(i, src);
            LdrEntry {
                entity: i,
                value: panel_y.value(i, t) / denom,
                floored: denom <= 1.0,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub x_date: usize,
    pub y_date: usize,
    /// `(panel index, score)` of the top entities, most anomalous first.
    pub ranked: Vec<(usize, f64)>,
}

pub fn anomaly_timeline(
    aff_x: &[Array2<f64>],
    aff_y: &[Array2<f64>],
    tau: i64,
    dates: &[usize],
    subset: &[usize],
    top_n: usize,
    direction: LagDirection,
) -> Result<Vec<TimelineRow>> {
    dates
        .iter()
        .map(|&t| {
            let inc = inconsistency(aff_x, aff_y, tau, t, subset, direction)?;
            let scores = anomaly_scores(&inc);
            let ranked = rank_scores(&scores)
                .into_iter()
                .take(top_n)
                .map(|(pos, s)| (subset[pos], s))
                .collect();
            Ok(TimelineRow {
                x_date: inc.x_date,
                y_date: inc.y_date,
                ranked,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrices::{affinity, distance_matrix_1d};
    use chrono::NaiveDate;
    use ndarray::array;
    use proptest::prelude::*;

    fn panel(values: Array2<f64>) -> CountPanel {
        let n = values.nrows();
        let ents = (0..n).map(|i| format!("E{i:02}")).collect();
        let dates = NaiveDate::from_ymd_opt(2020, 3, 1)
            .unwrap()
            .iter_days()
            .take(values.ncols())
            .collect();
        CountPanel::new(ents, dates, values).unwrap()
    }

    #[test]
    fn filter_examples() {
        let p = panel(array![[1.0, 10.0], [1.0, 6000.0], [1.0, 5000.0]]);
        assert_eq!(filter_entities(&p, 0.0, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(filter_entities(&p, 5000.0, 1).unwrap(), vec![1, 2]);
        assert!(filter_entities(&p, 1e9, 1).is_err());
        assert!(filter_entities(&p, 0.0, 2).is_err());
    }

    #[test]
    fn identical_affinities_are_consistent() {
        let a = affinity(&distance_matrix_1d(&[0.0, 1.0, 3.0]));
        let inc = inconsistency(
            std::slice::from_ref(&a),
            std::slice::from_ref(&a),
            0,
            0,
            &[0, 1, 2],
            LagDirection::Forward,
        )
        .unwrap();
        assert!(inc.values.iter().all(|v| *v == 0.0));
        assert!(anomaly_scores(&inc).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ones_against_identity() {
        let ones = Array2::ones((3, 3));
        let ident = Array2::eye(3);
        let inc = inconsistency(
            &[ones.clone(), ones],
            &[ident.clone(), ident],
            1,
            0,
            &[0, 1, 2],
            LagDirection::Forward,
        )
        .unwrap();
        assert_eq!(inc.y_date, 1);
        assert_eq!(inc.values, Array2::<f64>::ones((3, 3)) - Array2::<f64>::eye(3));
        assert_eq!(anomaly_scores(&inc), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn out_of_range_pairing_fails() {
        let a = vec![Array2::ones((2, 2)); 3];
        assert!(inconsistency(&a, &a, 2, 1, &[0, 1], LagDirection::Forward).is_err());
        assert!(inconsistency(&a, &a, 2, 2, &[0, 1], LagDirection::Backward).is_ok());
        assert!(inconsistency(&a, &a, 0, 0, &[], LagDirection::Forward).is_err());
    }

    #[test]
    fn ldr_examples() {
        let x = panel(array![[100.0, 200.0, 400.0], [50.0, 50.0, 50.0]]);
        let y = panel(array![[1.0, 1.0, 1.0], [1.0, 2.0, 30.0]]);
        let r = ldr(&x, &y, 2, 2).unwrap();
        assert_eq!(r[0].value, 0.01);
        assert_eq!(r[1].value, 0.6);
        assert!(!r[0].floored);
        assert!(ldr(&x, &y, 2, 1).is_err());
        let floor = panel(array![[1.0, 1.0], [3.0, 3.0]]);
        assert!(ldr(&floor, &floor, 1, 1).unwrap()[0].floored);
    }

    #[test]
    fn timeline_ties_are_alphabetical() {
        let a = vec![affinity(&distance_matrix_1d(&[0.0, 2.0, 5.0, 1.0])); 4];
        let rows = anomaly_timeline(&a, &a, 1, &[0, 1, 2], &[0, 1, 2, 3], 3, LagDirection::Forward).unwrap();
        for row in rows {
            assert_eq!(row.ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        }
    }

    #[test]
    fn distorted_entity_ranks_first() {
        let logs = [1.0, 2.0, 3.5, 4.0, 6.0];
        let mut distorted = logs;
        distorted[2] += 100f64.ln();
        let ax = vec![affinity(&distance_matrix_1d(&logs))];
        let ay = vec![affinity(&distance_matrix_1d(&distorted))];
        let inc = inconsistency(&ax, &ay, 0, 0, &[0, 1, 2, 3, 4], LagDirection::Forward).unwrap();
        // the distorted row and column carry the largest sums
        let scores = anomaly_scores(&inc);
        let rows = anomaly_timeline(&ax, &ay, 0, &[0], &[0, 1, 2, 3, 4], 5, LagDirection::Forward).unwrap();
        assert_eq!(rows[0].ranked[0].0, 2);
        assert!(scores.iter().enumerate().all(|(i, s)| i == 2 || *s < scores[2]));
    }

    proptest! {
        #[test]
        fn inconsistency_bounds(a in proptest::collection::vec(0.0f64..10.0, 5), b in proptest::collection::vec(0.0f64..10.0, 5)) {
            let ax = vec![affinity(&distance_matrix_1d(&a))];
            let ay = vec![affinity(&distance_matrix_1d(&b))];
            let inc = inconsistency(&ax, &ay, 0, 0, &[0, 1, 2, 3, 4], LagDirection::Forward).unwrap();
            for i in 0..5 {
                prop_assert_eq!(inc.values[[i, i]], 0.0);
                for j in 0..5 {
                    prop_assert_eq!(inc.values[[i, j]], inc.values[[j, i]]);
                    prop_assert!((0.0..=1.0).contains(&inc.values[[i, j]]));
                }
            }
            let ranked = rank_scores(&anomaly_scores(&inc));
            let mut ids: Vec<usize> = ranked.iter().map(|r| r.0).collect();
            ids.sort();
            prop_assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        }

        #[test]
        fn score_ignores_order_of_others(a in proptest::collection::vec(0.0f64..10.0, 4), b in proptest::collection::vec(0.0f64..10.0, 4)) {
            let ax = vec![affinity(&distance_matrix_1d(&a))];
            let ay = vec![affinity(&distance_matrix_1d(&b))];
            let s1 = anomaly_scores(&inconsistency(&ax, &ay, 0, 0, &[0, 1, 2, 3], LagDirection::Forward).unwrap());
            let s2 = anomaly_scores(&inconsistency(&ax, &ay, 0, 0, &[0, 3, 1, 2], LagDirection::Forward).unwrap());
            prop_assert!((s1[0] - s2[0]).abs() < 1e-12);
        }
    }
}
