//! In-memory end-to-end runs: per-series cluster evolution, the offset grid,
//! and the anomaly stage. File output lives in [`crate::report`].

use chrono::NaiveDate;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::anomaly::{
    anomaly_scores, filter_entities, inconsistency, ldr, rank_scores, InconsistencyMatrix, LagDirection, LdrEntry,
    TimelineRow,
};
use crate::cluster::{ckmeans_1d, lloyd_kmeans, Dendrogram};
use crate::config::{Mode, RunConfig, Series};
use crate::error::{Error, Result, StageExt};
use crate::ingest::{log_transform, parse_csv, parse_series_csv, rolling_window, CountPanel, LogPanel, RollingPanel};
use crate::kselect::{index_scores, smooth_k, KEstimate, Points, SmoothedK};
use crate::matrices::{
    adjacency, affinity, cluster_evolution_dendrogram, date_distances_from_labels, detect_skip, distance_matrix,
    distance_matrix_1d, gaussian_affinity, MatrixKind,
};
use crate::offsets::{consistency_offset, series_evolution_offset, OffsetResult};

/// The points clustered on each date.
#[derive(Debug, Clone)]
pub enum Geometry {
    Daily(LogPanel),
    Rolling(RollingPanel),
}

impl Geometry {
    pub fn new(counts: &CountPanel, mode: Mode, window: usize) -> Result<Self> {
        let logs = log_transform(counts)?;
        Ok(match mode {
            Mode::Daily => Geometry::Daily(logs),
            Mode::Rolling => Geometry::Rolling(rolling_window(&logs, window)?),
        })
    }

    pub fn n_dates(&self) -> usize {
        match self {
            Geometry::Daily(p) => p.n_dates(),
            Geometry::Rolling(p) => p.dates().len(),
        }
    }

    fn scalar_day(&self, t: usize) -> Vec<f64> {
        match self {
            Geometry::Daily(p) => p.day(t).to_vec(),
            Geometry::Rolling(_) => unreachable!("scalar view of rolling data"),
        }
    }

    fn vector_day(&self, t: usize) -> Vec<Vec<f64>> {
        match self {
            Geometry::Daily(p) => p.day(t).iter().map(|v| vec![*v]).collect(),
            Geometry::Rolling(p) => p.day(t).rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn distance(&self, t: usize) -> Array2<f64> {
        match self {
            Geometry::Daily(_) => distance_matrix_1d(&self.scalar_day(t)),
            Geometry::Rolling(_) => distance_matrix(&self.vector_day(t)),
        }
    }

    pub fn estimate(&self, t: usize, cfg: &RunConfig) -> Result<KEstimate> {
        match self {
            Geometry::Daily(_) => index_scores(Points::Scalar(&self.scalar_day(t)), cfg.k_range(), &cfg.lloyd_for(t)),
            Geometry::Rolling(_) => index_scores(Points::Vector(&self.vector_day(t)), cfg.k_range(), &cfg.lloyd_for(t)),
        }
    }

    /// Ordered labels for date `t` with `k` clusters, capped at the number of
    /// distinct points on that date.
    pub fn labels(&self, t: usize, k: usize, cfg: &RunConfig) -> Result<Vec<usize>> {
        match self {
            Geometry::Daily(_) => {
                let v = self.scalar_day(t);
                let k = k.min(Points::Scalar(&v).distinct()).max(1);
                Ok(ckmeans_1d(&v, k)?.labels)
            }
            Geometry::Rolling(_) => {
                let v = self.vector_day(t);
                let k = k.min(Points::Vector(&v).distinct()).max(1);
                Ok(lloyd_kmeans(&v, k, &cfg.lloyd_for(t))?.partition.labels)
            }
        }
    }

    /// The matrix of `kind` on date `t` given that date's labels.
    pub fn matrix(&self, t: usize, labels: &[usize], kind: MatrixKind) -> Array2<f64> {
        match kind {
            MatrixKind::Adjacency => adjacency(labels),
            MatrixKind::Distance => self.distance(t),
            MatrixKind::Affinity => affinity(&self.distance(t)),
            MatrixKind::Gaussian(m) => gaussian_affinity(&self.distance(t), m as f64),
        }
    }
}

/// Cluster evolution of one series over all dates.
#[derive(Debug, Clone)]
pub struct SeriesRun {
    pub series: Series,
    pub counts: CountPanel,
    pub geometry: Geometry,
    pub estimates: Vec<KEstimate>,
    pub smoothed: SmoothedK,
    /// `labels[t][i]` is entity `i`'s cluster on date `t`.
    pub labels: Vec<Vec<usize>>,
    pub date_distances: Array2<f64>,
    pub skip: usize,
    pub dendrogram: Dendrogram,
}

impl SeriesRun {
    pub fn dates(&self) -> &[NaiveDate] {
        self.counts.dates()
    }

    pub fn entities(&self) -> &[String] {
        self.counts.entities()
    }

    /// Matrices of `kind` for dates `start..` using the given labels (indexed from `start`).
    pub fn matrix_sequence(&self, kind: MatrixKind, start: usize, labels: &[Vec<usize>]) -> Vec<Array2<f64>> {
        (start..self.geometry.n_dates())
            .into_par_iter()
            .map(|t| self.geometry.matrix(t, &labels[t - start], kind))
            .collect()
    }
}

/// Per-date index scan, run in parallel over dates.
pub fn estimate_days(geometry: &Geometry, cfg: &RunConfig) -> Result<Vec<KEstimate>> {
    (0..geometry.n_dates())
        .into_par_iter()
        .map(|t| geometry.estimate(t, cfg))
        .collect()
}

/// Labels for dates `start..` after re-smoothing the raw averages from `start`.
pub fn partitions_from(
    geometry: &Geometry,
    estimates: &[KEstimate],
    start: usize,
    cfg: &RunConfig,
) -> Result<(SmoothedK, Vec<Vec<usize>>)> {
    let raw: Vec<f64> = estimates[start..].iter().map(|e| e.k_av).collect();
    let smoothed = smooth_k(&raw, cfg.alpha)?;
    let labels = (start..geometry.n_dates())
        .into_par_iter()
        .map(|t| geometry.labels(t, smoothed.k_hat[t - start], cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((smoothed, labels))
}

/// Completes a series run from already computed index estimates.
pub fn series_from_estimates(
    series: Series,
    counts: CountPanel,
    estimates: Vec<KEstimate>,
    cfg: &RunConfig,
) -> Result<SeriesRun> {
    let geometry = Geometry::new(&counts, cfg.mode, cfg.window).stage("ingest")?;
    if estimates.len() != geometry.n_dates() {
        return Err(Error::Invariant(format!(
            "{} estimates for {} dates",
            estimates.len(),
            geometry.n_dates()
        )));
    }
    let (smoothed, labels) = partitions_from(&geometry, &estimates, 0, cfg).stage("cluster")?;
    let date_distances = date_distances_from_labels(&labels).stage("matrices")?;
    let skip = cfg.skip_for(series).unwrap_or_else(|| detect_skip(&date_distances));
    let dendrogram =
        cluster_evolution_dendrogram(&date_distances, skip, counts.dates(), cfg.linkage).stage("dendrogram")?;
    Ok(SeriesRun {
        series,
        counts,
        geometry,
        estimates,
        smoothed,
        labels,
        date_distances,
        skip,
        dendrogram,
    })
}

pub fn analyze_series(series: Series, counts: CountPanel, cfg: &RunConfig) -> Result<SeriesRun> {
    let geometry = Geometry::new(&counts, cfg.mode, cfg.window).stage("ingest")?;
    let estimates = estimate_days(&geometry, cfg).stage("kselect")?;
    series_from_estimates(series, counts, estimates, cfg)
}

pub fn load_panels(cfg: &RunConfig) -> Result<(CountPanel, CountPanel)> {
    parse_csv(&cfg.input, &cfg.schema, &cfg.ingest_options()).stage("ingest")
}

pub fn load_series(cfg: &RunConfig, series: Series) -> Result<CountPanel> {
    let column = match series {
        Series::X => &cfg.schema.x,
        Series::Y => &cfg.schema.y,
    };
    let file = std::fs::File::open(&cfg.input).map_err(|e| Error::io(&cfg.input, e));
    file.and_then(|f| parse_series_csv(f, &cfg.schema.date, &cfg.schema.entity, column, &cfg.ingest_options()))
        .stage("ingest")
}

/// Matrix kinds compared by the consistency offset, in report order.
pub fn consistency_kinds(cfg: &RunConfig) -> Vec<MatrixKind> {
    let mut kinds = vec![MatrixKind::Affinity];
    kinds.extend(cfg.m_values.iter().map(|&m| MatrixKind::Gaussian(m)));
    kinds.push(MatrixKind::Adjacency);
    kinds
}

/// Offsets for one start date of the grid.
#[derive(Debug, Clone, Serialize)]
pub struct OffsetRow {
    pub start_date: NaiveDate,
    pub series_evolution: OffsetResult,
    pub consistency: Vec<OffsetResult>,
}

impl OffsetRow {
    pub fn consistency_for(&self, kind: MatrixKind) -> Option<&OffsetResult> {
        self.consistency
            .iter()
            .find(|r| r.kind == crate::offsets::OffsetKind::Consistency(kind))
    }
}

fn start_indices(x: &SeriesRun, cfg: &RunConfig) -> Result<Vec<usize>> {
    if cfg.offset_starts.is_empty() {
        return Ok(vec![0]);
    }
    let last = x.dates().len() - 1;
    cfg.offset_starts
        .iter()
        .map(|&d| match x.counts.date_index(d) {
            Some(i) if i < last => Ok(i),
            _ => Err(Error::config(format!(
                "offset start {d} must fall before the last date of the data"
            ))),
        })
        .collect()
}

/// Both offsets for each configured start date. Later starts re-smooth the
/// cluster counts from that date and rebuild partitions and matrices.
pub fn offset_grid(x: &SeriesRun, y: &SeriesRun, cfg: &RunConfig) -> Result<Vec<OffsetRow>> {
    if x.dates() != y.dates() || x.entities() != y.entities() {
        return Err(Error::Invariant("series are not aligned".into()));
    }
    let kinds = consistency_kinds(cfg);
    let mut rows = Vec::new();
    for s in start_indices(x, cfg)? {
        let start_date = x.dates()[s];
        let (sx, lx, sy, ly) = if s == 0 {
            (
                x.smoothed.clone(),
                x.labels.clone(),
                y.smoothed.clone(),
                y.labels.clone(),
            )
        } else {
            let (sx, lx) = partitions_from(&x.geometry, &x.estimates, s, cfg).stage("cluster")?;
            let (sy, ly) = partitions_from(&y.geometry, &y.estimates, s, cfg).stage("cluster")?;
            (sx, lx, sy, ly)
        };
        let kx: Vec<f64> = sx.k_hat.iter().map(|&k| k as f64).collect();
        let ky: Vec<f64> = sy.k_hat.iter().map(|&k| k as f64).collect();
        let mut series_evolution =
            series_evolution_offset(&kx, &ky, cfg.delta_range(), cfg.normalization).stage("offsets")?;
        series_evolution.start_date = Some(start_date);
        let mut consistency = Vec::with_capacity(kinds.len());
        for &kind in &kinds {
            let mx = x.matrix_sequence(kind, s, &lx);
            let my = y.matrix_sequence(kind, s, &ly);
            let mut r = consistency_offset(&mx, &my, cfg.tau_range(), kind).stage("offsets")?;
            r.start_date = Some(start_date);
            consistency.push(r);
        }
        log::info!(
            "start {start_date}: delta {} tau(aff) {}",
            series_evolution.offset,
            consistency[0].offset
        );
        rows.push(OffsetRow {
            start_date,
            series_evolution,
            consistency,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct AnomalyRun {
    pub tau: i64,
    pub direction: LagDirection,
    /// Entities passing the filter, as panel indices.
    pub subset: Vec<usize>,
    pub as_of: NaiveDate,
    pub rows: Vec<TimelineRow>,
    /// Full score vectors (over `subset`) for each row.
    pub scores: Vec<Vec<f64>>,
    pub inconsistency: Vec<InconsistencyMatrix>,
    /// Lag-adjusted rates at each row's Y date, when defined.
    pub ldr: Vec<Option<Vec<LdrEntry>>>,
}

/// Case dates reported when none are configured: ten evenly spaced dates
/// whose partner date lies inside the data.
fn default_anomaly_dates(t_len: usize, tau: i64, direction: LagDirection) -> Vec<usize> {
    let valid: Vec<usize> = (0..t_len)
        .filter(|&t| direction.paired(t, tau, t_len).is_some())
        .collect();
    if valid.len() <= 10 {
        return valid;
    }
    let mut out: Vec<usize> = (0..10).map(|j| valid[j * (valid.len() - 1) / 9]).collect();
    out.dedup();
    out
}

pub fn anomaly_stage(x: &SeriesRun, y: &SeriesRun, tau: i64, cfg: &RunConfig) -> Result<AnomalyRun> {
    let t_len = x.dates().len();
    let as_of_idx = match cfg.as_of {
        None => t_len - 1,
        Some(d) => x
            .counts
            .date_index(d)
            .ok_or_else(|| Error::config(format!("as-of date {d} outside the data")))?,
    };
    let subset = filter_entities(&x.counts, cfg.threshold, as_of_idx).stage("anomaly")?;
    let dates: Vec<usize> = if cfg.anomaly_dates.is_empty() {
        default_anomaly_dates(t_len, tau, cfg.lag_direction)
    } else {
        cfg.anomaly_dates
            .iter()
            .map(|&d| {
                x.counts
                    .date_index(d)
                    .ok_or_else(|| Error::config(format!("anomaly date {d} outside the data")))
            })
            .collect::<Result<_>>()?
    };
    if dates.is_empty() {
        return Err(Error::domain(format!("no date can be paired at lag {tau}")).at_stage("anomaly"));
    }
    // affinities only for the dates that are compared
    let mut needed: Vec<usize> = Vec::new();
    for &t in &dates {
        needed.push(t);
        if let Some(u) = cfg.lag_direction.paired(t, tau, t_len) {
            needed.push(u);
        }
    }
    needed.sort_unstable();
    needed.dedup();
    let mut aff_x = vec![Array2::zeros((0, 0)); t_len];
    let mut aff_y = vec![Array2::zeros((0, 0)); t_len];
    let built: Vec<(usize, Array2<f64>, Array2<f64>)> = needed
        .par_iter()
        .map(|&t| {
            (
                t,
                x.geometry.matrix(t, &x.labels[t], MatrixKind::Affinity),
                y.geometry.matrix(t, &y.labels[t], MatrixKind::Affinity),
            )
        })
        .collect();
    for (t, ax, ay) in built {
        aff_x[t] = ax;
        aff_y[t] = ay;
    }

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut incs = Vec::new();
    let mut ldrs = Vec::new();
    for &t in &dates {
        let inc = inconsistency(&aff_x, &aff_y, tau, t, &subset, cfg.lag_direction).stage("anomaly")?;
        let s = anomaly_scores(&inc);
        let ranked = rank_scores(&s)
            .into_iter()
            .take(cfg.top_n)
            .map(|(pos, v)| (subset[pos], v))
            .collect();
        rows.push(TimelineRow {
            x_date: inc.x_date,
            y_date: inc.y_date,
            ranked,
        });
        ldrs.push(ldr(&x.counts, &y.counts, tau, inc.y_date).ok());
        scores.push(s);
        incs.push(inc);
    }
    Ok(AnomalyRun {
        tau,
        direction: cfg.lag_direction,
        subset,
        as_of: x.dates()[as_of_idx],
        rows,
        scores,
        inconsistency: incs,
        ldr: ldrs,
    })
}

#[derive(Debug, Clone)]
pub struct DualRun {
    pub x: SeriesRun,
    pub y: SeriesRun,
    pub offsets: Vec<OffsetRow>,
    pub anomalies: AnomalyRun,
}

/// Lag used by the anomaly stage: the configured value, else the affinity
/// consistency offset of the first grid row.
pub fn anomaly_lag(offsets: &[OffsetRow], cfg: &RunConfig) -> Result<i64> {
    if let Some(t) = cfg.tau {
        return Ok(t);
    }
    offsets
        .first()
        .and_then(|r| r.consistency_for(MatrixKind::Affinity))
        .map(|r| r.offset)
        .ok_or_else(|| Error::Invariant("no affinity offset available".into()))
}

pub fn dual_from_series(x: SeriesRun, y: SeriesRun, cfg: &RunConfig) -> Result<DualRun> {
    let offsets = offset_grid(&x, &y, cfg)?;
    let tau = anomaly_lag(&offsets, cfg)?;
    let anomalies = anomaly_stage(&x, &y, tau, cfg)?;
    Ok(DualRun {
        x,
        y,
        offsets,
        anomalies,
    })
}

pub fn dual_analysis(px: CountPanel, py: CountPanel, cfg: &RunConfig) -> Result<DualRun> {
    cfg.validate()?;
    let x = analyze_series(Series::X, px, cfg)?;
    let y = analyze_series(Series::Y, py, cfg)?;
    dual_from_series(x, y, cfg)
}
