//! Output bundles: CSV/JSON reports, the stage cache, optional binary matrix
//! dumps, and a SHA-256 manifest over every file.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.toml   config.<stage>.toml for staged reruns
//! x/ y/          k_curve.csv labels.csv date_distances.csv dendrogram.json
//!                dendrogram.nwk dendrogram_cut.csv state.json [matrices_<kind>.bin]
//! offsets/       offset_curve_<kind>.csv offset_grid.csv offsets.json
//! anomalies/     anomalies.csv ldr.csv anomaly_table.json inconsistency_<date>.csv
//! checksums.sha256
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::cut_dendrogram;
use crate::config::{Mode, RunConfig, Series};
use crate::error::{Error, Result, StageExt};
use crate::ingest::{CountPanel, Schema, DATE_FORMAT};
use crate::kselect::KEstimate;
use crate::matrices::{read_matrix_records, write_matrix_csv, write_matrix_record, MatrixKind};
use crate::offsets::{consistency_offset, offset_curve_report, OffsetKind, OffsetResult, ScanRange};
use crate::pipeline::{
    analyze_series, anomaly_lag, anomaly_stage, consistency_kinds, dual_from_series, load_panels, load_series,
    offset_grid, series_from_estimates, AnomalyRun, DualRun, OffsetRow, SeriesRun,
};

pub const MANIFEST: &str = "checksums.sha256";

fn fmt_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

/// Writes files below one root directory.
pub struct Bundle {
    root: PathBuf,
}

impl Bundle {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Bundle { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn writer(&self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BufWriter::new(f))
    }

    pub fn put(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let mut w = self.writer(rel)?;
        w.write_all(bytes.as_ref())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(self.path(rel), e))
    }

    pub fn put_csv<F>(&self, rel: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut csv::Writer<BufWriter<File>>) -> Result<()>,
    {
        let mut w = csv::Writer::from_writer(self.writer(rel)?);
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io(self.path(rel), e))
    }

    pub fn put_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(e.to_string()))?;
        s.push('\n');
        self.put(rel, s)
    }

    /// Rewrites the manifest over every file currently under the root.
    pub fn finish(&self) -> Result<()> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.sort();
        let mut out = String::new();
        for rel in files.iter().filter(|r| r.as_str() != MANIFEST) {
            let path = self.path(rel);
            let mut hasher = Sha256::new();
            let mut f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut buf = vec![0u8; 1 << 16];
            loop {
                let n = f.read(&mut buf).map_err(|e| Error::io(&path, e))?;
                if n == 0 {
                    break;
                }
                hasher.update(&buf[..n]);
            }
            out.push_str(&format!("{}  {rel}\n", hex::encode(hasher.finalize())));
        }
        self.put(MANIFEST, out)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("below root");
            let parts: Vec<String> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

/// Settings that determine the per-date index scan; a cache written under
/// different settings is rejected.
#[derive(Serialize)]
struct ScanKey<'a> {
    input: &'a Path,
    schema: &'a Schema,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
    exclude: &'a [String],
    mode: Mode,
    window: usize,
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
}

fn scan_fingerprint(cfg: &RunConfig) -> String {
    let key = ScanKey {
        input: &cfg.input,
        schema: &cfg.schema,
        start: cfg.start,
        end: cfg.end,
        exclude: &cfg.exclude,
        mode: cfg.mode,
        window: cfg.window,
        k_min: cfg.k_min,
        k_max: cfg.k_max,
        seed: cfg.seed,
        restarts: cfg.restarts,
        max_iter: cfg.max_iter,
    };
    let json = serde_json::to_vec(&key).expect("plain data serializes");
    hex::encode(Sha256::digest(&json))
}

/// Cached per-date index scan of one series.
#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesState {
    pub fingerprint: String,
    pub series: Series,
    pub entities: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub estimates: Vec<KEstimate>,
}

pub fn write_series(bundle: &Bundle, run: &SeriesRun, cfg: &RunConfig) -> Result<()> {
    let dir = run.series.name();
    let dates = run.dates();

    bundle.put_csv(&format!("{dir}/k_curve.csv"), |w| {
        w.write_record([
            "date",
            "k1",
            "k2",
            "k3",
            "k4",
            "k5",
            "k6",
            "k_av",
            "k_smoothed",
            "k_hat",
        ])?;
        for (t, e) in run.estimates.iter().enumerate() {
            let mut rec = vec![fmt_date(dates[t])];
            rec.extend(e.per_index.iter().map(|k| k.to_string()));
            rec.push(e.k_av.to_string());
            rec.push(run.smoothed.smoothed[t].to_string());
            rec.push(run.smoothed.k_hat[t].to_string());
            w.write_record(&rec)?;
        }
        Ok(())
    })?;

    bundle.put_csv(&format!("{dir}/labels.csv"), |w| {
        let mut header = vec!["entity".to_string()];
        header.extend(dates.iter().map(|d| fmt_date(*d)));
        w.write_record(&header)?;
        for (i, name) in run.entities().iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(run.labels.iter().map(|l| l[i].to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;

    let date_labels: Vec<String> = dates.iter().map(|d| fmt_date(*d)).collect();
    write_matrix_csv(
        bundle.writer(&format!("{dir}/date_distances.csv"))?,
        &run.date_distances,
        &date_labels,
    )?;
    write_dendrogram(bundle, run)?;

    let state = SeriesState {
        fingerprint: scan_fingerprint(cfg),
        series: run.series,
        entities: run.entities().to_vec(),
        dates: dates.to_vec(),
        estimates: run.estimates.clone(),
    };
    bundle.put_json(&format!("{dir}/state.json"), &state)?;

    if cfg.dump_matrices {
        let mut kinds = vec![MatrixKind::Distance];
        kinds.extend(consistency_kinds(cfg));
        for kind in kinds {
            let rel = format!("{dir}/matrices_{kind}.bin");
            let mut w = bundle.writer(&rel)?;
            for (t, labels) in run.labels.iter().enumerate() {
                let m = run.geometry.matrix(t, labels, kind);
                write_matrix_record(&mut w, kind, &m).map_err(|e| Error::io(bundle.path(&rel), e))?;
            }
            w.flush().map_err(|e| Error::io(bundle.path(&rel), e))?;
        }
    }
    Ok(())
}

pub fn write_dendrogram(bundle: &Bundle, run: &SeriesRun) -> Result<()> {
    let dir = run.series.name();
    bundle.put(&format!("{dir}/dendrogram.json"), run.dendrogram.to_json()? + "\n")?;
    bundle.put(&format!("{dir}/dendrogram.nwk"), run.dendrogram.to_newick() + "\n")?;
    let leaves = run.dendrogram.leaves.len();
    let cuts: Vec<usize> = (2..=3).filter(|&k| k <= leaves).collect();
    let labels: Vec<Vec<usize>> = cuts
        .iter()
        .map(|&k| cut_dendrogram(&run.dendrogram, k))
        .collect::<Result<_>>()?;
    bundle.put_csv(&format!("{dir}/dendrogram_cut.csv"), |w| {
        let mut header = vec!["date".to_string()];
        header.extend(cuts.iter().map(|k| format!("cut{k}")));
        w.write_record(&header)?;
        for (i, leaf) in run.dendrogram.leaves.iter().enumerate() {
            let mut rec = vec![leaf.clone()];
            rec.extend(labels.iter().map(|l| l[i].to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

fn kind_file(kind: &OffsetKind) -> String {
    match kind {
        OffsetKind::SeriesEvolution => "series_evolution".into(),
        OffsetKind::Consistency(k) => k.to_string(),
    }
}

#[derive(Serialize)]
struct OffsetSummary {
    kind: String,
    offset: i64,
    objective_min: f64,
    scan: ScanRange,
    start_date: Option<NaiveDate>,
    curve_shape: crate::offsets::CurveShape,
}

fn summary(r: &OffsetResult) -> OffsetSummary {
    OffsetSummary {
        kind: r.kind.to_string(),
        offset: r.offset,
        objective_min: r.objective_min,
        scan: r.scan,
        start_date: r.start_date,
        curve_shape: offset_curve_report(r).shape,
    }
}

pub fn write_offsets(bundle: &Bundle, rows: &[OffsetRow]) -> Result<()> {
    if let Some(first) = rows.first() {
        for r in std::iter::once(&first.series_evolution).chain(&first.consistency) {
            bundle.put(
                &format!("offsets/offset_curve_{}.csv", kind_file(&r.kind)),
                offset_curve_report(r).to_csv(),
            )?;
        }
    }
    bundle.put_csv("offsets/offset_grid.csv", |w| {
        let mut header = vec!["start_date".to_string(), "series_evolution".to_string()];
        if let Some(first) = rows.first() {
            header.extend(first.consistency.iter().map(|r| kind_file(&r.kind)));
        }
        w.write_record(&header)?;
        for row in rows {
            let mut rec = vec![fmt_date(row.start_date), row.series_evolution.offset.to_string()];
            rec.extend(row.consistency.iter().map(|r| r.offset.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    let all: Vec<OffsetSummary> = rows
        .iter()
        .flat_map(|row| std::iter::once(&row.series_evolution).chain(&row.consistency))
        .map(summary)
        .collect();
    bundle.put_json("offsets/offsets.json", &all)
}

#[derive(Serialize)]
struct AnomalyTableRow {
    x_date: NaiveDate,
    y_date: NaiveDate,
    entities: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct AnomalyTable {
    tau: i64,
    direction: crate::anomaly::LagDirection,
    threshold: f64,
    as_of: NaiveDate,
    entities_scored: usize,
    rows: Vec<AnomalyTableRow>,
}

pub fn write_anomalies(bundle: &Bundle, run: &AnomalyRun, x: &SeriesRun, y: &SeriesRun, cfg: &RunConfig) -> Result<()> {
    let dates = x.dates();
    let names = x.entities();
    bundle.put_csv("anomalies/anomalies.csv", |w| {
        w.write_record(["x_date", "y_date", "rank", "entity", "score", "ldr", "ldr_floored"])?;
        for (row, ldr) in run.rows.iter().zip(&run.ldr) {
            for (rank, &(entity, score)) in row.ranked.iter().enumerate() {
                let (l, floored) = match ldr {
                    Some(v) => (v[entity].value.to_string(), v[entity].floored.to_string()),
                    None => (String::new(), String::new()),
                };
                w.write_record([
                    fmt_date(dates[row.x_date]),
                    fmt_date(dates[row.y_date]),
                    (rank + 1).to_string(),
                    names[entity].clone(),
                    score.to_string(),
                    l,
                    floored,
                ])?;
            }
        }
        Ok(())
    })?;

    bundle.put_csv("anomalies/ldr.csv", |w| {
        w.write_record(["date", "lagged_date", "entity", "y", "x_lagged", "ldr", "floored"])?;
        let mut seen = std::collections::BTreeSet::new();
        for (row, ldr) in run.rows.iter().zip(&run.ldr) {
            let Some(entries) = ldr else { continue };
            if !seen.insert(row.y_date) {
                continue;
            }
            let src = (row.y_date as i64 - run.tau) as usize;
            for e in entries {
                w.write_record([
                    fmt_date(dates[row.y_date]),
                    fmt_date(dates[src]),
                    names[e.entity].clone(),
                    y.counts.value(e.entity, row.y_date).to_string(),
                    x.counts.value(e.entity, src).to_string(),
                    e.value.to_string(),
                    e.floored.to_string(),
                ])?;
            }
        }
        Ok(())
    })?;

    let subset_names: Vec<String> = run.subset.iter().map(|&i| names[i].clone()).collect();
    for inc in &run.inconsistency {
        let rel = format!("anomalies/inconsistency_{}.csv", fmt_date(dates[inc.x_date]));
        write_matrix_csv(bundle.writer(&rel)?, &inc.values, &subset_names)?;
    }

    let table = AnomalyTable {
        tau: run.tau,
        direction: run.direction,
        threshold: cfg.threshold,
        as_of: run.as_of,
        entities_scored: run.subset.len(),
        rows: run
            .rows
            .iter()
            .map(|r| AnomalyTableRow {
                x_date: dates[r.x_date],
                y_date: dates[r.y_date],
                entities: r.ranked.iter().map(|&(e, _)| names[e].clone()).collect(),
                scores: r.ranked.iter().map(|&(_, s)| s).collect(),
            })
            .collect(),
    };
    bundle.put_json("anomalies/anomaly_table.json", &table)
}

/// Full runs record their settings in `config.toml`; staged reruns in
/// `config.<stage>.toml`, leaving the full run's record intact.
fn start_bundle(cfg: &RunConfig, stage: Option<&str>) -> Result<Bundle> {
    cfg.validate()?;
    let bundle = Bundle::create(&cfg.output)?;
    let name = match stage {
        Some(s) => format!("config.{s}.toml"),
        None => "config.toml".to_string(),
    };
    bundle.put(&name, cfg.to_toml()?)?;
    Ok(bundle)
}

/// Single-series run writing the series files.
pub fn run_single(cfg: &RunConfig) -> Result<SeriesRun> {
    let bundle = start_bundle(cfg, None)?;
    let counts = load_series(cfg, cfg.series)?;
    let run = analyze_series(cfg.series, counts, cfg)?;
    write_series(&bundle, &run, cfg).stage("report")?;
    bundle.finish().stage("report")?;
    Ok(run)
}

/// Both series, the offset grid and the anomaly stage.
pub fn run_dual(cfg: &RunConfig) -> Result<DualRun> {
    let bundle = start_bundle(cfg, None)?;
    let (px, py) = load_panels(cfg)?;
    let x = analyze_series(Series::X, px, cfg)?;
    let y = analyze_series(Series::Y, py, cfg)?;
    let run = dual_from_series(x, y, cfg)?;
    write_series(&bundle, &run.x, cfg).stage("report")?;
    write_series(&bundle, &run.y, cfg).stage("report")?;
    write_offsets(&bundle, &run.offsets).stage("report")?;
    write_anomalies(&bundle, &run.anomalies, &run.x, &run.y, cfg).stage("report")?;
    bundle.finish().stage("report")?;
    Ok(run)
}

/// Rebuilds a series from its cached index scan.
pub fn load_cached_series(cfg: &RunConfig, series: Series, counts: CountPanel) -> Result<SeriesRun> {
    let path = cfg.output.join(series.name()).join("state.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let state: SeriesState =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if state.fingerprint != scan_fingerprint(cfg)
        || state.series != series
        || state.entities != counts.entities()
        || state.dates != counts.dates()
    {
        return Err(Error::config(format!(
            "{} was written with different input or scan settings; rerun `analyze` or `dual`",
            path.display()
        )));
    }
    series_from_estimates(series, counts, state.estimates, cfg)
}

fn cached_pair(cfg: &RunConfig) -> Result<(SeriesRun, SeriesRun)> {
    let (px, py) = load_panels(cfg)?;
    Ok((
        load_cached_series(cfg, Series::X, px)?,
        load_cached_series(cfg, Series::Y, py)?,
    ))
}

/// Offset stage from cached scans.
pub fn run_offsets(cfg: &RunConfig) -> Result<Vec<OffsetRow>> {
    let bundle = start_bundle(cfg, Some("offsets"))?;
    let (x, y) = cached_pair(cfg)?;
    let rows = offset_grid(&x, &y, cfg)?;
    write_offsets(&bundle, &rows).stage("report")?;
    bundle.finish().stage("report")?;
    Ok(rows)
}

/// Lag stored by an earlier offset stage for the first start date.
fn cached_affinity_lag(cfg: &RunConfig) -> Option<i64> {
    #[derive(Deserialize)]
    struct Row {
        kind: String,
        offset: i64,
    }
    let text = fs::read_to_string(cfg.output.join("offsets/offsets.json")).ok()?;
    let rows: Vec<Row> = serde_json::from_str(&text).ok()?;
    let want = OffsetKind::Consistency(MatrixKind::Affinity).to_string();
    rows.into_iter().find(|r| r.kind == want).map(|r| r.offset)
}

/// Anomaly stage from cached scans; the lag comes from the config, a cached
/// offset stage, or a fresh offset computation, in that order.
pub fn run_anomalies(cfg: &RunConfig) -> Result<AnomalyRun> {
    let bundle = start_bundle(cfg, Some("anomalies"))?;
    let (x, y) = cached_pair(cfg)?;
    let tau = match cfg.tau.or_else(|| cached_affinity_lag(cfg)) {
        Some(t) => t,
        None => anomaly_lag(&offset_grid(&x, &y, cfg)?, cfg)?,
    };
    let run = anomaly_stage(&x, &y, tau, cfg)?;
    write_anomalies(&bundle, &run, &x, &y, cfg).stage("report")?;
    bundle.finish().stage("report")?;
    Ok(run)
}

/// Dendrogram of one series from its cached scan.
pub fn run_dendrogram(cfg: &RunConfig) -> Result<SeriesRun> {
    let bundle = start_bundle(cfg, Some("dendrogram"))?;
    let counts = load_series(cfg, cfg.series)?;
    let run = load_cached_series(cfg, cfg.series, counts)?;
    write_dendrogram(&bundle, &run).stage("report")?;
    bundle.finish().stage("report")?;
    Ok(run)
}

/// Consistency offset between two matrix dump files, using the records of `kind`.
pub fn offset_from_dumps(x: &Path, y: &Path, kind: MatrixKind, scan: ScanRange) -> Result<OffsetResult> {
    let read = |p: &Path| -> Result<Vec<ndarray::Array2<f64>>> {
        let f = File::open(p).map_err(|e| Error::io(p, e))?;
        let recs = read_matrix_records(std::io::BufReader::new(f))?;
        Ok(recs.into_iter().filter(|(k, _)| *k == kind).map(|(_, m)| m).collect())
    };
    let (mx, my) = (read(x)?, read(y)?);
    if mx.is_empty() || my.is_empty() {
        return Err(Error::data(format!("no {kind} records in the dump files")));
    }
    consistency_offset(&mx, &my, scan, kind).stage("offsets")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_sorted_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let b = Bundle::create(dir.path()).unwrap();
        b.put("b.txt", "two").unwrap();
        b.put("a/z.txt", "").unwrap();
        b.finish().unwrap();
        b.finish().unwrap();
        let text = fs::read_to_string(b.path(MANIFEST)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        // sha256 of the empty string
        assert!(lines[0].starts_with("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a/z.txt"));
        assert!(lines[1].ends_with("  b.txt"));
    }

    #[test]
    fn fingerprint_tracks_scan_settings_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            alpha: 0.9,
            top_n: 3,
            ..a.clone()
        };
        assert_eq!(scan_fingerprint(&a), scan_fingerprint(&b));
        let c = RunConfig { k_max: 9, ..a.clone() };
        assert_ne!(scan_fingerprint(&a), scan_fingerprint(&c));
    }
}
