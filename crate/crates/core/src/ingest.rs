//! CSV ingestion and the preprocessing applied before clustering.
//!
//! Counts are read in long format (one row per entity and date), aligned on a
//! contiguous daily axis, and every empty or zero cell is replaced by 1 so the
//! logarithm is defined. Both series always share the same entity and date
//! axes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use log::warn;
use ndarray::{Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Column names for the long-format input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub date: String,
    pub entity: String,
    pub x: String,
    pub y: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            date: "date".into(),
            entity: "location".into(),
            x: "total_cases".into(),
            y: "total_deaths".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// Entities removed before alignment (aggregates such as "World").
    pub exclude: Vec<String>,
}

/// `n` entities by `T` daily dates of preprocessed counts (all values >= 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CountPanel {
    entities: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
}

impl CountPanel {
    /// Builds a panel from raw counts, applying [`preprocess`].
    ///
    /// `raw` is `entities.len() x dates.len()`; `NaN` marks a missing cell.
    pub fn from_raw(entities: Vec<String>, dates: Vec<NaiveDate>, raw: Array2<f64>) -> Result<Self> {
        let values = preprocess(raw)?;
        Self::new(entities, dates, values)
    }

    /// Builds a panel from already preprocessed values.
    pub fn new(entities: Vec<String>, dates: Vec<NaiveDate>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (entities.len(), dates.len()) {
            return Err(Error::data(format!(
                "value matrix is {:?} but axes are {} entities x {} dates",
                values.dim(),
                entities.len(),
                dates.len()
            )));
        }
        if entities.is_empty() {
            return Err(Error::data("panel has no entities"));
        }
        if entities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("entities must be unique and sorted ascending"));
        }
        check_daily(&dates)?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 1.0) {
            return Err(Error::data(format!("count {v} is below the preprocessing floor of 1")));
        }
        Ok(CountPanel {
            entities,
            dates,
            values,
        })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn value(&self, entity: usize, date: usize) -> f64 {
        self.values[[entity, date]]
    }

    /// Counts of every entity on one date.
    pub fn day(&self, date: usize) -> ArrayView1<'_, f64> {
        self.values.column(date)
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities.binary_search_by(|e| e.as_str().cmp(name)).ok()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.dates.len()).then_some(offset as usize)
    }

    /// Restricts the panel to `[start, end]` (inclusive). At least two dates must remain.
    pub fn truncate(&self, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let lo = self
            .date_index(start)
            .ok_or_else(|| Error::data(format!("start date {start} outside the panel")))?;
        let hi = self
            .date_index(end)
            .ok_or_else(|| Error::data(format!("end date {end} outside the panel")))?;
        if hi <= lo {
            return Err(Error::data(format!(
                "truncation {start}..{end} leaves fewer than 2 dates"
            )));
        }
        Ok(CountPanel {
            entities: self.entities.clone(),
            dates: self.dates[lo..=hi].to_vec(),
            values: self.values.slice(ndarray::s![.., lo..=hi]).to_owned(),
        })
    }

    /// Restricts the panel to the given entity indices, preserving their order.
    pub fn select_entities(&self, subset: &[usize]) -> Result<Self> {
        if let Some(&bad) = subset.iter().find(|&&i| i >= self.entities.len()) {
            return Err(Error::domain(format!("entity index {bad} out of range")));
        }
        let entities = subset.iter().map(|&i| self.entities[i].clone()).collect();
        let values = self.values.select(Axis(0), subset);
        CountPanel::new(entities, self.dates.clone(), values)
    }
}

fn check_daily(dates: &[NaiveDate]) -> Result<()> {
    if dates.len() < 2 {
        return Err(Error::data(format!("need at least 2 dates, found {}", dates.len())));
    }
    for w in dates.windows(2) {
        if w[0].checked_add_days(Days::new(1)) != Some(w[1]) {
            return Err(Error::data(format!(
                "dates must be daily and contiguous ({} followed by {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Replaces missing (`NaN`) and zero entries by 1; positive entries pass through.
pub fn preprocess(mut raw: Array2<f64>) -> Result<Array2<f64>> {
    for v in raw.iter_mut() {
        if v.is_nan() || *v == 0.0 {
            *v = 1.0;
        } else if *v < 0.0 {
            return Err(Error::data(format!("negative count {v}")));
        } else if !v.is_finite() {
            return Err(Error::data(format!("non-finite count {v}")));
        }
    }
    Ok(raw)
}

/// Natural logarithm of a [`CountPanel`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogPanel {
    entities: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
}

impl LogPanel {
    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn day(&self, date: usize) -> ArrayView1<'_, f64> {
        self.values.column(date)
    }
}

pub fn log_transform(panel: &CountPanel) -> Result<LogPanel> {
    if let Some(v) = panel.values.iter().find(|v| v.is_nan() || **v < 1.0) {
        return Err(Error::Invariant(format!(
            "log transform on value {v} below the preprocessing floor"
        )));
    }
    Ok(LogPanel {
        entities: panel.entities.clone(),
        dates: panel.dates.clone(),
        values: panel.values.mapv(f64::ln),
    })
}

/// Trailing windows of log counts; `values[[i, t, ..]]` is the `w`-vector ending at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingPanel {
    entities: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Array3<f64>,
}

impl RollingPanel {
    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn window(&self) -> usize {
        self.values.dim().2
    }

    /// The `n x w` point cloud for one date.
    pub fn day(&self, date: usize) -> Array2<f64> {
        self.values.index_axis(Axis(1), date).to_owned()
    }
}

/// Windows shorter than `w` at the start of the series repeat the first value.
pub fn rolling_window(panel: &LogPanel, w: usize) -> Result<RollingPanel> {
    let (n, t_len) = panel.values.dim();
    if w == 0 {
        return Err(Error::domain("window length must be at least 1"));
    }
    if w > t_len {
        return Err(Error::domain(format!(
            "window length {w} exceeds the {t_len} available dates"
        )));
    }
    let mut values = Array3::zeros((n, t_len, w));
    for i in 0..n {
        for t in 0..t_len {
            for c in 0..w {
                // component c holds date t - (w - 1 - c)
                let src = (t + c).saturating_sub(w - 1);
                values[[i, t, c]] = panel.values[[i, src]];
            }
        }
    }
    Ok(RollingPanel {
        entities: panel.entities.clone(),
        dates: panel.dates.clone(),
        values,
    })
}

#[derive(Default)]
struct EntityRows {
    cells: BTreeMap<NaiveDate, Vec<Option<f64>>>,
    present: Vec<bool>,
}

/// Reads both series of `schema` from a long-format CSV file.
pub fn parse_csv(path: impl AsRef<Path>, schema: &Schema, opts: &IngestOptions) -> Result<(CountPanel, CountPanel)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file, schema, opts)
}

pub fn parse_csv_reader<R: Read>(reader: R, schema: &Schema, opts: &IngestOptions) -> Result<(CountPanel, CountPanel)> {
    let mut panels = parse_columns(reader, &schema.date, &schema.entity, &[&schema.x, &schema.y], opts)?;
    let y = panels.pop().expect("two columns requested");
    let x = panels.pop().expect("two columns requested");
    Ok((x, y))
}

/// Reads one count column; used when only a single series is analyzed.
pub fn parse_series_csv<R: Read>(
    reader: R,
    date_col: &str,
    entity_col: &str,
    value_col: &str,
    opts: &IngestOptions,
) -> Result<CountPanel> {
    let mut panels = parse_columns(reader, date_col, entity_col, &[value_col], opts)?;
    Ok(panels.pop().expect("one column requested"))
}

fn parse_columns<R: Read>(
    reader: R,
    date_col: &str,
    entity_col: &str,
    value_cols: &[&str],
    opts: &IngestOptions,
) -> Result<Vec<CountPanel>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing column '{name}'")))
    };
    let date_idx = column(date_col)?;
    let entity_idx = column(entity_col)?;
    let value_idx = value_cols.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    let excluded: BTreeSet<&str> = opts.exclude.iter().map(String::as_str).collect();

    let mut rows: BTreeMap<String, EntityRows> = BTreeMap::new();
    let (mut min_date, mut max_date) = (None::<NaiveDate>, None::<NaiveDate>);
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let entity = field(entity_idx);
        if entity.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty entity".into(),
            });
        }
        if excluded.contains(entity) {
            continue;
        }
        let date = NaiveDate::parse_from_str(field(date_idx), DATE_FORMAT).map_err(|e| Error::Parse {
            row,
            message: format!("bad date '{}': {e}", field(date_idx)),
        })?;
        if opts.start.is_some_and(|s| date < s) || opts.end.is_some_and(|e| date > e) {
            continue;
        }
        let mut cells = Vec::with_capacity(value_idx.len());
        for (&idx, name) in value_idx.iter().zip(value_cols) {
            cells.push(parse_count(field(idx)).map_err(|message| Error::Parse {
                row,
                message: format!("column '{name}': {message}"),
            })?);
        }
        min_date = Some(min_date.map_or(date, |d| d.min(date)));
        max_date = Some(max_date.map_or(date, |d| d.max(date)));
        let entry = rows.entry(entity.to_string()).or_insert_with(|| EntityRows {
            cells: BTreeMap::new(),
            present: vec![false; value_cols.len()],
        });
        for (p, c) in entry.present.iter_mut().zip(&cells) {
            *p |= c.is_some();
        }
        if entry.cells.insert(date, cells).is_some() {
            return Err(Error::Parse {
                row,
                message: format!("duplicate row for {entity} on {date}"),
            });
        }
    }

    let (Some(first), Some(last)) = (opts.start.or(min_date), opts.end.or(max_date)) else {
        return Err(Error::data("no data rows in the selected date range"));
    };
    if last < first {
        return Err(Error::data(format!("empty date range {first}..{last}")));
    }
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    if dates.len() < 2 {
        return Err(Error::data(format!("need at least 2 dates, found {}", dates.len())));
    }

    // an entity must carry data in every requested series
    let mut kept = Vec::new();
    for (entity, data) in rows {
        if data.present.iter().all(|p| *p) {
            kept.push((entity, data));
        } else if data.present.iter().any(|p| *p) {
            warn!("dropping '{entity}': present in only some of the series");
        } else {
            warn!("dropping '{entity}': no counts in any series");
        }
    }
    if kept.is_empty() {
        return Err(Error::data("no entity has data in every series"));
    }

    let entities: Vec<String> = kept.iter().map(|(e, _)| e.clone()).collect();
    let mut panels = Vec::with_capacity(value_cols.len());
    for col in 0..value_cols.len() {
        let mut raw = Array2::from_elem((entities.len(), dates.len()), f64::NAN);
        for (i, (_, data)) in kept.iter().enumerate() {
            for (date, cells) in &data.cells {
                let t = (*date - first).num_days() as usize;
                if let Some(v) = cells[col] {
                    raw[[i, t]] = v;
                }
            }
        }
        panels.push(CountPanel::from_raw(entities.clone(), dates.clone(), raw)?);
    }
    Ok(panels)
}

fn parse_count(cell: &str) -> std::result::Result<Option<f64>, String> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| format!("non-numeric count '{cell}'"))?;
    if v < 0.0 {
        return Err(format!("negative count {v}"));
    }
    if !v.is_finite() {
        return Err(format!("non-finite count '{cell}'"));
    }
    Ok(Some(v))
}

/// Writes both panels in the long format read by [`parse_csv`].
pub fn emit_csv<W: Write>(writer: W, x: &CountPanel, y: &CountPanel, schema: &Schema) -> Result<()> {
    if x.entities != y.entities || x.dates != y.dates {
        return Err(Error::data("panels do not share entity and date axes"));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([&schema.date, &schema.entity, &schema.x, &schema.y])?;
    for (i, entity) in x.entities.iter().enumerate() {
        for (t, date) in x.dates.iter().enumerate() {
            wtr.write_record([
                date.format(DATE_FORMAT).to_string(),
                entity.clone(),
                x.values[[i, t]].to_string(),
                y.values[[i, t]].to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn parse(text: &str) -> Result<(CountPanel, CountPanel)> {
        parse_csv_reader(text.as_bytes(), &Schema::default(), &IngestOptions::default())
    }

    #[test]
    fn zero_becomes_one_and_missing_rows_fill() {
        let text = "date,location,total_cases,total_deaths\n\
                    2020-01-01,A,0,0\n2020-01-02,A,5,1\n2020-01-03,A,7,2\n\
                    2020-01-01,B,1,1\n2020-01-03,B,4,3\n";
        let (x, y) = parse(text).unwrap();
        assert_eq!(x.entities(), ["A", "B"]);
        assert_eq!(x.n_dates(), 3);
        assert_eq!(x.values().row(0).to_vec(), vec![1.0, 5.0, 7.0]);
        assert_eq!(x.value(1, 1), 1.0);
        assert_eq!(y.value(1, 1), 1.0);
        assert_eq!(y.values().row(0).to_vec(), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = "date,location,total_cases,total_deaths\n\
                    2020-01-01,A,1,0\n2020-01-02,A,abc,0\n";
        match parse(text) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn single_date_is_rejected() {
        let text = "date,location,total_cases,total_deaths\n2020-01-01,A,1,0\n";
        assert!(matches!(parse(text), Err(Error::Data(_))));
    }

    #[test]
    fn entities_in_one_series_only_are_dropped() {
        let text = "date,location,total_cases,total_deaths\n\
                    2020-01-01,A,1,1\n2020-01-02,A,2,1\n\
                    2020-01-01,B,3,\n2020-01-02,B,4,\n";
        let (x, y) = parse(text).unwrap();
        assert_eq!(x.entities(), ["A"]);
        assert_eq!(y.entities(), ["A"]);
    }

    #[test]
    fn date_range_and_exclusions_apply() {
        let text = "date,location,total_cases,total_deaths\n\
                    2020-01-01,A,1,1\n2020-01-02,A,2,1\n2020-01-03,A,3,1\n2020-01-04,A,4,2\n\
                    2020-01-02,World,9,9\n";
        let opts = IngestOptions {
            start: Some(d("2020-01-02")),
            end: Some(d("2020-01-03")),
            exclude: vec!["World".into()],
        };
        let (x, _) = parse_csv_reader(text.as_bytes(), &Schema::default(), &opts).unwrap();
        assert_eq!(x.entities(), ["A"]);
        assert_eq!(x.dates(), [d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(x.values().row(0).to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn decreasing_cumulative_counts_are_kept() {
        let text = "date,location,total_cases,total_deaths\n\
                    2020-01-01,A,10,1\n2020-01-02,A,8,1\n";
        let (x, _) = parse(text).unwrap();
        assert_eq!(x.values().row(0).to_vec(), vec![10.0, 8.0]);
    }

    #[test]
    fn preprocess_examples() {
        let out = preprocess(array![[0.0, f64::NAN, 3.0]]).unwrap();
        assert_eq!(out, array![[1.0, 1.0, 3.0]]);
        assert_eq!(preprocess(array![[1.0, 1.0, 1.0]]).unwrap(), array![[1.0, 1.0, 1.0]]);
        // 0.5 is a positive count and stays; the panel constructor then rejects it
        assert_eq!(preprocess(array![[0.5, 2.0]]).unwrap(), array![[0.5, 2.0]]);
        assert!(preprocess(array![[-1.0]]).is_err());
    }

    #[test]
    fn log_transform_examples() {
        let dates = vec![d("2020-01-01"), d("2020-01-02")];
        let p = CountPanel::new(vec!["A".into()], dates.clone(), array![[1.0, std::f64::consts::E]]).unwrap();
        let l = log_transform(&p).unwrap();
        assert_eq!(l.values()[[0, 0]], 0.0);
        assert!((l.values()[[0, 1]] - 1.0).abs() < 1e-15);
        let ones = CountPanel::new(vec!["A".into(), "B".into()], dates, Array2::ones((2, 2))).unwrap();
        assert!(log_transform(&ones).unwrap().values().iter().all(|v| *v == 0.0));
    }

    fn log_series(vals: &[f64]) -> LogPanel {
        let dates: Vec<NaiveDate> = d("2020-01-01").iter_days().take(vals.len()).collect();
        let p = CountPanel::new(
            vec!["A".into()],
            dates,
            Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap(),
        )
        .unwrap();
        log_transform(&p).unwrap()
    }

    #[test]
    fn rolling_window_reads_and_pads() {
        let l = log_series(&[1.0, 1.0, 5.0, 7.0]);
        let r = rolling_window(&l, 3).unwrap();
        let v = r.values();
        assert_eq!(v.slice(ndarray::s![0, 3, ..]).to_vec(), vec![0.0, 5f64.ln(), 7f64.ln()]);
        let l2 = log_series(&[4.0, 5.0, 6.0]);
        let r2 = rolling_window(&l2, 3).unwrap();
        let first = 4f64.ln();
        assert_eq!(r2.values().slice(ndarray::s![0, 0, ..]).to_vec(), vec![first; 3]);
        assert!(rolling_window(&l2, 4).is_err());
        assert!(rolling_window(&l2, 0).is_err());
    }

    #[test]
    fn rolling_window_of_one_rewraps() {
        let l = log_series(&[2.0, 3.0, 9.0]);
        let r = rolling_window(&l, 1).unwrap();
        assert_eq!(r.values().index_axis(Axis(2), 0), l.values().view());
    }

    #[test]
    fn date_lookup_and_truncate() {
        let l = CountPanel::new(
            vec!["A".into()],
            d("2020-01-01").iter_days().take(5).collect(),
            array![[1.0, 2.0, 3.0, 4.0, 5.0]],
        )
        .unwrap();
        assert_eq!(l.date_index(d("2020-01-03")), Some(2));
        assert_eq!(l.date_index(d("2019-12-31")), None);
        let t = l.truncate(d("2020-01-02"), d("2020-01-04")).unwrap();
        assert_eq!(t.values().row(0).to_vec(), vec![2.0, 3.0, 4.0]);
        assert!(l.truncate(d("2020-01-04"), d("2020-01-04")).is_err());
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(v in proptest::collection::vec(prop_oneof![Just(0.0), Just(f64::NAN), 0.1f64..1e6], 1..30)) {
            let raw = Array2::from_shape_vec((1, v.len()), v).unwrap();
            let once = preprocess(raw).unwrap();
            let twice = preprocess(once.clone()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn emit_then_parse_is_identity(
            counts in proptest::collection::vec((1u32..1_000_000, 1u32..50_000), 6),
            frac in 0.0f64..1.0,
        ) {
            let dates: Vec<NaiveDate> = d("2020-02-27").iter_days().take(3).collect();
            let ents = vec!["Alpha".to_string(), "Beta".to_string()];
            let mut xv: Vec<f64> = counts.iter().map(|c| c.0 as f64).collect();
            xv[0] += frac;
            let yv: Vec<f64> = counts.iter().map(|c| c.1 as f64).collect();
            let x = CountPanel::new(ents.clone(), dates.clone(), Array2::from_shape_vec((2, 3), xv).unwrap()).unwrap();
            let y = CountPanel::new(ents, dates, Array2::from_shape_vec((2, 3), yv).unwrap()).unwrap();
            let mut buf = Vec::new();
            emit_csv(&mut buf, &x, &y, &Schema::default()).unwrap();
            let (x2, y2) = parse_csv_reader(buf.as_slice(), &Schema::default(), &IngestOptions::default()).unwrap();
            prop_assert_eq!(x, x2);
            prop_assert_eq!(y, y2);
        }
    }
}
