//! Per-date distance, affinity and adjacency matrices, and the Frobenius
//! distance between dates that drives the cluster evolution dendrogram.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluster::{hierarchical, Dendrogram, Linkage, Partition};
use crate::error::{Error, Result};
use crate::ingest::DATE_FORMAT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixKind {
    Distance,
    Affinity,
    /// Gaussian affinity with sharpness `m`.
    Gaussian(u32),
    Adjacency,
}

impl MatrixKind {
    /// Tag stored in binary dumps.
    pub fn tag(self) -> u32 {
        match self {
            MatrixKind::Distance => 0,
            MatrixKind::Affinity => 1,
            MatrixKind::Adjacency => 2,
            MatrixKind::Gaussian(m) => 0x100 | (m & 0xff),
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(MatrixKind::Distance),
            1 => Ok(MatrixKind::Affinity),
            2 => Ok(MatrixKind::Adjacency),
            t if t & !0xff == 0x100 && t & 0xff > 0 => Ok(MatrixKind::Gaussian(t & 0xff)),
            t => Err(Error::data(format!("unknown matrix kind tag {t:#x}"))),
        }
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixKind::Distance => f.write_str("d"),
            MatrixKind::Affinity => f.write_str("aff"),
            MatrixKind::Gaussian(m) => write!(f, "g{m}"),
            MatrixKind::Adjacency => f.write_str("adj"),
        }
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "d" | "distance" => Ok(MatrixKind::Distance),
            "aff" | "affinity" => Ok(MatrixKind::Affinity),
            "adj" | "adjacency" => Ok(MatrixKind::Adjacency),
            g if g.starts_with('g') => g[1..]
                .parse::<u32>()
                .ok()
                .filter(|m| (1..=255).contains(m))
                .map(MatrixKind::Gaussian)
                .ok_or_else(|| Error::config(format!("bad gaussian kind '{s}'"))),
            _ => Err(Error::config(format!("unknown matrix kind '{s}'"))),
        }
    }
}

impl Serialize for MatrixKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MatrixKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `|a_i - a_j|` for univariate data (log counts).
pub fn distance_matrix_1d(values: &[f64]) -> Array2<f64> {
    let n = values.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = (values[i] - values[j]).abs();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Euclidean distances between rows.
pub fn distance_matrix(points: &[Vec<f64>]) -> Array2<f64> {
    let n = points.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = crate::cluster::sq_dist(&points[i], &points[j]).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

fn max_entry(d: &Array2<f64>) -> f64 {
    d.iter().fold(0.0f64, |a, &v| a.max(v))
}

/// `1 - D / max D`; all ones when every distance is zero.
pub fn affinity(d: &Array2<f64>) -> Array2<f64> {
    let max = max_entry(d);
    if max == 0.0 {
        return Array2::ones(d.dim());
    }
    d.mapv(|v| 1.0 - v / max)
}

/// `exp(-m^2 D^2 / (2 max D^2))`; all ones when every distance is zero.
pub fn gaussian_affinity(d: &Array2<f64>, m: f64) -> Array2<f64> {
    let max = max_entry(d);
    if max == 0.0 {
        return Array2::ones(d.dim());
    }
    d.mapv(|v| {
        let r = v / max;
        (-(m * m) * r * r / 2.0).exp()
    })
}

/// Same-cluster indicator; the diagonal is 1.
pub fn adjacency(labels: &[usize]) -> Array2<f64> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| if labels[i] == labels[j] { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayMatrices {
    pub date_index: usize,
    pub distance: Array2<f64>,
    pub affinity: Array2<f64>,
    /// `(m, G_m)` for every requested sharpness.
    pub gaussian: Vec<(u32, Array2<f64>)>,
    pub adjacency: Array2<f64>,
}

impl DayMatrices {
    pub fn get(&self, kind: MatrixKind) -> Option<&Array2<f64>> {
        match kind {
            MatrixKind::Distance => Some(&self.distance),
            MatrixKind::Affinity => Some(&self.affinity),
            MatrixKind::Adjacency => Some(&self.adjacency),
            MatrixKind::Gaussian(m) => self.gaussian.iter().find(|(g, _)| *g == m).map(|(_, a)| a),
        }
    }
}

pub fn build_day_matrices(
    log_values: &[f64],
    partition: &Partition,
    m_values: &[u32],
    date_index: usize,
) -> Result<DayMatrices> {
    if partition.labels.len() != log_values.len() {
        return Err(Error::domain(format!(
            "partition covers {} entities but the day has {}",
            partition.labels.len(),
            log_values.len()
        )));
    }
    let distance = distance_matrix_1d(log_values);
    Ok(DayMatrices {
        date_index,
        affinity: affinity(&distance),
        gaussian: m_values
            .iter()
            .map(|&m| (m, gaussian_affinity(&distance, m as f64)))
            .collect(),
        adjacency: adjacency(&partition.labels),
        distance,
    })
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise Frobenius distances between adjacency matrices.
pub fn date_distances(adjs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let Some(first) = adjs.first() else {
        return Err(Error::domain("no matrices"));
    };
    if adjs.iter().any(|a| a.dim() != first.dim()) {
        return Err(Error::domain("adjacency matrices differ in size"));
    }
    let t = adjs.len();
    let mut out = Array2::zeros((t, t));
    for s in 0..t {
        for u in s + 1..t {
            let v = frobenius_distance(&adjs[s], &adjs[u]);
            out[[s, u]] = v;
            out[[u, s]] = v;
        }
    }
    Ok(out)
}

/// Same result as [`date_distances`] computed from cluster labels.
///
/// For partitions `A` and `B` the squared distance is
/// `sum |A_a|^2 + sum |B_b|^2 - 2 sum n_ab^2`, with `n_ab` the overlap counts.
pub fn date_distances_from_labels(labels: &[Vec<usize>]) -> Result<Array2<f64>> {
    let Some(first) = labels.first() else {
        return Err(Error::domain("no partitions"));
    };
    if labels.iter().any(|l| l.len() != first.len()) {
        return Err(Error::domain("partitions differ in size"));
    }
    let sq_sizes: Vec<u64> = labels
        .iter()
        .map(|l| {
            let mut c: HashMap<usize, u64> = HashMap::new();
            for &x in l {
                *c.entry(x).or_default() += 1;
            }
            c.values().map(|v| v * v).sum()
        })
        .collect();
    let t = labels.len();
    let mut out = Array2::zeros((t, t));
    let mut overlap: HashMap<(usize, usize), u64> = HashMap::new();
    for s in 0..t {
        for u in s + 1..t {
            overlap.clear();
            for (&a, &b) in labels[s].iter().zip(&labels[u]) {
                *overlap.entry((a, b)).or_default() += 1;
            }
            let cross: u64 = overlap.values().map(|v| v * v).sum();
            let v = ((sq_sizes[s] + sq_sizes[u] - 2 * cross) as f64).sqrt();
            out[[s, u]] = v;
            out[[u, s]] = v;
        }
    }
    Ok(out)
}

/// Length of the leading run of dates whose adjacency equals the first date's.
///
/// Returns 0 when every date shares one adjacency matrix.
pub fn detect_skip(dd: &Array2<f64>) -> usize {
    let t = dd.nrows();
    (1..t).find(|&u| dd[[0, u]] != 0.0).unwrap_or_default()
}

/// Hierarchical clustering of dates `skip..` by their adjacency distances.
pub fn cluster_evolution_dendrogram(
    dd: &Array2<f64>,
    skip: usize,
    dates: &[NaiveDate],
    linkage: Linkage,
) -> Result<Dendrogram> {
    let t = dd.nrows();
    if dates.len() != t {
        return Err(Error::domain(format!(
            "{} dates for a {t}x{t} distance matrix",
            dates.len()
        )));
    }
    if skip >= t {
        return Err(Error::domain(format!("skip {skip} leaves no dates out of {t}")));
    }
    let sub = dd.slice(ndarray::s![skip.., skip..]).to_owned();
    let leaves = dates[skip..]
        .iter()
        .map(|d| d.format(DATE_FORMAT).to_string())
        .collect();
    hierarchical(&sub, linkage, leaves)
}

/// Appends one record: `n` (u32 LE), kind tag (u32 LE), then `n * n` f64 LE row-major.
pub fn write_matrix_record<W: Write>(mut w: W, kind: MatrixKind, m: &Array2<f64>) -> std::io::Result<()> {
    let (n, c) = m.dim();
    assert_eq!(n, c, "matrix records are square");
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&kind.tag().to_le_bytes())?;
    let mut buf = Vec::with_capacity(n * n * 8);
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads records until end of input.
pub fn read_matrix_records<R: Read>(mut r: R) -> Result<Vec<(MatrixKind, Array2<f64>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<matrix dump>", e))?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::data("truncated matrix record header"));
        }
        let n = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let kind = MatrixKind::from_tag(u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")))?;
        pos += 8;
        let len = n * n * 8;
        if bytes.len() - pos < len {
            return Err(Error::data("truncated matrix record body"));
        }
        let vals = bytes[pos..pos + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        pos += len;
        out.push((kind, Array2::from_shape_vec((n, n), vals).expect("n * n values")));
    }
    Ok(out)
}

/// Dense CSV with a header row of labels and the label leading each row.
pub fn write_matrix_csv<W: Write>(w: W, m: &Array2<f64>, labels: &[String]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    wtr.write_record(&header)?;
    for (label, row) in labels.iter().zip(m.rows()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}
