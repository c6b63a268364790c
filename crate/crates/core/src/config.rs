//! Run configuration shared by every subcommand.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::anomaly::LagDirection;
use crate::cluster::{Linkage, LloydConfig};
use crate::error::{Error, Result};
use crate::ingest::{IngestOptions, Schema};
use crate::kselect::KRange;
use crate::offsets::{Normalization, ScanRange};

pub const OUTPUT_DIR_ENV: &str = "CLUSTEVO_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "clustevo-out";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Series {
    #[default]
    X,
    Y,
}

impl Series {
    pub fn name(self) -> &'static str {
        match self {
            Series::X => "x",
            Series::Y => "y",
        }
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Series {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Series::X),
            "y" => Ok(Series::Y),
            other => Err(Error::config(format!("unknown series '{other}' (expected x or y)"))),
        }
    }
}

/// Daily mode clusters each date's log counts; rolling mode clusters the
/// trailing `window`-day vectors with Lloyd's algorithm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Daily,
    Rolling,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "daily" => Ok(Mode::Daily),
            "rolling" => Ok(Mode::Rolling),
            other => Err(Error::config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub schema: Schema,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub exclude: Vec<String>,
    /// Series analyzed by `analyze` and `dendrogram`.
    pub series: Series,
    pub mode: Mode,
    pub window: usize,
    pub alpha: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub linkage: Linkage,
    pub m_values: Vec<u32>,
    pub delta_scan: [i64; 2],
    pub tau_scan: [i64; 2],
    pub normalization: Normalization,
    /// Start dates of the offset grid; empty means the first date only.
    pub offset_starts: Vec<NaiveDate>,
    pub threshold: f64,
    /// Filter date; defaults to the last date.
    pub as_of: Option<NaiveDate>,
    /// Case dates reported by the anomaly stage; empty picks ten evenly spaced dates.
    pub anomaly_dates: Vec<NaiveDate>,
    pub top_n: usize,
    pub lag_direction: LagDirection,
    /// Fixed lag for the anomaly stage instead of the affinity consistency offset.
    pub tau: Option<i64>,
    pub skip_x: Option<usize>,
    pub skip_y: Option<usize>,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub dump_matrices: bool,
    #[serde(skip)]
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::new(),
            schema: Schema::default(),
            start: None,
            end: None,
            exclude: Vec::new(),
            series: Series::X,
            mode: Mode::Daily,
            window: 3,
            alpha: 0.3,
            k_min: 2,
            k_max: 20,
            linkage: Linkage::Ward,
            m_values: vec![1, 2, 3],
            delta_scan: [0, 60],
            tau_scan: [0, 40],
            normalization: Normalization::Normalized,
            offset_starts: Vec::new(),
            threshold: 5000.0,
            as_of: None,
            anomaly_dates: Vec::new(),
            top_n: 10,
            lag_direction: LagDirection::Forward,
            tau: None,
            skip_x: None,
            skip_y: None,
            seed: 0,
            restarts: 10,
            max_iter: 300,
            dump_matrices: false,
            output: PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a config file; a relative `input` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.input.is_relative() && !cfg.input.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                cfg.input = dir.join(&cfg.input);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invariant(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.as_os_str().is_empty() {
            return Err(Error::config("no input file given"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::config(format!(
                "k range {}..={} is invalid",
                self.k_min, self.k_max
            )));
        }
        if self.window == 0 {
            return Err(Error::config("window must be at least 1"));
        }
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return Err(Error::config("m_values must be non-empty positive integers"));
        }
        let mut m = self.m_values.clone();
        m.sort_unstable();
        m.dedup();
        if m.len() != self.m_values.len() {
            return Err(Error::config("m_values contains duplicates"));
        }
        ScanRange::new(self.delta_scan[0], self.delta_scan[1])?;
        ScanRange::new(self.tau_scan[0], self.tau_scan[1])?;
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::config(format!("threshold {} must be >= 0", self.threshold)));
        }
        if self.top_n == 0 {
            return Err(Error::config("top_n must be at least 1"));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::config("restarts and max_iter must be at least 1"));
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if e <= s {
                return Err(Error::config(format!("end {e} is not after start {s}")));
            }
        }
        Ok(())
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            start: self.start,
            end: self.end,
            exclude: self.exclude.clone(),
        }
    }

    pub fn k_range(&self) -> KRange {
        KRange {
            min: self.k_min,
            max: self.k_max,
        }
    }

    pub fn delta_range(&self) -> ScanRange {
        ScanRange {
            min: self.delta_scan[0],
            max: self.delta_scan[1],
        }
    }

    pub fn tau_range(&self) -> ScanRange {
        ScanRange {
            min: self.tau_scan[0],
            max: self.tau_scan[1],
        }
    }

    /// Lloyd settings for one date; the seed depends only on the date index.
    pub fn lloyd_for(&self, date_index: usize) -> LloydConfig {
        LloydConfig {
            restarts: self.restarts,
            max_iter: self.max_iter,
            seed: self
                .seed
                .wrapping_add((date_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..LloydConfig::default()
        }
    }

    pub fn skip_for(&self, series: Series) -> Option<usize> {
        match series {
            Series::X => self.skip_x,
            Series::Y => self.skip_y,
        }
    }
}
