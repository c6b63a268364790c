#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Days, NaiveDate};

pub const ENTITIES: usize = 16;
pub const DAYS: usize = 80;
pub const LAG: usize = 8;

fn outbreak(i: usize, t: usize) -> f64 {
    let onset = 3 + (i * 5) % 31;
    let rate = 0.04 + 0.013 * (i % 6) as f64 + 0.002 * i as f64;
    let size = 1.0 + (i % 4) as f64 * 3.0;
    (size * (rate * t.saturating_sub(onset) as f64).exp()).floor().max(1.0)
}

/// Long-format CSV where the second series repeats the first `LAG` days later.
pub fn write_lagged_csv(path: &Path) {
    let start = NaiveDate::from_ymd_opt(2020, 2, 1).unwrap();
    let mut text = String::from("date,location,total_cases,total_deaths\n");
    for i in 0..ENTITIES {
        for t in 0..DAYS {
            let d = start.checked_add_days(Days::new(t as u64)).unwrap();
            text.push_str(&format!(
                "{d},E{i:02},{},{}\n",
                outbreak(i, t),
                outbreak(i, t.saturating_sub(LAG))
            ));
        }
    }
    std::fs::write(path, text).unwrap();
}

/// Temp dir holding `counts.csv` and a `run.toml` pointing at it.
pub fn workspace(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_lagged_csv(&dir.path().join("counts.csv"));
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("input = \"counts.csv\"\nthreshold = 1.0\ntau_scan = [0, 20]\ndelta_scan = [0, 20]\n{extra}"),
    )
    .unwrap();
    (dir, config)
}

pub fn clustevo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clustevo"))
        .args(args)
        .env_remove("CLUSTEVO_OUTPUT_DIR")
        .output()
        .unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
