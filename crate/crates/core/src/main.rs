use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use clustevo::anomaly::LagDirection;
use clustevo::cluster::Linkage;
use clustevo::config::{Mode, RunConfig, Series, OUTPUT_DIR_ENV};
use clustevo::matrices::MatrixKind;
use clustevo::offsets::{offset_curve_report, Normalization};
use clustevo::report;
use clustevo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "clustevo",
    version,
    about = "Cluster evolution, lag and anomaly analysis of paired count series"
)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster one series: k curve, labels, date dendrogram
    Analyze {
        #[arg(long)]
        series: Option<Series>,
    },
    /// Both series, offset grid and anomaly reports
    Dual,
    /// Offset grid from a previous run, or one consistency offset from two matrix dumps
    Offsets {
        #[arg(long, requires = "y_dump")]
        x_dump: Option<PathBuf>,
        #[arg(long, requires = "x_dump")]
        y_dump: Option<PathBuf>,
        /// Matrix kind read from the dumps (aff, adj, d, g1, ...)
        #[arg(long, default_value = "aff")]
        kind: MatrixKind,
    },
    /// Anomaly reports from a previous run
    Anomalies,
    /// Date dendrogram of one series from a previous run
    Dendrogram {
        #[arg(long)]
        series: Option<Series>,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration; flags below override its values
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true)]
    input: Option<PathBuf>,
    #[arg(short, long, global = true, env = OUTPUT_DIR_ENV)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    start: Option<NaiveDate>,
    #[arg(long, global = true)]
    end: Option<NaiveDate>,
    /// Entity to drop; repeatable
    #[arg(long, global = true)]
    exclude: Vec<String>,
    #[arg(long, global = true)]
    date_col: Option<String>,
    #[arg(long, global = true)]
    entity_col: Option<String>,
    #[arg(long, global = true)]
    x_col: Option<String>,
    #[arg(long, global = true)]
    y_col: Option<String>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    k_min: Option<usize>,
    #[arg(long, global = true)]
    k_max: Option<usize>,
    #[arg(long, global = true)]
    linkage: Option<Linkage>,
    /// Gaussian sharpness values, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    m: Option<Vec<u32>>,
    #[arg(long, global = true, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    delta_scan: Option<Vec<i64>>,
    #[arg(long, global = true, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    tau_scan: Option<Vec<i64>>,
    #[arg(long, global = true, value_parser = parse_normalization)]
    normalization: Option<Normalization>,
    /// Start date of an offset grid row; repeatable
    #[arg(long, global = true)]
    offset_start: Vec<NaiveDate>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    as_of: Option<NaiveDate>,
    /// Case date to report anomalies for; repeatable
    #[arg(long, global = true)]
    anomaly_date: Vec<NaiveDate>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true, value_parser = parse_direction)]
    lag_direction: Option<LagDirection>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau: Option<i64>,
    #[arg(long, global = true)]
    skip_x: Option<usize>,
    #[arg(long, global = true)]
    skip_y: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Write binary matrix dumps for every date
    #[arg(long, global = true)]
    dump_matrices: bool,
}

fn parse_normalization(s: &str) -> std::result::Result<Normalization, String> {
    match s {
        "normalized" => Ok(Normalization::Normalized),
        "unnormalized" => Ok(Normalization::Unnormalized),
        _ => Err(format!("expected normalized or unnormalized, got '{s}'")),
    }
}

fn parse_direction(s: &str) -> std::result::Result<LagDirection, String> {
    match s {
        "forward" => Ok(LagDirection::Forward),
        "backward" => Ok(LagDirection::Backward),
        _ => Err(format!("expected forward or backward, got '{s}'")),
    }
}

impl Overrides {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            input => c.input,
            output => c.output,
            date_col => c.schema.date,
            entity_col => c.schema.entity,
            x_col => c.schema.x,
            y_col => c.schema.y,
            mode => c.mode,
            window => c.window,
            alpha => c.alpha,
            k_min => c.k_min,
            k_max => c.k_max,
            linkage => c.linkage,
            m => c.m_values,
            normalization => c.normalization,
            threshold => c.threshold,
            top_n => c.top_n,
            lag_direction => c.lag_direction,
            seed => c.seed,
            restarts => c.restarts,
        }
        if self.start.is_some() {
            c.start = self.start;
        }
        if self.end.is_some() {
            c.end = self.end;
        }
        if self.as_of.is_some() {
            c.as_of = self.as_of;
        }
        if self.tau.is_some() {
            c.tau = self.tau;
        }
        if self.skip_x.is_some() {
            c.skip_x = self.skip_x;
        }
        if self.skip_y.is_some() {
            c.skip_y = self.skip_y;
        }
        if let Some(v) = self.delta_scan {
            c.delta_scan = [v[0], v[1]];
        }
        if let Some(v) = self.tau_scan {
            c.tau_scan = [v[0], v[1]];
        }
        if !self.exclude.is_empty() {
            c.exclude = self.exclude;
        }
        if !self.offset_start.is_empty() {
            c.offset_starts = self.offset_start;
        }
        if !self.anomaly_date.is_empty() {
            c.anomaly_dates = self.anomaly_date;
        }
        c.dump_matrices |= self.dump_matrices;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.opts.resolve()?;
    match cli.command {
        Command::Analyze { series } => {
            cfg.series = series.unwrap_or(cfg.series);
            let run = report::run_single(&cfg)?;
            let peak = run.smoothed.k_hat.iter().max().copied().unwrap_or(1);
            println!(
                "series {}: {} entities, {} dates, peak k {peak}, dendrogram skip {}",
                run.series,
                run.entities().len(),
                run.dates().len(),
                run.skip
            );
        }
        Command::Dual => {
            let run = report::run_dual(&cfg)?;
            for row in &run.offsets {
                let taus: Vec<String> = row
                    .consistency
                    .iter()
                    .map(|r| format!("{}={}", r.kind, r.offset))
                    .collect();
                println!(
                    "start {}: delta={} {}",
                    row.start_date,
                    row.series_evolution.offset,
                    taus.join(" ")
                );
            }
            println!(
                "anomaly lag {} over {} entities",
                run.anomalies.tau,
                run.anomalies.subset.len()
            );
        }
        Command::Offsets { x_dump, y_dump, kind } => match (x_dump, y_dump) {
            (Some(x), Some(y)) => {
                let r = report::offset_from_dumps(&x, &y, kind, cfg.tau_range())?;
                let out = serde_json::json!({
                    "kind": r.kind.to_string(),
                    "offset": r.offset,
                    "objective_min": r.objective_min,
                    "scan": r.scan,
                    "start_date": r.start_date,
                    "curve_shape": offset_curve_report(&r).shape,
                    "curve": r.objective_curve,
                });
                println!(
                    "{}",
                    serde_json::to_string_pretty(&out).map_err(|e| Error::Invariant(e.to_string()))?
                );
            }
            _ => {
                for row in report::run_offsets(&cfg)? {
                    let taus: Vec<String> = row
                        .consistency
                        .iter()
                        .map(|r| format!("{}={}", r.kind, r.offset))
                        .collect();
                    println!(
                        "start {}: delta={} {}",
                        row.start_date,
                        row.series_evolution.offset,
                        taus.join(" ")
                    );
                }
            }
        },
        Command::Anomalies => {
            let run = report::run_anomalies(&cfg)?;
            println!("anomaly lag {}, {} report dates", run.tau, run.rows.len());
        }
        Command::Dendrogram { series } => {
            cfg.series = series.unwrap_or(cfg.series);
            let run = report::run_dendrogram(&cfg)?;
            println!(
                "series {}: {} dates clustered after skipping {}",
                run.series,
                run.dendrogram.leaves.len(),
                run.skip
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
