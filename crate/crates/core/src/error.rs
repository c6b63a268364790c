use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Input data violates a precondition (too few dates, negative counts, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Arguments to a numerical routine are out of range.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Csv(_) | Error::Parse { .. } | Error::Data(_) => 3,
            Error::Domain(_) | Error::Invariant(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_stage_wrapping() {
        assert_eq!(Error::config("x").exit_code(), 2);
        assert_eq!(Error::data("x").at_stage("ingest").exit_code(), 3);
        assert_eq!(Error::domain("x").at_stage("offsets").exit_code(), 4);
        let msg = Error::domain("k out of range").at_stage("cluster").to_string();
        assert_eq!(msg, "[cluster] domain error: k out of range");
    }
}
