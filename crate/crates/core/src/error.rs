use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and surfaced by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("sinkhorn failed to converge after {iterations} iterations (marginal residual {residual:.3e}, tol {tol:.3e})")]
    SinkhornNotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("barycenter failed to converge after {iterations} iterations (residual {residual:.3e}, tol {tol:.3e})")]
    BarycenterNotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("degenerate kernel for shard {shard}: exp(-cost/epsilon) underflowed to zero along an entire {axis}")]
    DegenerateKernel { shard: usize, axis: &'static str },

    #[error("degenerate weights: every shard score is zero")]
    DegenerateWeights,

    #[error("problem too large: {0}")]
    SizeGuard(String),

    #[error("stage `{stage}`{} failed: {source}", shard.map(|k| format!(" (shard {k})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        shard: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {} at line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 config/argument, 3 solver, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::DegenerateWeights
            | Error::SizeGuard(_) => 2,
            Error::SinkhornNotConverged { .. }
            | Error::BarycenterNotConverged { .. }
            | Error::DegenerateKernel { .. } => 3,
            Error::Io { .. } | Error::Parse { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn stage(stage: &'static str, shard: Option<usize>) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            shard,
            source: Box::new(source),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
