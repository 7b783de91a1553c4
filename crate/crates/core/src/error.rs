use std::path::PathBuf;

use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point is behind the camera (depth {depth:.3e} m)")]
    PointBehindCamera { depth: f64 },

    #[error("degenerate bounding box: width and height must both be positive")]
    DegenerateBox,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("normal matrix is singular")]
    SingularNormalMatrix,

    #[error(
        "solver did not converge after {} iterations (rms residual {:.3e} px)",
        .0.iterations,
        .0.final_residual
    )]
    NonConvergence(Box<SolveReport>),

    #[error("rejection sampling exceeded {0} draws")]
    RejectionLimit(u64),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
