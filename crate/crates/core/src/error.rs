use thiserror::Error;

use crate::io::covariates::CovariateError;
use crate::io::nifti::NiftiError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular design: column {column} is (numerically) a combination of earlier columns")]
    SingularDesign { column: usize },

    #[error("invalid weights: S[{subject}] at voxel {voxel} is {value} (must be positive and finite)")]
    InvalidWeights { subject: usize, voxel: usize, value: f64 },

    #[error("degenerate voxel {voxel}: zero residual variance")]
    DegenerateVoxel { voxel: usize },

    #[error("leverage-one observation at voxel {voxel}, subject {subject}")]
    LeverageOne { voxel: usize, subject: usize },

    #[error("interest column collinear with nuisance")]
    Collinear,

    #[error("sPBJ requires a scalar interest parameter (got {m1} interest columns)")]
    ScalarInterestRequired { m1: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation {sim_index} failed: {source}")]
    Simulation {
        sim_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error(transparent)]
    Covariates(#[from] CovariateError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
