use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("energy {energy} MeV outside table range [{min}, {max}] MeV")]
    EnergyOutOfRange { energy: f64, min: f64, max: f64 },

    #[error("invalid attenuation table: {0}")]
    InvalidTable(String),

    #[error("compton relation domain error: cos(omega) = {0}")]
    ComptonDomain(f64),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("invalid detector layout: {0}")]
    InvalidLayout(String),

    #[error("point ({0:.3}, {1:.3}, {2:.3}) is not inside any sensor")]
    OutsideSensors(f64, f64, f64),

    #[error("rejection sampler gave up after {0} proposals")]
    SamplerExhausted(u64),

    #[error("undefined spherical mean: resultant length {0:e}")]
    UndefinedMean(f64),

    #[error("degenerate cluster separation")]
    DegenerateSeparation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidLayout(_) | Error::InvalidTable(_) => 2,
            _ => 3,
        }
    }
}
