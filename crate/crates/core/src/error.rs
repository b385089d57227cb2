use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficient singular at rz = {rz}: |rz| must stay below {limit}")]
    Singular { rz: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trajectory {traj} faulted at step {step}: {reason}")]
    Integration { traj: usize, step: usize, reason: String },

    #[error("{count} of {n_traj} trajectories faulted; first: {first}")]
    EnsembleFaults { count: usize, n_traj: usize, first: Box<Error> },

    #[error("time step {dt} exceeds the stability bound; use dt_pde <= {suggested}")]
    Stability { dt: f64, suggested: f64 },

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("rz = {rz} outside interpolation span [{lo}, {hi}]")]
    Extrapolation { rz: f64, lo: f64, hi: f64 },

    #[error("endpoint limit did not converge: {0}")]
    NumericalLimit(String),

    #[error("divergence undefined: {0}")]
    Divergence(String),

    #[error("histograms share no bins with enough counts (n_min = {n_min})")]
    EmptyOverlap { n_min: u64 },

    #[error("incomplete results: {0}")]
    Incomplete(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("trajectory index {index} out of range (n_traj = {n_traj})")]
    Index { index: usize, n_traj: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed TOML: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("cannot serialize TOML: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::TomlDe(_) | Error::TomlSer(_) => {
                ErrorClass::Config
            }
            Error::Io(_) | Error::Csv(_) => ErrorClass::Io,
            _ => ErrorClass::Numerical,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Singular { .. } => "singular_coefficient",
            Error::Domain(_) => "domain",
            Error::Integration { .. } => "integration_fault",
            Error::EnsembleFaults { .. } => "ensemble_faults",
            Error::Stability { .. } => "stability",
            Error::Normalization(_) => "normalization",
            Error::Extrapolation { .. } => "extrapolation",
            Error::NumericalLimit(_) => "numerical_limit",
            Error::Divergence(_) => "divergence",
            Error::EmptyOverlap { .. } => "empty_overlap",
            Error::Incomplete(_) => "incomplete",
            Error::Config(_) => "config",
            Error::Index { .. } => "index",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::TomlDe(_) | Error::TomlSer(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
