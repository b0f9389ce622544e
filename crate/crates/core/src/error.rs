use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh: {0}")]
    Mesh(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge: relative residual {residual:.3e} exceeds {tolerance:.1e}")]
    NonConvergence { residual: f64, tolerance: f64 },

    #[error("layer too thick: t = {thickness:.3e} m exceeds 1/100 of the smallest feature {feature:.3e} m")]
    LayerTooThick { thickness: f64, feature: f64 },

    #[error("underdetermined fit: {observations} observations for {parameters} free parameters")]
    Underdetermined {
        observations: usize,
        parameters: usize,
    },

    #[error("channel {0} has an all-zero sensitivity column")]
    ZeroColumn(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::NonConvergence { .. })
    }
}
