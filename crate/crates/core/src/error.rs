use thiserror::Error;

/// Errors raised by the numerical kernels and ensemble builders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.1e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not anti-Hermitian: max deviation {deviation:.3e} exceeds tolerance {tolerance:.1e}")]
    NotAntiHermitian { deviation: f64, tolerance: f64 },

    #[error("non-finite entry encountered in {0}")]
    NonFinite(&'static str),

    #[error("rank-deficient input: column {column} has pivot {pivot:.3e}")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate leading eigenvalue of the transfer operator: |lambda_2|/|lambda_1| gap {gap:.3e}")]
    DegenerateSpectrum { gap: f64 },

    #[error("positivity lost at tau = {tau}: minimum eigenvalue {min_eig:.3e}")]
    PositivityLost {
        tau: f64,
        min_eig: f64,
        trace: Box<crate::evolution::EvolutionTrace>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
