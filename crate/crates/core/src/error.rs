use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid amplitude: {0}")]
    InvalidAmplitude(String),
    #[error("uncertified tail: the amplitude table declares no decay bound")]
    UncertifiedTail,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quadrature for {what} did not converge (residual estimate {residual:e})")]
    Quadrature { what: String, residual: f64 },
    #[error("divergent tail sum: exponent p = {p} must exceed the dimension m = {m}")]
    DivergentTailSum { p: f64, m: usize },
    #[error("degenerate conditioning: minimum eigenvalue {min_eig:e} (scale {scale:e})")]
    DegenerateConditioning { min_eig: f64, scale: f64 },
    #[error("covariance is not positive semidefinite: eigenvalue {eig:e} below tolerance {tol:e}")]
    NotPsd { eig: f64, tol: f64 },
    #[error("resolution insufficient: derivative vanishes at both ends of grid interval {0}")]
    ResolutionInsufficient(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("ampleness gate failed: {0}")]
    AmplenessGate(String),
    #[error("non-Morse exclusions {excluded} of {trials} exceed 1% at R = {r}")]
    TooManyNonMorse { r: f64, excluded: usize, trials: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
