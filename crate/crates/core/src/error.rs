use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown function kind `{0}`")]
    UnknownKind(String),

    #[error("invalid parameters for `{kind}`: {reason}")]
    InvalidParams { kind: &'static str, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("implementation requires R > 0 (got R = {0})")]
    RequiresPositiveR(f64),

    #[error("Riccati solution blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("no sign change of the feedback residual within |u| <= {limit:e} for y_hat = {y_hat}")]
    BracketNotFound { y_hat: f64, limit: f64 },

    #[error("feedback solve did not converge in {iters} iterations (y_hat = {y_hat}, |F| = {residual:e})")]
    MaxIterations { y_hat: f64, iters: usize, residual: f64 },

    #[error("degenerate feedback derivative: |R + r''/2 + y b''| = {denom:e} below tolerance {eps:e}")]
    DegenerateDerivative { denom: f64, eps: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds {limit:e} (max advection speed {speed:e})")]
    Cfl { dt: f64, limit: f64, speed: f64 },

    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("ensemble configuration: {0}")]
    Ensemble(String),

    #[error("particle count mismatch: field solved for N = {field}, requested N = {requested}")]
    ParticleMismatch { field: usize, requested: usize },

    #[error("noise stream mismatch: {0}")]
    StreamMismatch(String),

    #[error("rate fit: {0}")]
    Fit(String),

    #[error("config: {0}")]
    Config(String),

    #[error("field cache: {0}")]
    Codec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical pipeline itself (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::BracketNotFound { .. }
                | Error::MaxIterations { .. }
                | Error::DegenerateDerivative { .. }
                | Error::Cfl { .. }
                | Error::NonFinite { .. }
                | Error::Domain(_)
        )
    }
}
