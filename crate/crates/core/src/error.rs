use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("grid mismatch: expected {expected}, got {got}")]
    GridMismatch { expected: String, got: String },
    #[error("CFL violation: max|u|*dt/h = {cfl:.3} > 1, reduce dt below {suggested_dt:.3e}")]
    Cfl { cfl: f64, suggested_dt: f64 },
    #[error("non-finite state at t = {t}: {what}")]
    NonFinite { t: f64, what: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ode integration failed: {0}")]
    Ode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
