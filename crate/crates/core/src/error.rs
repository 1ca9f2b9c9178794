use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("reward too small: pi_I = {pi_i} must exceed (r2_hat/delta)*b = {bound}")]
    RewardTooSmall { pi_i: f64, bound: f64 },
    #[error("separating regime: r1 = {r1} is not below r* = {r_star}")]
    SeparatingRegime { r1: f64, r_star: f64 },
    #[error("{what} did not converge after {iterations} iterations (last change {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("no sign change for {what} on [{lo}, {hi}]")]
    Bracket { what: &'static str, lo: f64, hi: f64 },
    #[error("singular linear system at row {0}")]
    Singular(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Solver failures as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::Bracket { .. } | Error::Singular(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
