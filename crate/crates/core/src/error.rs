use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("H_n({x}) did not converge within {iterations} iterations (last increment {last_increment:e})")]
    Convergence {
        x: f64,
        iterations: usize,
        last_increment: f64,
    },

    /// A query outside the interval on which the conjugacy table is certified.
    #[error("range error: {value} outside certified range [0, {upper}]")]
    Range { value: f64, upper: f64 },

    #[error("population {population} at step {step} exceeds cap {cap}; use a shorter horizon or smaller K")]
    Overflow { population: u64, step: usize, cap: u64 },

    /// A conjugacy table that failed one of its self-checks.
    #[error("certification failed: {0}")]
    Certification(String),
}
