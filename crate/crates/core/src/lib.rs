//! Density-dependent branching processes on a habitat with carrying capacity `K`.
//!
//! * [`offspring`]: offspring families, moments, inverse-CDF sampling and
//!   numerical checks of the standing assumptions.
//! * [`conjugacy`]: the limit `H(x) = lim f^n(x / rho^n)`, its derivatives,
//!   tabulation and local inverse.
//! * [`simulate`]: the density process `Z` coupled to its dominating
//!   Galton-Watson process `Y` on common uniforms, plus the deterministic and
//!   Gaussian-fluctuation paths of the large-colony regime.
//! * [`experiments`]: Monte Carlo harness measuring how fast `Z_{n1}/K - H(W rho^{-frac})`
//!   shrinks with `K`, against the older two-phase approximation.
//! * [`config`], [`output`] and [`cli`]: the `ddbranch` binary and its CSV files.
//!
//! Replicates run on rayon when the `parallel` feature is on (the default);
//! results are bit-identical either way.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod conjugacy;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod offspring;
pub mod output;
pub mod simulate;
pub mod stats;

pub use conjugacy::ConjugacyEvaluator;
pub use error::{Error, Result};
pub use exec::Execution;
pub use offspring::{BaseLaw, Family, OffspringModel};
