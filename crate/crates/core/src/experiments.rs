//! Monte Carlo harness for the emergence-time approximation.
//!
//! For each capacity `K` the harness simulates coupled paths up to
//! `n1 = [log_rho K]` and records two errors:
//!
//! * `error_new = Z_{n1}/K - H(W rho^{-frac})` with `W` proxied by
//!   `rho^{-n1} Y_{n1}` (so the argument is simply `Y_{n1}/K`);
//! * `error_legacy = Z_{n1}/K - f^{n1 - nc}(Y_{nc}/K)` with `nc = [c log_rho K]`.
//!
//! Rates are read off quantiles of `|error|` across replicates, not means,
//! and fitted as slopes of `log quantile` against `log K`.

use crate::conjugacy::{iterate_map, ConjugacyEvaluator};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::offspring::OffspringModel;
use crate::simulate::{horizon, simulate_coupled_with, simulate_density, split_log, stream_key, SimOptions};
use crate::stats::{fit_line, quantile_sorted, LineFit};

pub const DEFAULT_C: f64 = 0.625;
pub const DEFAULT_QUANTILE_LEVELS: [f64; 2] = [0.5, 0.9];
/// Cells with fewer samples than this are flagged in the report.
pub const UNDERSAMPLED_BELOW: usize = 100;
/// Minimum number of capacities for a slope fit.
pub const MIN_SLOPE_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    /// Cutoff exponent of the legacy approximation, in `(1/2, 1)`.
    pub c: f64,
    pub quantile_levels: Vec<f64>,
    /// Extra generations of `Y` used to sharpen the estimate of `W`.
    pub w_extra_generations: u32,
    pub sim: SimOptions,
    pub execution: Execution,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            quantile_levels: DEFAULT_QUANTILE_LEVELS.to_vec(),
            w_extra_generations: 0,
            sim: SimOptions::default(),
            execution: Execution::default(),
        }
    }
}

/// One replicate's approximation errors at the horizon `n1(K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub k: u64,
    pub replicate: u64,
    pub w_hat: f64,
    pub zbar: f64,
    pub error_new: f64,
    pub error_legacy: f64,
    /// `Z_{n1} = 0`.
    pub extinct: bool,
    /// `Y_{n1} = 0` (and therefore `Z_{n1} = 0`).
    pub y_extinct: bool,
}

/// `nc = [log_rho K^c]`.
pub fn legacy_cutoff(k: u64, rho: f64, c: f64) -> Result<u32> {
    if !(c > 0.5 && c < 1.0) {
        return Err(Error::Domain(format!("legacy cutoff exponent must lie in (1/2, 1), got {c}")));
    }
    horizon(k, rho)?;
    Ok(split_log(c * (k as f64).ln() / rho.ln()).0)
}

/// `f^{n1 - nc}(Y_{nc} / K)`.
pub fn legacy_approximation(model: &OffspringModel, k: u64, c: f64, y_path: &[u64]) -> Result<f64> {
    let n1 = horizon(k, model.rho())?.n1 as usize;
    let nc = legacy_cutoff(k, model.rho(), c)? as usize;
    if y_path.len() <= n1 {
        return Err(Error::Domain(format!(
            "Y path has {} entries, horizon n1 = {n1} needs {}",
            y_path.len(),
            n1 + 1
        )));
    }
    let start = y_path[nc] as f64 / k as f64;
    Ok(*iterate_map(model, start, n1 - nc).last().expect("nonempty"))
}

pub fn error_sample(
    model: &OffspringModel,
    evaluator: &ConjugacyEvaluator,
    k: u64,
    master_seed: u64,
    replicate: u64,
    settings: &ExperimentSettings,
) -> Result<ErrorSample> {
    if evaluator.model() != model {
        return Err(Error::Domain("evaluator was built for a different model".into()));
    }
    let rho = model.rho();
    let n1 = horizon(k, rho)?.n1 as usize;
    let extra = settings.w_extra_generations as usize;
    let steps = (n1 + extra).max(1);
    let path = simulate_coupled_with(model, k, steps, &settings.sim, master_seed, stream_key(k, replicate))?;

    let y_last = path.y[n1 + extra] as f64;
    let w_hat = y_last * rho.powi(-((n1 + extra) as i32));
    // W rho^{-frac} with rho^{n1 + frac} = K, i.e. Y_{n1+e} / (K rho^e).
    let argument = y_last / (k as f64 * rho.powi(extra as i32));
    let zbar = path.zbar(n1);
    let error_new = zbar - evaluator.h(argument)?;
    let error_legacy = zbar - legacy_approximation(model, k, settings.c, &path.y)?;

    Ok(ErrorSample {
        k,
        replicate,
        w_hat,
        zbar,
        error_new,
        error_legacy,
        extinct: path.z[n1] == 0,
        y_extinct: path.y[n1] == 0,
    })
}

/// `replicates` independent samples at one capacity, in replicate order.
pub fn error_samples(
    model: &OffspringModel,
    evaluator: &ConjugacyEvaluator,
    k: u64,
    replicates: usize,
    master_seed: u64,
    settings: &ExperimentSettings,
) -> Result<Vec<ErrorSample>> {
    try_map_indexed(replicates, settings.execution, |r| {
        error_sample(model, evaluator, k, master_seed, r as u64, settings)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// All replicates.
    All,
    /// Replicates with `Y_{n1} > 0`.
    Surviving,
}

impl Scope {
    pub fn label(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Surviving => "surviving",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    New,
    Legacy,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::New => "new",
            Arm::Legacy => "legacy",
        }
    }
}

/// Quantiles of `|error|` in one `(K, level, scope)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileRow {
    pub k: u64,
    pub level: f64,
    pub scope: Scope,
    pub count: usize,
    pub abs_error_new: f64,
    pub abs_error_legacy: f64,
    pub undersampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub scope: Scope,
    pub level: f64,
    pub arm: Arm,
    pub fit: Option<LineFit>,
    /// Why `fit` is missing, if it is.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub k_grid: Vec<u64>,
    pub quantile_levels: Vec<f64>,
    pub rows: Vec<QuantileRow>,
    pub slopes: Vec<SlopeFit>,
}

impl RateReport {
    pub fn quantile(&self, k: u64, level: f64, scope: Scope, arm: Arm) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.k == k && r.level == level && r.scope == scope)
            .map(|r| match arm {
                Arm::New => r.abs_error_new,
                Arm::Legacy => r.abs_error_legacy,
            })
    }

    pub fn slope(&self, scope: Scope, level: f64, arm: Arm) -> Option<LineFit> {
        self.slopes
            .iter()
            .find(|s| s.scope == scope && s.level == level && s.arm == arm)
            .and_then(|s| s.fit)
    }
}

/// Samples plus their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RateExperiment {
    pub samples: Vec<ErrorSample>,
    pub report: RateReport,
}

pub fn rate_experiment(
    model: &OffspringModel,
    evaluator: &ConjugacyEvaluator,
    k_grid: &[u64],
    replicates: usize,
    master_seed: u64,
    settings: &ExperimentSettings,
) -> Result<RateExperiment> {
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("k_grid must be strictly ascending".into()));
    }
    let mut samples = Vec::with_capacity(k_grid.len() * replicates);
    for &k in k_grid {
        samples.extend(error_samples(model, evaluator, k, replicates, master_seed, settings)?);
    }
    samples.sort_by_key(|s| (s.k, s.replicate));
    let report = summarize(&samples, k_grid, &settings.quantile_levels);
    Ok(RateExperiment { samples, report })
}

/// Per-`K` quantiles of `|error|` and their log-log slopes.
pub fn summarize(samples: &[ErrorSample], k_grid: &[u64], levels: &[f64]) -> RateReport {
    let mut rows = Vec::new();
    for &k in k_grid {
        for scope in [Scope::All, Scope::Surviving] {
            let cell: Vec<&ErrorSample> = samples
                .iter()
                .filter(|s| s.k == k && (scope == Scope::All || !s.y_extinct))
                .collect();
            let mut new: Vec<f64> = cell.iter().map(|s| s.error_new.abs()).collect();
            let mut legacy: Vec<f64> = cell.iter().map(|s| s.error_legacy.abs()).collect();
            new.sort_by(f64::total_cmp);
            legacy.sort_by(f64::total_cmp);
            for &level in levels {
                rows.push(QuantileRow {
                    k,
                    level,
                    scope,
                    count: cell.len(),
                    abs_error_new: quantile_sorted(&new, level).unwrap_or(f64::NAN),
                    abs_error_legacy: quantile_sorted(&legacy, level).unwrap_or(f64::NAN),
                    undersampled: cell.len() < UNDERSAMPLED_BELOW,
                });
            }
        }
    }

    let mut slopes = Vec::new();
    for scope in [Scope::All, Scope::Surviving] {
        for &level in levels {
            for arm in [Arm::New, Arm::Legacy] {
                let points: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.scope == scope && r.level == level)
                    .map(|r| {
                        let q = match arm {
                            Arm::New => r.abs_error_new,
                            Arm::Legacy => r.abs_error_legacy,
                        };
                        ((r.k as f64).ln(), q)
                    })
                    .collect();
                let (fit, flag) = if points.len() < MIN_SLOPE_POINTS {
                    (None, Some(format!("fewer than {MIN_SLOPE_POINTS} capacities")))
                } else if points.iter().any(|&(_, q)| !(q > 0.0) || !q.is_finite()) {
                    (None, Some("zero or missing quantile".to_string()))
                } else {
                    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
                    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
                    (fit_line(&xs, &ys), None)
                };
                slopes.push(SlopeFit {
                    scope,
                    level,
                    arm,
                    fit,
                    flag,
                });
            }
        }
    }

    RateReport {
        k_grid: k_grid.to_vec(),
        quantile_levels: levels.to_vec(),
        rows,
        slopes,
    }
}

/// One histogram bin of the normalised error `error_new sqrt(K) / ln K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub k: u64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Histogram of `error_new sqrt(K) / ln K` over surviving replicates, on
/// fixed edges `-4, -3.75, ..., 4`; the outer bins are open-ended.
pub fn normalized_error_histogram(samples: &[ErrorSample], k_grid: &[u64]) -> Vec<HistogramBin> {
    const EDGE: f64 = 4.0;
    const WIDTH: f64 = 0.25;
    let inner = (2.0 * EDGE / WIDTH) as usize;
    let mut bins = Vec::new();
    for &k in k_grid {
        let scale = (k as f64).sqrt() / (k as f64).ln();
        let mut counts = vec![0usize; inner + 2];
        for s in samples.iter().filter(|s| s.k == k && !s.y_extinct) {
            let v = s.error_new * scale;
            let idx = if v < -EDGE {
                0
            } else if v >= EDGE {
                inner + 1
            } else {
                1 + (((v + EDGE) / WIDTH) as usize).min(inner - 1)
            };
            counts[idx] += 1;
        }
        for (i, &count) in counts.iter().enumerate() {
            let (lower, upper) = match i {
                0 => (f64::NEG_INFINITY, -EDGE),
                i if i == inner + 1 => (EDGE, f64::INFINITY),
                i => (-EDGE + (i - 1) as f64 * WIDTH, -EDGE + i as f64 * WIDTH),
            };
            bins.push(HistogramBin { k, lower, upper, count });
        }
    }
    bins
}

/// Extinction probability of the zero-density Galton-Watson process: the
/// smallest fixed point of its generating function.
pub fn gw_extinction_prob(model: &OffspringModel) -> f64 {
    let mut s = 0.0;
    for _ in 0..50_000_000 {
        let next = model.pgf_at_zero(s);
        if (next - s).abs() < 1e-12 {
            return next;
        }
        s = next;
    }
    s
}

/// `(fraction of Z paths with Z_{n1} = 0, gw_extinction_prob)`.
pub fn compare_extinction(
    model: &OffspringModel,
    k: u64,
    replicates: usize,
    seed: u64,
    execution: Execution,
) -> Result<(f64, f64)> {
    if replicates == 0 {
        return Err(Error::Domain("need at least one replicate".into()));
    }
    let n1 = horizon(k, model.rho())?.n1 as usize;
    let opts = SimOptions::default();
    let extinct = try_map_indexed(replicates, execution, |r| {
        simulate_density(model, k, n1, &opts, seed, stream_key(k, r as u64)).map(|z| z[n1] == 0)
    })?;
    let empirical = extinct.iter().filter(|&&e| e).count() as f64 / replicates as f64;
    Ok((empirical, gw_extinction_prob(model)))
}
