//! Offspring distribution families `x ↦ {p_ℓ(x)}`.
//!
//! Every family is normalised so that the mean at zero density is `rho` and,
//! except for [`Family::DensityIndependent`], the mean at density one is 1.
//! Three of the four families are thinnings of a density-free base law: each
//! individual is sterile with probability `1 - s(x)` and otherwise draws from
//! the base law. The geometric family instead lowers the success parameter
//! `q(x)` with density.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass beyond which base-law tables are cut off.
const TABLE_TAIL: f64 = 1e-17;
/// Hard cap on the support length of tabulated laws.
const MAX_SUPPORT: usize = 10_000;

const FD_STEP: f64 = 1e-5;
const FD_STEP_SECOND: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Geometric,
    Ricker,
    BinarySplitting,
    DensityIndependent,
}

/// Base law with mean `rho` used by the thinned families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLaw {
    Poisson,
    Geometric,
    /// Two offspring with probability `rho / 2`, none otherwise. Needs `rho <= 2`.
    Binary,
}

#[derive(Debug)]
enum TableKind {
    Poisson { pmf: Vec<f64>, cdf: Vec<f64> },
    Geometric { q: f64, ln_q: f64 },
    Binary { p2: f64 },
}

impl TableKind {
    fn new(law: BaseLaw, rho: f64) -> Self {
        match law {
            BaseLaw::Poisson => {
                let mut pmf = Vec::new();
                let mut cdf = Vec::new();
                let mut p = (-rho).exp();
                let mut acc = 0.0;
                for l in 0..MAX_SUPPORT {
                    if l > 0 {
                        p *= rho / l as f64;
                    }
                    acc += p;
                    pmf.push(p);
                    cdf.push(acc.min(1.0));
                    if l as f64 > rho && 1.0 - acc < TABLE_TAIL {
                        break;
                    }
                }
                TableKind::Poisson { pmf, cdf }
            }
            BaseLaw::Geometric => {
                let q = rho / (1.0 + rho);
                TableKind::Geometric { q, ln_q: q.ln() }
            }
            BaseLaw::Binary => TableKind::Binary { p2: rho / 2.0 },
        }
    }

    fn pmf(&self, l: u64) -> f64 {
        match self {
            TableKind::Poisson { pmf, .. } => pmf.get(l as usize).copied().unwrap_or(0.0),
            TableKind::Geometric { q, .. } => q.powf(l as f64) * (1.0 - q),
            TableKind::Binary { p2 } => match l {
                0 => 1.0 - p2,
                2 => *p2,
                _ => 0.0,
            },
        }
    }

    fn cdf(&self, t: u64) -> f64 {
        match self {
            TableKind::Poisson { cdf, .. } => cdf.get(t as usize).copied().unwrap_or(1.0),
            TableKind::Geometric { q, .. } => 1.0 - q.powf(t as f64 + 1.0),
            TableKind::Binary { p2 } => {
                if t >= 2 {
                    1.0
                } else {
                    1.0 - p2
                }
            }
        }
    }

    fn quantile(&self, v: f64) -> u64 {
        match self {
            TableKind::Poisson { cdf, .. } => {
                let i = cdf.partition_point(|&c| c < v);
                i.min(cdf.len() - 1) as u64
            }
            TableKind::Geometric { ln_q, .. } => geometric_quantile(v, *ln_q),
            TableKind::Binary { p2 } => {
                if v <= 1.0 - p2 {
                    0
                } else {
                    2
                }
            }
        }
    }

    fn second_moment(&self, rho: f64) -> f64 {
        match self {
            TableKind::Poisson { .. } => rho + rho * rho,
            TableKind::Geometric { .. } => rho + 2.0 * rho * rho,
            TableKind::Binary { .. } => 2.0 * rho,
        }
    }

    fn pgf(&self, s: f64) -> f64 {
        match self {
            TableKind::Poisson { pmf, .. } => {
                // Horner over the truncated support.
                pmf.iter().rev().fold(0.0, |acc, &p| acc * s + p)
            }
            TableKind::Geometric { q, .. } => (1.0 - q) / (1.0 - q * s),
            TableKind::Binary { p2 } => 1.0 - p2 + p2 * s * s,
        }
    }
}

/// `min{t >= 0 : 1 - q^(t+1) >= u}` for `ln_q = ln q < 0`.
#[inline]
fn geometric_quantile(u: f64, ln_q: f64) -> u64 {
    if ln_q == f64::NEG_INFINITY {
        return 0;
    }
    let a = (-u).ln_1p() / ln_q;
    let t = a.ceil() - 1.0;
    if t <= 0.0 {
        0
    } else {
        t as u64
    }
}

/// An offspring distribution family together with its normalisation `rho = m(0)`.
///
/// Immutable after construction; clones share the tabulated base law.
#[derive(Debug, Clone)]
pub struct OffspringModel {
    family: Family,
    rho: f64,
    base: Option<BaseLaw>,
    table: Arc<BaseTable>,
    /// Decay rate of the survival probability `s(x) = exp(-decay x)` (thinned families),
    /// or of `q(x)` (geometric family).
    decay: f64,
    f_second_sup: f64,
}

impl PartialEq for OffspringModel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.rho == other.rho && self.base == other.base
    }
}

impl OffspringModel {
    /// Builds a model. `base` is only meaningful for the Ricker and
    /// density-independent families and defaults to Poisson there.
    pub fn new(family: Family, rho: f64, base: Option<BaseLaw>) -> Result<Self> {
        if !rho.is_finite() || rho <= 1.0 {
            return Err(Error::Domain(format!("rho must be finite and > 1, got {rho}")));
        }
        let base = match family {
            Family::Geometric => None,
            Family::BinarySplitting => Some(BaseLaw::Binary),
            Family::Ricker | Family::DensityIndependent => Some(base.unwrap_or(BaseLaw::Poisson)),
        };
        if base == Some(BaseLaw::Binary) && rho > 2.0 {
            return Err(Error::Domain(format!(
                "binary offspring law needs rho <= 2, got {rho}"
            )));
        }
        let decay = match family {
            Family::Geometric => (2.0 * rho / (1.0 + rho)).ln(),
            Family::Ricker | Family::BinarySplitting => rho.ln(),
            Family::DensityIndependent => 0.0,
        };
        let table = Arc::new(BaseTable(TableKind::new(base.unwrap_or(BaseLaw::Geometric), rho)));
        let mut model = Self {
            family,
            rho,
            base,
            table,
            decay,
            f_second_sup: 0.0,
        };
        model.f_second_sup = model.compute_f_second_sup();
        Ok(model)
    }

    pub fn geometric(rho: f64) -> Result<Self> {
        Self::new(Family::Geometric, rho, None)
    }

    /// Stochastic Ricker model with a Poisson base law.
    pub fn ricker(rho: f64) -> Result<Self> {
        Self::new(Family::Ricker, rho, None)
    }

    pub fn binary_splitting(rho: f64) -> Result<Self> {
        Self::new(Family::BinarySplitting, rho, None)
    }

    pub fn density_independent(rho: f64, base: BaseLaw) -> Result<Self> {
        Self::new(Family::DensityIndependent, rho, Some(base))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn base(&self) -> Option<BaseLaw> {
        self.base
    }

    /// True when `f(x) = rho x`, i.e. the offspring law does not depend on density.
    pub fn is_density_independent(&self) -> bool {
        self.family == Family::DensityIndependent
    }

    /// The offspring law frozen at density `x`. No domain checks; `x` must be `>= 0`.
    #[inline]
    pub fn law_at(&self, x: f64) -> DensityLaw<'_> {
        match self.family {
            Family::Geometric => {
                let e = (-self.decay * x).exp();
                let q = self.rho / (1.0 + self.rho) * e;
                DensityLaw::Geometric { q, ln_q: q.ln() }
            }
            _ => DensityLaw::Thinned {
                survive: (-self.decay * x).exp(),
                base: &self.table,
            },
        }
    }

    pub fn pmf(&self, x: f64, l: u64) -> Result<f64> {
        check_density(x)?;
        Ok(self.law_at(x).pmf(l))
    }

    /// `F_x(t) = sum_{l <= t} p_l(x)`.
    pub fn cdf(&self, x: f64, t: f64) -> Result<f64> {
        check_density(x)?;
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("cdf argument must be >= 0, got {t}")));
        }
        let t = if t >= u64::MAX as f64 { u64::MAX } else { t.floor() as u64 };
        Ok(self.law_at(x).cdf(t))
    }

    /// `min{t >= 0 : F_x(t) >= u}` for `u` in `[0, 1)`.
    pub fn quantile(&self, x: f64, u: f64) -> Result<u64> {
        check_density(x)?;
        if !(0.0..1.0).contains(&u) {
            return Err(Error::Domain(format!("quantile level must lie in [0, 1), got {u}")));
        }
        Ok(self.law_at(x).quantile(u))
    }

    /// `m(x)`.
    pub fn mean(&self, x: f64) -> Result<f64> {
        check_density(x)?;
        Ok(self.mean_unchecked(x))
    }

    /// `sigma^2(x)`.
    pub fn variance(&self, x: f64) -> Result<f64> {
        check_density(x)?;
        Ok(self.variance_unchecked(x))
    }

    /// `m_2(x) = sigma^2(x) + m(x)^2`.
    pub fn second_moment(&self, x: f64) -> Result<f64> {
        check_density(x)?;
        Ok(self.second_moment_unchecked(x))
    }

    fn mean_unchecked(&self, x: f64) -> f64 {
        let e = (-self.decay * x).exp();
        match self.family {
            // q/(1-q) rewritten so that m(0) = rho exactly.
            Family::Geometric => self.rho * e / (1.0 + self.rho - self.rho * e),
            _ => self.rho * e,
        }
    }

    pub(crate) fn variance_unchecked(&self, x: f64) -> f64 {
        match self.family {
            Family::Geometric => {
                let m = self.mean_unchecked(x);
                m * (1.0 + m)
            }
            _ => {
                let m = self.mean_unchecked(x);
                self.second_moment_unchecked(x) - m * m
            }
        }
    }

    fn second_moment_unchecked(&self, x: f64) -> f64 {
        match self.family {
            Family::Geometric => {
                let m = self.mean_unchecked(x);
                m * (1.0 + m) + m * m
            }
            _ => (-self.decay * x).exp() * self.table.0.second_moment(self.rho),
        }
    }

    /// The one-step density map `f(x) = x m(x)`.
    pub fn reproduction_map(&self, x: f64) -> f64 {
        x * self.mean_unchecked(x)
    }

    /// Analytic `f'(x)`.
    pub fn f_prime(&self, x: f64) -> f64 {
        let e = (-self.decay * x).exp();
        match self.family {
            Family::Geometric => {
                let (m, m1, _) = self.geometric_mean_derivatives(x);
                m + x * m1
            }
            _ => self.rho * e * (1.0 - self.decay * x),
        }
    }

    /// Analytic `f''(x)`.
    pub fn f_second(&self, x: f64) -> f64 {
        let e = (-self.decay * x).exp();
        match self.family {
            Family::Geometric => {
                let (_, m1, m2) = self.geometric_mean_derivatives(x);
                2.0 * m1 + x * m2
            }
            _ => self.rho * e * (self.decay * self.decay * x - 2.0 * self.decay),
        }
    }

    /// Upper bound on `sup |f''|` over the half line.
    pub fn f_second_sup(&self) -> f64 {
        self.f_second_sup
    }

    /// `(m, m', m'')` for the geometric family.
    fn geometric_mean_derivatives(&self, x: f64) -> (f64, f64, f64) {
        let lam = self.decay;
        let q = self.rho / (1.0 + self.rho) * (-lam * x).exp();
        let one_minus = 1.0 - q;
        let m = self.mean_unchecked(x);
        let m1 = -lam * q / (one_minus * one_minus);
        let m2 = lam * lam * q * (1.0 + q) / (one_minus * one_minus * one_minus);
        (m, m1, m2)
    }

    fn compute_f_second_sup(&self) -> f64 {
        match self.family {
            // |rho e^{-gx}(g^2 x - 2g)| peaks at x = 0.
            Family::Ricker | Family::BinarySplitting | Family::DensityIndependent => {
                2.0 * self.decay * self.rho
            }
            Family::Geometric => {
                let sup = (0..=64 * 256)
                    .map(|i| self.f_second(i as f64 / 256.0).abs())
                    .fold(0.0, f64::max);
                sup * 1.01
            }
        }
    }

    /// Probability generating function of the zero-density law.
    pub fn pgf_at_zero(&self, s: f64) -> f64 {
        match self.family {
            Family::Geometric => {
                let q = self.rho / (1.0 + self.rho);
                (1.0 - q) / (1.0 - q * s)
            }
            _ => self.table.0.pgf(s),
        }
    }
}

fn check_density(x: f64) -> Result<()> {
    if x >= 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain(format!("density must be >= 0, got {x}")))
    }
}

/// The offspring law at a fixed density, used as the frozen parameter for a
/// whole generation.
#[derive(Debug, Clone, Copy)]
pub enum DensityLaw<'a> {
    Geometric { q: f64, ln_q: f64 },
    Thinned { survive: f64, base: &'a BaseTable },
}

/// A tabulated base law with mean `rho`.
#[derive(Debug)]
pub struct BaseTable(TableKind);

impl<'a> DensityLaw<'a> {
    pub fn pmf(&self, l: u64) -> f64 {
        match *self {
            DensityLaw::Geometric { q, .. } => {
                if q == 0.0 {
                    return if l == 0 { 1.0 } else { 0.0 };
                }
                q.powf(l as f64) * (1.0 - q)
            }
            DensityLaw::Thinned { survive, base } => {
                let p = survive * base.0.pmf(l);
                if l == 0 {
                    p + (1.0 - survive)
                } else {
                    p
                }
            }
        }
    }

    pub fn cdf(&self, t: u64) -> f64 {
        match *self {
            DensityLaw::Geometric { q, .. } => 1.0 - q.powf(t as f64 + 1.0),
            DensityLaw::Thinned { survive, base } => 1.0 - survive * (1.0 - base.0.cdf(t)),
        }
    }

    /// Inverse-CDF draw for `u` in `[0, 1)`.
    #[inline]
    pub fn quantile(&self, u: f64) -> u64 {
        match *self {
            DensityLaw::Geometric { ln_q, .. } => geometric_quantile(u, ln_q),
            DensityLaw::Thinned { survive, base } => {
                // F(t) >= u  <=>  Q(t) >= 1 - (1 - u)/s
                let v = 1.0 - (1.0 - u) / survive;
                if v <= 0.0 {
                    0
                } else {
                    base.0.quantile(v)
                }
            }
        }
    }

    /// Both `self.quantile(u)` and `other.quantile(u)` with shared work.
    #[inline]
    pub fn quantile_pair(&self, other: &DensityLaw<'_>, u: f64) -> (u64, u64) {
        match (self, other) {
            (
                DensityLaw::Geometric { ln_q: a, .. },
                DensityLaw::Geometric { ln_q: b, .. },
            ) => {
                let l = (-u).ln_1p();
                (ratio_quantile(l, *a), ratio_quantile(l, *b))
            }
            _ => (self.quantile(u), other.quantile(u)),
        }
    }

    pub fn mean(&self, rho: f64) -> f64 {
        match *self {
            DensityLaw::Geometric { q, .. } => q / (1.0 - q),
            DensityLaw::Thinned { survive, .. } => survive * rho,
        }
    }

    pub(crate) fn parts(&self) -> LawParts {
        match *self {
            DensityLaw::Geometric { q, .. } => LawParts::Geometric { q },
            DensityLaw::Thinned { survive, base } => match &base.0 {
                TableKind::Poisson { .. } => LawParts::ThinnedPoisson { survive },
                TableKind::Geometric { q, .. } => LawParts::ThinnedGeometric { survive, q: *q },
                TableKind::Binary { p2 } => LawParts::ThinnedBinary { survive, p2: *p2 },
            },
        }
    }
}

/// Parameters of a frozen law, for samplers that draw generation totals directly.
#[derive(Debug, Clone, Copy)]
pub(crate) enum LawParts {
    Geometric { q: f64 },
    ThinnedPoisson { survive: f64 },
    ThinnedGeometric { survive: f64, q: f64 },
    ThinnedBinary { survive: f64, p2: f64 },
}

#[inline]
fn ratio_quantile(log_tail: f64, ln_q: f64) -> u64 {
    if ln_q == f64::NEG_INFINITY {
        return 0;
    }
    let t = (log_tail / ln_q).ceil() - 1.0;
    if t <= 0.0 {
        0
    } else {
        t as u64
    }
}

/// Numerical check of the standing assumptions on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub grid: Vec<f64>,
    pub t_max: u64,
    pub tol: f64,
    /// Stochastic ordering `F_y(t) >= F_x(t)` for all grid pairs `y >= x`.
    pub a1_ok: bool,
    pub a1_worst_violation: f64,
    /// Largest divided difference of `m_2` over consecutive grid points.
    pub a2_lipschitz_estimate: f64,
    pub a3_ok: bool,
    pub f_prime_sup: f64,
    pub f_prime_at_zero: f64,
    pub f_second_sup: f64,
}

impl OffspringModel {
    pub fn validate_assumptions(&self, grid: &[f64], t_max: u64, tol: f64) -> Result<AssumptionReport> {
        if grid.is_empty() {
            return Err(Error::Domain("validation grid is empty".into()));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) || grid[0] < 0.0 {
            return Err(Error::Domain("validation grid must be nonnegative and strictly ascending".into()));
        }

        let cdfs: Vec<Vec<f64>> = grid
            .iter()
            .map(|&x| {
                let law = self.law_at(x);
                (0..=t_max).map(|t| law.cdf(t)).collect()
            })
            .collect();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                for (lo, hi) in cdfs[i].iter().zip(&cdfs[j]) {
                    worst = worst.max(lo - hi);
                }
            }
        }

        let a2 = grid
            .windows(2)
            .map(|w| {
                let d = self.second_moment_unchecked(w[1]) - self.second_moment_unchecked(w[0]);
                d.abs() / (w[1] - w[0])
            })
            .fold(0.0, f64::max);

        let f = |x: f64| self.reproduction_map(x);
        let d1 = |x: f64| {
            if x < FD_STEP {
                // second-order one-sided difference at the boundary
                (-3.0 * f(x) + 4.0 * f(x + FD_STEP) - f(x + 2.0 * FD_STEP)) / (2.0 * FD_STEP)
            } else {
                (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
            }
        };
        let d2 = |x: f64| {
            let h = FD_STEP_SECOND;
            if x < h {
                (2.0 * f(x) - 5.0 * f(x + h) + 4.0 * f(x + 2.0 * h) - f(x + 3.0 * h)) / (h * h)
            } else {
                (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
            }
        };
        let f_prime_at_zero = d1(0.0);
        let f_prime_sup = grid.iter().map(|&x| d1(x).abs()).fold(0.0, f64::max);
        let f_second_sup = grid.iter().map(|&x| d2(x).abs()).fold(0.0, f64::max);
        let fd_slack = 1e-6 * self.rho;
        let a3_ok = (f_prime_at_zero - self.rho).abs() <= 1e-4 * self.rho
            && f_prime_sup <= f_prime_at_zero + fd_slack
            && f_second_sup.is_finite();

        Ok(AssumptionReport {
            grid: grid.to_vec(),
            t_max,
            tol,
            a1_ok: worst <= tol,
            a1_worst_violation: worst,
            a2_lipschitz_estimate: a2,
            a3_ok,
            f_prime_sup,
            f_prime_at_zero,
            f_second_sup,
        })
    }
}

/// Uniform grid `0, step, ..., x_max`.
pub fn uniform_grid(x_max: f64, step: f64) -> Vec<f64> {
    let n = (x_max / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<OffspringModel> {
        vec![
            OffspringModel::geometric(2.0).unwrap(),
            OffspringModel::ricker(2.0).unwrap(),
            OffspringModel::new(Family::Ricker, 2.0, Some(BaseLaw::Geometric)).unwrap(),
            OffspringModel::binary_splitting(1.5).unwrap(),
            OffspringModel::density_independent(2.0, BaseLaw::Poisson).unwrap(),
            OffspringModel::density_independent(3.0, BaseLaw::Geometric).unwrap(),
        ]
    }

    #[test]
    fn geometric_pmf_at_normalisation_points() {
        let m = OffspringModel::geometric(2.0).unwrap();
        assert!((m.pmf(0.0, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.pmf(1.0, 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ricker_is_sterile_at_infinite_density() {
        let m = OffspringModel::ricker(2.0).unwrap();
        assert_eq!(m.pmf(1e6, 0).unwrap(), 1.0);
    }

    #[test]
    fn pmf_sums_to_one() {
        for m in models() {
            for x in [0.0, 0.5, 1.0, 2.0] {
                let s: f64 = (0..=200).map(|l| m.pmf(x, l).unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-10, "{:?} x={x} sum={s}", m.family());
            }
        }
    }

    #[test]
    fn normalisation() {
        for m in models() {
            assert!((m.mean(0.0).unwrap() - m.rho()).abs() < 1e-12);
            if !m.is_density_independent() {
                assert!((m.mean(1.0).unwrap() - 1.0).abs() < 1e-12, "{:?}", m.family());
            }
        }
    }

    #[test]
    fn domain_errors() {
        let m = OffspringModel::ricker(2.0).unwrap();
        assert!(matches!(m.pmf(-0.1, 0), Err(Error::Domain(_))));
        assert!(matches!(m.cdf(0.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(m.quantile(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(m.quantile(0.0, -0.1), Err(Error::Domain(_))));
        assert!(OffspringModel::geometric(0.9).is_err());
        assert!(OffspringModel::binary_splitting(2.5).is_err());
        assert!(OffspringModel::binary_splitting(2.0).is_ok());
    }

    #[test]
    fn cdf_examples() {
        let m = OffspringModel::geometric(2.0).unwrap();
        assert!((m.cdf(0.0, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.cdf(0.0, 0.7).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for mm in models() {
            assert!((mm.cdf(0.3, 1e6).unwrap() - 1.0).abs() < 1e-10);
        }
        for t in 0..=50 {
            assert!(m.cdf(1.0, t as f64).unwrap() >= m.cdf(0.0, t as f64).unwrap());
        }
    }

    #[test]
    fn quantile_examples() {
        let m = OffspringModel::geometric(2.0).unwrap();
        // CDF at density 0: 1/3, 5/9, ...
        assert_eq!(m.quantile(0.0, 0.5).unwrap(), 1);
        assert_eq!(m.quantile(0.0, 0.3).unwrap(), 0);
        assert_eq!(m.quantile(0.0, 0.6).unwrap(), 2);
        for mm in models() {
            assert_eq!(mm.quantile(0.4, 0.0).unwrap(), 0);
        }
        let b = OffspringModel::binary_splitting(2.0).unwrap();
        assert_eq!(b.quantile(0.0, 0.3).unwrap(), 2);
    }

    #[test]
    fn moments_closed_forms() {
        let r = OffspringModel::ricker(2.0).unwrap();
        assert!((r.mean(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((r.mean(0.5).unwrap() - 2f64.powf(0.5)).abs() < 1e-14);
        let g = OffspringModel::geometric(3.0).unwrap();
        assert_eq!(g.mean(0.0).unwrap(), 3.0);
        for m in models() {
            for i in 0..=30 {
                let x = i as f64 * 0.1;
                let lhs = m.second_moment(x).unwrap() - m.mean(x).unwrap().powi(2) - m.variance(x).unwrap();
                assert!(lhs.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn moments_match_pmf_sums() {
        for m in models() {
            for x in [0.0, 0.7, 1.9] {
                let mean: f64 = (0..2000u64).map(|l| l as f64 * m.pmf(x, l).unwrap()).sum();
                let m2: f64 = (0..2000u64).map(|l| (l * l) as f64 * m.pmf(x, l).unwrap()).sum();
                assert!((mean - m.mean(x).unwrap()).abs() < 1e-9, "{:?}", m.family());
                assert!((m2 - m.second_moment(x).unwrap()).abs() < 1e-8, "{:?}", m.family());
            }
        }
    }

    #[test]
    fn reproduction_map_values() {
        let r = OffspringModel::ricker(2.0).unwrap();
        assert_eq!(r.reproduction_map(0.0), 0.0);
        assert!((r.reproduction_map(1.0) - 1.0).abs() < 1e-15);
        assert!((r.reproduction_map(0.5) - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        for m in models() {
            assert_eq!(m.reproduction_map(0.0), 0.0);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for m in models() {
            for i in 1..40 {
                let x = i as f64 * 0.1;
                let h = 1e-5;
                let fd1 = (m.reproduction_map(x + h) - m.reproduction_map(x - h)) / (2.0 * h);
                let fd2 = (m.f_prime(x + h) - m.f_prime(x - h)) / (2.0 * h);
                assert!((fd1 - m.f_prime(x)).abs() < 1e-8, "{:?} x={x}", m.family());
                assert!((fd2 - m.f_second(x)).abs() < 1e-7, "{:?} x={x}", m.family());
                assert!(m.f_second(x).abs() <= m.f_second_sup() + 1e-12);
                assert!(m.f_prime(x).abs() <= m.rho() + 1e-12);
            }
            assert!((m.f_prime(0.0) - m.rho()).abs() < 1e-12);
        }
    }

    #[test]
    fn validate_geometric_and_ricker() {
        let grid = uniform_grid(3.0, 0.1);
        let g = OffspringModel::geometric(2.0).unwrap();
        let rep = g.validate_assumptions(&grid, 50, 1e-12).unwrap();
        assert!(rep.a1_ok);
        assert!(rep.a3_ok);
        assert!((rep.f_prime_at_zero - 2.0).abs() < 1e-3);

        let r = OffspringModel::ricker(2.0).unwrap();
        let rep = r.validate_assumptions(&uniform_grid(3.0, 0.05), 50, 1e-12).unwrap();
        assert!(rep.a1_ok);
        assert!(rep.a3_ok);

        let d = OffspringModel::density_independent(2.0, BaseLaw::Poisson).unwrap();
        let rep = d.validate_assumptions(&grid, 50, 1e-12).unwrap();
        assert!(rep.a2_lipschitz_estimate.abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_grid() {
        let g = OffspringModel::geometric(2.0).unwrap();
        assert!(g.validate_assumptions(&[0.0, 0.2, 0.1], 10, 1e-12).is_err());
        assert!(g.validate_assumptions(&[], 10, 1e-12).is_err());
    }

    #[test]
    fn extinction_pgf() {
        let g = OffspringModel::geometric(2.0).unwrap();
        assert!((g.pgf_at_zero(0.5) - 0.5).abs() < 1e-15);
        let p = OffspringModel::ricker(2.0).unwrap();
        assert!((p.pgf_at_zero(1.0) - 1.0).abs() < 1e-15);
        assert!((p.pgf_at_zero(0.0) - (-2f64).exp()).abs() < 1e-15);
    }
}
