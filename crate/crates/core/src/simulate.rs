//! Trajectories of the density-dependent process `Z` and its dominating
//! Galton-Watson process `Y`.
//!
//! Both processes are driven by one array of uniforms `U_{n,j}`: individual
//! `j` of generation `n - 1` contributes `F_0^{-1}(U_{n,j})` offspring to `Y`
//! and, when `j <= Z_{n-1}`, also `F_x^{-1}(U_{n,j})` to `Z` with
//! `x = Z_{n-1}/K`. Quantiles fall as density rises, hence `Z_n <= Y_n` on
//! every path.
//!
//! Randomness comes from ChaCha8 streams keyed by `(seed, stream)`, so each
//! replicate is reproducible on its own and replicates can run in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};

use crate::conjugacy::iterate_map;
use crate::error::{Error, Result};
use crate::offspring::{LawParts, OffspringModel};

pub const DEFAULT_POPULATION_CAP: u64 = 100_000_000;

/// Snap tolerance when splitting `log_rho K` into integer and fractional parts.
const LOG_SNAP: f64 = 1e-9;

/// Independent reproducible generator for one replicate.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for replicate `replicate` at capacity `k`. Unique while both fit in 32 bits.
pub fn stream_key(k: u64, replicate: u64) -> u64 {
    (k << 32) | (replicate & 0xffff_ffff)
}

/// `log_rho K = n1 + frac` with `n1` an integer and `frac` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub n1: u32,
    pub frac: f64,
}

/// Integer and fractional part of `log`, treating values within `LOG_SNAP`
/// of an integer as that integer.
pub(crate) fn split_log(log: f64) -> (u32, f64) {
    let nearest = log.round();
    if (log - nearest).abs() < LOG_SNAP {
        (nearest.max(0.0) as u32, 0.0)
    } else {
        let n = log.floor();
        (n.max(0.0) as u32, log - n)
    }
}

pub fn horizon(k: u64, rho: f64) -> Result<Horizon> {
    if k < 2 {
        return Err(Error::Domain(format!("horizon needs K >= 2, got {k}")));
    }
    if !(rho > 1.0) {
        return Err(Error::Domain(format!("horizon needs rho > 1, got {rho}")));
    }
    let (n1, frac) = split_log((k as f64).ln() / rho.ln());
    Ok(Horizon { n1, frac })
}

/// Paired trajectories `(Z_n, Y_n)` built on common uniforms.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub capacity: u64,
    pub z: Vec<u64>,
    pub y: Vec<u64>,
    pub seed: u64,
    pub stream: u64,
    /// First step with `Z_n = 0`, if within the horizon.
    pub extinct_z_at: Option<usize>,
}

impl CoupledPath {
    pub fn steps(&self) -> usize {
        self.z.len() - 1
    }

    pub fn zbar(&self, n: usize) -> f64 {
        self.z[n] as f64 / self.capacity as f64
    }

    pub fn ybar(&self, n: usize) -> f64 {
        self.y[n] as f64 / self.capacity as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Common initial size `Z_0 = Y_0`.
    pub z0: u64,
    pub population_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            z0: 1,
            population_cap: DEFAULT_POPULATION_CAP,
        }
    }
}

/// Coupled path from `Z_0 = Y_0 = 1`, stream 0 of `seed`.
pub fn simulate_coupled(model: &OffspringModel, k: u64, n_steps: usize, seed: u64) -> Result<CoupledPath> {
    simulate_coupled_with(model, k, n_steps, &SimOptions::default(), seed, 0)
}

pub fn simulate_coupled_with(
    model: &OffspringModel,
    k: u64,
    n_steps: usize,
    opts: &SimOptions,
    seed: u64,
    stream: u64,
) -> Result<CoupledPath> {
    if k == 0 {
        return Err(Error::Domain("capacity K must be >= 1".into()));
    }
    if n_steps == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    let mut rng = replicate_rng(seed, stream);
    let law0 = model.law_at(0.0);
    let capacity = k as f64;

    let mut z = Vec::with_capacity(n_steps + 1);
    let mut y = Vec::with_capacity(n_steps + 1);
    z.push(opts.z0);
    y.push(opts.z0);
    let mut extinct_z_at = (opts.z0 == 0).then_some(0);

    for n in 1..=n_steps {
        let (z_prev, y_prev) = (z[n - 1], y[n - 1]);
        let law_x = model.law_at(z_prev as f64 / capacity);
        let (mut z_next, mut y_next) = (0u64, 0u64);
        for _ in 0..z_prev {
            let u: f64 = rng.random();
            let (eta, xi) = law0.quantile_pair(&law_x, u);
            y_next += eta;
            z_next += xi;
        }
        for _ in z_prev..y_prev {
            let u: f64 = rng.random();
            y_next += law0.quantile(u);
        }
        if y_next > opts.population_cap {
            return Err(Error::Overflow {
                population: y_next,
                step: n,
                cap: opts.population_cap,
            });
        }
        if z_next == 0 && extinct_z_at.is_none() {
            extinct_z_at = Some(n);
        }
        z.push(z_next);
        y.push(y_next);
    }

    Ok(CoupledPath {
        capacity: k,
        z,
        y,
        seed,
        stream,
        extinct_z_at,
    })
}

/// `rho^{-n} Y_n`, the horizon-`n` proxy for the martingale limit `W`.
pub fn estimate_w(path: &CoupledPath, rho: f64, n: usize) -> Result<f64> {
    let y = path.y.get(n).ok_or_else(|| {
        Error::Domain(format!("step {n} beyond path of length {}", path.y.len()))
    })?;
    Ok(*y as f64 * rho.powi(-(n as i32)))
}

/// `x_n = f(x_{n-1})`.
pub fn deterministic_path(model: &OffspringModel, x0: f64, n: usize) -> Vec<f64> {
    iterate_map(model, x0, n)
}

/// One draw of `V_0, ..., V_n` with `V_0 = 0` and
/// `V_n = f'(x_{n-1}) V_{n-1} + sqrt(x_{n-1} sigma^2(x_{n-1})) W_n`.
pub fn gaussian_fluctuation_path(model: &OffspringModel, x0: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(x0 > 0.0) || !x0.is_finite() {
        return Err(Error::Domain(format!("fluctuation path needs x0 > 0, got {x0}")));
    }
    let xs = iterate_map(model, x0, n);
    let mut rng = replicate_rng(seed, 0);
    let mut v = Vec::with_capacity(n + 1);
    v.push(0.0);
    for k in 1..=n {
        let x = xs[k - 1];
        let w: f64 = StandardNormal.sample(&mut rng);
        let next = model.f_prime(x) * v[k - 1] + (x * model.variance_unchecked(x)).sqrt() * w;
        v.push(next);
    }
    Ok(v)
}

/// `Var V_n` from `v_n = f'(x_{n-1})^2 v_{n-1} + x_{n-1} sigma^2(x_{n-1})`, `v_0 = 0`.
pub fn fluctuation_variance(model: &OffspringModel, x0: f64, n: usize) -> Vec<f64> {
    let xs = iterate_map(model, x0, n);
    let mut v = Vec::with_capacity(n + 1);
    v.push(0.0);
    for k in 1..=n {
        let x = xs[k - 1];
        let d = model.f_prime(x);
        v.push(d * d * v[k - 1] + x * model.variance_unchecked(x));
    }
    v
}

/// Total offspring of `parents` individuals at density `x`, drawn in one shot
/// from the law of the sum. Same distribution as summing per-individual
/// draws, but carries no coupling with `Y`.
pub fn generation_total<R: Rng + ?Sized>(model: &OffspringModel, x: f64, parents: u64, rng: &mut R) -> u64 {
    if parents == 0 {
        return 0;
    }
    let rho = model.rho();
    match model.law_at(x).parts() {
        LawParts::Geometric { q } => negative_binomial(parents, q, rng),
        LawParts::ThinnedPoisson { survive } => {
            let alive = binomial(parents, survive, rng);
            poisson(rho * alive as f64, rng)
        }
        LawParts::ThinnedGeometric { survive, q } => {
            let alive = binomial(parents, survive, rng);
            negative_binomial(alive, q, rng)
        }
        LawParts::ThinnedBinary { survive, p2 } => 2 * binomial(parents, survive * p2, rng),
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial parameters").sample(rng)
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda).expect("valid poisson mean").sample(rng);
    draw as u64
}

/// Sum of `n` i.i.d. draws with `P(l) = q^l (1 - q)`, as a gamma-mixed Poisson.
fn negative_binomial<R: Rng + ?Sized>(n: u64, q: f64, rng: &mut R) -> u64 {
    if n == 0 || q <= 0.0 {
        return 0;
    }
    let rate: f64 = Gamma::new(n as f64, q / (1.0 - q))
        .expect("valid gamma parameters")
        .sample(rng);
    poisson(rate, rng)
}

/// `Z_0, ..., Z_n` alone, using [`generation_total`]. Not coupled to `Y`.
pub fn simulate_density(
    model: &OffspringModel,
    k: u64,
    n_steps: usize,
    opts: &SimOptions,
    seed: u64,
    stream: u64,
) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::Domain("capacity K must be >= 1".into()));
    }
    let mut rng = replicate_rng(seed, stream);
    let mut z = Vec::with_capacity(n_steps + 1);
    z.push(opts.z0);
    for n in 1..=n_steps {
        let prev = z[n - 1];
        let next = generation_total(model, prev as f64 / k as f64, prev, &mut rng);
        if next > opts.population_cap {
            return Err(Error::Overflow {
                population: next,
                step: n,
                cap: opts.population_cap,
            });
        }
        z.push(next);
    }
    Ok(z)
}
