//! The semiconjugacy `H(x) = lim_n f^n(x / rho^n)` and its derivatives.
//!
//! `H` linearises the density map at the origin: `H(x) = f(H(x / rho))`,
//! `H(0) = 0`, `H'(0) = 1`. Near the origin it is strictly increasing, which
//! gives the local conjugacy `f(x) = H(rho H^{-1}(x))`.
//!
//! Values are computed by direct iteration with an a posteriori Cauchy stop;
//! derivatives come from the infinite product
//! `H'(x) = prod_{j>=1} f'(H(x rho^{-j})) / rho` and its logarithmic
//! derivative series. [`ConjugacyEvaluator`] tabulates all three on a grid and
//! checks the identities above before handing out values.

use crate::error::{Error, Result};
use crate::offspring::{uniform_grid, OffspringModel};

/// Iteration cap for `H_n`.
pub const MAX_ITERATIONS: usize = 200;
/// Allowed semiconjugacy residual, in units of the requested tolerance.
pub const RESIDUAL_FACTOR: f64 = 10.0;
const INVERSE_WIDTH: f64 = 1e-12;
const RATIO_BAND: f64 = 0.05;

/// `(x_0, f(x_0), ..., f^n(x_0))`.
pub fn iterate_map(model: &OffspringModel, x0: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..n {
        x = model.reproduction_map(x);
        out.push(x);
    }
    out
}

/// `H_n(x) = f^n(x / rho^n)`.
pub fn h_n(model: &OffspringModel, x: f64, n: usize) -> f64 {
    let rho = model.rho();
    let mut y = x;
    for _ in 0..n {
        y /= rho;
    }
    for _ in 0..n {
        y = model.reproduction_map(y);
    }
    y
}

/// Successive increments `|H_{k+1}(x) - H_k(x)|` for `k = 0..n`.
pub fn h_increments(model: &OffspringModel, x: f64, n: usize) -> Vec<f64> {
    let mut prev = x;
    (1..=n)
        .map(|k| {
            let cur = h_n(model, x, k);
            let d = (cur - prev).abs();
            prev = cur;
            d
        })
        .collect()
}

fn check_args(x: f64, tol: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("H is defined on [0, inf), got {x}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(())
}

/// `H(x)` to absolute accuracy `tol`.
///
/// Iterates until `|H_{n+1}(x) - H_n(x)| <= tol (1 - 1/rho)`, counted only
/// once `x rho^{-n}` lies below [`linear_radius`]. From there on increments
/// shrink geometrically with ratio about `1/rho`, so the remaining tail is
/// below `tol`. Earlier increments can vanish by accident (Ricker with
/// `rho = 2` has `f(2) = f(1) = 1`).
pub fn h_eval(model: &OffspringModel, x: f64, tol: f64) -> Result<f64> {
    check_args(x, tol)?;
    if x == 0.0 || model.is_density_independent() {
        return Ok(x);
    }
    let rho = model.rho();
    let threshold = tol * (1.0 - 1.0 / rho);
    let radius = linear_radius(model);
    let mut prev = x;
    let mut last = f64::INFINITY;
    let mut y = x;
    for n in 1..=MAX_ITERATIONS {
        y /= rho;
        let cur = h_n(model, x, n);
        let d = (cur - prev).abs();
        if d <= threshold && y <= radius {
            return Ok(cur);
        }
        prev = cur;
        last = d;
    }
    Err(Error::Convergence {
        x,
        iterations: MAX_ITERATIONS,
        last_increment: last,
    })
}

/// `H`, `H'` and `H''` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HDerivatives {
    pub h: f64,
    pub h_prime: f64,
    pub h_second: f64,
    /// Number of factors `f'(H(x rho^{-j}))/rho` that were multiplied.
    pub depth: usize,
}

/// Truncation depth for the product and series at `x`.
/// Radius below which `|log(f'(H)/rho)| <= (2c/rho) H` with `c = sup |f''|`.
pub fn linear_radius(model: &OffspringModel) -> f64 {
    model.rho() / (2.0 * model.f_second_sup())
}

fn derivative_depth(model: &OffspringModel, x: f64, tol: f64) -> usize {
    let rho = model.rho();
    let c = model.f_second_sup();
    let r = linear_radius(model);
    let j_min = if x > r { (x / r).log(rho).floor() as usize + 1 } else { 0 };
    let big_c = 2.0 * c / rho;
    let mut j = j_min;
    while big_c * x * rho.powi(-(j as i32)) / (rho - 1.0) >= tol {
        j += 1;
    }
    // Series terms are bounded by (c/rho) rho^{-i}.
    let mut i = 0usize;
    while (c / rho) * rho.powi(-(i as i32)) / (rho - 1.0) >= tol {
        i += 1;
    }
    j.max(i).max(1)
}

pub fn h_derivatives(model: &OffspringModel, x: f64, tol: f64) -> Result<HDerivatives> {
    check_args(x, tol)?;
    if model.is_density_independent() {
        return Ok(HDerivatives {
            h: x,
            h_prime: 1.0,
            h_second: 0.0,
            depth: 0,
        });
    }
    let rho = model.rho();
    let series_len = derivative_depth(model, x, tol);
    // Each H'(x rho^{-i}) inside the series needs its own product of length series_len.
    let depth = 2 * series_len;

    // a[j] = f'(H(x rho^{-j}))/rho, b[j] = f''(H(x rho^{-j}))/rho for j = 1..=depth
    let mut a = vec![1.0; depth + 2];
    let mut b = vec![0.0; depth + 2];
    let mut y = x;
    for j in 1..=depth {
        y /= rho;
        let h = h_eval(model, y, tol)?;
        a[j] = model.f_prime(h) / rho;
        b[j] = model.f_second(h) / rho;
    }
    let mut suffix = vec![1.0; depth + 2];
    for j in (1..=depth).rev() {
        suffix[j] = a[j] * suffix[j + 1];
    }

    // G_n' written without dividing by f', so the 0/0 convention never arises.
    let mut h_second = 0.0;
    let mut prefix = 1.0;
    let mut scale = 1.0;
    for i in 1..=series_len {
        scale /= rho;
        let others = prefix * suffix[i + 1];
        h_second += others * b[i] * suffix[i + 1] * scale;
        prefix *= a[i];
    }

    Ok(HDerivatives {
        h: h_eval(model, x, tol)?,
        h_prime: suffix[1],
        h_second,
        depth,
    })
}

pub fn h_prime(model: &OffspringModel, x: f64, tol: f64) -> Result<f64> {
    Ok(h_derivatives(model, x, tol)?.h_prime)
}

pub fn h_second(model: &OffspringModel, x: f64, tol: f64) -> Result<f64> {
    Ok(h_derivatives(model, x, tol)?.h_second)
}

/// `|H(x) - f(H(x / rho))|`.
pub fn semiconjugacy_residual(model: &OffspringModel, x: f64, tol: f64) -> Result<f64> {
    let h = h_eval(model, x, tol)?;
    let inner = h_eval(model, x / model.rho(), tol)?;
    Ok((h - model.reproduction_map(inner)).abs())
}

/// Ratio `d_{n+1}/d_n` of `H_n` increments at the deepest `n` still clear of round-off.
pub fn increment_ratio(model: &OffspringModel, x: f64) -> Option<f64> {
    let d = h_increments(model, x, MAX_ITERATIONS.min(120));
    (5..d.len() - 1)
        .rev()
        .find(|&n| d[n + 1] >= 1e-11)
        .map(|n| d[n + 1] / d[n])
}

/// `H`, `H'`, `H''` tabulated on `0, step, ..., x_max`, with monotone cubic
/// interpolation in between and the semiconjugacy used to reach beyond `x_max`.
#[derive(Debug, Clone)]
pub struct ConjugacyEvaluator {
    model: OffspringModel,
    step: f64,
    grid: Vec<f64>,
    h_values: Vec<f64>,
    h_prime_values: Vec<f64>,
    h_second_values: Vec<f64>,
    residuals: Vec<f64>,
    tol: f64,
    n_depth: usize,
    invertible_index: usize,
    convergence_ratios: Vec<(f64, f64)>,
}

impl ConjugacyEvaluator {
    /// Tabulates and self-checks `H`. Fails if any grid point fails to converge
    /// or any of the identities `H(0) = 0`, `H'(0) = 1`, 1-Lipschitz,
    /// semiconjugacy and geometric convergence is violated.
    pub fn build(model: &OffspringModel, x_max: f64, step: f64, tol: f64) -> Result<Self> {
        if !(x_max > 0.0) || !(step > 0.0) || step > x_max || !x_max.is_finite() {
            return Err(Error::Domain(format!(
                "need 0 < step <= x_max, got step={step}, x_max={x_max}"
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
        }
        let grid = uniform_grid(x_max, step);
        let rho = model.rho();
        let n = grid.len();
        let mut h_values = Vec::with_capacity(n);
        let mut h_prime_values = Vec::with_capacity(n);
        let mut h_second_values = Vec::with_capacity(n);
        let mut residuals = Vec::with_capacity(n);
        let mut n_depth = 0;
        for &x in &grid {
            let d = h_derivatives(model, x, tol)?;
            let inner = h_eval(model, x / rho, tol)?;
            residuals.push((d.h - model.reproduction_map(inner)).abs());
            h_values.push(d.h);
            h_prime_values.push(d.h_prime);
            h_second_values.push(d.h_second);
            n_depth = n_depth.max(d.depth);
        }

        if h_values[0] != 0.0 {
            return Err(Error::Certification(format!("H(0) = {} != 0", h_values[0])));
        }
        if (h_prime_values[0] - 1.0).abs() > 1e-9 {
            return Err(Error::Certification(format!("H'(0) = {} != 1", h_prime_values[0])));
        }
        for i in 0..n - 1 {
            let rise = (h_values[i + 1] - h_values[i]).abs();
            if rise > grid[i + 1] - grid[i] + 2.0 * tol {
                return Err(Error::Certification(format!(
                    "H not 1-Lipschitz on [{}, {}]",
                    grid[i],
                    grid[i + 1]
                )));
            }
        }
        if let Some((i, r)) = residuals
            .iter()
            .enumerate()
            .find(|(_, &r)| r > RESIDUAL_FACTOR * tol)
        {
            return Err(Error::Certification(format!(
                "semiconjugacy residual {r:e} at x={} exceeds {RESIDUAL_FACTOR} tol",
                grid[i]
            )));
        }

        let invertible_index = (0..n - 1)
            .find(|&i| h_values[i + 1] - h_values[i] < step / 4.0)
            .unwrap_or(n - 1);

        let mut convergence_ratios = Vec::new();
        if !model.is_density_independent() && invertible_index > 0 {
            let upper = grid[invertible_index];
            for probe in [upper / 4.0, upper / 2.0, upper] {
                if let Some(ratio) = increment_ratio(model, probe) {
                    if (ratio - 1.0 / rho).abs() > RATIO_BAND {
                        return Err(Error::Certification(format!(
                            "H_n increments at x={probe} decay with ratio {ratio}, expected {}",
                            1.0 / rho
                        )));
                    }
                    convergence_ratios.push((probe, ratio));
                }
            }
        }

        Ok(Self {
            model: model.clone(),
            step,
            grid,
            h_values,
            h_prime_values,
            h_second_values,
            residuals,
            tol,
            n_depth,
            invertible_index,
            convergence_ratios,
        })
    }

    pub fn model(&self) -> &OffspringModel {
        &self.model
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }

    pub fn h_prime_values(&self) -> &[f64] {
        &self.h_prime_values
    }

    pub fn h_second_values(&self) -> &[f64] {
        &self.h_second_values
    }

    /// Semiconjugacy residuals at the grid points.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Deepest product used for `H'` and `H''` on the grid.
    pub fn n_depth(&self) -> usize {
        self.n_depth
    }

    pub fn x_max(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    /// Largest grid point below which `H` rises by at least `step/4` per cell.
    pub fn invertible_upper(&self) -> f64 {
        self.grid[self.invertible_index]
    }

    /// `(probe, d_{n+1}/d_n)` pairs recorded while building.
    pub fn convergence_ratios(&self) -> &[(f64, f64)] {
        &self.convergence_ratios
    }

    /// Interpolated `H(x)`. Beyond the table, `H(x) = f^k(H(x / rho^k))`.
    pub fn h(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("H is defined on [0, inf), got {x}")));
        }
        if self.model.is_density_independent() {
            return Ok(x);
        }
        let x_max = self.x_max();
        if x <= x_max {
            return Ok(self.interpolate(x));
        }
        let rho = self.model.rho();
        let mut y = x;
        let mut k = 0;
        while y > x_max {
            y /= rho;
            k += 1;
        }
        let mut h = self.interpolate(y);
        for _ in 0..k {
            h = self.model.reproduction_map(h);
        }
        Ok(h)
    }

    fn interpolate(&self, x: f64) -> f64 {
        let last = self.grid.len() - 1;
        let i = ((x / self.step) as usize).min(last - 1);
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let (y0, y1) = (self.h_values[i], self.h_values[i + 1]);
        let width = x1 - x0;
        let (d0, d1) = monotone_slopes(
            self.h_prime_values[i],
            self.h_prime_values[i + 1],
            (y1 - y0) / width,
        );
        let t = ((x - x0) / width).clamp(0.0, 1.0);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * width * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * width * d1
    }

    /// `H^{-1}(y)` on the certified monotone interval, by bisection.
    pub fn h_inverse(&self, y: f64) -> Result<f64> {
        let upper = self.h_values[self.invertible_index];
        if !(0.0..=upper).contains(&y) {
            return Err(Error::Range { value: y, upper });
        }
        if self.model.is_density_independent() || y == 0.0 {
            return Ok(y);
        }
        let (mut lo, mut hi) = (0.0, self.invertible_upper());
        while hi - lo > INVERSE_WIDTH {
            let mid = 0.5 * (lo + hi);
            if self.interpolate(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Fritsch-Carlson limiter applied to exact end-point slopes.
fn monotone_slopes(mut d0: f64, mut d1: f64, secant: f64) -> (f64, f64) {
    if secant == 0.0 {
        return (0.0, 0.0);
    }
    if d0 * secant < 0.0 {
        d0 = 0.0;
    }
    if d1 * secant < 0.0 {
        d1 = 0.0;
    }
    let (alpha, beta) = (d0 / secant, d1 / secant);
    let s = alpha * alpha + beta * beta;
    if s > 9.0 {
        let tau = 3.0 / s.sqrt();
        d0 = tau * alpha * secant;
        d1 = tau * beta * secant;
    }
    (d0, d1)
}
