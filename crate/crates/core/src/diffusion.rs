//! The limiting Gaussian process `chi(t) = ∫_0^t sigma_s dW_s` and the
//! martingale functional of its generator `(1/2) sigma_t^2 d^2/dx^2`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green_kubo::VarianceCurve;
use crate::mc::{path_rng, CenteringRecord, EnsembleKind, PathEnsemble};

/// Smooth test function with closed-form derivatives up to order three.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    /// `sum c_i x^i`; no compact support, for diagnostics only.
    Polynomial { coeffs: Vec<f64> },
    /// `p(x) phi((x - center) / radius)` with the bump `phi(u) = exp(1 - 1 / (1 - u^2))` on `|u| < 1`.
    CutoffPolynomial { coeffs: Vec<f64>, center: f64, radius: f64 },
}

/// `(A, A', A'', A''')` at one point.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction::Polynomial { coeffs: vec![c] }
    }

    pub fn identity() -> Self {
        TestFunction::Polynomial { coeffs: vec![0.0, 1.0] }
    }

    pub fn bump(center: f64, radius: f64) -> Result<Self> {
        Self::cutoff_polynomial(vec![1.0], center, radius)
    }

    /// `x^2` cut off smoothly outside `|x| < radius`.
    pub fn square_cutoff(radius: f64) -> Result<Self> {
        Self::cutoff_polynomial(vec![0.0, 0.0, 1.0], 0.0, radius)
    }

    pub fn cutoff_polynomial(coeffs: Vec<f64>, center: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite() && center.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bump radius must be positive, got {radius}"
            )));
        }
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "polynomial coefficients must be finite and non-empty".into(),
            ));
        }
        Ok(TestFunction::CutoffPolynomial { coeffs, center, radius })
    }

    pub fn is_compactly_supported(&self) -> bool {
        matches!(self, TestFunction::CutoffPolynomial { .. })
    }

    pub fn jet(&self, x: f64) -> Jet {
        match self {
            TestFunction::Polynomial { coeffs } => polynomial_jet(coeffs, x),
            TestFunction::CutoffPolynomial { coeffs, center, radius } => {
                let u = (x - center) / radius;
                let b = bump_jet(u);
                if b.value == 0.0 {
                    return Jet::default();
                }
                let (r1, r2, r3) = (1.0 / radius, 1.0 / (radius * radius), 1.0 / (radius * radius * radius));
                let (b1, b2, b3) = (b.d1 * r1, b.d2 * r2, b.d3 * r3);
                let p = polynomial_jet(coeffs, x);
                Jet {
                    value: p.value * b.value,
                    d1: p.d1 * b.value + p.value * b1,
                    d2: p.d2 * b.value + 2.0 * p.d1 * b1 + p.value * b2,
                    d3: p.d3 * b.value + 3.0 * p.d2 * b1 + 3.0 * p.d1 * b2 + p.value * b3,
                }
            }
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.jet(x).value
    }

    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        self.jet(x).d2
    }

    /// Sup norms of `A, A', A'', A'''`, or `None` when `A` is not compactly supported.
    pub fn derivative_bounds(&self) -> Option<[f64; 4]> {
        let TestFunction::CutoffPolynomial { center, radius, .. } = self else {
            return None;
        };
        let samples = 40_000;
        let mut bounds = [0.0f64; 4];
        for i in 0..=samples {
            let x = center - radius + 2.0 * radius * i as f64 / samples as f64;
            let j = self.jet(x);
            for (b, v) in bounds.iter_mut().zip([j.value, j.d1, j.d2, j.d3]) {
                *b = b.max(v.abs());
            }
        }
        // Margin for maxima between samples.
        Some(bounds.map(|b| b * 1.01))
    }
}

fn polynomial_jet(coeffs: &[f64], x: f64) -> Jet {
    let mut j = Jet::default();
    for &c in coeffs.iter().rev() {
        j.d3 = j.d3 * x + 3.0 * j.d2;
        j.d2 = j.d2 * x + 2.0 * j.d1;
        j.d1 = j.d1 * x + j.value;
        j.value = j.value * x + c;
    }
    j
}

/// Jet of `exp(1 - 1 / (1 - u^2))`, zero for `|u| >= 1`.
fn bump_jet(u: f64) -> Jet {
    let q = 1.0 - u * u;
    if q <= 1e-3 {
        // exp(1 - 1/q) < 1e-400 underflows to zero here.
        return Jet::default();
    }
    let g1 = -2.0 * u / (q * q);
    let g2 = -2.0 / (q * q) - 8.0 * u * u / (q * q * q);
    let g3 = -24.0 * u / (q * q * q) - 48.0 * u * u * u / (q * q * q * q);
    let phi = (1.0 - 1.0 / q).exp();
    Jet {
        value: phi,
        d1: phi * g1,
        d2: phi * (g1 * g1 + g2),
        d3: phi * (g1 * g1 * g1 + 3.0 * g1 * g2 + g3),
    }
}

/// Standard deviations of the exact Gaussian increments on `grid`, the first
/// one over `[0, grid[0]]`.
fn increment_sds(sigma: &VarianceCurve<f64>, grid: &[f64]) -> Result<Vec<f64>> {
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        let var = sigma.integral(prev, t);
        if !(var >= 0.0) {
            return Err(Error::Numeric(format!(
                "negative increment variance {var} on [{prev}, {t}]"
            )));
        }
        out.push(var.sqrt());
        prev = t;
    }
    Ok(out)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|t| !(*t >= 0.0 && *t <= 1.0)) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "time grid must be strictly increasing in [0, 1]".into(),
        ));
    }
    Ok(())
}

fn limit_ensemble(grid: &[f64], count: usize, seed: u64, values: Vec<f64>, mode: &str) -> PathEnsemble {
    PathEnsemble {
        kind: EnsembleKind::Limit,
        level: 0,
        paths: count,
        grid: grid.to_vec(),
        values,
        seed,
        centering: CenteringRecord {
            mode: mode.into(),
            measure: "none".into(),
            bins: 0,
            curve: vec![0.0; grid.len()],
        },
    }
}

/// `sample_limit_paths(sigma, grid, M, seed)` by exact Gaussian increments.
pub fn sample_limit_paths(sigma: &VarianceCurve<f64>, grid: &[f64], count: usize, seed: u64) -> Result<PathEnsemble> {
    check_grid(grid)?;
    let sds = increment_sds(sigma, grid)?;
    let width = grid.len();
    let mut values = vec![0.0; count * width];
    values.par_chunks_mut(width).enumerate().for_each(|(p, out)| {
        let mut rng = path_rng(seed, p as u64);
        let mut x = 0.0;
        for (o, sd) in out.iter_mut().zip(&sds) {
            let z: f64 = StandardNormal.sample(&mut rng);
            x += sd * z;
            *o = x;
        }
    });
    Ok(limit_ensemble(grid, count, seed, values, "exact_increments"))
}

/// Euler-Maruyama cross-check with `substeps` steps per grid interval and
/// `sigma` frozen at the left end of each step.
pub fn sample_limit_paths_euler(
    sigma: &VarianceCurve<f64>,
    grid: &[f64],
    count: usize,
    seed: u64,
    substeps: usize,
) -> Result<PathEnsemble> {
    check_grid(grid)?;
    let substeps = substeps.max(1);
    let width = grid.len();
    let mut values = vec![0.0; count * width];
    values.par_chunks_mut(width).enumerate().for_each(|(p, out)| {
        let mut rng = path_rng(seed, p as u64);
        let (mut x, mut prev) = (0.0, 0.0);
        for (o, &t) in out.iter_mut().zip(grid) {
            let dt = (t - prev) / substeps as f64;
            for s in 0..substeps {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += (sigma.value_at(prev + s as f64 * dt) * dt).sqrt() * z;
            }
            *o = x;
            prev = t;
        }
    });
    Ok(limit_ensemble(grid, count, seed, values, "euler_maruyama"))
}

/// `M_t - M_r` on one path: `A(x_t) - A(x_r) - ∫_r^t (1/2) sigma_s^2 A''(x_s) ds`,
/// the integral by the trapezoid rule on the grid. Indices refer to `grid`.
pub fn martingale_increment(
    path: &[f64],
    grid: &[f64],
    a: &TestFunction,
    sigma: &VarianceCurve<f64>,
    r: usize,
    t: usize,
) -> f64 {
    let drift = |i: usize| 0.5 * sigma.value_at(grid[i]) * a.second_derivative(path[i]);
    let mut integral = 0.0;
    for i in r..t {
        integral += (grid[i + 1] - grid[i]) * (drift(i) + drift(i + 1)) / 2.0;
    }
    a.value(path[t]) - a.value(path[r]) - integral
}

/// `martingale_functional(path, A, sigma, t)` with `M_0 = 0` at grid index 0.
pub fn martingale_functional(
    path: &[f64],
    grid: &[f64],
    a: &TestFunction,
    sigma: &VarianceCurve<f64>,
    t: usize,
) -> f64 {
    martingale_increment(path, grid, a, sigma, 0, t)
}
