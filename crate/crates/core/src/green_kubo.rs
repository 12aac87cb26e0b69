//! Invariant means, autocovariances and Green-Kubo variances of frozen maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::PmParameter;
use crate::scalar::ordered_sum;
use crate::schedule::ParameterCurve;
use crate::ulam::{bin_midpoint, rho, rho_tail, srb_solve, GridDensity, UlamOperator};
use crate::Real;

/// Default lag truncation.
pub const DEFAULT_TRUNCATION: usize = 500;
/// Lags `[2, ENVELOPE_FIT_LAG]` are used to fit the decay envelope constant.
pub const ENVELOPE_FIT_LAG: usize = 200;
/// Smallest rate exponent used in the decay envelope.
pub const ENVELOPE_BETA_FLOOR: f64 = 0.1;
/// Exponent of the Hölder-modulus diagnostic of variance curves.
pub const HOLDER_DIAGNOSTIC_EXPONENT: f64 = 0.25;
/// Fraction of the variance above which the tail estimate is logged as a warning.
pub const TAIL_WARNING_FRACTION: f64 = 0.01;

/// Lipschitz observable on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable<S> {
    /// `slope * x + intercept`
    Affine { slope: S, intercept: S },
    /// `amplitude * sin(2 pi frequency x)`
    Sine { amplitude: S, frequency: u32 },
    /// Piecewise-linear through `(x, value)` knots spanning `[0, 1]`.
    Table { knots: Vec<(S, S)> },
    /// `g o T_alpha - g` with `g(x) = sin(2 pi frequency x)`.
    Coboundary { frequency: u32, alpha: S },
    /// `scale * inner + shift`
    Linear {
        scale: S,
        shift: S,
        inner: Box<Observable<S>>,
    },
}

impl<S: Real> Observable<S> {
    pub fn identity() -> Self {
        Observable::Affine {
            slope: S::one(),
            intercept: S::zero(),
        }
    }

    pub fn constant(c: S) -> Self {
        Observable::Affine {
            slope: S::zero(),
            intercept: c,
        }
    }

    pub fn table(knots: Vec<(S, S)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument(
                "an observable table needs at least two knots".into(),
            ));
        }
        if knots[0].0 != S::zero() || knots[knots.len() - 1].0 != S::one() {
            return Err(Error::InvalidArgument("observable table knots must span [0, 1]".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) || knots.iter().any(|k| !k.1.is_finite()) {
            return Err(Error::InvalidArgument(
                "observable table knots must be strictly increasing and finite".into(),
            ));
        }
        Ok(Observable::Table { knots })
    }

    pub fn coboundary(frequency: u32, alpha: S) -> Result<Self> {
        PmParameter::new(alpha)?;
        Ok(Observable::Coboundary { frequency, alpha })
    }

    /// `c * self + b`
    pub fn affine_image(self, c: S, b: S) -> Self {
        Observable::Linear {
            scale: c,
            shift: b,
            inner: Box::new(self),
        }
    }

    pub fn eval(&self, x: S) -> S {
        match self {
            Observable::Affine { slope, intercept } => *slope * x + *intercept,
            Observable::Sine { amplitude, frequency } => *amplitude * sine(*frequency, x),
            Observable::Table { knots } => {
                let idx = knots.partition_point(|k| k.0 <= x).clamp(1, knots.len() - 1);
                let (x0, v0) = knots[idx - 1];
                let (x1, v1) = knots[idx];
                v0 + (v1 - v0) * (x - x0) / (x1 - x0)
            }
            Observable::Coboundary { frequency, alpha } => {
                let p = PmParameter::new(*alpha).expect("validated at construction");
                sine(*frequency, p.map(x)) - sine(*frequency, x)
            }
            Observable::Linear { scale, shift, inner } => *scale * inner.eval(x) + *shift,
        }
    }

    pub fn lipschitz_constant(&self) -> S {
        let two_pi = S::two() * S::PI();
        match self {
            Observable::Affine { slope, .. } => slope.abs(),
            Observable::Sine { amplitude, frequency } => amplitude.abs() * two_pi * S::of_usize(*frequency as usize),
            Observable::Table { knots } => knots
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(S::zero(), S::max),
            // Lip(g) (sup T' + 1) with sup T' = 2 + alpha.
            Observable::Coboundary { frequency, alpha } => {
                two_pi * S::of_usize(*frequency as usize) * (S::lit(3.0) + *alpha)
            }
            Observable::Linear { scale, inner, .. } => scale.abs() * inner.lipschitz_constant(),
        }
    }

    pub fn sup_norm(&self) -> S {
        match self {
            Observable::Affine { slope, intercept } => intercept.abs().max((*slope + *intercept).abs()),
            Observable::Sine { amplitude, .. } => amplitude.abs(),
            Observable::Table { knots } => knots.iter().fold(S::zero(), |acc, k| acc.max(k.1.abs())),
            Observable::Coboundary { .. } => S::two(),
            Observable::Linear { scale, shift, inner } => scale.abs() * inner.sup_norm() + shift.abs(),
        }
    }

    /// True when the observable is constant on `[0, 1]`.
    pub fn is_constant(&self) -> bool {
        match self {
            Observable::Affine { slope, .. } => *slope == S::zero(),
            Observable::Sine { amplitude, frequency } => *amplitude == S::zero() || *frequency == 0,
            Observable::Table { knots } => knots.iter().all(|k| k.1 == knots[0].1),
            Observable::Coboundary { frequency, .. } => *frequency == 0,
            Observable::Linear { scale, inner, .. } => *scale == S::zero() || inner.is_constant(),
        }
    }
}

#[inline]
fn sine<S: Real>(frequency: u32, x: S) -> S {
    (S::two() * S::PI() * S::of_usize(frequency as usize) * x).sin()
}

/// Green-Kubo variance with its truncation diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenKubo<S> {
    pub sigma2: S,
    /// `c_0, ..., c_K'` with `K' = max(K, ENVELOPE_FIT_LAG)`.
    pub autocovariances: Vec<S>,
    pub truncation: usize,
    /// Fitted `C` in `|c_k| <= C rho(k)`.
    pub envelope_constant: S,
    pub envelope_beta: S,
    /// `C sum_{k > K} rho(k)`.
    pub tail_estimate: S,
    pub tail_warning: bool,
}

/// A single map `T_alpha` with its Ulam operator and SRB density.
#[derive(Clone, Debug)]
pub struct FrozenSystem<S: Real> {
    op: UlamOperator<S>,
    srb: GridDensity<S>,
}

impl<S: Real> FrozenSystem<S> {
    pub fn new(alpha: S, m: usize, tol: S) -> Result<Self> {
        let op = UlamOperator::build(PmParameter::new(alpha)?, m)?;
        let srb = srb_solve(&op, tol)?.density;
        Ok(Self { op, srb })
    }

    pub fn alpha(&self) -> S {
        self.op.param().alpha()
    }

    pub fn operator(&self) -> &UlamOperator<S> {
        &self.op
    }

    pub fn srb(&self) -> &GridDensity<S> {
        &self.srb
    }

    /// Midpoint quadrature of `f` against the SRB density.
    pub fn invariant_mean(&self, f: &Observable<S>) -> S {
        self.srb.integrate(|x| f.eval(x))
    }

    /// `c_k = ∫ f̂ L^k(f̂ ĥ) dm` for `k = 0..=lags`.
    pub fn autocovariances(&self, f: &Observable<S>, lags: usize) -> Vec<S> {
        let m = self.op.bins();
        let mf = S::of_usize(m);
        let mean = self.invariant_mean(f);
        let fhat: Vec<S> = (0..m).map(|i| f.eval(bin_midpoint(i, m)) - mean).collect();
        let mut v: Vec<S> = fhat.iter().zip(self.srb.values()).map(|(a, h)| *a * *h).collect();
        let mut scratch = vec![S::zero(); m];
        let mut out = Vec::with_capacity(lags + 1);
        for k in 0..=lags {
            if k > 0 {
                self.op.apply_into(&v, &mut scratch);
                std::mem::swap(&mut v, &mut scratch);
            }
            out.push(ordered_sum(fhat.iter().zip(&v).map(|(a, b)| *a * *b)) / mf);
        }
        out
    }

    pub fn autocovariance(&self, f: &Observable<S>, k: usize) -> S {
        self.autocovariances(f, k)[k]
    }

    /// `c_0 + 2 sum_{k=1}^{K} c_k` with a fitted tail estimate.
    pub fn green_kubo(&self, f: &Observable<S>, truncation: usize) -> Result<GreenKubo<S>> {
        if truncation < 1 {
            return Err(Error::InvalidArgument(
                "Green-Kubo truncation must be at least 1".into(),
            ));
        }
        let lags = truncation.max(ENVELOPE_FIT_LAG);
        let autocov = self.autocovariances(f, lags);
        let sigma2 = autocov[0] + S::two() * ordered_sum(autocov[1..=truncation].iter().copied());
        let beta = self.alpha().max(S::lit(ENVELOPE_BETA_FLOOR));
        let envelope_constant = (2..=ENVELOPE_FIT_LAG)
            .map(|k| autocov[k].abs() / rho(k, beta))
            .fold(S::zero(), S::max);
        let tail_estimate = envelope_constant * S::lit(rho_tail(truncation, beta.as_f64()));
        let tail_warning = tail_estimate > S::lit(TAIL_WARNING_FRACTION) * sigma2.abs();
        if tail_warning {
            log::warn!(
                "Green-Kubo tail estimate {:.3e} exceeds {}% of sigma^2 = {:.6} at alpha = {}",
                tail_estimate.as_f64(),
                TAIL_WARNING_FRACTION * 100.0,
                sigma2.as_f64(),
                self.alpha()
            );
        }
        Ok(GreenKubo {
            sigma2,
            autocovariances: autocov,
            truncation,
            envelope_constant,
            envelope_beta: beta,
            tail_estimate,
            tail_warning,
        })
    }
}

/// `invariant_mean(f, alpha)` at `m` bins.
pub fn invariant_mean<S: Real>(f: &Observable<S>, alpha: S, m: usize, tol: S) -> Result<S> {
    Ok(FrozenSystem::new(alpha, m, tol)?.invariant_mean(f))
}

/// `green_kubo_sigma2(f, alpha, K)` at `m` bins.
pub fn green_kubo_sigma2<S: Real>(
    f: &Observable<S>,
    alpha: S,
    truncation: usize,
    m: usize,
    tol: S,
) -> Result<GreenKubo<S>> {
    FrozenSystem::new(alpha, m, tol)?.green_kubo(f, truncation)
}

/// Pairwise Hölder diagnostics of a variance curve.
#[derive(Clone, Debug, PartialEq)]
pub struct HolderFit<S> {
    /// Exponent used for `max_ratio`.
    pub diagnostic_exponent: S,
    /// `max |s2(t) - s2(s)| / |t - s|^diagnostic_exponent` over grid pairs.
    pub max_ratio: S,
    /// Least-squares fit `log |ds2| = log C + e log |dt|` over pairs with nonzero difference.
    pub fitted_exponent: Option<S>,
    pub fitted_constant: Option<S>,
}

/// `t -> sigma_t^2(f)` on a grid of macroscopic times.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceCurve<S> {
    pub grid: Vec<S>,
    pub alphas: Vec<S>,
    pub values: Vec<S>,
    pub tail_estimates: Vec<S>,
    pub invariant_means: Vec<S>,
    pub holder: HolderFit<S>,
}

impl<S: Real> VarianceCurve<S> {
    /// Curve from explicit values, for limit sampling with a prescribed sigma.
    pub fn from_values(grid: Vec<S>, values: Vec<S>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument("grid and values differ in length".into()));
        }
        let values = clip_variances(values)?;
        let holder = holder_fit(&grid, &values, S::lit(HOLDER_DIAGNOSTIC_EXPONENT));
        let n = grid.len();
        Ok(Self {
            alphas: vec![S::nan(); n],
            tail_estimates: vec![S::zero(); n],
            invariant_means: vec![S::nan(); n],
            grid,
            values,
            holder,
        })
    }

    pub fn constant(value: S) -> Result<Self> {
        Self::from_values(vec![S::zero(), S::one()], vec![value, value])
    }

    /// Linear interpolation, constant beyond the grid ends.
    pub fn value_at(&self, t: S) -> S {
        interpolate(&self.grid, &self.values, t)
    }

    /// Exact integral of the interpolant over `[a, b]`, `a <= b`.
    pub fn integral(&self, a: S, b: S) -> S {
        if b <= a {
            return S::zero();
        }
        let mut nodes = vec![a];
        nodes.extend(self.grid.iter().copied().filter(|&g| g > a && g < b));
        nodes.push(b);
        ordered_sum(
            nodes
                .windows(2)
                .map(|w| (w[1] - w[0]) * (self.value_at(w[0]) + self.value_at(w[1])) * S::half()),
        )
    }

    /// `∫_0^{min(s,t)} sigma^2`.
    pub fn covariance(&self, s: S, t: S) -> S {
        self.integral(S::zero(), s.min(t))
    }
}

fn validate_grid<S: Real>(grid: &[S]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("a time grid needs at least two points".into()));
    }
    if grid.iter().any(|t| !(*t >= S::zero() && *t <= S::one())) {
        return Err(Error::Domain {
            what: "grid time",
            value: grid
                .iter()
                .find(|t| !(**t >= S::zero() && **t <= S::one()))
                .unwrap()
                .as_f64(),
            domain: "[0, 1]",
        });
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

fn clip_variances<S: Real>(values: Vec<S>) -> Result<Vec<S>> {
    values
        .into_iter()
        .map(|v| {
            if v >= S::zero() {
                Ok(v)
            } else if v >= S::lit(-1e-9) {
                Ok(S::zero())
            } else {
                Err(Error::Numeric(format!("negative variance {v}")))
            }
        })
        .collect()
}

pub(crate) fn interpolate<S: Real>(grid: &[S], values: &[S], t: S) -> S {
    let idx = grid.partition_point(|g| *g <= t);
    if idx == 0 {
        return values[0];
    }
    if idx >= grid.len() {
        return values[grid.len() - 1];
    }
    let (t0, t1) = (grid[idx - 1], grid[idx]);
    let (v0, v1) = (values[idx - 1], values[idx]);
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

pub fn holder_fit<S: Real>(grid: &[S], values: &[S], exponent: S) -> HolderFit<S> {
    let mut max_ratio = S::zero();
    let (mut sx, mut sy, mut sxx, mut sxy, mut count) = (S::zero(), S::zero(), S::zero(), S::zero(), 0usize);
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let dt = (grid[j] - grid[i]).abs();
            let dv = (values[j] - values[i]).abs();
            max_ratio = max_ratio.max(dv / dt.powf(exponent));
            if dv > S::zero() {
                let (x, y) = (dt.ln(), dv.ln());
                sx = sx + x;
                sy = sy + y;
                sxx = sxx + x * x;
                sxy = sxy + x * y;
                count += 1;
            }
        }
    }
    let (fitted_exponent, fitted_constant) = if count >= 2 {
        let c = S::of_usize(count);
        let denom = c * sxx - sx * sx;
        if denom.abs() > S::zero() {
            let slope = (c * sxy - sx * sy) / denom;
            let intercept = (sy - slope * sx) / c;
            (Some(slope), Some(intercept.exp()))
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };
    HolderFit {
        diagnostic_exponent: exponent,
        max_ratio,
        fitted_exponent,
        fitted_constant,
    }
}

/// `sigma_curve(f, gamma, grid, K)`; frozen systems are solved once per distinct parameter, in parallel.
pub fn sigma_curve<S: Real>(
    f: &Observable<S>,
    gamma: &ParameterCurve<S>,
    grid: &[S],
    truncation: usize,
    m: usize,
    tol: S,
) -> Result<VarianceCurve<S>> {
    validate_grid(grid)?;
    let alphas: Vec<S> = grid.iter().map(|&t| gamma.eval(t)).collect::<Result<_>>()?;
    let mut distinct = alphas.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite parameters"));
    distinct.dedup();
    let solved: Vec<Result<(GreenKubo<S>, S)>> = distinct
        .par_iter()
        .map(|&a| {
            let sys = FrozenSystem::new(a, m, tol)?;
            Ok((sys.green_kubo(f, truncation)?, sys.invariant_mean(f)))
        })
        .collect();
    let solved: Vec<(GreenKubo<S>, S)> = solved.into_iter().collect::<Result<_>>()?;
    let lookup = |a: S| {
        let i = distinct.partition_point(|d| *d < a);
        &solved[i]
    };
    let values = clip_variances(alphas.iter().map(|&a| lookup(a).0.sigma2).collect())?;
    let tail_estimates = alphas.iter().map(|&a| lookup(a).0.tail_estimate).collect();
    let invariant_means = alphas.iter().map(|&a| lookup(a).1).collect();
    let holder = holder_fit(grid, &values, S::lit(HOLDER_DIAGNOSTIC_EXPONENT));
    Ok(VarianceCurve {
        grid: grid.to_vec(),
        alphas,
        values,
        tail_estimates,
        invariant_means,
        holder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::CurveKind;
    use approx::assert_abs_diff_eq;

    const M: usize = 1 << 12;

    /// Exact `E[(x - 1/2)(T^k x - 1/2)]` for the doubling map, summed over the
    /// `2^k` dyadic intervals on which `T^k` is affine.
    fn doubling_autocovariance_by_enumeration(k: u32) -> f64 {
        let parts = 1u64 << k;
        let w = 1.0 / parts as f64;
        (0..parts)
            .map(|j| {
                let a = j as f64 * w;
                // On [a, a + w], T^k x = u with x = a + w u, dx = w du:
                // w ∫_0^1 (a + w u - 1/2)(u - 1/2) du, by two-point Gauss (exact for quadratics).
                let h = 0.5 / 3f64.sqrt();
                [0.5 - h, 0.5 + h]
                    .iter()
                    .map(|u| 0.5 * w * (a + w * u - 0.5) * (u - 0.5))
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn enumeration_oracle_matches_geometric_autocovariances() {
        for k in 0..12 {
            let expected = 0.5f64.powi(k as i32) / 12.0;
            assert_abs_diff_eq!(doubling_autocovariance_by_enumeration(k), expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn doubling_map_green_kubo() {
        let sys = FrozenSystem::new(0.0f64, M, 1e-13).unwrap();
        let f = Observable::identity();
        assert_abs_diff_eq!(sys.invariant_mean(&f), 0.5, epsilon = 1e-14);
        let c = sys.autocovariances(&f, 8);
        for (k, ck) in c.iter().enumerate() {
            // Ulam smoothing costs a relative O(4^k / m^2).
            let exact = doubling_autocovariance_by_enumeration(k as u32);
            assert!((*ck - exact).abs() <= 1e-2 * exact, "lag {k}: {ck} vs {exact}");
        }
        let gk = sys.green_kubo(&f, 500).unwrap();
        // Ulam discretization error is O(1/m).
        assert_abs_diff_eq!(gk.sigma2, 0.25, epsilon = 1.0 / M as f64);
        assert!(!gk.tail_warning);
    }

    #[test]
    fn constant_observable_has_zero_variance() {
        let sys = FrozenSystem::new(0.2f64, M, 1e-13).unwrap();
        let gk = sys.green_kubo(&Observable::constant(3.0), 100).unwrap();
        assert_abs_diff_eq!(gk.sigma2, 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(sys.invariant_mean(&Observable::constant(1.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bilinearity_and_shift_invariance() {
        let sys = FrozenSystem::new(0.2f64, M, 1e-13).unwrap();
        let f = Observable::Sine {
            amplitude: 1.0,
            frequency: 1,
        };
        let base = sys.green_kubo(&f, 300).unwrap().sigma2;
        let scaled = sys.green_kubo(&f.clone().affine_image(3.0, 0.0), 300).unwrap().sigma2;
        assert!((scaled - 9.0 * base).abs() <= 1e-10 * scaled.abs());
        let shifted = sys.green_kubo(&f.clone().affine_image(1.0, 5.0), 300).unwrap().sigma2;
        assert!((shifted - base).abs() <= 1e-10 * base.abs());
        assert!(base > 0.0);
    }

    #[test]
    fn coboundary_variance_vanishes() {
        let sys = FrozenSystem::new(0.25f64, M, 1e-13).unwrap();
        let g = Observable::coboundary(1, 0.25).unwrap();
        assert_abs_diff_eq!(sys.invariant_mean(&g), 0.0, epsilon = 1e-3);
        let gk = sys.green_kubo(&g, 500).unwrap();
        assert!(gk.sigma2.abs() <= 1e-3, "{}", gk.sigma2);
    }

    #[test]
    fn tail_estimate_is_monotone_in_truncation() {
        let sys = FrozenSystem::new(0.3f64, M, 1e-13).unwrap();
        let f = Observable::identity();
        let tails: Vec<f64> = [200, 300, 500, 800]
            .iter()
            .map(|&k| sys.green_kubo(&f, k).unwrap().tail_estimate)
            .collect();
        for w in tails.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn autocovariances_respect_decay_envelope() {
        let sys = FrozenSystem::new(0.3f64, M, 1e-13).unwrap();
        let gk = sys.green_kubo(&Observable::identity(), 200).unwrap();
        assert!(gk.autocovariances[0] > 0.0);
        for k in 2..=200 {
            assert!(gk.autocovariances[k].abs() <= gk.envelope_constant * rho(k, gk.envelope_beta) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn observable_lipschitz_bounds_hold_on_dense_grid() {
        let cases = vec![
            Observable::identity(),
            Observable::Sine {
                amplitude: 0.7,
                frequency: 3,
            },
            Observable::table(vec![(0.0, 0.0), (0.3, 1.0), (1.0, -0.5)]).unwrap(),
            Observable::coboundary(1, 0.3).unwrap(),
            Observable::coboundary(2, 0.0).unwrap().affine_image(-2.0, 1.0),
        ];
        let n = 20_000;
        for f in cases {
            let lip = f.lipschitz_constant();
            let sup = f.sup_norm();
            let mut prev = f.eval(0.0);
            for i in 1..=n {
                let x = i as f64 / n as f64;
                let v = f.eval(x);
                assert!(
                    (v - prev).abs() <= lip / n as f64 * (1.0 + 1e-9) + 1e-12,
                    "{f:?} at {x}"
                );
                assert!(v.abs() <= sup + 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn variance_curve_constant_and_pointwise() {
        let f = Observable::identity();
        let flat = ParameterCurve::new(CurveKind::Constant { value: 0.0 }, 1.0, 0.25).unwrap();
        let grid: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let curve = sigma_curve(&f, &flat, &grid, 200, 1024, 1e-13).unwrap();
        assert!(curve.values.iter().all(|&v| (v - curve.values[0]).abs() == 0.0));
        assert_abs_diff_eq!(curve.integral(0.0, 1.0), curve.values[0], epsilon = 1e-14);
        assert_eq!(curve.holder.max_ratio, 0.0);

        let linear = ParameterCurve::new(CurveKind::Linear { start: 0.05, end: 0.45 }, 1.0, 0.45).unwrap();
        let curve = sigma_curve(&f, &linear, &grid, 200, 1024, 1e-13).unwrap();
        for (t, v) in grid.iter().zip(&curve.values) {
            let direct = green_kubo_sigma2(&f, linear.eval(*t).unwrap(), 200, 1024, 1e-13)
                .unwrap()
                .sigma2;
            assert_eq!(*v, direct);
        }
        assert!(curve.holder.max_ratio.is_finite() && curve.holder.max_ratio > 0.0);
    }

    #[test]
    fn interpolated_integral() {
        let c = VarianceCurve::from_values(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c.integral(0.0, 1.0), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(c.integral(0.25, 0.75), 0.4375, epsilon = 1e-15);
        assert_abs_diff_eq!(c.covariance(0.9, 0.5), 0.25, epsilon = 1e-15);
        assert!(VarianceCurve::from_values(vec![0.0, 1.0], vec![0.0, -1.0]).is_err());
        assert_eq!(
            VarianceCurve::from_values(vec![0.0, 1.0], vec![0.0, -1e-12])
                .unwrap()
                .values[1],
            0.0
        );
    }
}
