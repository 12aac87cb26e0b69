//! Limiting parameter curves and the triangular parameter arrays built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Real;

/// Shape of the limiting curve `t -> gamma_t`.
#[derive(Clone, Debug, PartialEq)]
pub enum CurveKind<S> {
    Constant {
        value: S,
    },
    /// `start + (end - start) t`
    Linear {
        start: S,
        end: S,
    },
    /// `low + (high - low) (1 - cos 2 pi t) / 2`: starts and ends at `low`, peaks at `t = 1/2`.
    Cosine {
        low: S,
        high: S,
    },
    /// Piecewise-linear interpolation through `(t, value)` knots covering `[0, 1]`.
    Table {
        knots: Vec<(S, S)>,
    },
}

/// Whether `beta_star` must stay below 1/2 (the fluctuation theory) or only below 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Strict,
    /// Only for ergodic-average experiments.
    Relaxed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterCurve<S> {
    kind: CurveKind<S>,
    eta: S,
    beta_star: S,
    regime: Regime,
}

impl<S: Real> ParameterCurve<S> {
    pub fn new(kind: CurveKind<S>, eta: S, beta_star: S) -> Result<Self> {
        Self::with_regime(kind, eta, beta_star, Regime::Strict)
    }

    pub fn new_relaxed(kind: CurveKind<S>, eta: S, beta_star: S) -> Result<Self> {
        Self::with_regime(kind, eta, beta_star, Regime::Relaxed)
    }

    fn with_regime(kind: CurveKind<S>, eta: S, beta_star: S, regime: Regime) -> Result<Self> {
        let (cap, domain) = match regime {
            Regime::Strict => (S::half(), "(0, 1/2)"),
            Regime::Relaxed => (S::one(), "(0, 1)"),
        };
        if !(beta_star > S::zero() && beta_star < cap) {
            return Err(Error::Domain {
                what: "beta_star",
                value: beta_star.as_f64(),
                domain,
            });
        }
        if !(eta > S::zero() && eta <= S::one()) {
            return Err(Error::Domain {
                what: "eta",
                value: eta.as_f64(),
                domain: "(0, 1]",
            });
        }
        if let CurveKind::Table { knots } = &kind {
            if knots.len() < 2 {
                return Err(Error::InvalidArgument("a table curve needs at least two knots".into()));
            }
            if knots[0].0 != S::zero() || knots[knots.len() - 1].0 != S::one() {
                return Err(Error::InvalidArgument(
                    "table knots must start at t = 0 and end at t = 1".into(),
                ));
            }
            if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(Error::InvalidArgument(
                    "table knot times must be strictly increasing".into(),
                ));
            }
        }
        let curve = Self {
            kind,
            eta,
            beta_star,
            regime,
        };
        let (lo, hi) = curve.range();
        if !(lo >= S::zero() && hi <= beta_star) {
            return Err(Error::InvalidArgument(format!(
                "curve range [{lo}, {hi}] is not contained in [0, beta_star = {beta_star}]"
            )));
        }
        Ok(curve)
    }

    pub fn kind(&self) -> &CurveKind<S> {
        &self.kind
    }

    pub fn eta(&self) -> S {
        self.eta
    }

    pub fn beta_star(&self) -> S {
        self.beta_star
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Exact minimum and maximum of the curve over `[0, 1]`.
    pub fn range(&self) -> (S, S) {
        match &self.kind {
            CurveKind::Constant { value } => (*value, *value),
            CurveKind::Linear { start, end } | CurveKind::Cosine { low: start, high: end } => {
                (start.min(*end), start.max(*end))
            }
            CurveKind::Table { knots } => knots.iter().fold((S::infinity(), S::neg_infinity()), |(lo, hi), k| {
                (lo.min(k.1), hi.max(k.1))
            }),
        }
    }

    /// Lipschitz constant of the curve, which is also a Hölder-`eta` constant on `[0, 1]`.
    pub fn holder_constant(&self) -> S {
        match &self.kind {
            CurveKind::Constant { .. } => S::zero(),
            CurveKind::Linear { start, end } => (*end - *start).abs(),
            CurveKind::Cosine { low, high } => S::PI() * (*high - *low).abs(),
            CurveKind::Table { knots } => knots
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(S::zero(), S::max),
        }
    }

    pub fn eval(&self, t: S) -> Result<S> {
        if !(t >= S::zero() && t <= S::one()) {
            return Err(Error::Domain {
                what: "t",
                value: t.as_f64(),
                domain: "[0, 1]",
            });
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: S) -> S {
        let v = match &self.kind {
            CurveKind::Constant { value } => *value,
            CurveKind::Linear { start, end } => *start + (*end - *start) * t,
            CurveKind::Cosine { low, high } => {
                *low + (*high - *low) * (S::one() - (S::two() * S::PI() * t).cos()) * S::half()
            }
            CurveKind::Table { knots } => {
                let idx = knots.partition_point(|k| k.0 <= t);
                if idx == 0 {
                    knots[0].1
                } else if idx >= knots.len() {
                    knots[knots.len() - 1].1
                } else {
                    let (t0, v0) = knots[idx - 1];
                    let (t1, v1) = knots[idx];
                    if t == t0 {
                        v0
                    } else {
                        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                    }
                }
            }
        };
        v.max(S::zero()).min(self.beta_star)
    }
}

/// `curve_eval`: `gamma_t`, checked.
pub fn curve_eval<S: Real>(curve: &ParameterCurve<S>, t: S) -> Result<S> {
    curve.eval(t)
}

/// Row `n` of the parameter array: `alpha_{n,k}` for `0 <= k <= n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterRow<S> {
    entries: Vec<S>,
    beta_star: S,
}

impl<S: Real> ParameterRow<S> {
    pub fn from_entries(entries: Vec<S>, beta_star: S) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidArgument("a parameter row needs level n >= 1".into()));
        }
        if !(beta_star > S::zero() && beta_star < S::one()) {
            return Err(Error::Domain {
                what: "beta_star",
                value: beta_star.as_f64(),
                domain: "(0, 1)",
            });
        }
        if let Some(bad) = entries.iter().find(|a| !(**a >= S::zero() && **a <= beta_star)) {
            return Err(Error::Domain {
                what: "alpha_{n,k}",
                value: bad.as_f64(),
                domain: "[0, beta_star]",
            });
        }
        Ok(Self { entries, beta_star })
    }

    pub fn constant(alpha: S, n: usize, beta_star: S) -> Result<Self> {
        Self::from_entries(vec![alpha; n + 1], beta_star)
    }

    /// `alpha_{n,k} = gamma_{k/n}`.
    pub fn equipartition(curve: &ParameterCurve<S>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("equipartition needs n >= 1".into()));
        }
        let nf = S::of_usize(n);
        let entries = (0..=n).map(|k| curve.eval_unchecked(S::of_usize(k) / nf)).collect();
        Self::from_entries(entries, curve.beta_star())
    }

    /// Equipartition plus independent uniform noise of size `amplitude * n^{-eta}`,
    /// clipped back into `[0, beta_star]`. The rate condition then holds with
    /// budget `holder_constant + amplitude`.
    pub fn perturbed_equipartition(curve: &ParameterCurve<S>, n: usize, amplitude: S, seed: u64) -> Result<Self> {
        let mut row = Self::equipartition(curve, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = amplitude * S::of_usize(n).powf(-curve.eta());
        for a in row.entries.iter_mut() {
            let u = S::lit(rng.random_range(-1.0..=1.0));
            *a = (*a + scale * u).max(S::zero()).min(curve.beta_star());
        }
        Ok(row)
    }

    #[inline]
    pub fn level(&self) -> usize {
        self.entries.len() - 1
    }

    #[inline]
    pub fn alpha(&self, k: usize) -> S {
        self.entries[k]
    }

    pub fn entries(&self) -> &[S] {
        &self.entries
    }

    pub fn beta_star(&self) -> S {
        self.beta_star
    }

    /// `n^eta sup_t |alpha_{n, floor(nt)} - gamma_t|` over `t = j / (oversample n)`.
    pub fn rate_deviation(&self, curve: &ParameterCurve<S>, oversample: usize) -> S {
        let n = self.level();
        let points = oversample.max(1) * n;
        let nf = S::of_usize(n);
        let mut sup = S::zero();
        for j in 0..=points {
            let t = S::of_usize(j) / S::of_usize(points);
            let k = ((nf * t).floor().to_usize().unwrap_or(n)).min(n);
            sup = sup.max((self.entries[k] - curve.eval_unchecked(t)).abs());
        }
        nf.powf(curve.eta()) * sup
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cosine() -> ParameterCurve<f64> {
        ParameterCurve::new(CurveKind::Cosine { low: 0.05, high: 0.25 }, 1.0, 0.25).unwrap()
    }

    #[test]
    fn presets_evaluate() {
        let c = ParameterCurve::new(CurveKind::Constant { value: 0.2 }, 1.0, 0.3).unwrap();
        assert_eq!(curve_eval(&c, 0.77).unwrap(), 0.2);
        let l = ParameterCurve::new(CurveKind::Linear { start: 0.1, end: 0.3 }, 1.0, 0.3).unwrap();
        assert_abs_diff_eq!(curve_eval(&l, 0.5).unwrap(), 0.2, epsilon = 1e-15);
        assert!(curve_eval(&l, 1.2).is_err());
        let k = cosine();
        assert_abs_diff_eq!(k.eval(0.0).unwrap(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(0.5).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn table_reproduces_knots() {
        let knots = vec![(0.0, 0.1), (0.3, 0.2), (0.7, 0.05), (1.0, 0.15)];
        let c = ParameterCurve::new(CurveKind::Table { knots: knots.clone() }, 1.0, 0.25).unwrap();
        for (t, v) in knots {
            assert_eq!(c.eval(t).unwrap(), v);
        }
        assert_abs_diff_eq!(c.eval(0.15).unwrap(), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(c.holder_constant(), 0.15 / 0.4, epsilon = 1e-15);
    }

    #[test]
    fn construction_guards() {
        assert!(ParameterCurve::new(CurveKind::Constant { value: 0.2 }, 1.0, 0.6).is_err());
        assert!(ParameterCurve::new_relaxed(CurveKind::Constant { value: 0.2 }, 1.0, 0.6).is_ok());
        assert!(ParameterCurve::new(CurveKind::Constant { value: 0.3 }, 1.0, 0.25).is_err());
        assert!(ParameterCurve::new(CurveKind::Constant { value: 0.1 }, 0.0, 0.25).is_err());
        assert!(ParameterCurve::new(
            CurveKind::Table {
                knots: vec![(0.0, 0.1), (0.5, 0.1)]
            },
            1.0,
            0.25
        )
        .is_err());
    }

    #[test]
    fn equipartition_examples() {
        let c = ParameterCurve::new(CurveKind::Constant { value: 0.2 }, 1.0, 0.3).unwrap();
        let row = ParameterRow::equipartition(&c, 17).unwrap();
        assert!(row.entries().iter().all(|&a| a == 0.2));
        let l = ParameterCurve::new(CurveKind::Linear { start: 0.1, end: 0.3 }, 1.0, 0.3).unwrap();
        let row = ParameterRow::equipartition(&l, 10).unwrap();
        assert_abs_diff_eq!(row.alpha(5), 0.2, epsilon = 1e-15);
        assert_eq!(row.level(), 10);
        assert!(ParameterRow::equipartition(&l, 0).is_err());
    }

    #[test]
    fn rate_condition_holds_for_cosine_equipartition() {
        // Dense-grid sup of n |alpha_{n,floor(nt)} - gamma_t| against the exact Lipschitz constant.
        let c = cosine();
        let row = ParameterRow::equipartition(&c, 1024).unwrap();
        let dev = row.rate_deviation(&c, 10);
        assert!(dev <= c.holder_constant(), "{dev} > {}", c.holder_constant());
        assert!(dev > 0.5 * c.holder_constant());
    }

    #[test]
    fn perturbed_rows_stay_in_budget() {
        let c = cosine();
        for seed in 0..5 {
            let row = ParameterRow::perturbed_equipartition(&c, 512, 0.05, seed).unwrap();
            assert!(row.entries().iter().all(|&a| (0.0..=0.25).contains(&a)));
            assert!(row.rate_deviation(&c, 10) <= c.holder_constant() + 0.05 + 1e-12);
        }
    }

    #[test]
    fn equipartition_rows_converge_under_doubling() {
        let c = cosine();
        let mut prev = f64::INFINITY;
        for n in [16usize, 32, 64, 128, 256] {
            let coarse = ParameterRow::equipartition(&c, n).unwrap();
            let fine = ParameterRow::equipartition(&c, 2 * n).unwrap();
            let d = (0..=n)
                .map(|k| (fine.alpha(2 * k) - coarse.alpha(k)).abs())
                .fold(0.0, f64::max);
            assert!(d <= 1e-15);
            // Same profile at the midpoint between coarse nodes converges too.
            let gap = (0..n)
                .map(|k| (fine.alpha(2 * k + 1) - coarse.alpha(k)).abs())
                .fold(0.0, f64::max);
            assert!(gap < prev);
            prev = gap;
        }
    }

    proptest! {
        #[test]
        fn rows_stay_within_beta_star(low in 0.0f64..0.2, span in 0.0f64..0.2, n in 1usize..300) {
            let beta = 0.45;
            let c = ParameterCurve::new(CurveKind::Cosine { low, high: (low + span).min(beta) }, 1.0, beta).unwrap();
            let row = ParameterRow::equipartition(&c, n).unwrap();
            prop_assert!(row.entries().iter().all(|&a| (0.0..=beta).contains(&a)));
        }
    }
}
