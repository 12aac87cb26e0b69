//! The Pomeau-Manneville family
//!
//! ```text
//! T_a(x) = x (1 + 2^a x^a)   for x in [0, 1/2)
//! T_a(x) = 2x - 1            for x in [1/2, 1]
//! ```
//!
//! with a neutral fixed point at the origin. The branch point `x = 1/2`
//! belongs to the right branch.

use crate::error::{check_unit, Error, Result};
use crate::schedule::ParameterRow;
use crate::Real;

const INVERSE_MAX_ITER: usize = 128;
const BRACKET_STEPS: usize = 4;

/// Map parameter `alpha` in `[0, 1)`, with `2^alpha` cached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmParameter<S> {
    alpha: S,
    scale: S,
}

/// Both preimages of a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseBranches<S> {
    pub left: S,
    pub right: S,
}

impl<S: Real> PmParameter<S> {
    pub fn new(alpha: S) -> Result<Self> {
        if alpha >= S::zero() && alpha < S::one() {
            Ok(Self {
                alpha,
                scale: S::two().powf(alpha),
            })
        } else {
            Err(Error::Domain {
                what: "alpha",
                value: alpha.as_f64(),
                domain: "[0, 1)",
            })
        }
    }

    pub fn doubling() -> Self {
        Self {
            alpha: S::zero(),
            scale: S::one(),
        }
    }

    #[inline]
    pub fn alpha(self) -> S {
        self.alpha
    }

    #[inline]
    fn xpow(self, x: S) -> S {
        if self.alpha == S::zero() {
            S::one()
        } else if x <= S::zero() {
            S::zero()
        } else {
            (self.alpha * x.ln()).exp()
        }
    }

    /// `x (1 + 2^a x^a)` evaluated on `[0, 1/2]`; at `1/2` this is the left limit 1.
    #[inline]
    pub fn left_branch(self, x: S) -> S {
        if x <= S::zero() {
            return S::zero();
        }
        (x * (S::one() + self.scale * self.xpow(x))).min(S::one())
    }

    /// Map evaluation without domain checks, for hot loops.
    #[inline]
    pub fn map(self, x: S) -> S {
        if x < S::half() {
            self.left_branch(x)
        } else {
            S::two() * x - S::one()
        }
    }

    #[inline]
    pub fn derivative(self, x: S) -> S {
        if x < S::half() {
            S::one() + self.scale * (S::one() + self.alpha) * self.xpow(x)
        } else {
            S::two()
        }
    }

    #[inline]
    pub fn right_inverse(self, y: S) -> S {
        (y + S::one()) * S::half()
    }

    /// Preimage of `y` under the left branch.
    pub fn left_inverse(self, y: S) -> Result<S> {
        self.left_inverse_from(y, None)
    }

    /// Preimage of `y` under the left branch, starting Newton from `guess`
    /// when one is supplied (used when sweeping nearby parameters).
    pub fn left_inverse_from(self, y: S, guess: Option<S>) -> Result<S> {
        if y <= S::zero() {
            return Ok(S::zero());
        }
        if y >= S::one() {
            return Ok(S::half());
        }
        if self.alpha == S::zero() {
            return Ok(y * S::half());
        }
        // T(x) lies between x and 2x on the left branch.
        let mut lo = y * S::half();
        let mut hi = y.min(S::half());
        let residual = |x: S| self.left_branch(x) - y;

        let mut x = match guess {
            Some(g) if g > lo && g < hi => g,
            _ => {
                for _ in 0..BRACKET_STEPS {
                    let mid = (lo + hi) * S::half();
                    if residual(mid) > S::zero() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                (lo + hi) * S::half()
            }
        };

        // Newton converges quadratically here, so a step below sqrt(eps) x
        // leaves an error near eps x.
        let accept = S::epsilon().sqrt();
        let slope = self.scale * (S::one() + self.alpha);
        for _ in 0..INVERSE_MAX_ITER {
            let p = self.xpow(x);
            let r = x * (S::one() + self.scale * p) - y;
            if r == S::zero() {
                return Ok(x);
            }
            if r > S::zero() {
                hi = hi.min(x);
            } else {
                lo = lo.max(x);
            }
            let newton = x - r / (S::one() + slope * p);
            if (newton - x).abs() <= accept * x {
                return Ok(newton);
            }
            x = if newton > lo && newton < hi {
                newton
            } else {
                (lo + hi) * S::half()
            };
        }
        let tol = S::lit(S::INVERSE_RESIDUAL);
        let r = residual(x).abs();
        if r <= tol {
            Ok(x)
        } else {
            Err(Error::Convergence {
                method: "left inverse branch",
                iterations: INVERSE_MAX_ITER,
                residual: r.as_f64(),
            })
        }
    }

    pub fn inverse_branches(self, y: S) -> Result<InverseBranches<S>> {
        check_unit("y", y)?;
        Ok(InverseBranches {
            left: self.left_inverse(y)?,
            right: self.right_inverse(y),
        })
    }
}

/// `T_alpha(x)`, checked.
pub fn apply_map<S: Real>(alpha: S, x: S) -> Result<S> {
    let p = PmParameter::new(alpha)?;
    check_unit("x", x)?;
    Ok(p.map(x))
}

/// `T_alpha'(x)`, checked. The branch point takes the right-branch value 2.
pub fn map_derivative<S: Real>(alpha: S, x: S) -> Result<S> {
    let p = PmParameter::new(alpha)?;
    check_unit("x", x)?;
    Ok(p.derivative(x))
}

pub fn inverse_branches<S: Real>(alpha: S, y: S) -> Result<InverseBranches<S>> {
    PmParameter::new(alpha)?.inverse_branches(y)
}

/// An orbit `x_{n,0}, ..., x_{n,k}` along one row of the parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub x0: S,
    pub values: Vec<S>,
    /// Level `n` of the row that generated the orbit.
    pub level: usize,
}

/// Iterates `x_{j+1} = T_{alpha_{n,j+1}}(x_j)` for `j < k`.
pub fn iterate_sequential<S: Real>(row: &ParameterRow<S>, x0: S, k: usize) -> Result<Trajectory<S>> {
    check_unit("x0", x0)?;
    if k > row.level() {
        return Err(Error::InvalidArgument(format!(
            "requested {k} steps on a row of level {}",
            row.level()
        )));
    }
    let mut values = Vec::with_capacity(k + 1);
    values.push(x0);
    let mut x = x0;
    for j in 1..=k {
        x = PmParameter::new(row.alpha(j))?.map(x);
        values.push(x);
    }
    Ok(Trajectory {
        x0,
        values,
        level: row.level(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bisection_inverse(p: PmParameter<f64>, y: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 0.5f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if p.left_branch(mid) > y {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn left_inverse_matches_bisection_to_rounding() {
        for alpha in [0.1, 0.25, 0.4, 0.9] {
            let p = PmParameter::new(alpha).unwrap();
            let m = 4096;
            let mut previous = None;
            for j in 1..m {
                let y = j as f64 / m as f64;
                let reference = bisection_inverse(p, y);
                let cold = p.left_inverse(y).unwrap();
                let warm = p.left_inverse_from(y, previous).unwrap();
                assert!(
                    (cold - reference).abs() <= 4.0 * f64::EPSILON * reference,
                    "alpha {alpha}, y {y}"
                );
                assert!(
                    (warm - reference).abs() <= 4.0 * f64::EPSILON * reference,
                    "alpha {alpha}, y {y} (warm)"
                );
                previous = Some(warm);
            }
        }
    }

    #[test]
    fn branch_point_uses_right_branch() {
        assert_eq!(apply_map(0.25, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn origin_is_fixed() {
        for a in [0.0, 0.1, 0.37, 0.9] {
            assert_eq!(apply_map(a, 0.0).unwrap(), 0.0);
            assert_eq!(map_derivative(a, 0.0).unwrap(), if a == 0.0 { 2.0 } else { 1.0 });
        }
    }

    #[test]
    fn doubling_case() {
        assert_abs_diff_eq!(apply_map(0.0, 0.3).unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(map_derivative(0.0, 0.3).unwrap(), 2.0);
        assert_eq!(inverse_branches(0.0, 0.6).unwrap().left, 0.3);
    }

    #[test]
    fn left_limit_at_branch_point_is_one() {
        let p = PmParameter::new(0.5).unwrap();
        assert_abs_diff_eq!(p.left_branch(0.5 - 1e-15), 1.0, epsilon = 1e-13);
        assert_eq!(p.left_branch(0.5), 1.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        // d/dx [x + 2^a x^(1+a)] at a = 0.5, x = 0.25
        let expected = 1.0 + 2f64.sqrt() * 1.5 * 0.5;
        assert_abs_diff_eq!(expected, 2.0606601717798214, epsilon = 1e-15);
        assert_abs_diff_eq!(map_derivative(0.5, 0.25).unwrap(), expected, epsilon = 1e-14);
        let h = 1e-6;
        let fd = (apply_map(0.5, 0.25 + h).unwrap() - apply_map(0.5, 0.25 - h).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(fd, expected, epsilon = 1e-8);
    }

    #[test]
    fn inverse_examples() {
        let b = inverse_branches(0.3, 0.0).unwrap();
        assert_eq!(b.left, 0.0);
        assert_eq!(inverse_branches(0.3, 0.5).unwrap().right, 0.75);
        let b = inverse_branches(0.5, 0.7).unwrap();
        assert!((apply_map(0.5f64, b.left).unwrap() - 0.7).abs() <= 1e-13);
        assert!(b.left < 0.5);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(apply_map(1.0, 0.2), Err(Error::Domain { what: "alpha", .. })));
        assert!(matches!(apply_map(-0.1, 0.2), Err(Error::Domain { .. })));
        assert!(matches!(apply_map(0.2, 1.5), Err(Error::Domain { what: "x", .. })));
        assert!(matches!(map_derivative(0.2, -0.5), Err(Error::Domain { .. })));
        assert!(inverse_branches(0.2, 1.01).is_err());
    }

    #[test]
    fn exhaustive_grid_stays_in_unit_interval() {
        for ia in 0..50 {
            let p = PmParameter::new(ia as f64 / 50.0).unwrap();
            for ix in 0..=4000 {
                let y = p.map(ix as f64 / 4000.0);
                assert!((0.0..=1.0).contains(&y));
            }
        }
    }

    #[test]
    fn domination_by_larger_parameter() {
        let grid: Vec<f64> = (0..500).map(|i| i as f64 / 1000.0).collect();
        for (a, b) in [(0.0, 0.1), (0.1, 0.25), (0.25, 0.49), (0.3, 0.9)] {
            let (pa, pb) = (PmParameter::new(a).unwrap(), PmParameter::new(b).unwrap());
            for &x in &grid {
                assert!(pb.map(x) <= pa.map(x));
            }
        }
    }

    #[test]
    fn single_precision_kernel() {
        let p = PmParameter::<f32>::new(0.25).unwrap();
        let y = 0.7f32;
        let x = p.left_inverse(y).unwrap();
        assert!((p.map(x) - y).abs() <= 1e-6);
        assert_eq!(p.map(0.5), 0.0);
    }

    #[test]
    fn constant_row_reduces_to_autonomous_orbit() {
        let row = ParameterRow::constant(0.2, 30, 0.25).unwrap();
        let traj = iterate_sequential(&row, 0.123, 30).unwrap();
        let p = PmParameter::new(0.2).unwrap();
        let mut x = 0.123;
        for v in &traj.values[1..] {
            x = p.map(x);
            assert_eq!(*v, x);
        }
        let zero = iterate_sequential(&row, 0.0, 30).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(iterate_sequential(&row, 0.1, 31).is_err());
    }

    proptest! {
        #[test]
        fn maps_unit_interval_into_itself(a in 0.0f64..0.999, x in 0.0f64..=1.0) {
            let y = apply_map(a, x).unwrap();
            prop_assert!((0.0..=1.0).contains(&y));
        }

        #[test]
        fn derivative_at_least_one(a in 0.0f64..0.999, x in 0.0f64..=1.0) {
            let d = map_derivative(a, x).unwrap();
            prop_assert!(d >= 1.0);
            if x > 0.0 { prop_assert!(d > 1.0); }
        }

        #[test]
        fn inverse_branches_round_trip(a in 0.0f64..0.999, y in 0.0f64..=1.0) {
            let b = inverse_branches(a, y).unwrap();
            prop_assert!(b.left >= 0.0 && b.left <= 0.5);
            prop_assert!(b.right >= 0.5 && b.right <= 1.0);
            let p = PmParameter::new(a).unwrap();
            prop_assert!((p.left_branch(b.left) - y).abs() <= 1e-13);
            prop_assert!((apply_map(a, b.right).unwrap() - y).abs() <= 1e-13);
        }

        #[test]
        fn branches_strictly_increasing(a in 0.0f64..0.999, x in 0.0f64..0.4999, d in 1e-9f64..1e-3) {
            let p = PmParameter::new(a).unwrap();
            let y = (x + d).min(0.4999999);
            if y > x { prop_assert!(p.map(y) > p.map(x)); }
            let (u, v) = (0.5 + x, (0.5 + x + d).min(1.0));
            if v > u { prop_assert!(p.map(v) > p.map(u)); }
        }

        #[test]
        fn composition_consistency(x0 in 0.0f64..=1.0, seed in 0u64..1000) {
            let row = ParameterRow::perturbed_equipartition(
                &crate::schedule::ParameterCurve::new(
                    crate::schedule::CurveKind::Cosine { low: 0.05, high: 0.3 }, 1.0, 0.3).unwrap(),
                64, 0.01, seed).unwrap();
            let traj = iterate_sequential(&row, x0, 64).unwrap();
            for j in 0..64 {
                prop_assert_eq!(traj.values[j + 1], apply_map(row.alpha(j + 1), traj.values[j]).unwrap());
            }
        }
    }
}
