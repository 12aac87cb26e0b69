//! Ulam discretization of the transfer operators on `m` uniform bins.
//!
//! Entry `P[i][j] = |B_i ∩ T^{-1} B_j| / |B_i|` is computed from exact
//! branch preimages of the bin endpoints; a density is a vector of bin
//! averages and is pushed forward by `h'_j = sum_i h_i P[i][j]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::PmParameter;
use crate::scalar::ordered_sum;
use crate::schedule::ParameterRow;
use crate::Real;

/// Default bin count.
pub const DEFAULT_BINS: usize = 1 << 14;
/// Default L1 stopping tolerance of the SRB power iteration.
pub const DEFAULT_SRB_TOL: f64 = 1e-13;
pub const SRB_MAX_ITER: usize = 500_000;

const PAR_CHUNK: usize = 1024;

/// Piecewise-constant function on `m` uniform bins of `[0, 1]`, stored as bin averages.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity<S> {
    values: Vec<S>,
}

impl<S: Real> GridDensity<S> {
    pub fn from_values(values: Vec<S>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("a grid density needs at least two bins".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("grid density has non-finite bin values".into()));
        }
        Ok(Self { values })
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            values: vec![S::one(); m.max(2)],
        }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            values: vec![S::zero(); m.max(2)],
        }
    }

    /// Bin values sampled at the midpoints.
    pub fn from_midpoints(m: usize, f: impl Fn(S) -> S) -> Self {
        let m = m.max(2);
        let values = (0..m).map(|i| f(bin_midpoint(i, m))).collect();
        Self { values }
    }

    /// Exact bin averages of `(1 - a) x^{-a}`, a cone density with mass 1.
    pub fn power_law(m: usize, a: S) -> Self {
        let m = m.max(2);
        let mf = S::of_usize(m);
        let e = S::one() - a;
        let cdf = |i: usize| (S::of_usize(i) / mf).powf(e);
        let values = (0..m).map(|i| (cdf(i + 1) - cdf(i)) * mf).collect();
        Self { values }
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn integral(&self) -> S {
        ordered_sum(self.values.iter().copied()) / S::of_usize(self.bins())
    }

    pub fn l1_norm(&self) -> S {
        ordered_sum(self.values.iter().map(|v| v.abs())) / S::of_usize(self.bins())
    }

    pub fn l1_distance(&self, other: &Self) -> S {
        assert_eq!(self.bins(), other.bins(), "bin counts differ");
        ordered_sum(self.values.iter().zip(&other.values).map(|(a, b)| (*a - *b).abs())) / S::of_usize(self.bins())
    }

    /// Midpoint quadrature of `f` against this density.
    pub fn integrate(&self, f: impl Fn(S) -> S) -> S {
        let m = self.bins();
        ordered_sum(self.values.iter().enumerate().map(|(i, v)| f(bin_midpoint(i, m)) * *v)) / S::of_usize(m)
    }

    pub fn scaled(&self, c: S) -> Self {
        Self {
            values: self.values.iter().map(|v| *v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.bins(), other.bins(), "bin counts differ");
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect(),
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let mass = self.integral();
        if !(mass > S::zero()) {
            return Err(Error::Numeric(format!("cannot normalize a density with mass {mass}")));
        }
        Ok(self.scaled(S::one() / mass))
    }
}

#[inline]
pub fn bin_midpoint<S: Real>(i: usize, m: usize) -> S {
    (S::of_usize(i) + S::half()) / S::of_usize(m)
}

/// Row-stochastic Ulam matrix of one map, stored sparsely by rows and by columns.
#[derive(Clone, Debug)]
pub struct UlamOperator<S> {
    param: PmParameter<S>,
    m: usize,
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<S>,
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<S>,
}

impl<S: Real> UlamOperator<S> {
    pub fn build(param: PmParameter<S>, m: usize) -> Result<Self> {
        let mut table = Vec::new();
        Self::build_warm(param, m, &mut table)
    }

    /// Builds the operator reusing `left_preimages` (the left-branch preimages
    /// of the bin endpoints of a nearby parameter) as Newton starting points.
    /// On return the table holds this operator's preimages.
    pub fn build_warm(param: PmParameter<S>, m: usize, left_preimages: &mut Vec<S>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "Ulam operator needs m >= 2 bins, got {m}"
            )));
        }
        let mf = S::of_usize(m);
        let warm = left_preimages.len() == m + 1;
        let solved: Vec<Result<S>> = (0..m + 1)
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|j| {
                let guess = if warm { Some(left_preimages[j]) } else { None };
                param.left_inverse_from(S::of_usize(j) / mf, guess)
            })
            .collect();
        let left: Vec<S> = solved.into_iter().collect::<Result<_>>()?;

        let rows: Vec<Vec<(usize, S)>> = (0..m)
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|i| ulam_row(param, m, i, &left))
            .collect();
        *left_preimages = left;

        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut row_cols = Vec::with_capacity(nnz);
        let mut row_vals = Vec::with_capacity(nnz);
        let mut col_counts = vec![0usize; m];
        row_ptr.push(0);
        for row in &rows {
            for &(j, w) in row {
                row_cols.push(j);
                row_vals.push(w);
                col_counts[j] += 1;
            }
            row_ptr.push(row_cols.len());
        }
        let mut col_ptr = Vec::with_capacity(m + 1);
        col_ptr.push(0);
        for c in &col_counts {
            col_ptr.push(col_ptr.last().unwrap() + c);
        }
        let mut fill = col_ptr.clone();
        let mut col_rows = vec![0usize; nnz];
        let mut col_vals = vec![S::zero(); nnz];
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                col_rows[fill[j]] = i;
                col_vals[fill[j]] = w;
                fill[j] += 1;
            }
        }
        Ok(Self {
            param,
            m,
            row_ptr,
            row_cols,
            row_vals,
            col_ptr,
            col_rows,
            col_vals,
        })
    }

    pub fn param(&self) -> PmParameter<S> {
        self.param
    }

    pub fn bins(&self) -> usize {
        self.m
    }

    pub fn nnz(&self) -> usize {
        self.row_vals.len()
    }

    /// Nonzero entries `(j, P[i][j])` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.row_cols[r.clone()]
            .iter()
            .copied()
            .zip(self.row_vals[r].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<S> {
        (0..self.m).map(|i| ordered_sum(self.row(i).map(|(_, w)| w))).collect()
    }

    /// Dense row-major copy; only sensible for small `m`.
    pub fn to_dense(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.m * self.m];
        for i in 0..self.m {
            for (j, w) in self.row(i) {
                out[i * self.m + j] = w;
            }
        }
        out
    }

    /// Pushforward of bin values into `out`.
    pub fn apply_into(&self, h: &[S], out: &mut [S]) {
        assert_eq!(h.len(), self.m);
        assert_eq!(out.len(), self.m);
        out.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * PAR_CHUNK;
            for (off, o) in chunk.iter_mut().enumerate() {
                let j = base + off;
                let r = self.col_ptr[j]..self.col_ptr[j + 1];
                *o = self.col_rows[r.clone()]
                    .iter()
                    .zip(&self.col_vals[r])
                    .fold(S::zero(), |acc, (&i, &w)| acc + h[i] * w);
            }
        });
    }

    pub fn apply(&self, h: &GridDensity<S>) -> GridDensity<S> {
        let mut out = vec![S::zero(); self.m];
        self.apply_into(&h.values, &mut out);
        GridDensity { values: out }
    }
}

fn ulam_row<S: Real>(param: PmParameter<S>, m: usize, i: usize, left: &[S]) -> Vec<(usize, S)> {
    let mf = S::of_usize(m);
    let a = S::of_usize(i) / mf;
    let b = S::of_usize(i + 1) / mf;
    let half = S::half();
    let mut out: Vec<(usize, S)> = Vec::with_capacity(4);
    let mut push = |j: usize, overlap: S| {
        if overlap > S::zero() {
            let w = overlap * mf;
            match out.iter_mut().find(|e| e.0 == j) {
                Some(e) => e.1 = e.1 + w,
                None => out.push((j, w)),
            }
        }
    };
    let bin_of = |y: S| -> usize { (y * mf).floor().to_usize().unwrap_or(0).min(m - 1) };

    if a < half {
        let hi = b.min(half);
        let j0 = bin_of(param.left_branch(a)).saturating_sub(1);
        let j1 = (bin_of(param.left_branch(hi)) + 1).min(m - 1);
        for j in j0..=j1 {
            push(j, hi.min(left[j + 1]) - a.max(left[j]));
        }
    }
    if b > half {
        let lo = a.max(half);
        let j0 = bin_of(S::two() * lo - S::one()).saturating_sub(1);
        let j1 = (bin_of(S::two() * b - S::one()) + 1).min(m - 1);
        for j in j0..=j1 {
            let p0 = param.right_inverse(S::of_usize(j) / mf);
            let p1 = param.right_inverse(S::of_usize(j + 1) / mf);
            push(j, b.min(p1) - lo.max(p0));
        }
    }
    out.sort_by_key(|e| e.0);
    out
}

/// `build_ulam`
pub fn build_ulam<S: Real>(alpha: S, m: usize) -> Result<UlamOperator<S>> {
    UlamOperator::build(PmParameter::new(alpha)?, m)
}

/// Result of the SRB power iteration.
#[derive(Clone, Debug)]
pub struct SrbSolution<S> {
    pub density: GridDensity<S>,
    pub iterations: usize,
    pub last_change: S,
}

/// Fixed density of the Ulam operator by power iteration from the uniform density.
pub fn srb_solve<S: Real>(op: &UlamOperator<S>, tol: S) -> Result<SrbSolution<S>> {
    let m = op.bins();
    let mut h = vec![S::one(); m];
    let mut next = vec![S::zero(); m];
    let mf = S::of_usize(m);
    let mut change = S::infinity();
    for it in 1..=SRB_MAX_ITER {
        op.apply_into(&h, &mut next);
        let mass = ordered_sum(next.iter().copied()) / mf;
        let inv = S::one() / mass;
        next.iter_mut().for_each(|v| *v = *v * inv);
        change = ordered_sum(h.iter().zip(&next).map(|(a, b)| (*a - *b).abs())) / mf;
        std::mem::swap(&mut h, &mut next);
        if change < tol {
            return Ok(SrbSolution {
                density: GridDensity { values: h },
                iterations: it,
                last_change: change,
            });
        }
    }
    Err(Error::Convergence {
        method: "SRB power iteration",
        iterations: SRB_MAX_ITER,
        residual: change.as_f64(),
    })
}

/// `srb_density(alpha, m, tol)`
pub fn srb_density<S: Real>(alpha: S, m: usize, tol: S) -> Result<GridDensity<S>> {
    let op = build_ulam(alpha, m)?;
    Ok(srb_solve(&op, tol)?.density)
}

/// Left-branch preimages of the bin endpoints of one map. Applies the same
/// Ulam pushforward as [`UlamOperator`] without assembling the matrix:
/// `(P^T h)_j = m ∫_{T^{-1} B_j} h`, and each preimage interval spans at most
/// two bins.
#[derive(Clone, Debug)]
pub struct PreimageTable<S> {
    param: PmParameter<S>,
    left: Vec<S>,
}

impl<S: Real> PreimageTable<S> {
    pub fn build(param: PmParameter<S>, m: usize) -> Result<Self> {
        Self::build_from(param, m, None)
    }

    /// Uses `previous` (same bin count) as Newton starting points.
    pub fn build_from(param: PmParameter<S>, m: usize, previous: Option<&Self>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "Ulam operator needs m >= 2 bins, got {m}"
            )));
        }
        let mf = S::of_usize(m);
        let warm = previous.filter(|p| p.left.len() == m + 1);
        let solved: Vec<Result<S>> = (0..m + 1)
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|j| param.left_inverse_from(S::of_usize(j) / mf, warm.map(|p| p.left[j])))
            .collect();
        Ok(Self {
            param,
            left: solved.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn param(&self) -> PmParameter<S> {
        self.param
    }

    pub fn bins(&self) -> usize {
        self.left.len() - 1
    }

    pub fn apply_into(&self, h: &[S], out: &mut [S]) {
        let m = self.bins();
        assert_eq!(h.len(), m);
        assert_eq!(out.len(), m);
        let mf = S::of_usize(m);
        let right = |j: usize| (S::of_usize(j) / mf + S::one()) * S::half();
        out.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * PAR_CHUNK;
            for (off, o) in chunk.iter_mut().enumerate() {
                let j = base + off;
                let l = segment_integral(h, mf, self.left[j], self.left[j + 1]);
                let r = segment_integral(h, mf, right(j), right(j + 1));
                *o = (l + r) * mf;
            }
        });
    }
}

/// `∫_p^q h` for a piecewise-constant `h` on uniform bins.
#[inline]
fn segment_integral<S: Real>(h: &[S], mf: S, p: S, q: S) -> S {
    let m = h.len();
    let mut i = (p * mf).floor().to_usize().unwrap_or(0).min(m - 1);
    let mut lo = p;
    let mut acc = S::zero();
    while lo < q && i < m {
        let hi = q.min(S::of_usize(i + 1) / mf);
        if hi > lo {
            acc = acc + (hi - lo) * h[i];
            lo = hi;
        }
        i += 1;
    }
    acc
}

/// Applies the operators of one parameter row in order, rebuilding only when
/// the parameter changes and warm-starting each rebuild from the last one.
pub struct SequentialOperators<S: Real> {
    m: usize,
    current: Option<PreimageTable<S>>,
}

impl<S: Real> SequentialOperators<S> {
    pub fn new(m: usize) -> Self {
        Self { m, current: None }
    }

    pub fn table(&mut self, alpha: S) -> Result<&PreimageTable<S>> {
        let stale = match &self.current {
            Some(t) => t.param().alpha() != alpha,
            None => true,
        };
        if stale {
            let next = PreimageTable::build_from(PmParameter::new(alpha)?, self.m, self.current.as_ref())?;
            self.current = Some(next);
        }
        Ok(self.current.as_ref().expect("table built above"))
    }

    /// Pushes every density in `states` forward by `L_alpha`.
    pub fn step(&mut self, alpha: S, states: &mut [Vec<S>], scratch: &mut Vec<S>) -> Result<()> {
        let table = self.table(alpha)?;
        scratch.resize(table.bins(), S::zero());
        for s in states.iter_mut() {
            table.apply_into(s, scratch);
            std::mem::swap(s, scratch);
        }
        Ok(())
    }
}

/// `h_{n,k} = L_{n,k} ... L_{n,1} h0`.
pub fn pushforward_sequence<S: Real>(row: &ParameterRow<S>, h0: &GridDensity<S>, k: usize) -> Result<GridDensity<S>> {
    if k > row.level() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the row level {}",
            row.level()
        )));
    }
    let mut ops = SequentialOperators::new(h0.bins());
    let mut states = vec![h0.values.clone()];
    let mut scratch = Vec::new();
    for j in 1..=k {
        ops.step(row.alpha(j), &mut states, &mut scratch)?;
    }
    Ok(GridDensity {
        values: states.pop().expect("one state"),
    })
}

/// `‖L_n ... L_1 (f - g)‖_1` for `n = 0..=steps`, with the operators taken from
/// entries `1..=steps` of `row`.
pub fn memory_loss_curve<S: Real>(
    f: &GridDensity<S>,
    g: &GridDensity<S>,
    row: &ParameterRow<S>,
    steps: usize,
) -> Result<Vec<S>> {
    if f.bins() != g.bins() {
        return Err(Error::InvalidArgument("densities use different bin counts".into()));
    }
    if steps > row.level() {
        return Err(Error::InvalidArgument(format!(
            "{steps} steps exceed the row level {}",
            row.level()
        )));
    }
    let gap = (f.integral() - g.integral()).abs();
    if gap > S::lit(1e-10) {
        return Err(Error::Precondition(format!(
            "densities have different integrals (gap {:e})",
            gap.as_f64()
        )));
    }
    let beta = row.beta_star();
    for (name, d) in [("f", f), ("g", g)] {
        let report = cone_check(d, beta, 1, S::lit(1e-9));
        if !report.pass {
            return Err(Error::Precondition(format!("{name} is not in the cone: {report:?}")));
        }
    }
    let mut ops = SequentialOperators::new(f.bins());
    let mut states = vec![f.sub(g).values];
    let mut scratch = Vec::new();
    let m = S::of_usize(f.bins());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(ordered_sum(states[0].iter().map(|v| v.abs())) / m);
    for k in 1..=steps {
        ops.step(row.alpha(k), &mut states, &mut scratch)?;
        out.push(ordered_sum(states[0].iter().map(|v| v.abs())) / m);
    }
    Ok(out)
}

/// `(‖(L_alpha - L_beta) h‖_1, ‖ĥ_alpha - ĥ_beta‖_1)` at matched bin count.
pub fn perturbation_distances<S: Real>(alpha: S, beta: S, h: &GridDensity<S>, tol: S) -> Result<(S, S)> {
    if !(alpha >= S::zero() && alpha <= beta) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= alpha <= beta, got ({alpha}, {beta})"
        )));
    }
    if alpha == beta {
        return Ok((S::zero(), S::zero()));
    }
    let m = h.bins();
    let la = build_ulam(alpha, m)?;
    let lb = build_ulam(beta, m)?;
    let d_op = la.apply(h).l1_distance(&lb.apply(h));
    let ha = srb_solve(&la, tol)?.density;
    let hb = srb_solve(&lb, tol)?.density;
    Ok((d_op, ha.l1_distance(&hb)))
}

/// `(β - α)^{exponent} |log(β - α)|^{1/β_*}`, the continuity envelope for SRB densities.
pub fn srb_continuity_envelope<S: Real>(alpha: S, beta: S, beta_star: S, exponent: S) -> S {
    let d = beta - alpha;
    d.powf(exponent) * d.ln().abs().powf(S::one() / beta_star)
}

/// Default exponent `(1/3)(1 - β_*)^2` of the SRB continuity envelope.
pub fn srb_continuity_exponent<S: Real>(beta_star: S) -> S {
    let c = S::one() - beta_star;
    c * c / S::lit(3.0)
}

/// Length of the `n`-fold leftmost-branch preimage of `(0, 1)`.
pub fn leftmost_preimage_length<S: Real>(param: PmParameter<S>, n: usize) -> Result<S> {
    let mut x = S::one();
    for _ in 0..n {
        x = param.left_inverse(x)?;
    }
    Ok(x)
}

/// Memory-loss rate: 1 for `n <= 1`, `n^{1 - 1/β} (ln n)^{1/β}` otherwise.
pub fn rho<S: Real>(n: usize, beta_star: S) -> S {
    if n <= 1 {
        return S::one();
    }
    let nf = S::of_usize(n);
    let p = S::one() / beta_star;
    nf.powf(S::one() - p) * nf.ln().powf(p)
}

/// `sum_{k > n} rho(k)` approximated by `∫_{n + 1/2}^∞ rho`, via the upper incomplete gamma function.
/// Infinite when `β_* >= 1/2`.
pub fn rho_tail(n: usize, beta_star: f64) -> f64 {
    let p = 1.0 / beta_star;
    let a = p - 2.0;
    if a <= 0.0 {
        return f64::INFINITY;
    }
    // ∫_N^∞ x^{1-p} (ln x)^p dx = a^{-(p+1)} Γ(p+1, a ln N)
    let lower = (n as f64 + 0.5).max(1.0).ln();
    let s = p + 1.0;
    statrs::function::gamma::gamma_ur(s, a * lower) * statrs::function::gamma::gamma(s) * a.powf(-s)
}

/// Pass/fail data for membership of a grid density in the cone `C_*(alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeCheckReport<S> {
    /// Largest increase between consecutive bins.
    pub decreasing_violation: S,
    /// Largest decrease of `x^{alpha+1} f` between consecutive midpoints.
    pub x_power_violation: S,
    /// Smallest `2^alpha (2 + alpha) x^{-alpha} m(f) - f(x)` over midpoints.
    pub pointwise_bound_margin: S,
    pub tolerance: S,
    pub skipped_bins: usize,
    pub pass: bool,
}

/// Cone check on bin midpoints, ignoring the first `skip` bins. The tolerance
/// is relative to the largest bin value.
pub fn cone_check<S: Real>(f: &GridDensity<S>, alpha: S, skip: usize, rel_tol: S) -> ConeCheckReport<S> {
    let m = f.bins();
    let v = &f.values;
    let scale = v.iter().fold(S::zero(), |acc, x| acc.max(x.abs()));
    let tol = rel_tol * scale.max(S::one());
    let start = skip.min(m - 1);
    let mass = f.integral();
    let coef = S::two().powf(alpha) * (S::two() + alpha) * mass;
    let weighted = |i: usize| bin_midpoint::<S>(i, m).powf(alpha + S::one()) * v[i];

    let mut decreasing_violation = S::zero();
    let mut x_power_violation = S::zero();
    let mut margin = S::infinity();
    for i in start..m {
        let x: S = bin_midpoint(i, m);
        margin = margin.min(coef * x.powf(-alpha) - v[i]);
        if i + 1 < m {
            decreasing_violation = decreasing_violation.max(v[i + 1] - v[i]);
            x_power_violation = x_power_violation.max(weighted(i) - weighted(i + 1));
        }
    }
    let nonneg = v[start..].iter().all(|x| *x >= -tol);
    let pass = nonneg && decreasing_violation <= tol && x_power_violation <= tol && margin >= -tol;
    ConeCheckReport {
        decreasing_violation,
        x_power_violation,
        pointwise_bound_margin: margin,
        tolerance: tol,
        skipped_bins: start,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubling_map_on_dyadic_bins_is_exact() {
        for m in [2usize, 8, 1 << 10] {
            let op = build_ulam(0.0f64, m).unwrap();
            let out = op.apply(&GridDensity::uniform(m));
            assert!(out.values().iter().all(|&v| v == 1.0));
            for i in 0..m {
                let row: Vec<_> = op.row(i).collect();
                assert_eq!(row.len(), 2);
                assert!(row.iter().all(|&(_, w)| w == 0.5));
            }
        }
    }

    #[test]
    fn small_dense_matrix_against_hand_computation() {
        // alpha = 0, m = 4: bin [0, 1/4) -> [0, 1/2) covers bins 0 and 1.
        let op = build_ulam(0.0f64, 4).unwrap();
        let d = op.to_dense();
        let expected = [
            0.5, 0.5, 0.0, 0.0, //
            0.0, 0.0, 0.5, 0.5, //
            0.5, 0.5, 0.0, 0.0, //
            0.0, 0.0, 0.5, 0.5,
        ];
        assert_eq!(d, expected);
    }

    #[test]
    fn rows_are_stochastic_and_mass_is_preserved() {
        for (alpha, m) in [(0.1f64, 1000usize), (0.25, 4096), (0.49, 777), (0.9, 512)] {
            let op = build_ulam(alpha, m).unwrap();
            for s in op.row_sums() {
                assert!((s - 1.0).abs() <= 1e-12, "row sum {s}");
            }
            let h = GridDensity::<f64>::power_law(m, 0.3);
            assert_abs_diff_eq!(op.apply(&h).integral(), h.integral(), epsilon = 1e-13);
        }
    }

    #[test]
    fn odd_bin_count_straddling_branch_point() {
        let op = build_ulam(0.3f64, 7).unwrap();
        for s in op.row_sums() {
            assert!((s - 1.0).abs() <= 1e-13);
        }
        assert!(build_ulam(0.3f64, 1).is_err());
    }

    #[test]
    fn entries_match_monte_carlo_preimage_fractions() {
        // Independent check of one row: sample points in the bin and map them forward.
        let (alpha, m, i) = (0.4f64, 64usize, 3usize);
        let op = build_ulam(alpha, m).unwrap();
        let p = PmParameter::new(alpha).unwrap();
        let samples = 200_000;
        let mut counts = vec![0usize; m];
        for s in 0..samples {
            let x = (i as f64 + (s as f64 + 0.5) / samples as f64) / m as f64;
            counts[((p.map(x) * m as f64) as usize).min(m - 1)] += 1;
        }
        for (j, w) in op.row(i) {
            assert_abs_diff_eq!(w, counts[j] as f64 / samples as f64, epsilon = 1e-4);
        }
    }

    #[test]
    fn preimage_table_matches_matrix() {
        for (alpha, m) in [(0.0f64, 1024usize), (0.17, 1000), (0.45, 4096)] {
            let p = PmParameter::new(alpha).unwrap();
            let op = UlamOperator::build(p, m).unwrap();
            let table = PreimageTable::build(p, m).unwrap();
            let h = GridDensity::from_midpoints(m, |x: f64| (5.0 * x).cos() + 0.3 * x);
            let mut out = vec![0.0; m];
            table.apply_into(h.values(), &mut out);
            let reference = op.apply(&h);
            for (a, b) in out.iter().zip(reference.values()) {
                assert!((a - b).abs() <= 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn l1_contraction_on_signed_densities() {
        let op = build_ulam(0.3f64, 2048).unwrap();
        let v = GridDensity::from_midpoints(2048, |x: f64| (7.0 * x).sin() - 0.2);
        assert!(op.apply(&v).l1_norm() <= v.l1_norm() + 1e-15);
    }

    #[test]
    fn srb_of_doubling_map_is_uniform() {
        let h = srb_density(0.0f64, 1 << 12, 1e-13).unwrap();
        assert!(h.l1_distance(&GridDensity::uniform(1 << 12)) <= 1e-10);
    }

    #[test]
    fn srb_is_fixed_point_and_in_cone() {
        let op = build_ulam(0.25f64, 4096).unwrap();
        let sol = srb_solve(&op, 1e-12).unwrap();
        let h = &sol.density;
        assert_abs_diff_eq!(h.integral(), 1.0, epsilon = 1e-10);
        assert!(op.apply(h).l1_distance(h) <= 2e-12);
        let report = cone_check(h, 0.25, 1, 1e-9);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn single_precision_srb() {
        let h = srb_density(0.0f32, 256, 1e-6).unwrap();
        assert!(h.l1_distance(&GridDensity::uniform(256)) <= 1e-6);
    }

    #[test]
    fn cone_membership_of_presets() {
        let one = GridDensity::<f64>::uniform(1024);
        assert!(cone_check(&one, 0.25, 1, 1e-12).pass);
        let pl = GridDensity::<f64>::power_law(1024, 0.25);
        assert_abs_diff_eq!(pl.integral(), 1.0, epsilon = 1e-14);
        assert!(cone_check(&pl, 0.25, 1, 1e-12).pass);
        let increasing = GridDensity::<f64>::from_midpoints(1024, |x| 0.5 + x);
        let r = cone_check(&increasing, 0.25, 1, 1e-12);
        assert!(!r.pass && r.decreasing_violation > 0.0);
    }

    #[test]
    fn pushforward_examples() {
        let row = ParameterRow::constant(0.0f64, 8, 0.25).unwrap();
        let u = GridDensity::<f64>::uniform(512);
        assert_eq!(pushforward_sequence(&row, &u, 0).unwrap(), u);
        assert_eq!(pushforward_sequence(&row, &u, 8).unwrap(), u);
        assert!(pushforward_sequence(&row, &u, 9).is_err());
        let row = ParameterRow::constant(0.3f64, 20, 0.3).unwrap();
        let out = pushforward_sequence(&row, &u, 20).unwrap();
        assert!(out.values().iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(out.integral(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn memory_loss_examples() {
        let row = ParameterRow::constant(0.25f64, 64, 0.25).unwrap();
        let u = GridDensity::<f64>::uniform(1024);
        let zero = memory_loss_curve(&u, &u, &row, 64).unwrap();
        assert!(zero.iter().all(|&d| d == 0.0));
        let g = GridDensity::power_law(1024, 0.25);
        let curve = memory_loss_curve(&u, &g, &row, 64).unwrap();
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let heavier = u.scaled(1.01);
        assert!(matches!(
            memory_loss_curve(&heavier, &g, &row, 8),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn perturbation_distances_vanish_on_diagonal() {
        let h = GridDensity::<f64>::uniform(256);
        assert_eq!(perturbation_distances(0.2, 0.2, &h, 1e-12).unwrap(), (0.0, 0.0));
        assert!(perturbation_distances(0.3, 0.2, &h, 1e-12).is_err());
    }

    #[test]
    fn leftmost_preimages() {
        let p0 = PmParameter::<f64>::doubling();
        for n in 0..60 {
            assert_eq!(leftmost_preimage_length(p0, n).unwrap(), 0.5f64.powi(n as i32));
        }
        let p = PmParameter::new(0.5f64).unwrap();
        let mut prev = 1.0;
        for n in 1..200 {
            let l = leftmost_preimage_length(p, n).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho(0, 0.3f64), 1.0);
        assert_eq!(rho(1, 0.3f64), 1.0);
        let expected = 0.5 * std::f64::consts::LN_2.powi(2);
        assert_abs_diff_eq!(rho(2, 0.5f64), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.24022650695910071, epsilon = 1e-15);
    }

    #[test]
    fn rho_partial_sums_are_cauchy_below_one_half() {
        let beta = 0.4f64;
        let partial = |n: usize| (1..=n).map(|k| rho(k, beta)).sum::<f64>();
        let (a, b, c) = (partial(10_000), partial(100_000), partial(1_000_000));
        assert!(c - b < b - a);
        // The incomplete-gamma tail tracks the remaining mass.
        let tail = rho_tail(100_000, beta);
        assert!((c - b) < tail && tail < 5.0 * (c - b) + 1.0);
        assert!(rho_tail(10, 0.5).is_infinite());
    }
}
