//! Monte Carlo Birkhoff paths, fluctuation ensembles and the ergodic check.
//!
//! Every path owns the ChaCha8 stream `(seed, path index)`, so ensembles are
//! bit-identical for any worker count.
//!
//! Exact doubling steps (`2x - 1`, and `2x` when `alpha = 0`) shift one bit
//! out of the mantissa, so in plain `f64` every doubling orbit reaches 0
//! within about 53 steps. Those steps add a dither `U 2^-52`, `U` uniform,
//! drawn from the path's stream.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green_kubo::{interpolate, FrozenSystem, Observable};
use crate::map::PmParameter;
use crate::schedule::{ParameterCurve, ParameterRow};
use crate::ulam::{bin_midpoint, cone_check, GridDensity, SequentialOperators};

const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;
const DITHER_SCALE: f64 = 1.0 / (1u128 << 104) as f64;

/// Tolerance on the total mass of sampling densities.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Initial or centering measure.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialMeasure {
    Lebesgue,
    /// Probability density on Ulam bins.
    Density(GridDensity<f64>),
    /// `g1 - g2` with both parts in the cone; centering only.
    SignedPair {
        positive: GridDensity<f64>,
        negative: GridDensity<f64>,
    },
}

impl InitialMeasure {
    /// Density measure, checked to be a probability density in `C_*(beta_star)`.
    pub fn density(g: GridDensity<f64>, beta_star: f64) -> Result<Self> {
        if g.values().iter().any(|v| *v < 0.0) {
            return Err(Error::Precondition("initial density has negative bins".into()));
        }
        let mass = g.integral();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Precondition(format!(
                "initial density has mass {mass}, expected 1"
            )));
        }
        let report = cone_check(&g, beta_star, 1, 1e-9);
        if !report.pass {
            return Err(Error::Precondition(format!(
                "initial density is not in the cone: {report:?}"
            )));
        }
        Ok(InitialMeasure::Density(g))
    }

    pub fn signed_pair(positive: GridDensity<f64>, negative: GridDensity<f64>, beta_star: f64) -> Result<Self> {
        if positive.bins() != negative.bins() {
            return Err(Error::InvalidArgument(
                "signed pair parts use different bin counts".into(),
            ));
        }
        for (name, g) in [("g1", &positive), ("g2", &negative)] {
            let report = cone_check(g, beta_star, 1, 1e-9);
            if !report.pass || g.values().iter().any(|v| *v < 0.0) {
                return Err(Error::Precondition(format!("{name} is not in the cone: {report:?}")));
            }
        }
        let mass = positive.integral() - negative.integral();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Precondition(format!("g1 - g2 has mass {mass}, expected 1")));
        }
        Ok(InitialMeasure::SignedPair { positive, negative })
    }

    pub fn is_sampleable(&self) -> bool {
        !matches!(self, InitialMeasure::SignedPair { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            InitialMeasure::Lebesgue => "lebesgue".into(),
            InitialMeasure::Density(g) => format!("density(m={})", g.bins()),
            InitialMeasure::SignedPair { positive, .. } => format!("signed_pair(m={})", positive.bins()),
        }
    }

    /// Bin values of the (signed) density at `m` bins.
    pub fn density_values(&self, m: usize) -> Result<Vec<f64>> {
        let check = |g: &GridDensity<f64>| {
            if g.bins() == m {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "measure has {} bins, operators use {m}",
                    g.bins()
                )))
            }
        };
        match self {
            InitialMeasure::Lebesgue => Ok(vec![1.0; m]),
            InitialMeasure::Density(g) => {
                check(g)?;
                Ok(g.values().to_vec())
            }
            InitialMeasure::SignedPair { positive, negative } => {
                check(positive)?;
                Ok(positive.sub(negative).into_values())
            }
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        match self {
            InitialMeasure::Lebesgue => Ok(Sampler { cdf: None }),
            InitialMeasure::Density(g) => {
                let m = g.bins() as f64;
                let mut acc = 0.0;
                let mut cdf = Vec::with_capacity(g.bins() + 1);
                cdf.push(0.0);
                for v in g.values() {
                    acc += v / m;
                    cdf.push(acc);
                }
                let total = acc;
                cdf.iter_mut().for_each(|c| *c /= total);
                Ok(Sampler { cdf: Some(cdf) })
            }
            InitialMeasure::SignedPair { .. } => Err(Error::InvalidArgument(
                "a signed pair is a centering measure and cannot be sampled".into(),
            )),
        }
    }
}

/// Inverse-CDF sampler at bin resolution with uniform jitter inside the bin.
#[derive(Clone, Debug)]
pub struct Sampler {
    cdf: Option<Vec<f64>>,
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.cdf {
            None => rng.random::<f64>(),
            Some(cdf) => {
                let m = cdf.len() - 1;
                let u: f64 = rng.random();
                let bin = (cdf.partition_point(|c| *c <= u).max(1) - 1).min(m - 1);
                let jitter: f64 = rng.random();
                ((bin as f64 + jitter) / m as f64).min(ONE_BELOW)
            }
        }
    }
}

/// Random stream of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `sample_initial(mu, M, seed)`: point `i` is the first draw of stream `i`.
pub fn sample_initial(mu: &InitialMeasure, count: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = mu.sampler()?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| sampler.sample(&mut path_rng(seed, i as u64)))
        .collect())
}

/// One step of `T_alpha`, dithering exact doubling steps.
#[inline]
pub fn dithered_step<R: RngCore>(param: PmParameter<f64>, x: f64, rng: &mut R) -> f64 {
    let doubled = if x >= 0.5 {
        2.0 * x - 1.0
    } else if param.alpha() == 0.0 {
        2.0 * x
    } else {
        return param.left_branch(x);
    };
    (doubled + (rng.next_u64() >> 12) as f64 * DITHER_SCALE).min(ONE_BELOW)
}

/// Where each grid time falls on the orbit: `S_n(t) = sum_{k < index} f_k + frac f_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPlan {
    pub level: usize,
    pub grid: Vec<f64>,
    pub index: Vec<usize>,
    pub frac: Vec<f64>,
}

impl PathPlan {
    pub fn new(level: usize, grid: &[f64]) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidArgument("level must be positive".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty time grid".into()));
        }
        if let Some(t) = grid.iter().find(|t| !(**t >= 0.0 && **t <= 1.0)) {
            return Err(Error::Domain {
                what: "grid time",
                value: *t,
                domain: "[0, 1]",
            });
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        let n = level as f64;
        let mut index = Vec::with_capacity(grid.len());
        let mut frac = Vec::with_capacity(grid.len());
        for &t in grid {
            let nt = n * t;
            let k = (nt.floor() as usize).min(level);
            index.push(k);
            frac.push(if k == level { 0.0 } else { nt - k as f64 });
        }
        Ok(Self {
            level,
            grid: grid.to_vec(),
            index,
            frac,
        })
    }

    /// Largest orbit index whose observable value is needed.
    pub fn last_needed(&self) -> usize {
        self.index
            .iter()
            .zip(&self.frac)
            .map(|(&k, &fr)| if fr > 0.0 { k } else { k.saturating_sub(1) })
            .max()
            .unwrap_or(0)
    }

    /// Combines per-step values `v_0, v_1, ...` into `S(t)` at every grid time.
    pub fn accumulate(&self, values: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut sum = 0.0;
        let mut k = 0;
        for (&idx, &fr) in self.index.iter().zip(&self.frac) {
            while k < idx {
                sum += values[k];
                k += 1;
            }
            out.push(if fr > 0.0 { sum + fr * values[idx] } else { sum });
        }
        out
    }

    pub fn grid_index(&self, t: f64) -> Option<usize> {
        self.grid.iter().position(|g| (g - t).abs() <= 1e-12)
    }
}

/// Maps `T_{n,1}, ..., T_{n,n}` of one row.
fn row_params(row: &ParameterRow<f64>) -> Result<Vec<PmParameter<f64>>> {
    row.entries().iter().map(|&a| PmParameter::new(a)).collect()
}

/// Sweeps one orbit and records `S_n(x0, t)` at the plan's grid times.
fn sweep<R: RngCore>(
    f: &Observable<f64>,
    params: &[PmParameter<f64>],
    plan: &PathPlan,
    x0: f64,
    rng: Option<&mut R>,
    out: &mut [f64],
) {
    let last = plan.last_needed();
    let mut x = x0;
    let mut sum = 0.0;
    let mut mark = 0;
    let marks = plan.index.len();
    let mut rng = rng;
    for k in 0..=last {
        let fx = f.eval(x);
        while mark < marks && plan.index[mark] == k {
            out[mark] = if plan.frac[mark] > 0.0 {
                sum + plan.frac[mark] * fx
            } else {
                sum
            };
            mark += 1;
        }
        sum += fx;
        if k == last {
            break;
        }
        let p = params[k + 1];
        x = match rng.as_deref_mut() {
            Some(r) => dithered_step(p, x, r),
            None => p.map(x),
        };
    }
    while mark < marks {
        out[mark] = sum;
        mark += 1;
    }
}

/// `birkhoff_path(f, row, x0, grid)` with exact (undithered) map steps.
pub fn birkhoff_path(f: &Observable<f64>, row: &ParameterRow<f64>, x0: f64, grid: &[f64]) -> Result<Vec<f64>> {
    crate::error::check_unit("x0", x0)?;
    let plan = PathPlan::new(row.level(), grid)?;
    let params = row_params(row)?;
    let mut out = vec![0.0; grid.len()];
    sweep::<ChaCha8Rng>(f, &params, &plan, x0, None, &mut out);
    Ok(out)
}

/// Raw Birkhoff sums of `count` paths started from `mu`, row-major by path.
pub fn birkhoff_ensemble(
    f: &Observable<f64>,
    row: &ParameterRow<f64>,
    mu: &InitialMeasure,
    count: usize,
    plan: &PathPlan,
    seed: u64,
) -> Result<Vec<f64>> {
    if plan.level != row.level() {
        return Err(Error::InvalidArgument("plan and row levels differ".into()));
    }
    let sampler = mu.sampler()?;
    let params = row_params(row)?;
    let width = plan.grid.len();
    let mut values = vec![0.0; count * width];
    values.par_chunks_mut(width).enumerate().for_each(|(p, out)| {
        let mut rng = path_rng(seed, p as u64);
        let x0 = sampler.sample(&mut rng);
        sweep(f, &params, plan, x0, Some(&mut rng), out);
    });
    Ok(values)
}

/// `nu(f_{n,k})` for `k = 0..=plan.last_needed()` for several measures at
/// once, by Ulam pushforward of their densities.
pub fn pushforward_means(
    f: &Observable<f64>,
    row: &ParameterRow<f64>,
    measures: &[&InitialMeasure],
    plan: &PathPlan,
    m: usize,
) -> Result<Vec<Vec<f64>>> {
    let last = plan.last_needed();
    let fmid: Vec<f64> = (0..m).map(|i| f.eval(bin_midpoint(i, m))).collect();
    let mean = |h: &[f64]| fmid.iter().zip(h).fold(0.0, |acc, (a, b)| acc + a * b) / m as f64;
    let mut states: Vec<Vec<f64>> = measures.iter().map(|mu| mu.density_values(m)).collect::<Result<_>>()?;
    let mut means: Vec<Vec<f64>> = states.iter().map(|h| vec![mean(h)]).collect();
    let mut ops = SequentialOperators::new(m);
    let mut scratch = Vec::new();
    for k in 1..=last {
        ops.step(row.alpha(k), &mut states, &mut scratch)?;
        for (h, out) in states.iter().zip(means.iter_mut()) {
            out.push(mean(h));
        }
    }
    Ok(means)
}

/// `centering_curve(f, row, nu, grid)` at `m` Ulam bins.
pub fn centering_curve(
    f: &Observable<f64>,
    row: &ParameterRow<f64>,
    nu: &InitialMeasure,
    grid: &[f64],
    m: usize,
) -> Result<Vec<f64>> {
    let plan = PathPlan::new(row.level(), grid)?;
    let means = pushforward_means(f, row, &[nu], &plan, m)?;
    Ok(plan.accumulate(&means[0]))
}

/// Monte Carlo estimate of `nu(S_n)`, an approximation kept for comparison.
pub fn mc_centering_curve(
    f: &Observable<f64>,
    row: &ParameterRow<f64>,
    nu: &InitialMeasure,
    count: usize,
    plan: &PathPlan,
    seed: u64,
) -> Result<Vec<f64>> {
    let raw = birkhoff_ensemble(f, row, nu, count, plan, seed)?;
    Ok(column_means(&raw, plan.grid.len()))
}

pub fn column_means(values: &[f64], width: usize) -> Vec<f64> {
    let rows = values.len() / width;
    let mut out = vec![0.0; width];
    for r in values.chunks(width) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    Birkhoff,
    Fluctuation,
    Limit,
}

impl EnsembleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::Birkhoff => "birkhoff",
            EnsembleKind::Fluctuation => "fluctuation",
            EnsembleKind::Limit => "limit",
        }
    }
}

/// How `nu(S_n)` was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteringRecord {
    /// `"ulam_pushforward"`, `"monte_carlo"` or `"none"`.
    pub mode: String,
    pub measure: String,
    pub bins: usize,
    pub curve: Vec<f64>,
}

/// `M` paths on a common time grid, row-major by path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub kind: EnsembleKind,
    pub level: usize,
    pub paths: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub centering: CenteringRecord,
}

impl PathEnsemble {
    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.grid.len();
        &self.values[p * w..(p + 1) * w]
    }

    /// Values of every path at grid column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.chunks(self.grid.len()).map(|r| r[j]).collect()
    }

    pub fn column_at(&self, t: f64) -> Result<Vec<f64>> {
        let j = self
            .grid
            .iter()
            .position(|g| (g - t).abs() <= 1e-12)
            .ok_or_else(|| Error::InvalidArgument(format!("time {t} is not on the ensemble grid")))?;
        Ok(self.column(j))
    }

    pub fn grid_index(&self, t: f64) -> Result<usize> {
        self.grid
            .iter()
            .position(|g| (g - t).abs() <= 1e-12)
            .ok_or_else(|| Error::InvalidArgument(format!("time {t} is not on the ensemble grid")))
    }
}

/// `chi = n^{-1/2} (S_n - centering)` applied in place.
pub fn center_paths(raw: &mut [f64], centering: &[f64], level: usize) {
    let scale = 1.0 / (level as f64).sqrt();
    for r in raw.chunks_mut(centering.len()) {
        for (v, c) in r.iter_mut().zip(centering) {
            *v = (*v - c) * scale;
        }
    }
}

/// `fluctuation_ensemble(f, row, mu, nu, M, grid, seed)` with operator centering at `m` bins.
#[allow(clippy::too_many_arguments)]
pub fn fluctuation_ensemble(
    f: &Observable<f64>,
    row: &ParameterRow<f64>,
    mu: &InitialMeasure,
    nu: &InitialMeasure,
    count: usize,
    grid: &[f64],
    seed: u64,
    m: usize,
) -> Result<PathEnsemble> {
    let plan = PathPlan::new(row.level(), grid)?;
    let means = pushforward_means(f, row, &[nu], &plan, m)?;
    let curve = plan.accumulate(&means[0]);
    let mut values = birkhoff_ensemble(f, row, mu, count, &plan, seed)?;
    center_paths(&mut values, &curve, row.level());
    Ok(PathEnsemble {
        kind: EnsembleKind::Fluctuation,
        level: row.level(),
        paths: count,
        grid: grid.to_vec(),
        values,
        seed,
        centering: CenteringRecord {
            mode: "ulam_pushforward".into(),
            measure: nu.describe(),
            bins: m,
            curve,
        },
    })
}

/// `t -> ∫_0^t mu_hat_{gamma_s}(f) ds` from invariant means on a uniform quadrature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicReference {
    pub nodes: Vec<f64>,
    pub means: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl ErgodicReference {
    pub fn new(f: &Observable<f64>, gamma: &ParameterCurve<f64>, intervals: usize, m: usize, tol: f64) -> Result<Self> {
        let intervals = intervals.max(1);
        let nodes: Vec<f64> = (0..=intervals).map(|i| i as f64 / intervals as f64).collect();
        let alphas: Vec<f64> = nodes.iter().map(|&t| gamma.eval(t)).collect::<Result<_>>()?;
        let mut distinct = alphas.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite parameters"));
        distinct.dedup();
        let solved: Vec<Result<f64>> = distinct
            .par_iter()
            .map(|&a| Ok(FrozenSystem::new(a, m, tol)?.invariant_mean(f)))
            .collect();
        let solved: Vec<f64> = solved.into_iter().collect::<Result<_>>()?;
        let means: Vec<f64> = alphas
            .iter()
            .map(|a| solved[distinct.partition_point(|d| d < a)])
            .collect();
        let mut cumulative = vec![0.0];
        for i in 1..nodes.len() {
            let prev = cumulative[i - 1];
            cumulative.push(prev + (nodes[i] - nodes[i - 1]) * (means[i] + means[i - 1]) / 2.0);
        }
        Ok(Self {
            nodes,
            means,
            cumulative,
        })
    }

    pub fn at(&self, t: f64) -> f64 {
        interpolate(&self.nodes, &self.cumulative, t)
    }
}

/// Per-sample `sup_t |S_n(x, t) / n - ∫_0^t mu_hat_{gamma_s}(f) ds|` over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicStats {
    pub level: usize,
    pub sup_deviations: Vec<f64>,
    pub median: f64,
    pub max: f64,
}

/// `ergodic_check` over `count` samples from `mu`.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_check(
    f: &Observable<f64>,
    row: &ParameterRow<f64>,
    reference: &ErgodicReference,
    mu: &InitialMeasure,
    count: usize,
    grid: &[f64],
    seed: u64,
) -> Result<ErgodicStats> {
    let plan = PathPlan::new(row.level(), grid)?;
    let raw = birkhoff_ensemble(f, row, mu, count, &plan, seed)?;
    let n = row.level() as f64;
    let target: Vec<f64> = grid.iter().map(|&t| reference.at(t)).collect();
    let sup_deviations: Vec<f64> = raw
        .chunks(grid.len())
        .map(|r| {
            r.iter()
                .zip(&target)
                .fold(0.0f64, |acc, (s, e)| acc.max((s / n - e).abs()))
        })
        .collect();
    let median = crate::stats::median(&sup_deviations);
    let max = sup_deviations.iter().copied().fold(0.0, f64::max);
    Ok(ErgodicStats {
        level: row.level(),
        sup_deviations,
        median,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::CurveKind;
    use approx::assert_abs_diff_eq;

    fn grid(points: usize) -> Vec<f64> {
        (0..=points).map(|i| i as f64 / points as f64).collect()
    }

    #[test]
    fn undithered_doubling_orbits_collapse() {
        let p = PmParameter::<f64>::doubling();
        let mut x = 0.123456789;
        for _ in 0..60 {
            x = p.map(x);
        }
        assert_eq!(x, 0.0);
        let mut rng = path_rng(1, 0);
        let mut x = 0.123456789;
        let mut visits = 0;
        for _ in 0..10_000 {
            x = dithered_step(p, x, &mut rng);
            if x < 0.5 {
                visits += 1;
            }
        }
        assert!(x > 0.0 && (4000..6000).contains(&visits));
    }

    #[test]
    fn lebesgue_sampling_passes_ks() {
        let xs = sample_initial(&InitialMeasure::Lebesgue, 100_000, 7).unwrap();
        let d = crate::stats::ks_uniform(&xs);
        assert!(d <= 1.95 / (xs.len() as f64).sqrt(), "{d}");
        assert_eq!(xs, sample_initial(&InitialMeasure::Lebesgue, 100_000, 7).unwrap());
    }

    #[test]
    fn density_sampling_matches_invariant_mean() {
        let m = 1 << 12;
        let sys = FrozenSystem::new(0.25, m, 1e-13).unwrap();
        let mu = InitialMeasure::density(sys.srb().clone(), 0.25).unwrap();
        let xs = sample_initial(&mu, 100_000, 3).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        let expected = sys.invariant_mean(&Observable::identity());
        assert!((mean - expected).abs() <= 3.0 * sd / (xs.len() as f64).sqrt());
    }

    #[test]
    fn signed_pair_is_not_sampleable() {
        let m = 256;
        let nu = InitialMeasure::signed_pair(
            GridDensity::power_law(m, 0.25).scaled(2.0),
            GridDensity::uniform(m),
            0.25,
        )
        .unwrap();
        assert!(!nu.is_sampleable());
        assert!(sample_initial(&nu, 4, 0).is_err());
        assert!(InitialMeasure::density(GridDensity::uniform(m).scaled(2.0), 0.25).is_err());
    }

    #[test]
    fn plan_indices() {
        let plan = PathPlan::new(10, &[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(plan.index, vec![0, 2, 5, 10]);
        assert_eq!(plan.frac[1], 0.5);
        assert_eq!(plan.frac[3], 0.0);
        assert_eq!(plan.last_needed(), 9);
        assert_eq!(plan.accumulate(&[1.0; 10]), vec![0.0, 2.5, 5.0, 10.0]);
        assert!(PathPlan::new(10, &[0.5, 0.25]).is_err());
        assert!(PathPlan::new(10, &[1.5]).is_err());
    }

    #[test]
    fn birkhoff_path_examples() {
        let curve = ParameterCurve::new(CurveKind::Cosine { low: 0.05, high: 0.25 }, 1.0, 0.25).unwrap();
        let row = ParameterRow::equipartition(&curve, 1000).unwrap();
        let g = [0.0, 0.1234, 0.5, 1.0];
        let one = birkhoff_path(&Observable::constant(1.0), &row, 0.3, &g).unwrap();
        for (t, s) in g.iter().zip(&one) {
            assert_abs_diff_eq!(*s, 1000.0 * t, epsilon = 1e-9);
        }
        let f = Observable::identity();
        let path = birkhoff_path(&f, &row, 0.3, &g).unwrap();
        let mut x = 0.3;
        let mut total = 0.0;
        for k in 0..1000 {
            total += x;
            x = PmParameter::new(row.alpha(k + 1)).unwrap().map(x);
        }
        assert_eq!(path[0], 0.0);
        assert_abs_diff_eq!(path[3], total, epsilon = 1e-9);
    }

    #[test]
    fn ensembles_are_deterministic_across_pools() {
        let row = ParameterRow::constant(0.2, 512, 0.25).unwrap();
        let g = grid(8);
        let build = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    fluctuation_ensemble(
                        &Observable::identity(),
                        &row,
                        &InitialMeasure::Lebesgue,
                        &InitialMeasure::Lebesgue,
                        500,
                        &g,
                        11,
                        1024,
                    )
                    .unwrap()
                })
        };
        let a = build(1);
        assert_eq!(a, build(3));
        assert!(a.values.iter().all(|v| v.is_finite()));
        assert!((0..a.paths).all(|p| a.path(p)[0] == 0.0));
    }

    #[test]
    fn constant_observable_gives_zero_fluctuations() {
        let row = ParameterRow::constant(0.0, 256, 0.25).unwrap();
        let e = fluctuation_ensemble(
            &Observable::constant(2.0),
            &row,
            &InitialMeasure::Lebesgue,
            &InitialMeasure::Lebesgue,
            100,
            &grid(4),
            1,
            256,
        )
        .unwrap();
        assert!(e.values.iter().all(|v| v.abs() <= 1e-12));
        for (t, c) in e.grid.iter().zip(&e.centering.curve) {
            assert_abs_diff_eq!(*c, 2.0 * 256.0 * t, epsilon = 1e-9);
        }
    }

    #[test]
    fn linearity_in_the_observable() {
        let row = ParameterRow::constant(0.15, 256, 0.25).unwrap();
        let run = |f: &Observable<f64>| {
            fluctuation_ensemble(
                f,
                &row,
                &InitialMeasure::Lebesgue,
                &InitialMeasure::Lebesgue,
                200,
                &grid(4),
                5,
                512,
            )
            .unwrap()
        };
        let base = run(&Observable::identity());
        let affine = run(&Observable::identity().affine_image(3.0, -1.0));
        for (a, b) in base.values.iter().zip(&affine.values) {
            assert_abs_diff_eq!(3.0 * a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn invariant_centering_for_doubling() {
        let row = ParameterRow::constant(0.0, 64, 0.25).unwrap();
        let plan = PathPlan::new(64, &grid(8)).unwrap();
        let means =
            pushforward_means(&Observable::identity(), &row, &[&InitialMeasure::Lebesgue], &plan, 1024).unwrap();
        assert!(means[0].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn centering_consistency_of_mean() {
        let row = ParameterRow::constant(0.0, 1024, 0.25).unwrap();
        let e = fluctuation_ensemble(
            &Observable::identity(),
            &row,
            &InitialMeasure::Lebesgue,
            &InitialMeasure::Lebesgue,
            20_000,
            &grid(4),
            2,
            1024,
        )
        .unwrap();
        for j in 1..e.grid.len() {
            let col = e.column(j);
            let (mean, sd) = crate::stats::mean_sd(&col);
            assert!(
                mean.abs() <= 3.0 * sd / (col.len() as f64).sqrt(),
                "t={} mean {mean}",
                e.grid[j]
            );
        }
    }

    #[test]
    fn ergodic_check_examples() {
        let curve = ParameterCurve::new(CurveKind::Constant { value: 0.0 }, 1.0, 0.25).unwrap();
        let reference = ErgodicReference::new(&Observable::identity(), &curve, 16, 1024, 1e-13).unwrap();
        assert_abs_diff_eq!(reference.at(0.5), 0.25, epsilon = 1e-12);
        let g = grid(16);
        let c = ErgodicReference::new(&Observable::constant(1.0), &curve, 16, 1024, 1e-13).unwrap();
        let row = ParameterRow::constant(0.0, 1000, 0.25).unwrap();
        let s = ergodic_check(
            &Observable::constant(1.0),
            &row,
            &c,
            &InitialMeasure::Lebesgue,
            50,
            &g,
            1,
        )
        .unwrap();
        assert!(s.max <= 1.0 / 1000.0 + 1e-12);
        let small = ParameterRow::constant(0.0, 1 << 8, 0.25).unwrap();
        let large = ParameterRow::constant(0.0, 1 << 12, 0.25).unwrap();
        let f = Observable::identity();
        let a = ergodic_check(&f, &small, &reference, &InitialMeasure::Lebesgue, 2000, &g, 4).unwrap();
        let b = ergodic_check(&f, &large, &reference, &InitialMeasure::Lebesgue, 2000, &g, 4).unwrap();
        assert!(b.median < a.median);
    }
}
