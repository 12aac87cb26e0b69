//! Sample statistics used by the verification battery.

use statrs::distribution::{ContinuousCDF, Normal};

/// `(mean, sample standard deviation)`.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let (m, sd) = mean_sd(xs);
    (m, sd / (xs.len() as f64).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample covariance with the standard error of the mean of centered products.
pub fn covariance_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let (mx, _) = mean_sd(xs);
    let (my, _) = mean_sd(ys);
    let products: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let (mean, se) = mean_se(&products);
    let n = xs.len() as f64;
    (mean * n / (n - 1.0), se)
}

/// Kolmogorov-Smirnov distance of a sample to the uniform law on `[0, 1]`.
pub fn ks_uniform(xs: &[f64]) -> f64 {
    ks_one_sample(xs, |x| x.clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov distance of a sample to the centered normal law with variance `var`.
pub fn ks_normal(xs: &[f64], var: f64) -> f64 {
    if var <= 0.0 {
        return ks_one_sample(xs, |x| if x >= 0.0 { 1.0 } else { 0.0 });
    }
    let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
    ks_one_sample(xs, |x| normal.cdf(x))
}

pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let c = cdf(x);
        d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n)
    })
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Two-sample KS critical value at the 0.1% level.
pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    1.95 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Kendall's tau of `ys` against their index, with the exact one-sided
/// p-value for an upward trend (all permutations enumerated; `n <= 10`).
pub fn kendall_trend(ys: &[f64]) -> (f64, f64) {
    let n = ys.len();
    assert!(
        (2..=10).contains(&n),
        "exact Kendall enumeration supports 2..=10 points"
    );
    let score = |v: &[f64]| -> i64 {
        let mut s = 0i64;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                s += (v[j] - v[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            }
        }
        s
    };
    let observed = score(ys);
    let pairs = (n * (n - 1) / 2) as f64;
    // Null distribution of the concordance score over all permutations of ranks.
    let mut perm: Vec<usize> = (0..n).collect();
    let (mut total, mut at_least) = (0u64, 0u64);
    permute(&mut perm, 0, &mut |p| {
        let v: Vec<f64> = p.iter().map(|&r| r as f64).collect();
        total += 1;
        if score(&v) >= observed {
            at_least += 1;
        }
    });
    (observed as f64 / pairs, at_least as f64 / total as f64)
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).1
}

/// Number of adjacent increases in a sequence that should decrease.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basic_moments() {
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_abs_diff_eq!(sd, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (c, _) = covariance_se(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        assert_abs_diff_eq!(c, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ks_distances() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert_abs_diff_eq!(ks_uniform(&xs), 0.0005, epsilon = 1e-12);
        assert_eq!(ks_two_sample(&xs, &xs), 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.1).collect();
        assert_abs_diff_eq!(ks_two_sample(&xs, &shifted), 0.101, epsilon = 1e-9);
        assert_abs_diff_eq!(
            ks_critical_two_sample(100_000, 100_000),
            1.95 * (2e-5f64).sqrt(),
            epsilon = 1e-15
        );
        let z: Vec<f64> = (1..2000).map(|i| normal_quantile(i as f64 / 2000.0) * 0.5).collect();
        assert!(ks_normal(&z, 0.25) < 1e-3);
    }

    #[test]
    fn kendall_exact_p_values() {
        let (tau, p) = kendall_trend(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(tau, 1.0);
        assert_abs_diff_eq!(p, 1.0 / 720.0, epsilon = 1e-15);
        let (tau, p) = kendall_trend(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(tau, -1.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn fits_and_inversions() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-2.0)).collect();
        assert_abs_diff_eq!(log_log_slope(&xs, &ys), -2.0, epsilon = 1e-12);
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 0);
        assert_eq!(inversions(&[3.0, 4.0, 1.0]), 1);
    }
}
