//! Small statistics and quadrature toolkit shared by the estimators.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean and standard error of the mean.
///
/// The standard error is the delete-one jackknife estimate, which for a
/// plain mean reduces to `s / sqrt(n)` with the unbiased sample deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_stderr(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, stderr: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanEstimate { mean, stderr: f64::NAN, n };
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let var = ss / (n as f64 - 1.0);
    MeanEstimate { mean, stderr: (var / n as f64).sqrt(), n }
}

/// Regression control-variate estimate of `E[y]` given a zero-mean control `c`.
///
/// The coefficient is the least-squares slope of `y` on `c`; when the control
/// has no variance the plain mean is returned.
pub fn control_variate_mean(y: &[f64], c: &[f64]) -> MeanEstimate {
    assert_eq!(y.len(), c.len());
    let n = y.len();
    if n < 2 {
        return mean_stderr(y);
    }
    let my = y.iter().sum::<f64>() / n as f64;
    let mc = c.iter().sum::<f64>() / n as f64;
    let mut scc = 0.0;
    let mut syc = 0.0;
    for (yi, ci) in y.iter().zip(c) {
        scc += (ci - mc) * (ci - mc);
        syc += (yi - my) * (ci - mc);
    }
    if scc <= 0.0 {
        return mean_stderr(y);
    }
    let beta = syc / scc;
    let adjusted: Vec<f64> = y.iter().zip(c).map(|(yi, ci)| yi - beta * ci).collect();
    mean_stderr(&adjusted)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Ordinary least-squares line with the linear weights that produce the slope.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `slope = sum_i slope_weights[i] * y[i]`.
    pub slope_weights: Vec<f64>,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope_weights: Vec<f64> = x.iter().map(|xi| (xi - mx) / sxx).collect();
    let slope: f64 = slope_weights.iter().zip(y).map(|(w, yi)| w * (yi - my)).sum();
    Some(LinearFit { slope, intercept: my - slope * mx, slope_weights })
}

/// Two-sample chi-square homogeneity test on count histograms.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Adjacent bins are pooled left to right until both expected counts reach 5;
/// a short tail is merged into the last pooled bin.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Option<ChiSquareTest> {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let fa = na / (na + nb);
    let fb = nb / (na + nb);
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut ca, mut cb) = (0.0, 0.0);
    for i in 0..len {
        ca += get(a, i);
        cb += get(b, i);
        let tot = ca + cb;
        if tot * fa >= 5.0 && tot * fb >= 5.0 {
            pooled.push((ca, cb));
            ca = 0.0;
            cb = 0.0;
        }
    }
    if ca + cb > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => pooled.push((ca, cb)),
        }
    }
    if pooled.len() < 2 {
        return None;
    }
    let mut stat = 0.0;
    for &(oa, ob) in &pooled {
        let tot = oa + ob;
        let ea = tot * fa;
        let eb = tot * fb;
        stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let dof = pooled.len() - 1;
    let dist = ChiSquared::new(dof as f64).ok()?;
    Some(ChiSquareTest {
        statistic: stat,
        dof,
        p_value: 1.0 - dist.cdf(stat),
        bins: pooled.len(),
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp;
        loop {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 - 1.0) * z * p2 - (j as f64 - 1.0) * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Hermite nodes and weights for the weight function `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jackknife_mean_matches_closed_form() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let est = mean_stderr(&xs);
        assert!((est.mean - 3.5).abs() < 1e-15);
        // brute-force delete-one jackknife
        let n = xs.len() as f64;
        let loo: Vec<f64> = (0..xs.len())
            .map(|k| xs.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, x)| x).sum::<f64>() / (n - 1.0))
            .collect();
        let lm = loo.iter().sum::<f64>() / n;
        let jk = ((n - 1.0) / n * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
        assert!((est.stderr - jk).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_have_zero_stderr() {
        let est = mean_stderr(&[0.25; 10]);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn control_variate_removes_exact_linear_noise() {
        let raw: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mc = raw.iter().sum::<f64>() / 100.0;
        let c: Vec<f64> = raw.iter().map(|r| r - mc).collect();
        let y: Vec<f64> = c.iter().map(|ci| 3.0 + 2.0 * ci).collect();
        let est = control_variate_mean(&y, &c);
        assert!((est.mean - 3.0).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.95), 3.8);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|xi| 1.5 - 0.25 * xi).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope + 0.25).abs() < 1e-14);
        assert!((fit.intercept - 1.5).abs() < 1e-14);
    }

    #[test]
    fn chi_square_identical_histograms() {
        let a = [10, 40, 80, 40, 10, 2, 1];
        let t = chi_square_homogeneity(&a, &a).unwrap();
        assert!(t.statistic.abs() < 1e-12);
        assert!(t.p_value > 0.999);
    }

    #[test]
    fn chi_square_detects_shift() {
        let a = [100, 300, 400, 150, 50];
        let b = [50, 150, 400, 300, 100];
        assert!(chi_square_homogeneity(&a, &b).unwrap().p_value < 1e-6);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let int = |f: &dyn Fn(f64) -> f64| x.iter().zip(&w).map(|(xi, wi)| wi * f(*xi)).sum::<f64>();
        assert!((int(&|_| 1.0) - 2.0).abs() < 1e-14);
        assert!((int(&|t| t.powi(14)) - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_reproduces_gaussian_moments() {
        let (x, w) = gauss_hermite(12);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let e = |f: &dyn Fn(f64) -> f64| {
            x.iter().zip(&w).map(|(xi, wi)| wi * f(std::f64::consts::SQRT_2 * xi)).sum::<f64>() / sqrt_pi
        };
        assert!((e(&|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((e(&|z| z * z) - 1.0).abs() < 1e-13);
        assert!((e(&|z| z.powi(4)) - 3.0).abs() < 1e-12);
        assert!((e(&|z| z.powi(6)) - 15.0).abs() < 1e-11);
    }
}
