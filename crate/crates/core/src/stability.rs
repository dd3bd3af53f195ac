//! Stability thresholds with their guaranteed rates, and the empirical
//! exponent estimates they are compared against.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypotheses::{verify_hypotheses, HypothesisOptions, HypothesisReport};
use crate::integrator::{ensemble, Estimator, EnsembleSummary, JumpMode, Model, SimConfig};
use crate::stats::{linear_fit, quantile};

/// `p(p-1)/2 + 2^p - 1 + p`.
pub fn jump_denominator(p: u32) -> u64 {
    let p = p as u64;
    p * (p - 1) / 2 + (1u64 << p) - 1 + p
}

/// Thresholds as exact rational multiples of `νλ₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactThresholds {
    pub continuous: Ratio<u64>,
    pub jump: Ratio<u64>,
}

pub fn exact_thresholds(p: u32) -> Result<ExactThresholds> {
    if !(2..=40).contains(&p) {
        return Err(Error::config("p", format!("moment order must be an integer in 2..=40, got {p}")));
    }
    let continuous = if p == 2 { Ratio::from_integer(2) } else { Ratio::new(2, p as u64 - 1) };
    Ok(ExactThresholds { continuous, jump: Ratio::new(p as u64, jump_denominator(p)) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSet {
    pub p: u32,
    pub nu: f64,
    pub lambda1: f64,
    /// `2νλ₁` at `p = 2`, `2νλ₁/(p-1)` otherwise.
    pub continuous_kmax: f64,
    /// General jump threshold `pνλ₁ / (p(p-1)/2 + 2^p - 1 + p)`.
    pub jump_kmax: f64,
    /// At `p = 2` the mean-square jump rate `-(νλ₁ - K)` holds under the weaker `K < νλ₁`.
    pub jump_kmax_lemma: Option<f64>,
    pub jump_denominator: u64,
}

impl ThresholdSet {
    fn nl(&self) -> f64 {
        self.nu * self.lambda1
    }

    /// Guaranteed `p`-th moment rate without jumps: `-(pνλ₁ - p(p-1)K/2)/2`.
    pub fn continuous_rate(&self, k: f64) -> f64 {
        let p = self.p as f64;
        -(p * self.nl() - 0.5 * p * (p - 1.0) * k) / 2.0
    }

    /// Guaranteed rate with jumps: `-(νλ₁ - K)` at `p = 2`,
    /// `(K D_p - pνλ₁)/2` for `p ≥ 3`.
    pub fn jump_rate(&self, k: f64) -> f64 {
        if self.p == 2 {
            -(self.nl() - k)
        } else {
            (k * self.jump_denominator as f64 - self.p as f64 * self.nl()) / 2.0
        }
    }

    /// Pathwise bound `(‖K‖∞ - 2νλ₁)/2`.
    pub fn as_bound_continuous(&self, k_inf: f64) -> f64 {
        (k_inf - 2.0 * self.nl()) / 2.0
    }

    /// Pathwise exponent factor `‖K‖∞ - νλ₁`.
    pub fn as_bound_jump(&self, k_inf: f64) -> f64 {
        k_inf - self.nl()
    }
}

pub fn thresholds(p: u32, nu: f64, lambda1: f64) -> Result<ThresholdSet> {
    if p < 2 {
        return Err(Error::config("p", format!("moment order must be at least 2, got {p}")));
    }
    if !(nu > 0.0) || !(lambda1 > 0.0) {
        return Err(Error::config("nu", format!("ν and λ₁ must be positive, got {nu}, {lambda1}")));
    }
    let exact = exact_thresholds(p)?;
    let nl = nu * lambda1;
    let to_f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64 * nl;
    Ok(ThresholdSet {
        p,
        nu,
        lambda1,
        continuous_kmax: to_f(exact.continuous),
        jump_kmax: to_f(exact.jump),
        jump_kmax_lemma: (p == 2).then_some(nl),
        jump_denominator: jump_denominator(p),
    })
}

/// Regression window. The start defaults to the burn-in, which defaults to
/// five relaxation times `5/(νλ₁)`; the end defaults to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentWindow {
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub burn_in: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentEstimate {
    pub p: u32,
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub estimator: Estimator,
}

impl ExponentEstimate {
    pub fn ci95(&self) -> (f64, f64) {
        (self.slope - 1.96 * self.stderr, self.slope + 1.96 * self.stderr)
    }
}

/// Least-squares slope of `log Ê|u(t)|^p` on the window. The standard error
/// propagates the full covariance of the moment estimates across times
/// through the log by the delta method.
pub fn estimate_moment_exponent(
    summary: &EnsembleSummary,
    p: u32,
    window: &ExponentWindow,
    estimator: Estimator,
    relaxation_rate: f64,
) -> Result<ExponentEstimate> {
    let series = summary
        .moment(p)
        .ok_or_else(|| Error::config("analysis.p", format!("ensemble has no p = {p} moments")))?;
    let burn_in = window.burn_in.unwrap_or(5.0 / relaxation_rate);
    let start = window.start.unwrap_or(burn_in);
    let end = window.end.unwrap_or(summary.horizon);
    if start < burn_in - 1e-12 {
        return Err(Error::config("analysis.window.start", format!("{start} precedes the burn-in {burn_in}")));
    }
    if !(end > start) {
        return Err(Error::Inconclusive(format!("empty regression window [{start}, {end}]")));
    }
    let idx: Vec<usize> = (0..summary.times.len())
        .filter(|&k| summary.times[k] >= start - 1e-12 && summary.times[k] <= end + 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(Error::Inconclusive(format!("fewer than two samples in [{start}, {end}]")));
    }
    let est = series.estimates(estimator);
    let cov = series.covariance(estimator);
    if let Some(&k) = idx.iter().find(|&&k| !(est[k].mean > 0.0)) {
        return Err(Error::Inconclusive(format!("nonpositive moment estimate at t = {}", summary.times[k])));
    }
    let x: Vec<f64> = idx.iter().map(|&k| summary.times[k]).collect();
    let y: Vec<f64> = idx.iter().map(|&k| est[k].mean.ln()).collect();
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::Inconclusive("degenerate regression".into()))?;
    let mut var = 0.0;
    for (a, &ka) in idx.iter().enumerate() {
        for (b, &kb) in idx.iter().enumerate() {
            var += fit.slope_weights[a] * fit.slope_weights[b] * cov[ka][kb] / (est[ka].mean * est[kb].mean);
        }
    }
    Ok(ExponentEstimate {
        p,
        slope: fit.slope,
        stderr: var.max(0.0).sqrt(),
        intercept: fit.intercept,
        window: (start, end),
        points: idx.len(),
        estimator,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsExponentReport {
    pub horizon: f64,
    /// `log|u(T)| / T` per surviving path.
    pub exponents: Vec<f64>,
    pub median: f64,
    pub p95: f64,
    pub mean: f64,
    /// Paths excluded by the blowup guard or with `u(T) = 0`.
    pub excluded: usize,
}

pub fn estimate_as_exponent(summary: &EnsembleSummary) -> Result<AsExponentReport> {
    let t = summary.horizon;
    let exponents: Vec<f64> = summary.terminal_norms.iter().filter(|r| **r > 0.0).map(|r| r.ln() / t).collect();
    if exponents.is_empty() {
        return Err(Error::Inconclusive("no path with a positive terminal norm".into()));
    }
    let excluded = summary.blowups + summary.terminal_norms.len() - exponents.len();
    let mut sorted = exponents.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(AsExponentReport {
        horizon: t,
        median: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        exponents,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseClass {
    Continuous,
    Jump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Violation,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "consistent",
            Verdict::Violation => "violation",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

pub struct VerdictInputs<'a> {
    pub p: u32,
    pub nu: f64,
    pub lambda1: f64,
    pub class: NoiseClass,
    pub declared_k: f64,
    pub hypotheses: &'a HypothesisReport,
    pub estimate: std::result::Result<ExponentEstimate, Error>,
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub p: u32,
    pub class: NoiseClass,
    pub declared_k: f64,
    pub k_l1: Option<f64>,
    pub k_inf: f64,
    pub thresholds: ThresholdSet,
    /// The threshold the verdict is gated on.
    pub threshold_used: f64,
    pub below_threshold: bool,
    pub guaranteed_rate: f64,
    pub estimate: Option<ExponentEstimate>,
    pub verdict: Verdict,
    pub diagnostics: Vec<String>,
}

/// Compares an estimated exponent with the guaranteed rate.
///
/// Below threshold the result is consistent iff the estimate is at most the
/// bound plus three standard errors, and a violation otherwise. Above
/// threshold, or when the estimate or ensemble is unusable, the verdict is
/// inconclusive. Unverified hypotheses are refused outright.
pub fn stability_verdict(inp: VerdictInputs<'_>) -> Result<StabilityReport> {
    if !inp.hypotheses.verified {
        let failed: Vec<String> = inp
            .hypotheses
            .failures()
            .map(|c| format!("{} (p={}): empirical {:.6e} > declared {:.6e}", c.name, c.p, c.empirical, c.declared))
            .chain(
                inp.hypotheses
                    .conditions
                    .iter()
                    .filter(|c| c.name == "K-integrable" && !c.satisfied)
                    .filter_map(|c| c.note.clone()),
            )
            .collect();
        return Err(Error::Refused(format!("noise hypotheses not verified: {}", failed.join("; "))));
    }
    let th = thresholds(inp.p, inp.nu, inp.lambda1)?;
    let (threshold_used, rate) = match inp.class {
        NoiseClass::Continuous => (th.continuous_kmax, th.continuous_rate(inp.declared_k)),
        NoiseClass::Jump => (th.jump_kmax_lemma.unwrap_or(th.jump_kmax), th.jump_rate(inp.declared_k)),
    };
    let below = inp.declared_k < threshold_used;
    let mut diagnostics = Vec::new();
    if inp.class == NoiseClass::Jump && inp.p == 2 {
        diagnostics.push(format!(
            "jump p=2: general constant K < {:.6} (νλ₁/3), mean-square constant K < {:.6} (νλ₁); verdict gated on the mean-square constant",
            th.jump_kmax, threshold_used
        ));
    }
    let estimate = match inp.estimate {
        Ok(e) => Some(e),
        Err(e) => {
            diagnostics.push(format!("exponent estimate unavailable: {e}"));
            None
        }
    };
    let verdict = if !below {
        diagnostics.push(format!("K = {} is not below {threshold_used}; no claim is made above threshold", inp.declared_k));
        Verdict::Inconclusive
    } else if inp.unreliable {
        diagnostics.push("more than 1% of paths tripped the blowup guard".into());
        Verdict::Inconclusive
    } else {
        match &estimate {
            None => Verdict::Inconclusive,
            Some(e) if e.slope <= rate + 3.0 * e.stderr => Verdict::Consistent,
            Some(e) => {
                diagnostics.push(format!("estimate {} exceeds bound {rate} by more than 3 s.e. ({})", e.slope, e.stderr));
                Verdict::Violation
            }
        }
    };
    Ok(StabilityReport {
        p: inp.p,
        class: inp.class,
        declared_k: inp.declared_k,
        k_l1: inp.hypotheses.k_l1,
        k_inf: inp.hypotheses.k_inf,
        thresholds: th,
        threshold_used,
        below_threshold: below,
        guaranteed_rate: rate,
        estimate,
        verdict,
        diagnostics,
    })
}

/// Everything a stability run needs beyond the model and sim settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityOptions {
    pub p: u32,
    pub paths: usize,
    pub seed: u64,
    /// 0-based initial regime.
    pub initial_regime: usize,
    pub window: ExponentWindow,
    pub estimator: Estimator,
    pub hypotheses: HypothesisOptions,
    /// Overrides the analytic growth constant.
    pub declared_k: Option<f64>,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            p: 2,
            paths: 1000,
            seed: 0,
            initial_regime: 0,
            window: ExponentWindow::default(),
            estimator: Estimator::ControlVariate,
            hypotheses: HypothesisOptions::default(),
            declared_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRun {
    pub report: StabilityReport,
    pub hypotheses: HypothesisReport,
    pub summary: EnsembleSummary,
}

pub fn noise_class(model: &Model, cfg: &SimConfig) -> NoiseClass {
    if cfg.jump_mode == JumpMode::On && model.noise.jump.as_ref().is_some_and(|j| j.intensity > 0.0) {
        NoiseClass::Jump
    } else {
        NoiseClass::Continuous
    }
}

/// Largest combined growth constant over the orders `{2, p}`.
pub fn declared_constant(model: &Model, cfg: &SimConfig, p: u32) -> Result<f64> {
    let jumps = noise_class(model, cfg) == NoiseClass::Jump;
    let mut k = model.noise.combined_growth_constant(2.0, jumps)?;
    if p > 2 {
        k = k.max(model.noise.combined_growth_constant(p as f64, jumps)?);
    }
    Ok(k)
}

/// Full stability run: hypotheses first, then the ensemble and its verdict.
pub fn run_stability(model: &Model, cfg: &SimConfig, opts: &StabilityOptions) -> Result<StabilityRun> {
    let mut cfg = cfg.clone();
    if !cfg.moment_orders.contains(&opts.p) {
        cfg.moment_orders.push(opts.p);
    }
    let mut hopts = opts.hypotheses.clone();
    hopts.p_max = hopts.p_max.max(opts.p);
    if opts.declared_k.is_some() {
        hopts.declared_k = opts.declared_k;
    }
    let hyp = verify_hypotheses(&model.noise, &hopts)?;
    let class = noise_class(model, &cfg);
    let declared_k = match opts.declared_k {
        Some(k) => k,
        None => declared_constant(model, &cfg, opts.p)?,
    };
    let summary = ensemble(model, &cfg, opts.initial_regime, opts.paths, opts.seed)?;
    let lambda1 = model.spectrum.lambda1();
    let estimate = estimate_moment_exponent(&summary, opts.p, &opts.window, opts.estimator, cfg.nu * lambda1);
    let report = stability_verdict(VerdictInputs {
        p: opts.p,
        nu: cfg.nu,
        lambda1,
        class,
        declared_k,
        hypotheses: &hyp,
        estimate,
        unreliable: summary.unreliable,
    })?;
    Ok(StabilityRun { report, hypotheses: hyp, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: f64,
    pub p: u32,
    pub exponent: Option<f64>,
    pub stderr: Option<f64>,
    pub bound: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Every consecutive pair of estimates is nondecreasing within 3 s.e.
    pub monotone: bool,
    pub monotonicity_breaks: Vec<(f64, f64)>,
}

/// One stability run per grid value of `K`, rescaling every noise amplitude
/// by `sqrt(K / K₀)` with `K₀` the base model's declared constant. All
/// points reuse the same master seed.
pub fn threshold_sweep(grid: &[f64], model: &Model, cfg: &SimConfig, opts: &StabilityOptions) -> Result<SweepTable> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("analysis.sweep.grid", "grid must be sorted ascending"));
    }
    if let Some(k) = grid.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
        return Err(Error::config("analysis.sweep.grid", format!("K values must be finite and nonnegative, got {k}")));
    }
    let mut rows = Vec::with_capacity(grid.len());
    if grid.is_empty() {
        return Ok(SweepTable { rows, monotone: true, monotonicity_breaks: Vec::new() });
    }
    let k0 = declared_constant(model, cfg, 2)?;
    if !(k0 > 0.0) {
        return Err(Error::config("noise", "sweep needs a base noise with a positive growth constant"));
    }
    for &k in grid {
        let mut point = model.clone();
        point.noise = model.noise.scaled((k / k0).sqrt());
        let mut popts = opts.clone();
        popts.declared_k = opts.declared_k.map(|_| k);
        let run = run_stability(&point, cfg, &popts)?;
        let r = run.report;
        rows.push(SweepRow {
            k,
            p: r.p,
            exponent: r.estimate.as_ref().map(|e| e.slope),
            stderr: r.estimate.as_ref().map(|e| e.stderr),
            bound: r.guaranteed_rate,
            verdict: r.verdict,
        });
    }
    let mut breaks = Vec::new();
    for w in rows.windows(2) {
        if let (Some(a), Some(b), Some(sa), Some(sb)) = (w[0].exponent, w[1].exponent, w[0].stderr, w[1].stderr) {
            if b < a - 3.0 * (sa * sa + sb * sb).sqrt() {
                breaks.push((w[0].k, w[1].k));
            }
        }
    }
    Ok(SweepTable { rows, monotone: breaks.is_empty(), monotonicity_breaks: breaks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        let t2 = thresholds(2, 1.0, 1.0).unwrap();
        assert_eq!(t2.continuous_kmax, 2.0);
        assert!((t2.jump_kmax - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t2.jump_kmax_lemma, Some(1.0));
        let t3 = thresholds(3, 1.0, 1.0).unwrap();
        assert_eq!(t3.jump_denominator, 13);
        assert_eq!(exact_thresholds(3).unwrap().jump, Ratio::new(3, 13));
        assert_eq!(t3.continuous_kmax, 1.0);
        assert!(thresholds(1, 1.0, 1.0).is_err());
        assert!(thresholds(2, 0.0, 1.0).is_err());
    }

    #[test]
    fn rates() {
        let t2 = thresholds(2, 1.0, 1.0).unwrap();
        assert_eq!(t2.continuous_rate(1.0), -0.5);
        assert!((t2.jump_rate(0.2) + 0.8).abs() < 1e-15);
        let t3 = thresholds(3, 1.0, 1.0).unwrap();
        assert!((t3.continuous_rate(0.5) + 1.5 * 0.5).abs() < 1e-15);
        assert!((t3.jump_rate(0.1) - (13.0 * 0.1 - 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(t2.as_bound_continuous(1.0), -0.5);
    }

    #[test]
    fn jump_threshold_below_continuous() {
        for p in 2..=12 {
            let t = thresholds(p, 0.7, 1.3).unwrap();
            assert!(t.jump_kmax > 0.0 && t.jump_kmax < t.continuous_kmax);
        }
    }
}
