//! Both sides of the energy equality and the `p`-th power identities along a
//! discretised path, plus ensemble diagnostics for the martingales `M₁, M₂`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{EnsembleSummary, HybridPath, JumpMode, SimConfig};
use crate::stats::{mean_stderr, MeanEstimate};

/// Per-sample terms of one identity. The identity reads
/// `lhs + viscous = initial + lq + stochastic + compensator`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityLedger {
    pub p: u32,
    pub jumps: bool,
    pub times: Vec<f64>,
    /// `|u(t)|^p`.
    pub lhs: Vec<f64>,
    pub viscous: Vec<f64>,
    /// `|x|^p`.
    pub initial: f64,
    /// Diffusion correction in the printed form `p(p-1)/2 ∫|u|^{p-2}‖σ‖²`.
    pub lq: Vec<f64>,
    /// Stochastic integrals: `2M₁ + M₂` at `p = 2`.
    pub stochastic: Vec<f64>,
    /// Jump compensator in the printed (unreduced) form.
    pub compensator: Vec<f64>,
    /// `p = 2`: the reduced form `∫∫|G|²ν₁(dz)ds`.
    pub compensator_reduced: Option<Vec<f64>>,
    /// `p ≥ 3`: the exact Itô diffusion correction, which differs from the
    /// printed one whenever more than one mode is excited.
    pub lq_exact: Option<Vec<f64>>,
    pub residual: Vec<f64>,
    pub residual_exact: Option<Vec<f64>>,
}

impl IdentityLedger {
    /// `max |residual(t)|` over samples with `t ≤ t_max`.
    pub fn max_residual(&self, t_max: f64) -> f64 {
        max_abs_until(&self.times, &self.residual, t_max)
    }

    pub fn max_residual_exact(&self, t_max: f64) -> Option<f64> {
        self.residual_exact.as_ref().map(|r| max_abs_until(&self.times, r, t_max))
    }

    /// `max |printed - reduced|` of the jump compensator.
    pub fn compensator_gap(&self) -> Option<f64> {
        self.compensator_reduced
            .as_ref()
            .map(|r| r.iter().zip(&self.compensator).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn columns(&self) -> Vec<(&'static str, &[f64])> {
        let mut cols: Vec<(&'static str, &[f64])> = vec![
            ("lhs", &self.lhs),
            ("viscous", &self.viscous),
            ("lq", &self.lq),
            ("stochastic", &self.stochastic),
            ("compensator", &self.compensator),
        ];
        if let Some(r) = &self.compensator_reduced {
            cols.push(("compensator_reduced", r));
        }
        if let Some(r) = &self.lq_exact {
            cols.push(("lq_exact", r));
        }
        cols.push(("residual", &self.residual));
        if let Some(r) = &self.residual_exact {
            cols.push(("residual_exact", r));
        }
        cols
    }
}

fn max_abs_until(times: &[f64], xs: &[f64], t_max: f64) -> f64 {
    times.iter().zip(xs).filter(|(t, _)| **t <= t_max + 1e-12).fold(0.0f64, |m, (_, r)| m.max(r.abs()))
}

/// Energy equality (`p = 2`) from the integrator's own accumulators.
pub fn audit_energy(path: &HybridPath, cfg: &SimConfig) -> Result<IdentityLedger> {
    if path.samples.is_empty() {
        return Err(Error::Audit("path has no samples".into()));
    }
    let jumps = cfg.jump_mode == JumpMode::On;
    let initial = path.x.h_norm_sq();
    let s = &path.samples;
    let lhs: Vec<f64> = s.iter().map(|x| x.u.h_norm_sq()).collect();
    let viscous: Vec<f64> = s.iter().map(|x| x.energy.viscous).collect();
    let lq: Vec<f64> = s.iter().map(|x| x.energy.lq).collect();
    let stochastic: Vec<f64> = s.iter().map(|x| 2.0 * x.m1 + x.m2).collect();
    let compensator: Vec<f64> = s.iter().map(|x| x.energy.jump_printed).collect();
    let reduced: Vec<f64> = s.iter().map(|x| x.energy.jump_reduced).collect();
    let residual = (0..s.len())
        .map(|k| lhs[k] + viscous[k] - (initial + lq[k] + stochastic[k] + compensator[k]))
        .collect();
    Ok(IdentityLedger {
        p: 2,
        jumps,
        times: path.times(),
        lhs,
        viscous,
        initial,
        lq,
        stochastic,
        compensator,
        compensator_reduced: Some(reduced),
        lq_exact: None,
        residual,
        residual_exact: None,
    })
}

/// `p`-th power identity for integer `p ≥ 3`; `p` must be among the
/// configured moment orders so the integrator kept its ledger.
pub fn audit_pth_moment(path: &HybridPath, cfg: &SimConfig, p: u32) -> Result<IdentityLedger> {
    if p < 3 {
        return Err(Error::config("p", format!("p = {p}: use audit_energy for p = 2")));
    }
    let idx = cfg
        .moment_orders
        .iter()
        .position(|&q| q == p)
        .ok_or_else(|| Error::Audit(format!("no ledger for p = {p}; add it to moment_orders")))?;
    let s = &path.samples;
    if s.iter().any(|x| x.moments.len() <= idx) {
        return Err(Error::Audit(format!("ledger for p = {p} missing from path samples")));
    }
    let pf = p as f64;
    let initial = path.x.h_norm().powf(pf);
    let lhs: Vec<f64> = s.iter().map(|x| x.u.h_norm().powf(pf)).collect();
    let led = |f: fn(&crate::integrator::MomentLedger) -> f64| -> Vec<f64> { s.iter().map(|x| f(&x.moments[idx])).collect() };
    let viscous = led(|m| m.viscous);
    let lq = led(|m| m.lq_printed);
    let lq_exact = led(|m| m.lq_exact);
    let stochastic = led(|m| m.wiener + m.jump);
    let compensator = led(|m| m.compensator);
    let resid = |corr: &[f64]| -> Vec<f64> {
        (0..s.len())
            .map(|k| lhs[k] + viscous[k] - (initial + corr[k] + stochastic[k] + compensator[k]))
            .collect()
    };
    let residual = resid(&lq);
    let residual_exact = resid(&lq_exact);
    Ok(IdentityLedger {
        p,
        jumps: cfg.jump_mode == JumpMode::On,
        times: path.times(),
        lhs,
        viscous,
        initial,
        lq,
        stochastic,
        compensator,
        compensator_reduced: None,
        lq_exact: Some(lq_exact),
        residual,
        residual_exact: Some(residual_exact),
    })
}

/// Relative error of `|u+G|² - |u|² = 2(u,G) + |G|²` at every recorded jump.
pub fn jump_algebra_errors(path: &HybridPath) -> Vec<f64> {
    path.jumps
        .iter()
        .map(|j| {
            let u = &j.u_before;
            let g = &j.g;
            let after: f64 = u.iter().zip(g).map(|(a, b)| (a + b) * (a + b)).sum();
            let before: f64 = u.iter().map(|a| a * a).sum();
            let ug: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
            let gg: f64 = g.iter().map(|b| b * b).sum();
            let lhs = after - before;
            let rhs = 2.0 * ug + gg;
            let scale = lhs.abs().max(rhs.abs()).max(before).max(f64::MIN_POSITIVE);
            (lhs - rhs).abs() / scale
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub times: Vec<f64>,
    pub mean_abs_m1: Vec<f64>,
    pub mean_abs_m2: Vec<f64>,
    pub sup_mean_abs_m1: f64,
    pub sup_mean_abs_m2: f64,
    pub terminal_m1: MeanEstimate,
    pub terminal_m2: MeanEstimate,
    /// Slope of `Ê|M_i(t)|` over the last fifth of the horizon.
    pub tail_slope_m1: MeanEstimate,
    pub tail_slope_m2: MeanEstimate,
    /// Sample variance of `M_i(T) - M_i(0.8 T)`.
    pub tail_increment_var_m1: f64,
    pub tail_increment_var_m2: f64,
    /// Tail slope within 3 s.e. of zero.
    pub m1_flat: bool,
    pub m2_flat: bool,
}

fn sample_var(xs: &[f64]) -> f64 {
    let est = mean_stderr(xs);
    if xs.len() < 2 {
        return 0.0;
    }
    est.stderr * est.stderr * xs.len() as f64
}

fn flat(e: &MeanEstimate) -> bool {
    e.mean == 0.0 || e.mean.abs() <= 3.0 * e.stderr
}

pub fn martingale_diagnostics(summary: &EnsembleSummary) -> MartingaleReport {
    let n = summary.n_used as f64;
    let ms = &summary.martingales;
    let mean_abs_m1: Vec<f64> = ms.m1_abs.iter().map(|s| s / n).collect();
    let mean_abs_m2: Vec<f64> = ms.m2_abs.iter().map(|s| s / n).collect();
    let m1 = summary.mean_m1();
    let m2 = summary.mean_m2();
    let zero = MeanEstimate { mean: 0.0, stderr: 0.0, n: 0 };
    let tail_slope_m1 = mean_stderr(&ms.m1_tail_slopes);
    let tail_slope_m2 = mean_stderr(&ms.m2_tail_slopes);
    MartingaleReport {
        times: summary.times.clone(),
        sup_mean_abs_m1: mean_abs_m1.iter().copied().fold(0.0, f64::max),
        sup_mean_abs_m2: mean_abs_m2.iter().copied().fold(0.0, f64::max),
        mean_abs_m1,
        mean_abs_m2,
        terminal_m1: m1.last().copied().unwrap_or(zero),
        terminal_m2: m2.last().copied().unwrap_or(zero),
        m1_flat: flat(&tail_slope_m1),
        m2_flat: flat(&tail_slope_m2),
        tail_slope_m1,
        tail_slope_m2,
        tail_increment_var_m1: sample_var(&ms.m1_tail_increments),
        tail_increment_var_m2: sample_var(&ms.m2_tail_increments),
    }
}
