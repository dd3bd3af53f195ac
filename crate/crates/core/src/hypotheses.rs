//! Empirical verification of the growth and Lipschitz conditions on the noise
//! coefficients, in the constant-`K` form (H) or the time-dependent form (H′).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, TimeProfile};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisMode {
    /// Constant growth constant `K`.
    #[default]
    H,
    /// Integrable time-dependent `K(t)`.
    HPrime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisOptions {
    pub mode: HypothesisMode,
    pub p_max: u32,
    pub samples: usize,
    pub seed: u64,
    /// Window `[0, t_max]` for sampled times.
    pub t_max: f64,
    /// User-declared growth constant at `p = 2`; the analytic constant otherwise.
    pub declared_k: Option<f64>,
    /// User-declared Lipschitz constant at `p = 2`.
    pub declared_l: Option<f64>,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        Self { mode: HypothesisMode::H, p_max: 2, samples: 2000, seed: 0, t_max: 10.0, declared_k: None, declared_l: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    /// 1-based regime label.
    pub regime: usize,
    pub u: Vec<f64>,
    pub v: Option<Vec<f64>>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub p: u32,
    pub declared: f64,
    pub empirical: f64,
    pub evaluated: bool,
    pub satisfied: bool,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub mode: HypothesisMode,
    pub samples: usize,
    pub conditions: Vec<ConditionCheck>,
    /// `‖K‖_{L¹(ℝ₊)}` of the combined `p = 2` constant, `None` if infinite.
    pub k_l1: Option<f64>,
    pub k_inf: f64,
    pub verified: bool,
}

impl HypothesisReport {
    pub fn find(&self, name: &str, p: u32) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name.trim_end_matches('\'') == name && c.p == p)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.conditions.iter().filter(|c| c.evaluated && !c.satisfied)
    }
}

enum Kind {
    Growth,
    Lipschitz,
}

struct Sample {
    t: f64,
    i: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn draw_samples(noise: &NoiseSpec, opts: &HypothesisOptions) -> Vec<Sample> {
    let mut rng = stream_rng(opts.seed, Stream::Hypotheses);
    let n = noise.modes();
    let m = noise.regimes();
    let normal = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z / (n as f64).sqrt()
            })
            .collect()
    };
    (0..opts.samples)
        .map(|s| {
            let t = opts.t_max * rng.random::<f64>();
            let i = s % m;
            let scale = 10f64.powf(rng.random_range(-2.0..3.0));
            let u = normal(&mut rng, scale);
            let gap = 10f64.powf(rng.random_range(-3.0..1.0));
            let d = normal(&mut rng, gap);
            let v = u.iter().zip(&d).map(|(a, b)| a + b).collect();
            Sample { t, i, u, v }
        })
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Evaluates every condition on a random sample of `(t, u, v, i)`.
///
/// Declared constants are the analytic ones unless overridden at `p = 2`.
/// A condition is satisfied when the worst sampled ratio does not exceed
/// its declared constant.
pub fn verify_hypotheses(noise: &NoiseSpec, opts: &HypothesisOptions) -> Result<HypothesisReport> {
    if opts.p_max < 2 {
        return Err(Error::config("hypotheses.p_max", "must be at least 2"));
    }
    if opts.samples == 0 {
        return Err(Error::config("hypotheses.samples", "must be positive"));
    }
    if !(opts.t_max > 0.0) {
        return Err(Error::config("hypotheses.t_max", "must be positive"));
    }
    let samples = draw_samples(noise, opts);
    let prime = opts.mode == HypothesisMode::HPrime;
    let suffix = if prime { "'" } else { "" };
    let q = noise.q.eigenvalues();
    let diff = &noise.diffusion;
    let mut conditions = Vec::new();

    for p in 2..=opts.p_max {
        let pf = p as f64;
        for kind in [Kind::Growth, Kind::Lipschitz] {
            let (name, analytic, override_) = match kind {
                Kind::Growth => ("H1", diff.growth_constant(&noise.q, pf), opts.declared_k),
                Kind::Lipschitz => ("H2", diff.lipschitz_constant(&noise.q, pf), opts.declared_l),
            };
            let declared = if p == 2 { override_.unwrap_or(analytic) } else { analytic };
            let eval = |s: &Sample| -> Option<f64> {
                let kappa = diff.profile.factor(s.t);
                let w = if prime { kappa.powf(pf) } else { 1.0 };
                if w == 0.0 {
                    return None;
                }
                Some(match kind {
                    Kind::Growth => diff.hs_norm_sq_raw(kappa, q, &s.u, s.i).powf(pf / 2.0) / (w * (1.0 + norm(&s.u).powf(pf))),
                    Kind::Lipschitz => {
                        let d: Vec<f64> = s.u.iter().zip(&s.v).map(|(a, b)| a - b).collect();
                        diff.hs_norm_sq_diff_raw(kappa, q, &s.u, &s.v, s.i).powf(pf / 2.0) / (w * norm(&d).powf(pf))
                    }
                })
            };
            conditions.push(run_check(format!("{name}{suffix}"), p, declared, &samples, matches!(kind, Kind::Lipschitz), eval));
        }
    }

    if let Some(jump) = &noise.jump {
        for p in 1..=opts.p_max {
            let pf = p as f64;
            for kind in [Kind::Growth, Kind::Lipschitz] {
                let (name, analytic, override_) = match kind {
                    Kind::Growth => ("H3", jump.growth_constant(pf), opts.declared_k),
                    Kind::Lipschitz => ("H4", jump.lipschitz_constant(pf), opts.declared_l),
                };
                let analytic = match analytic {
                    Ok(v) => v,
                    Err(e) => {
                        conditions.push(ConditionCheck {
                            name: format!("{name}{suffix}"),
                            p,
                            declared: f64::NAN,
                            empirical: f64::NAN,
                            evaluated: false,
                            satisfied: false,
                            witness: None,
                            note: Some(e.to_string()),
                        });
                        continue;
                    }
                };
                let declared = if p == 2 { override_.unwrap_or(analytic) } else { analytic };
                let eval = |s: &Sample| -> Option<f64> {
                    let kappa = jump.profile.factor(s.t);
                    let w = if prime { kappa.powf(pf) } else { 1.0 };
                    if w == 0.0 {
                        return None;
                    }
                    match kind {
                        Kind::Growth => {
                            let v = jump.compensator_raw(kappa, &s.u, s.i, pf).ok()?;
                            Some(v / (w * (1.0 + norm(&s.u).powf(pf))))
                        }
                        Kind::Lipschitz => {
                            let d: Vec<f64> = s.u.iter().zip(&s.v).map(|(a, b)| a - b).collect();
                            let v = jump.diff_integral_raw(kappa, &s.u, &s.v, s.i, pf).ok()?;
                            Some(v / (w * norm(&d).powf(pf)))
                        }
                    }
                };
                conditions.push(run_check(format!("{name}{suffix}"), p, declared, &samples, matches!(kind, Kind::Lipschitz), eval));
            }
        }
    }

    let (k_l1, k_inf) = combined_norms(noise, opts)?;
    let mut verified = conditions.iter().filter(|c| c.evaluated).all(|c| c.satisfied);
    if prime && k_l1.is_none() {
        verified = false;
        conditions.push(ConditionCheck {
            name: "K-integrable".into(),
            p: 2,
            declared: f64::INFINITY,
            empirical: f64::INFINITY,
            evaluated: true,
            satisfied: false,
            witness: None,
            note: Some("K(t) is not integrable on [0, inf) for a constant profile".into()),
        });
    }
    Ok(HypothesisReport { mode: opts.mode, samples: opts.samples, conditions, k_l1, k_inf, verified })
}

fn run_check<F: Fn(&Sample) -> Option<f64>>(
    name: String,
    p: u32,
    declared: f64,
    samples: &[Sample],
    pair: bool,
    eval: F,
) -> ConditionCheck {
    let mut worst = 0.0f64;
    let mut worst_at: Option<&Sample> = None;
    for s in samples {
        if let Some(r) = eval(s) {
            if r.is_finite() && r > worst {
                worst = r;
                worst_at = Some(s);
            }
        }
    }
    let satisfied = worst <= declared * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let witness = match (satisfied, worst_at) {
        (false, Some(s)) => Some(Witness {
            t: s.t,
            regime: s.i + 1,
            u: s.u.clone(),
            v: pair.then(|| s.v.clone()),
            ratio: worst,
        }),
        _ => None,
    };
    ConditionCheck { name, p, declared, empirical: worst, evaluated: true, satisfied, witness, note: None }
}

/// `‖K‖₁` and `‖K‖∞` for `K(t) = max(K_σ κ_σ(t)², K_G κ_G(t)²)` at the
/// declared `p = 2` constants.
fn combined_norms(noise: &NoiseSpec, opts: &HypothesisOptions) -> Result<(Option<f64>, f64)> {
    let ks = opts.declared_k.unwrap_or_else(|| noise.diffusion.growth_constant(&noise.q, 2.0));
    let mut parts = vec![(ks, noise.diffusion.profile)];
    if let Some(j) = &noise.jump {
        parts.push((opts.declared_k.map_or_else(|| j.growth_constant(2.0), Ok)?, j.profile));
    }
    parts.retain(|(k, _)| *k > 0.0);
    let k_inf = parts.iter().map(|(k, _)| *k).fold(0.0, f64::max);
    if parts.is_empty() {
        return Ok((Some(0.0), 0.0));
    }
    if parts.iter().any(|(_, prof)| matches!(prof, TimeProfile::Constant)) {
        return Ok((None, k_inf));
    }
    let slowest = parts
        .iter()
        .map(|(_, prof)| match prof {
            TimeProfile::ExpDecay { rate } => *rate,
            TimeProfile::Constant => unreachable!(),
        })
        .fold(f64::INFINITY, f64::min);
    // integrate the pointwise max with composite Simpson out to e^{-80}
    let horizon = 40.0 / slowest;
    let n = 20_000;
    let h = horizon / n as f64;
    let k_at = |t: f64| parts.iter().map(|(k, prof)| k * prof.factor(t).powi(2)).fold(0.0, f64::max);
    let mut s = k_at(0.0) + k_at(horizon);
    for j in 1..n {
        s += if j % 2 == 1 { 4.0 } else { 2.0 } * k_at(j as f64 * h);
    }
    Ok((Some(s * h / 3.0), k_inf))
}
