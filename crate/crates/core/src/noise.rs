//! Regime-indexed noise coefficients.
//!
//! The Wiener part is a Q-Wiener process with diagonal covariance `q_k`; the
//! diffusion `σ(t, u, i)` acts diagonally, mode `k` of `σ·dW` being
//! `κ(t) a_ik f(u_k) dW_k`. Jumps are compound Poisson with total intensity
//! `Λ` and real marks `z`; the jump map is `G_k = κ(t) z g_ik f(u_k)`.
//! Every family has closed forms for the growth and Lipschitz constants that
//! enter the stability thresholds.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::spectral::{dot, SpectralField};
use crate::stats::{gauss_hermite, gauss_legendre};

/// Eigenvalues of the trace-class covariance `Q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceSpectrum {
    q: Vec<f64>,
    trace: f64,
}

impl CovarianceSpectrum {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        for (k, &v) in q.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("noise.q[{k}]"), format!("must be finite and nonnegative, got {v}")));
            }
        }
        let trace = q.iter().sum();
        Ok(Self { q, trace })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.q
    }
}

/// Independent Gaussian increment with per-mode variance `q_k dt`.
pub fn wiener_increment<R: Rng + ?Sized>(q: &CovarianceSpectrum, dt: f64, rng: &mut R) -> SpectralField {
    let mut out = vec![0.0; q.len()];
    wiener_increment_into(q.eigenvalues(), dt, rng, &mut out);
    SpectralField(out)
}

pub(crate) fn wiener_increment_into<R: Rng + ?Sized>(q: &[f64], dt: f64, rng: &mut R, out: &mut [f64]) {
    for (o, &qk) in out.iter_mut().zip(q) {
        let z: f64 = StandardNormal.sample(rng);
        *o = if qk == 0.0 { 0.0 } else { (qk * dt).sqrt() * z };
    }
}

/// Time modulation `κ(t)` shared by a noise family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    #[default]
    Constant,
    /// `κ(t) = e^{-rate·t}`.
    ExpDecay { rate: f64 },
}

impl TimeProfile {
    pub fn validate(&self, field: &str) -> Result<()> {
        match *self {
            TimeProfile::Constant => Ok(()),
            TimeProfile::ExpDecay { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            TimeProfile::ExpDecay { rate } => Err(Error::config(field, format!("decay rate must be positive, got {rate}"))),
        }
    }

    pub fn factor(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant => 1.0,
            TimeProfile::ExpDecay { rate } => (-rate * t).exp(),
        }
    }

    /// `∫_0^∞ κ(t)^p dt`, `None` when infinite.
    pub fn integral_of_power(&self, p: f64) -> Option<f64> {
        match *self {
            TimeProfile::Constant => None,
            TimeProfile::ExpDecay { rate } => Some(1.0 / (p * rate)),
        }
    }

    /// `sup_t κ(t)^p`.
    pub fn sup_of_power(&self, _p: f64) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKind {
    /// `f(u_k) = u_k`.
    LinearDiagonal,
    /// `f(u_k) = 1`.
    Additive,
    /// `f(u_k) = tanh(u_k)`: Lipschitz and bounded.
    BoundedSaturating,
}

impl DiffusionKind {
    #[inline]
    fn shape(self, x: f64) -> f64 {
        match self {
            DiffusionKind::LinearDiagonal => x,
            DiffusionKind::Additive => 1.0,
            DiffusionKind::BoundedSaturating => x.tanh(),
        }
    }
}

/// Diffusion coefficient `σ(t, u, i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionFamily {
    pub kind: DiffusionKind,
    /// `amplitudes[i][k] = a_ik`.
    amplitudes: Vec<Vec<f64>>,
    pub profile: TimeProfile,
}

impl DiffusionFamily {
    pub fn new(kind: DiffusionKind, amplitudes: Vec<Vec<f64>>, profile: TimeProfile) -> Result<Self> {
        validate_amplitudes("noise.diffusion.amplitudes", &amplitudes)?;
        profile.validate("noise.diffusion.profile")?;
        Ok(Self { kind, amplitudes, profile })
    }

    /// Noise-free family.
    pub fn zero(regimes: usize, modes: usize) -> Self {
        Self {
            kind: DiffusionKind::Additive,
            amplitudes: vec![vec![0.0; modes]; regimes],
            profile: TimeProfile::Constant,
        }
    }

    pub fn regimes(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn modes(&self) -> usize {
        self.amplitudes[0].len()
    }

    pub fn amplitudes(&self) -> &[Vec<f64>] {
        &self.amplitudes
    }

    pub fn is_zero(&self) -> bool {
        self.amplitudes.iter().flatten().all(|&a| a == 0.0)
    }

    /// Same family with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.amplitudes.iter_mut().flatten().for_each(|a| *a *= factor);
        out
    }

    /// Diagonal entry `σ_kk(t, u, i)`.
    #[inline]
    pub fn entry(&self, t: f64, u_k: f64, i: usize, k: usize) -> f64 {
        self.profile.factor(t) * self.amplitudes[i][k] * self.kind.shape(u_k)
    }

    /// `out = σ(t, u, i) dw`.
    pub(crate) fn apply_into(&self, kappa: f64, u: &[f64], i: usize, dw: &[f64], out: &mut [f64]) {
        let amp = &self.amplitudes[i];
        for k in 0..u.len() {
            out[k] = kappa * amp[k] * self.kind.shape(u[k]) * dw[k];
        }
    }

    pub(crate) fn hs_norm_sq_raw(&self, kappa: f64, q: &[f64], u: &[f64], i: usize) -> f64 {
        let amp = &self.amplitudes[i];
        let s: f64 = (0..u.len())
            .map(|k| {
                let e = amp[k] * self.kind.shape(u[k]);
                q[k] * e * e
            })
            .sum();
        kappa * kappa * s
    }

    /// `Σ_k q_k (σ_kk u_k)²`, the quadratic-variation rate of `(u, σ dW)`.
    pub(crate) fn qv_rate_raw(&self, kappa: f64, q: &[f64], u: &[f64], i: usize) -> f64 {
        let amp = &self.amplitudes[i];
        let s: f64 = (0..u.len())
            .map(|k| {
                let e = amp[k] * self.kind.shape(u[k]) * u[k];
                q[k] * e * e
            })
            .sum();
        kappa * kappa * s
    }

    pub(crate) fn hs_norm_sq_diff_raw(&self, kappa: f64, q: &[f64], u: &[f64], v: &[f64], i: usize) -> f64 {
        let amp = &self.amplitudes[i];
        let s: f64 = (0..u.len())
            .map(|k| {
                let e = amp[k] * (self.kind.shape(u[k]) - self.kind.shape(v[k]));
                q[k] * e * e
            })
            .sum();
        kappa * kappa * s
    }

    fn per_regime(&self, q: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
        let q = q.to_vec();
        self.amplitudes.iter().map(move |amp| {
            let weights = amp.iter().zip(&q).map(|(a, qk)| qk * a * a);
            let max = weights.clone().fold(0.0, f64::max);
            let total: f64 = weights.sum();
            (max, total)
        })
    }

    /// Smallest `K` with `‖σ(t,u,i)‖^p_{L_Q} ≤ K κ(t)^p (1 + |u|^p)` for all `u, i`.
    pub fn growth_constant(&self, q: &CovarianceSpectrum, p: f64) -> f64 {
        self.per_regime(q.eigenvalues())
            .map(|(max, total)| match self.kind {
                DiffusionKind::LinearDiagonal => max.powf(p / 2.0),
                DiffusionKind::Additive => total.powf(p / 2.0),
                DiffusionKind::BoundedSaturating => max.min(total).powf(p / 2.0),
            })
            .fold(0.0, f64::max)
    }

    /// Smallest `L` with `‖σ(t,u,i) - σ(t,v,i)‖^p_{L_Q} ≤ L κ(t)^p |u - v|^p`.
    pub fn lipschitz_constant(&self, q: &CovarianceSpectrum, p: f64) -> f64 {
        match self.kind {
            DiffusionKind::Additive => 0.0,
            _ => self.per_regime(q.eigenvalues()).map(|(max, _)| max.powf(p / 2.0)).fold(0.0, f64::max),
        }
    }
}

fn validate_amplitudes(field: &str, amps: &[Vec<f64>]) -> Result<()> {
    if amps.is_empty() || amps[0].is_empty() {
        return Err(Error::config(field, "need at least one regime and one mode"));
    }
    let n = amps[0].len();
    for (i, row) in amps.iter().enumerate() {
        if row.len() != n {
            return Err(Error::config(format!("{field}[{i}]"), format!("has {} modes, expected {n}", row.len())));
        }
        if let Some((k, a)) = row.iter().enumerate().find(|(_, a)| !a.is_finite()) {
            return Err(Error::config(format!("{field}[{i}][{k}]"), format!("must be finite, got {a}")));
        }
    }
    Ok(())
}

/// `‖σ(t, u, i)‖²_{L_Q} = κ(t)² Σ_k q_k a_ik² f(u_k)²`.
pub fn hs_norm_sq(diff: &DiffusionFamily, q: &CovarianceSpectrum, t: f64, u: &SpectralField, i: usize) -> Result<f64> {
    check_dim(diff.modes(), u.len())?;
    check_dim(diff.modes(), q.len())?;
    check_regime(i, diff.regimes())?;
    Ok(diff.hs_norm_sq_raw(diff.profile.factor(t), q.eigenvalues(), u.as_slice(), i))
}

/// `‖σ(t, u, i) - σ(t, v, i)‖²_{L_Q}`.
pub fn hs_norm_sq_diff(
    diff: &DiffusionFamily,
    q: &CovarianceSpectrum,
    t: f64,
    u: &SpectralField,
    v: &SpectralField,
    i: usize,
) -> Result<f64> {
    check_dim(diff.modes(), u.len())?;
    check_dim(diff.modes(), v.len())?;
    check_regime(i, diff.regimes())?;
    Ok(diff.hs_norm_sq_diff_raw(diff.profile.factor(t), q.eigenvalues(), u.as_slice(), v.as_slice(), i))
}

fn check_regime(i: usize, m: usize) -> Result<()> {
    if i < m {
        Ok(())
    } else {
        Err(Error::config("regime", format!("{i} outside 0..{m}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MarkKind {
    /// Finitely many marks `(value, probability)`.
    Atoms(Vec<(f64, f64)>),
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

/// Mark law `ν₁ / Λ`, with a quadrature rule for expectations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkDistribution {
    pub kind: MarkKind,
    #[serde(skip)]
    rule: Vec<(f64, f64)>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

const MARK_NODES: usize = 24;

impl MarkDistribution {
    pub fn new(kind: MarkKind) -> Result<Self> {
        let rule = match &kind {
            MarkKind::Atoms(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::config("noise.jump.marks", "need at least one atom"));
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if atoms.iter().any(|a| !(a.1 >= 0.0) || !a.0.is_finite()) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(
                        "noise.jump.marks",
                        format!("atom probabilities must be nonnegative and sum to 1 (sum {total})"),
                    ));
                }
                atoms.clone()
            }
            &MarkKind::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::config("noise.jump.marks", format!("uniform needs low < high, got [{low}, {high}]")));
                }
                let (x, w) = gauss_legendre(MARK_NODES);
                let (mid, half) = (0.5 * (low + high), 0.5 * (high - low));
                x.iter().zip(&w).map(|(xi, wi)| (mid + half * xi, 0.5 * wi)).collect()
            }
            &MarkKind::Normal { mean, std } => {
                if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::config("noise.jump.marks", format!("normal needs std > 0, got {std}")));
                }
                let (x, w) = gauss_hermite(MARK_NODES);
                let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
                x.iter()
                    .zip(&w)
                    .map(|(xi, wi)| (mean + std::f64::consts::SQRT_2 * std * xi, wi * inv_sqrt_pi))
                    .collect()
            }
        };
        let cumulative = match &kind {
            MarkKind::Atoms(atoms) => atoms
                .iter()
                .scan(0.0, |acc, a| {
                    *acc += a.1;
                    Some(*acc)
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self { kind, rule, cumulative })
    }

    pub fn atom(z: f64) -> Self {
        Self::new(MarkKind::Atoms(vec![(z, 1.0)])).expect("single atom is valid")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            MarkKind::Atoms(atoms) => {
                let u = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
                let idx = self.cumulative.partition_point(|&c| c <= u).min(atoms.len() - 1);
                atoms[idx].0
            }
            &MarkKind::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            &MarkKind::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            MarkKind::Atoms(atoms) => atoms.iter().map(|(z, w)| z * w).sum(),
            &MarkKind::Uniform { low, high } => 0.5 * (low + high),
            &MarkKind::Normal { mean, .. } => mean,
        }
    }

    /// `E|z|^p` in closed form.
    pub fn abs_moment(&self, p: f64) -> Result<f64> {
        match &self.kind {
            MarkKind::Atoms(atoms) => Ok(atoms.iter().map(|(z, w)| w * z.abs().powf(p)).sum()),
            &MarkKind::Uniform { low, high } => {
                let prim = |z: f64| z.signum() * z.abs().powf(p + 1.0) / (p + 1.0);
                Ok((prim(high) - prim(low)) / (high - low))
            }
            &MarkKind::Normal { mean, std } => {
                if mean == 0.0 {
                    let g = statrs::function::gamma::gamma((p + 1.0) / 2.0);
                    return Ok(std.powf(p) * 2f64.powf(p / 2.0) * g / std::f64::consts::PI.sqrt());
                }
                let n = p.round();
                if (p - n).abs() > 0.0 || n < 0.0 || (n as u64) % 2 == 1 {
                    return Err(Error::Unsupported(format!(
                        "E|z|^{p} for a normal mark with nonzero mean has no closed form here (even integer p only)"
                    )));
                }
                // E z^n = Σ_{k even} C(n,k) μ^{n-k} s^k (k-1)!!
                let n = n as u64;
                let mut total = 0.0;
                let mut binom = 1.0;
                let mut dfact = 1.0;
                for k in 0..=n {
                    if k > 0 {
                        binom *= (n - k + 1) as f64 / k as f64;
                    }
                    if k % 2 == 0 {
                        if k >= 2 {
                            dfact *= (k - 1) as f64;
                        }
                        total += binom * mean.powi((n - k) as i32) * std.powi(k as i32) * dfact;
                    }
                }
                Ok(total)
            }
        }
    }

    /// `E f(z)` by the distribution's rule: exact for atoms, 24-point
    /// Gauss-Legendre/Hermite otherwise.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.rule.iter().map(|&(z, w)| w * f(z)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpKind {
    LinearDiagonal,
    Additive,
}

impl JumpKind {
    #[inline]
    fn shape(self, x: f64) -> f64 {
        match self {
            JumpKind::LinearDiagonal => x,
            JumpKind::Additive => 1.0,
        }
    }
}

/// Finite-intensity jump coefficient `G(t, u, i, z)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpKernel {
    /// `Λ = ν₁(Z)`.
    pub intensity: f64,
    pub marks: MarkDistribution,
    pub kind: JumpKind,
    amplitudes: Vec<Vec<f64>>,
    pub profile: TimeProfile,
}

impl JumpKernel {
    pub fn new(
        intensity: f64,
        marks: MarkDistribution,
        kind: JumpKind,
        amplitudes: Vec<Vec<f64>>,
        profile: TimeProfile,
    ) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::config("noise.jump.intensity", format!("must be finite and nonnegative, got {intensity}")));
        }
        validate_amplitudes("noise.jump.amplitudes", &amplitudes)?;
        profile.validate("noise.jump.profile")?;
        Ok(Self { intensity, marks, kind, amplitudes, profile })
    }

    pub fn regimes(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn modes(&self) -> usize {
        self.amplitudes[0].len()
    }

    pub fn amplitudes(&self) -> &[Vec<f64>] {
        &self.amplitudes
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.amplitudes.iter_mut().flatten().for_each(|a| *a *= factor);
        out
    }

    /// `out = G(t, u, i, z)`.
    pub(crate) fn jump_into(&self, kappa: f64, u: &[f64], i: usize, z: f64, out: &mut [f64]) {
        let amp = &self.amplitudes[i];
        for k in 0..u.len() {
            out[k] = kappa * z * amp[k] * self.kind.shape(u[k]);
        }
    }

    pub fn jump(&self, t: f64, u: &SpectralField, i: usize, z: f64) -> Result<SpectralField> {
        check_dim(self.modes(), u.len())?;
        check_regime(i, self.regimes())?;
        let mut out = vec![0.0; u.len()];
        self.jump_into(self.profile.factor(t), u.as_slice(), i, z, &mut out);
        Ok(SpectralField(out))
    }

    /// `out = ∫ G(t, u, i, z) ν₁(dz)`, the compensator drift of the jump term.
    pub(crate) fn mean_jump_into(&self, kappa: f64, u: &[f64], i: usize, out: &mut [f64]) {
        let scale = self.intensity * self.marks.mean() * kappa;
        let amp = &self.amplitudes[i];
        for k in 0..u.len() {
            out[k] = scale * amp[k] * self.kind.shape(u[k]);
        }
    }

    pub fn mean_jump(&self, t: f64, u: &SpectralField, i: usize) -> Result<SpectralField> {
        check_dim(self.modes(), u.len())?;
        check_regime(i, self.regimes())?;
        let mut out = vec![0.0; u.len()];
        self.mean_jump_into(self.profile.factor(t), u.as_slice(), i, &mut out);
        Ok(SpectralField(out))
    }

    /// `Σ_k g_ik² f(u_k)²`.
    fn shape_norm_sq(&self, u: &[f64], i: usize) -> f64 {
        let amp = &self.amplitudes[i];
        (0..u.len())
            .map(|k| {
                let e = amp[k] * self.kind.shape(u[k]);
                e * e
            })
            .sum()
    }

    pub(crate) fn compensator_raw(&self, kappa: f64, u: &[f64], i: usize, p: f64) -> Result<f64> {
        if self.intensity == 0.0 {
            return Ok(0.0);
        }
        let m = self.marks.abs_moment(p)?;
        Ok(self.intensity * m * kappa.powf(p) * self.shape_norm_sq(u, i).powf(p / 2.0))
    }

    pub(crate) fn diff_integral_raw(&self, kappa: f64, u: &[f64], v: &[f64], i: usize, p: f64) -> Result<f64> {
        match self.kind {
            JumpKind::Additive => Ok(0.0),
            JumpKind::LinearDiagonal => {
                let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
                self.compensator_raw(kappa, &d, i, p)
            }
        }
    }

    /// `Λ E_z[f(G(t, u, i, z))]` over the mark rule, with `G` written into `scratch`.
    pub(crate) fn expect_over_marks<F: FnMut(&[f64]) -> f64>(
        &self,
        kappa: f64,
        u: &[f64],
        i: usize,
        scratch: &mut [f64],
        mut f: F,
    ) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        self.intensity
            * self.marks.expect(|z| {
                self.jump_into(kappa, u, i, z, scratch);
                f(scratch)
            })
    }

    /// `Λ E_z[ |u+G|² - |u|² - 2(u, G) ]` evaluated term by term, as printed
    /// in the jump energy equality.
    pub(crate) fn printed_energy_compensator(&self, kappa: f64, u: &[f64], i: usize, scratch: &mut [f64]) -> f64 {
        self.expect_over_marks(kappa, u, i, scratch, |g| {
            let mut s = 0.0;
            for k in 0..u.len() {
                let a = u[k] + g[k];
                s += a * a - u[k] * u[k] - 2.0 * u[k] * g[k];
            }
            s
        })
    }

    /// `Λ E_z[ |u + G(z)|^p - |u|^p ]`.
    pub(crate) fn expected_increment_pow(&self, kappa: f64, u: &[f64], i: usize, p: u32) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        let u2 = dot(u, u);
        let amp = &self.amplitudes[i];
        let kind = self.kind;
        if p == 2 {
            // closed form 2 (u, E G) + E|G|²
            let mean = self.marks.mean();
            let second = self.marks.abs_moment(2.0).expect("second moment always available");
            let mut ug = 0.0;
            let mut gg = 0.0;
            for k in 0..u.len() {
                let e = kappa * amp[k] * kind.shape(u[k]);
                ug += u[k] * e;
                gg += e * e;
            }
            return self.intensity * (2.0 * mean * ug + second * gg);
        }
        let base = u2.powf(p as f64 / 2.0);
        self.intensity
            * self.marks.expect(|z| {
                let s: f64 = (0..u.len())
                    .map(|k| {
                        let x = u[k] + kappa * z * amp[k] * kind.shape(u[k]);
                        x * x
                    })
                    .sum();
                s.powf(p as f64 / 2.0) - base
            })
    }

    /// Smallest `K` with `∫|G(t,u,i,z)|^p ν₁(dz) ≤ K κ(t)^p (1 + |u|^p)`.
    pub fn growth_constant(&self, p: f64) -> Result<f64> {
        let m = self.marks.abs_moment(p)?;
        let per: f64 = self
            .amplitudes
            .iter()
            .map(|amp| match self.kind {
                JumpKind::LinearDiagonal => amp.iter().fold(0.0f64, |a, g| a.max(g.abs())).powf(p),
                JumpKind::Additive => amp.iter().map(|g| g * g).sum::<f64>().powf(p / 2.0),
            })
            .fold(0.0, f64::max);
        Ok(self.intensity * m * per)
    }

    pub fn lipschitz_constant(&self, p: f64) -> Result<f64> {
        match self.kind {
            JumpKind::Additive => Ok(0.0),
            JumpKind::LinearDiagonal => self.growth_constant(p),
        }
    }
}

/// `∫_Z |G(t, u, i, z)|^p ν₁(dz)` in closed form.
pub fn compensator_integral(kern: &JumpKernel, t: f64, u: &SpectralField, i: usize, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::config("p", format!("moment order must be at least 1, got {p}")));
    }
    check_dim(kern.modes(), u.len())?;
    check_regime(i, kern.regimes())?;
    kern.compensator_raw(kern.profile.factor(t), u.as_slice(), i, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
}

/// Poisson(`Λ dt`) jump times, uniform on `[t0, t0 + dt)`, with i.i.d. marks, sorted by time.
pub fn sample_jumps<R: Rng + ?Sized>(kern: &JumpKernel, t0: f64, dt: f64, rng: &mut R) -> Vec<JumpEvent> {
    let mut out = Vec::new();
    sample_jumps_into(kern, t0, dt, rng, &mut out);
    out
}

pub(crate) fn sample_jumps_into<R: Rng + ?Sized>(
    kern: &JumpKernel,
    t0: f64,
    dt: f64,
    rng: &mut R,
    out: &mut Vec<JumpEvent>,
) {
    out.clear();
    let mean = kern.intensity * dt;
    if !(mean > 0.0) {
        return;
    }
    let count = Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0);
    for _ in 0..count {
        let time = t0 + dt * rng.random::<f64>();
        let mark = kern.marks.sample(rng);
        out.push(JumpEvent { time, mark });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
}

/// Complete noise description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub q: CovarianceSpectrum,
    pub diffusion: DiffusionFamily,
    pub jump: Option<JumpKernel>,
}

impl NoiseSpec {
    pub fn new(q: CovarianceSpectrum, diffusion: DiffusionFamily, jump: Option<JumpKernel>) -> Result<Self> {
        check_dim(diffusion.modes(), q.len()).map_err(|_| {
            Error::config("noise.q", format!("{} eigenvalues for {} modes", q.len(), diffusion.modes()))
        })?;
        if let Some(j) = &jump {
            if j.modes() != q.len() {
                return Err(Error::config("noise.jump.amplitudes", format!("{} modes, expected {}", j.modes(), q.len())));
            }
            if j.regimes() != diffusion.regimes() {
                return Err(Error::config(
                    "noise.jump.amplitudes",
                    format!("{} regimes, diffusion has {}", j.regimes(), diffusion.regimes()),
                ));
            }
        }
        Ok(Self { q, diffusion, jump })
    }

    pub fn silent(regimes: usize, modes: usize) -> Self {
        Self {
            q: CovarianceSpectrum::new(vec![0.0; modes]).expect("zeros are valid"),
            diffusion: DiffusionFamily::zero(regimes, modes),
            jump: None,
        }
    }

    pub fn modes(&self) -> usize {
        self.q.len()
    }

    pub fn regimes(&self) -> usize {
        self.diffusion.regimes()
    }

    /// Single constant `K` serving both growth conditions at order `p`.
    pub fn combined_growth_constant(&self, p: f64, with_jumps: bool) -> Result<f64> {
        let ks = self.diffusion.growth_constant(&self.q, p);
        let kg = match (&self.jump, with_jumps) {
            (Some(j), true) => j.growth_constant(p)?,
            _ => 0.0,
        };
        Ok(ks.max(kg))
    }

    /// Same noise with all amplitudes multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: self.q.clone(),
            diffusion: self.diffusion.scaled(factor),
            jump: self.jump.as_ref().map(|j| j.scaled(factor)),
        }
    }
}
