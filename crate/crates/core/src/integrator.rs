//! Time stepping of the switched Galerkin system
//! `du = [-νAu - B(u,u)] dt + σ(t,u,r) dW + ∫ G(t,u(t-),r,z) Ñ₁(dz,dt)`.
//!
//! The regime chain and the jump arrivals are simulated up front for the
//! whole horizon. Each base step is split at chain switches and jump times,
//! so the coefficients see the correct regime and jumps act on `u(t-)`.
//! Every sub-step also advances the energy-identity ledgers with the same
//! left-endpoint rule the scheme uses.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::{simulate_chain_prm_with, ChainPath, GeneratorMatrix};
use crate::error::{check_dim, Error, Result};
use crate::noise::{sample_jumps_into, wiener_increment_into, JumpEvent, NoiseSpec};
use crate::rng::{path_seed, stream_rng, Stream};
use crate::spectral::{dot, v_norm_sq_raw, ConvectionTensor, SpectralField, StokesSpectrum};
use crate::stats::MeanEstimate;

pub const DEFAULT_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Drift increment `h d / (1 + h|d|)`.
    TamedEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JumpMode {
    On,
    #[default]
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `x = norm · e₁`.
    FirstMode { norm: f64 },
    Value { u: Vec<f64> },
    /// Independent `N(mean_k, std_k²)` per mode.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::FirstMode { norm: 1.0 }
    }
}

impl InitialCondition {
    fn validate(&self, modes: usize) -> Result<()> {
        match self {
            InitialCondition::FirstMode { norm } if norm.is_finite() => Ok(()),
            InitialCondition::FirstMode { norm } => Err(Error::config("initial.norm", format!("must be finite, got {norm}"))),
            InitialCondition::Value { u } => {
                if u.len() != modes {
                    return Err(Error::config("initial.u", format!("{} entries for {modes} modes", u.len())));
                }
                if u.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config("initial.u", "entries must be finite"));
                }
                Ok(())
            }
            InitialCondition::Gaussian { mean, std } => {
                if mean.len() != modes || std.len() != modes {
                    return Err(Error::config("initial.mean", format!("mean and std need {modes} entries")));
                }
                if std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::config("initial.std", "must be finite and nonnegative"));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, modes: usize, rng: &mut R) -> SpectralField {
        match self {
            InitialCondition::FirstMode { norm } => SpectralField::unit(modes, 0).scaled(*norm),
            InitialCondition::Value { u } => SpectralField(u.clone()),
            InitialCondition::Gaussian { mean, std } => SpectralField(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub nu: f64,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub jump_mode: JumpMode,
    pub initial: InitialCondition,
    /// Spacing of recorded samples; every base step when absent.
    pub record_interval: Option<f64>,
    /// Moment orders tracked by the per-`p` ledgers and ensembles.
    pub moment_orders: Vec<u32>,
    /// Overflow threshold on `|u|`.
    pub guard: f64,
    /// Permits `ν = 0` for conservative-limit audits.
    pub allow_inviscid: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            dt: 1e-3,
            horizon: 1.0,
            scheme: Scheme::EulerMaruyama,
            jump_mode: JumpMode::Off,
            initial: InitialCondition::default(),
            record_interval: None,
            moment_orders: vec![2],
            guard: DEFAULT_GUARD,
            allow_inviscid: false,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    fn stride(&self) -> usize {
        match self.record_interval {
            None => 1,
            Some(r) => ((r / self.dt).round() as usize).max(1),
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if !self.nu.is_finite() || self.nu < 0.0 || (self.nu == 0.0 && !self.allow_inviscid) {
            return Err(Error::config("sim.nu", format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("sim.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::config("sim.horizon", format!("must be at least dt, got {}", self.horizon)));
        }
        if self.scheme == Scheme::EulerMaruyama && self.dt * self.nu * model.spectrum.lambda_max() >= 1.0 {
            return Err(Error::config(
                "sim.dt",
                format!(
                    "dt·ν·λ_N = {} must be below 1 for euler-maruyama; reduce dt or use tamed-euler",
                    self.dt * self.nu * model.spectrum.lambda_max()
                ),
            ));
        }
        if let Some(r) = self.record_interval {
            if !(r > 0.0) {
                return Err(Error::config("sim.record_interval", "must be positive"));
            }
        }
        if let Some(p) = self.moment_orders.iter().find(|&&p| p < 2) {
            return Err(Error::config("sim.moment_orders", format!("orders must be at least 2, got {p}")));
        }
        if !(self.guard > 0.0) {
            return Err(Error::config("sim.guard", "must be positive"));
        }
        self.initial.validate(model.modes())
    }
}

/// Everything but the run settings.
#[derive(Debug, Clone)]
pub struct Model {
    pub spectrum: StokesSpectrum,
    pub tensor: ConvectionTensor,
    pub generator: GeneratorMatrix,
    pub noise: NoiseSpec,
}

impl Model {
    pub fn new(spectrum: StokesSpectrum, tensor: ConvectionTensor, generator: GeneratorMatrix, noise: NoiseSpec) -> Result<Self> {
        let n = spectrum.len();
        if tensor.modes() != n {
            return Err(Error::config("tensor", format!("{} modes, spectrum has {n}", tensor.modes())));
        }
        if noise.modes() != n {
            return Err(Error::config("noise.q", format!("{} modes, spectrum has {n}", noise.modes())));
        }
        if noise.regimes() != generator.states() {
            return Err(Error::config(
                "noise.diffusion.amplitudes",
                format!("{} regimes, generator has {} states", noise.regimes(), generator.states()),
            ));
        }
        Ok(Self { spectrum, tensor, generator, noise })
    }

    pub fn modes(&self) -> usize {
        self.spectrum.len()
    }

    /// Same model restricted to its first regime with a trivial chain.
    pub fn frozen(&self) -> Self {
        let mut out = self.clone();
        out.generator = GeneratorMatrix::single();
        out.noise = NoiseSpec {
            q: self.noise.q.clone(),
            diffusion: crate::noise::DiffusionFamily::new(
                self.noise.diffusion.kind,
                vec![self.noise.diffusion.amplitudes()[0].clone()],
                self.noise.diffusion.profile,
            )
            .expect("row of a valid family"),
            jump: self.noise.jump.as_ref().map(|j| {
                crate::noise::JumpKernel::new(j.intensity, j.marks.clone(), j.kind, vec![j.amplitudes()[0].clone()], j.profile)
                    .expect("row of a valid kernel")
            }),
        };
        out
    }
}

/// `-νAu - B(u, u)`.
pub fn drift(u: &SpectralField, cfg: &SimConfig, tensor: &ConvectionTensor, spec: &StokesSpectrum) -> Result<SpectralField> {
    check_dim(spec.len(), u.len())?;
    check_dim(tensor.modes(), u.len())?;
    let mut out = vec![0.0; u.len()];
    let mut conv = vec![0.0; u.len()];
    drift_into(cfg.nu, u.as_slice(), tensor, spec.eigenvalues(), &mut conv, &mut out);
    Ok(SpectralField(out))
}

fn drift_into(nu: f64, u: &[f64], tensor: &ConvectionTensor, lambdas: &[f64], conv: &mut [f64], out: &mut [f64]) {
    if tensor.is_zero() {
        for k in 0..u.len() {
            out[k] = -nu * lambdas[k] * u[k];
        }
        return;
    }
    tensor.convection_into(u, u, conv);
    for k in 0..u.len() {
        out[k] = -nu * lambdas[k] * u[k] - conv[k];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridState {
    pub t: f64,
    pub u: SpectralField,
    /// 0-based regime.
    pub r: usize,
}

/// Running terms of the `p = 2` energy equality.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyLedger {
    /// `2ν ∫ ‖u‖² ds`.
    pub viscous: f64,
    /// `∫ ‖σ‖²_{L_Q} ds`.
    pub lq: f64,
    /// `∫∫ |G|² ν₁(dz) ds`.
    pub jump_reduced: f64,
    /// `∫∫ (|u+G|² - |u|² - 2(u,G)) ν₁(dz) ds`, evaluated term by term.
    pub jump_printed: f64,
    pub jumps: usize,
}

/// Running terms of the `p`-th power identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MomentLedger {
    pub p: u32,
    /// `pν ∫ |u|^{p-2} ‖u‖² ds`.
    pub viscous: f64,
    /// `p(p-1)/2 ∫ |u|^{p-2} ‖σ‖²_{L_Q} ds`.
    pub lq_printed: f64,
    /// Exact Itô correction `∫ [p/2 |u|^{p-2}‖σ‖² + p(p-2)/2 |u|^{p-4} Σ q_k (σ_kk u_k)²] ds`.
    pub lq_exact: f64,
    /// `p ∫ |u|^{p-2} (u, σ dW)`.
    pub wiener: f64,
    /// `∫∫ (|u+G|^p - |u|^p) Ñ₁(dz, ds)`.
    pub jump: f64,
    /// `∫∫ (|u+G|^p - |u|^p - p|u|^{p-2}(u,G)) ν₁(dz) ds`.
    pub compensator: f64,
}

impl MomentLedger {
    /// Zero-mean part `p ∫|u|^{p-2}(u,σdW) + ∫∫(…)Ñ₁`.
    pub fn martingale(&self) -> f64 {
        self.wiener + self.jump
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub t: f64,
    pub u: SpectralField,
    pub regime: usize,
    pub m1: f64,
    pub m2: f64,
    pub energy: EnergyLedger,
    pub moments: Vec<MomentLedger>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpRecord {
    pub t: f64,
    pub regime: usize,
    pub u_before: Vec<f64>,
    pub mark: f64,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridPath {
    pub x: SpectralField,
    pub samples: Vec<PathSample>,
    pub chain: ChainPath,
    pub jumps: Vec<JumpRecord>,
    /// Time at which the overflow guard tripped.
    pub blowup: Option<f64>,
}

impl HybridPath {
    pub fn last(&self) -> &PathSample {
        self.samples.last().expect("a path has at least its initial sample")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

/// Source of Wiener increments over `[t, t + h)`.
pub trait IncrementSource {
    fn increment(&mut self, t: f64, h: f64, q: &[f64], out: &mut [f64]);
}

/// Fresh independent Gaussian increments from a generator.
pub struct RngIncrements<R>(pub R);

impl<R: Rng> IncrementSource for RngIncrements<R> {
    fn increment(&mut self, _t: f64, h: f64, q: &[f64], out: &mut [f64]) {
        wiener_increment_into(q, h, &mut self.0, out);
    }
}

/// A pre-drawn Brownian path on a fine grid; requests must align with it.
/// Lets several step sizes be driven by one realisation.
pub struct FineBrownian {
    pub dt: f64,
    /// `increments[n][k]` over `[n dt, (n+1) dt)`.
    pub increments: Vec<Vec<f64>>,
}

impl FineBrownian {
    pub fn sample<R: Rng + ?Sized>(q: &[f64], dt: f64, cells: usize, rng: &mut R) -> Self {
        let increments = (0..cells)
            .map(|_| {
                let mut v = vec![0.0; q.len()];
                wiener_increment_into(q, dt, rng, &mut v);
                v
            })
            .collect();
        Self { dt, increments }
    }
}

impl IncrementSource for FineBrownian {
    fn increment(&mut self, t: f64, h: f64, _q: &[f64], out: &mut [f64]) {
        let a = (t / self.dt).round() as usize;
        let b = ((t + h) / self.dt).round() as usize;
        debug_assert!(((t + h) / self.dt - b as f64).abs() < 1e-6, "step not aligned with the fine grid");
        out.iter_mut().for_each(|o| *o = 0.0);
        for cell in &self.increments[a..b.min(self.increments.len())] {
            for (o, d) in out.iter_mut().zip(cell) {
                *o += d;
            }
        }
    }
}

struct Work {
    d: Vec<f64>,
    conv: Vec<f64>,
    sdw: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
    dw: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self { d: vec![0.0; n], conv: vec![0.0; n], sdw: vec![0.0; n], c: vec![0.0; n], g: vec![0.0; n], dw: vec![0.0; n] }
    }
}

/// Running integrator state with its ledgers.
pub struct Stepper<'a> {
    model: &'a Model,
    cfg: &'a SimConfig,
    jumps_on: bool,
    work: Work,
    pub state: HybridState,
    pub m1: f64,
    pub m2: f64,
    pub energy: EnergyLedger,
    pub moments: Vec<MomentLedger>,
    pub jump_log: Vec<JumpRecord>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a Model, cfg: &'a SimConfig, x: SpectralField, r0: usize) -> Self {
        let n = model.modes();
        let jumps_on = cfg.jump_mode == JumpMode::On && model.noise.jump.as_ref().is_some_and(|j| j.intensity > 0.0);
        Self {
            model,
            cfg,
            jumps_on,
            work: Work::new(n),
            state: HybridState { t: 0.0, u: x, r: r0 },
            m1: 0.0,
            m2: 0.0,
            energy: EnergyLedger::default(),
            moments: cfg.moment_orders.iter().map(|&p| MomentLedger { p, ..Default::default() }).collect(),
            jump_log: Vec::new(),
        }
    }

    fn sample(&self) -> PathSample {
        PathSample {
            t: self.state.t,
            u: self.state.u.clone(),
            regime: self.state.r,
            m1: self.m1,
            m2: self.m2,
            energy: self.energy,
            moments: self.moments.clone(),
        }
    }

    /// Euler–Maruyama sub-step of length `h` in the current regime.
    fn substep(&mut self, h: f64, source: &mut dyn IncrementSource) {
        let model = self.model;
        let noise = &model.noise;
        let t = self.state.t;
        let i = self.state.r;
        let u = &mut self.state.u.0;
        let w = &mut self.work;
        let n = u.len();
        let lambdas = model.spectrum.eigenvalues();
        let q = noise.q.eigenvalues();

        drift_into(self.cfg.nu, u, &model.tensor, lambdas, &mut w.conv, &mut w.d);
        if self.cfg.scheme == Scheme::TamedEuler {
            let norm = dot(&w.d, &w.d).sqrt();
            let f = 1.0 / (1.0 + h * norm);
            w.d.iter_mut().for_each(|x| *x *= f);
        }
        let ks = noise.diffusion.profile.factor(t);
        source.increment(t, h, q, &mut w.dw);
        noise.diffusion.apply_into(ks, u, i, &w.dw, &mut w.sdw);

        let u2 = dot(u, u);
        let vn = v_norm_sq_raw(u, lambdas);
        let lq = noise.diffusion.hs_norm_sq_raw(ks, q, u, i);
        let usdw = dot(u, &w.sdw);
        self.energy.viscous += 2.0 * self.cfg.nu * vn * h;
        self.energy.lq += lq * h;
        self.m1 += usdw;

        let mut uc = 0.0;
        let mut kg = 1.0;
        if self.jumps_on {
            let kern = noise.jump.as_ref().expect("jumps_on implies a kernel");
            kg = kern.profile.factor(t);
            kern.mean_jump_into(kg, u, i, &mut w.c);
            uc = dot(u, &w.c);
            let reduced = kern.compensator_raw(kg, u, i, 2.0).expect("second moments exist");
            let printed = kern.printed_energy_compensator(kg, u, i, &mut w.g);
            self.energy.jump_reduced += reduced * h;
            self.energy.jump_printed += printed * h;
            self.m2 -= h * (2.0 * uc + reduced);
        }

        if !self.moments.is_empty() {
            let r = u2.sqrt();
            let qv = if r > 0.0 { noise.diffusion.qv_rate_raw(ks, q, u, i) } else { 0.0 };
            for led in &mut self.moments {
                let p = led.p as f64;
                let rp2 = r.powi(led.p as i32 - 2);
                let rp4 = if led.p >= 4 || r > 0.0 { r.powi(led.p as i32 - 4) } else { 0.0 };
                led.viscous += p * self.cfg.nu * rp2 * vn * h;
                led.lq_printed += 0.5 * p * (p - 1.0) * rp2 * lq * h;
                let corr = if led.p == 2 { 0.0 } else { 0.5 * p * (p - 2.0) * rp4 * qv };
                led.lq_exact += (0.5 * p * rp2 * lq + corr) * h;
                led.wiener += p * rp2 * usdw;
                if self.jumps_on {
                    let kern = noise.jump.as_ref().expect("kernel");
                    let e = kern.expected_increment_pow(kg, u, i, led.p);
                    led.jump -= h * e;
                    led.compensator += h * (e - p * rp2 * uc);
                }
            }
        }

        if self.jumps_on {
            for k in 0..n {
                u[k] += h * w.d[k] + w.sdw[k] - h * w.c[k];
            }
        } else {
            for k in 0..n {
                u[k] += h * w.d[k] + w.sdw[k];
            }
        }
        self.state.t = t + h;
    }

    /// Applies a jump with mark `z` at the current time to `u(t-)`.
    fn apply_jump(&mut self, z: f64) {
        let kern = self.model.noise.jump.as_ref().expect("jump requires a kernel");
        let t = self.state.t;
        let i = self.state.r;
        let u = &mut self.state.u.0;
        let g = &mut self.work.g;
        kern.jump_into(kern.profile.factor(t), u, i, z, g);
        let before = dot(u, u);
        let mut after = 0.0;
        for k in 0..u.len() {
            let a = u[k] + g[k];
            after += a * a;
        }
        self.m2 += after - before;
        for led in &mut self.moments {
            let p = led.p as f64;
            led.jump += after.powf(p / 2.0) - before.powf(p / 2.0);
        }
        self.energy.jumps += 1;
        self.jump_log.push(JumpRecord { t, regime: i, u_before: u.clone(), mark: z, g: g.clone() });
        for k in 0..u.len() {
            u[k] += g[k];
        }
    }

    /// Advances to `t_end`, splitting at the given switch and jump events.
    /// Jumps use the regime in force just before their time.
    pub fn advance(
        &mut self,
        t_end: f64,
        switches: &[(f64, usize)],
        jumps: &[JumpEvent],
        source: &mut dyn IncrementSource,
    ) {
        let (mut si, mut ji) = (0, 0);
        loop {
            let next_switch = switches.get(si).map_or(f64::INFINITY, |s| s.0);
            let next_jump = if self.jumps_on { jumps.get(ji).map_or(f64::INFINITY, |j| j.time) } else { f64::INFINITY };
            let next = next_switch.min(next_jump).min(t_end);
            let h = next - self.state.t;
            if h > 0.0 {
                self.substep(h, source);
            }
            self.state.t = next;
            if next >= t_end && next_jump >= t_end && next_switch >= t_end {
                break;
            }
            if next_jump <= next_switch {
                self.apply_jump(jumps[ji].mark);
                ji += 1;
            } else {
                self.state.r = switches[si].1;
                si += 1;
            }
        }
        self.state.t = t_end;
    }

    fn blown_up(&self) -> bool {
        let n = self.state.u.h_norm();
        !n.is_finite() || n > self.cfg.guard
    }
}

/// One base step `[state.t, state.t + dt)` against a pre-simulated chain and
/// pre-sampled jumps, with fresh Gaussian increments from `rng`.
pub fn step<R: Rng>(
    state: &HybridState,
    cfg: &SimConfig,
    model: &Model,
    chain: &ChainPath,
    jumps: &[JumpEvent],
    rng: &mut R,
) -> Result<HybridState> {
    check_dim(model.modes(), state.u.len())?;
    let mut st = Stepper::new(model, cfg, state.u.clone(), state.r);
    st.state.t = state.t;
    let t_end = state.t + cfg.dt;
    let sw = switch_events(chain, state.t, t_end);
    let js: Vec<JumpEvent> = jumps.iter().copied().filter(|j| j.time >= state.t && j.time < t_end).collect();
    let mut src = RngIncrements(rng);
    st.advance(t_end, &sw, &js, &mut src);
    if st.blown_up() {
        return Err(Error::Refused(format!("blowup: |u| exceeded {} at t = {t_end}", cfg.guard)));
    }
    Ok(st.state)
}

fn switch_events(chain: &ChainPath, t0: f64, t1: f64) -> Vec<(f64, usize)> {
    chain.switches_in(t0, t1).map(|s| (chain.jump_times[s], chain.states[s])).collect()
}

/// Integrates with caller-supplied random inputs.
pub fn integrate_with(
    model: &Model,
    cfg: &SimConfig,
    x: SpectralField,
    chain: ChainPath,
    jumps: &[JumpEvent],
    source: &mut dyn IncrementSource,
) -> Result<HybridPath> {
    cfg.validate(model)?;
    check_dim(model.modes(), x.len())?;
    let steps = cfg.steps();
    let stride = cfg.stride();
    let mut st = Stepper::new(model, cfg, x.clone(), chain.initial);
    let mut samples = vec![st.sample()];
    let mut blowup = None;
    let mut ji = 0;
    for n in 0..steps {
        let t0 = n as f64 * cfg.dt;
        let t1 = if n + 1 == steps { cfg.horizon } else { (n + 1) as f64 * cfg.dt };
        let sw = switch_events(&chain, t0, t1);
        let j0 = ji;
        while ji < jumps.len() && jumps[ji].time < t1 {
            ji += 1;
        }
        st.state.t = t0;
        st.advance(t1, &sw, &jumps[j0..ji], source);
        if st.blown_up() {
            blowup = Some(t1);
            samples.push(st.sample());
            break;
        }
        if (n + 1) % stride == 0 || n + 1 == steps {
            samples.push(st.sample());
        }
    }
    Ok(HybridPath { x, samples, chain, jumps: st.jump_log, blowup })
}

/// Full trajectory from regime `r0` with every random input derived from `seed`.
pub fn integrate_path(model: &Model, cfg: &SimConfig, r0: usize, seed: u64) -> Result<HybridPath> {
    cfg.validate(model)?;
    if r0 >= model.generator.states() {
        return Err(Error::config("r0", format!("initial regime {} outside 1..={}", r0 + 1, model.generator.states())));
    }
    let x = cfg.initial.sample(model.modes(), &mut stream_rng(seed, Stream::Initial));
    let chain = if model.generator.states() == 1 {
        ChainPath::constant(r0, cfg.horizon)
    } else {
        simulate_chain_prm_with(&model.generator, r0, cfg.horizon, &mut stream_rng(seed, Stream::Chain))?
    };
    let jumps = path_jumps(model, cfg, seed);
    let mut src = RngIncrements(stream_rng(seed, Stream::Wiener));
    integrate_with(model, cfg, x, chain, &jumps, &mut src)
}

fn path_jumps(model: &Model, cfg: &SimConfig, seed: u64) -> Vec<JumpEvent> {
    let mut out = Vec::new();
    if cfg.jump_mode == JumpMode::On {
        if let Some(kern) = &model.noise.jump {
            sample_jumps_into(kern, 0.0, cfg.horizon, &mut stream_rng(seed, Stream::Jumps), &mut out);
        }
    }
    out
}

/// Integrator for the single-regime system with no chain plumbing, using the
/// first regime's coefficients. Returns the recorded states and `(M₁, M₂)`.
pub fn integrate_unswitched(model: &Model, cfg: &SimConfig, seed: u64) -> Result<Vec<(f64, SpectralField, f64, f64)>> {
    let frozen = model.frozen();
    cfg.validate(&frozen)?;
    let x = cfg.initial.sample(frozen.modes(), &mut stream_rng(seed, Stream::Initial));
    let jumps = path_jumps(&frozen, cfg, seed);
    let mut src = RngIncrements(stream_rng(seed, Stream::Wiener));
    let mut st = Stepper::new(&frozen, cfg, x, 0);
    let steps = cfg.steps();
    let stride = cfg.stride();
    let mut out = vec![(0.0, st.state.u.clone(), 0.0, 0.0)];
    let mut ji = 0;
    for n in 0..steps {
        let t0 = n as f64 * cfg.dt;
        let t1 = if n + 1 == steps { cfg.horizon } else { (n + 1) as f64 * cfg.dt };
        st.state.t = t0;
        loop {
            let next = if st.jumps_on && ji < jumps.len() && jumps[ji].time < t1 { jumps[ji].time } else { t1 };
            let h = next - st.state.t;
            if h > 0.0 {
                st.substep(h, &mut src);
            }
            st.state.t = next;
            if next >= t1 {
                break;
            }
            st.apply_jump(jumps[ji].mark);
            ji += 1;
        }
        st.state.t = t1;
        let done = st.blown_up();
        if done || (n + 1) % stride == 0 || n + 1 == steps {
            out.push((t1, st.state.u.clone(), st.m1, st.m2));
        }
        if done {
            break;
        }
    }
    Ok(out)
}

/// How an ensemble moment is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Plain,
    /// Regression control variate on the zero-mean martingale part of the
    /// `p`-th power identity.
    #[default]
    ControlVariate,
}

/// Per-time sums over paths of `y_i`, `c_i` and their cross products.
#[derive(Debug, Clone, PartialEq)]
struct MomentAccumulator {
    p: u32,
    sy: Vec<f64>,
    sc: Vec<f64>,
    syy: Vec<f64>,
    syc: Vec<f64>,
    scc: Vec<f64>,
}

impl MomentAccumulator {
    fn new(p: u32, m: usize) -> Self {
        Self { p, sy: vec![0.0; m], sc: vec![0.0; m], syy: vec![0.0; m * m], syc: vec![0.0; m * m], scc: vec![0.0; m * m] }
    }

    fn add(&mut self, y: &[f64], c: &[f64]) {
        let m = y.len();
        for a in 0..m {
            self.sy[a] += y[a];
            self.sc[a] += c[a];
            let row = a * m;
            for b in 0..m {
                self.syy[row + b] += y[a] * y[b];
                self.syc[row + b] += y[a] * c[b];
                self.scc[row + b] += c[a] * c[b];
            }
        }
    }
}

/// Moment estimates at each sample time, with the covariance matrix of the
/// estimators across times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub p: u32,
    pub plain: Vec<MeanEstimate>,
    pub cv: Vec<MeanEstimate>,
    #[serde(skip)]
    pub plain_cov: Vec<Vec<f64>>,
    #[serde(skip)]
    pub cv_cov: Vec<Vec<f64>>,
}

impl MomentSeries {
    pub fn estimates(&self, est: Estimator) -> &[MeanEstimate] {
        match est {
            Estimator::Plain => &self.plain,
            Estimator::ControlVariate => &self.cv,
        }
    }

    pub fn covariance(&self, est: Estimator) -> &[Vec<f64>] {
        match est {
            Estimator::Plain => &self.plain_cov,
            Estimator::ControlVariate => &self.cv_cov,
        }
    }

    fn from_acc(acc: &MomentAccumulator, n: usize) -> Self {
        let m = acc.sy.len();
        let nf = n as f64;
        let mean_y: Vec<f64> = acc.sy.iter().map(|s| s / nf).collect();
        let mean_c: Vec<f64> = acc.sc.iter().map(|s| s / nf).collect();
        let denom = (nf - 1.0).max(1.0);
        let cyy = |a: usize, b: usize| (acc.syy[a * m + b] - nf * mean_y[a] * mean_y[b]) / denom;
        let cyc = |a: usize, b: usize| (acc.syc[a * m + b] - nf * mean_y[a] * mean_c[b]) / denom;
        let ccc = |a: usize, b: usize| (acc.scc[a * m + b] - nf * mean_c[a] * mean_c[b]) / denom;
        let beta: Vec<f64> = (0..m)
            .map(|a| {
                let v = ccc(a, a);
                if v > 1e-300 * (1.0 + mean_c[a].abs()) && n > 2 {
                    cyc(a, a) / v
                } else {
                    0.0
                }
            })
            .collect();
        let mut plain_cov = vec![vec![0.0; m]; m];
        let mut cv_cov = vec![vec![0.0; m]; m];
        for a in 0..m {
            for b in 0..m {
                plain_cov[a][b] = cyy(a, b) / nf;
                cv_cov[a][b] = (cyy(a, b) - beta[b] * cyc(a, b) - beta[a] * cyc(b, a) + beta[a] * beta[b] * ccc(a, b)) / nf;
            }
        }
        let se = |v: f64| if n > 1 { v.max(0.0).sqrt() } else { f64::NAN };
        let plain = (0..m).map(|a| MeanEstimate { mean: mean_y[a], stderr: se(plain_cov[a][a]), n }).collect();
        let cv = (0..m)
            .map(|a| MeanEstimate { mean: mean_y[a] - beta[a] * mean_c[a], stderr: se(cv_cov[a][a]), n })
            .collect();
        Self { p: acc.p, plain, cv, plain_cov, cv_cov }
    }
}

/// Per-time sums for the martingale diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MartingaleSums {
    pub m1: Vec<f64>,
    pub m1_sq: Vec<f64>,
    pub m1_abs: Vec<f64>,
    pub m2: Vec<f64>,
    pub m2_sq: Vec<f64>,
    pub m2_abs: Vec<f64>,
    /// Per-path least-squares slopes of `|M_i(t)|` over the last fifth of the horizon.
    pub m1_tail_slopes: Vec<f64>,
    pub m2_tail_slopes: Vec<f64>,
    /// Per-path increments `M_i(T) - M_i(0.8 T)`.
    pub m1_tail_increments: Vec<f64>,
    pub m2_tail_increments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub n_paths: usize,
    /// Paths that finished without tripping the guard.
    pub n_used: usize,
    pub blowups: usize,
    pub unreliable: bool,
    pub moments: Vec<MomentSeries>,
    /// `|u(T)|` of every surviving path, in path order.
    pub terminal_norms: Vec<f64>,
    pub horizon: f64,
    pub martingales: MartingaleSums,
}

impl EnsembleSummary {
    pub fn moment(&self, p: u32) -> Option<&MomentSeries> {
        self.moments.iter().find(|m| m.p == p)
    }

    pub fn mean_m1(&self) -> Vec<MeanEstimate> {
        mean_series(&self.martingales.m1, &self.martingales.m1_sq, self.n_used)
    }

    pub fn mean_m2(&self) -> Vec<MeanEstimate> {
        mean_series(&self.martingales.m2, &self.martingales.m2_sq, self.n_used)
    }
}

fn mean_series(s: &[f64], ss: &[f64], n: usize) -> Vec<MeanEstimate> {
    let nf = n as f64;
    s.iter()
        .zip(ss)
        .map(|(a, b)| {
            let mean = a / nf;
            let var = if n > 1 { ((b - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { f64::NAN };
            MeanEstimate { mean, stderr: (var / nf).sqrt(), n }
        })
        .collect()
}

fn tail_slope(times: &[f64], ys: &[f64], start: usize) -> f64 {
    crate::stats::linear_fit(&times[start..], &ys[start..]).map_or(0.0, |f| f.slope)
}

/// Monte Carlo ensemble with per-path seeds `path_seed(seed, k)`.
pub fn ensemble(model: &Model, cfg: &SimConfig, r0: usize, n_paths: usize, seed: u64) -> Result<EnsembleSummary> {
    if n_paths < 2 {
        return Err(Error::config("paths", format!("need at least 2 paths, got {n_paths}")));
    }
    let seeds: Vec<u64> = (0..n_paths as u64).map(|k| path_seed(seed, k)).collect();
    ensemble_with_seeds(model, cfg, r0, &seeds)
}

/// Ensemble over explicitly given path seeds (duplicates allowed).
pub fn ensemble_with_seeds(model: &Model, cfg: &SimConfig, r0: usize, seeds: &[u64]) -> Result<EnsembleSummary> {
    cfg.validate(model)?;
    if seeds.is_empty() {
        return Err(Error::config("paths", "need at least one path"));
    }
    let mut times: Option<Vec<f64>> = None;
    let mut accs: Vec<MomentAccumulator> = Vec::new();
    let mut mart = MartingaleSums::default();
    let mut terminal_norms = Vec::new();
    let mut blowups = 0;
    let mut tail_start = 0;
    for &s in seeds {
        let path = integrate_path(model, cfg, r0, s)?;
        if path.blowup.is_some() {
            blowups += 1;
            continue;
        }
        if times.is_none() {
            let ts = path.times();
            let m = ts.len();
            accs = cfg.moment_orders.iter().map(|&p| MomentAccumulator::new(p, m)).collect();
            mart.m1 = vec![0.0; m];
            mart.m1_sq = vec![0.0; m];
            mart.m1_abs = vec![0.0; m];
            mart.m2 = vec![0.0; m];
            mart.m2_sq = vec![0.0; m];
            mart.m2_abs = vec![0.0; m];
            tail_start = ts.partition_point(|&t| t < 0.8 * cfg.horizon - 1e-12).min(m - 1);
            times = Some(ts);
        }
        let ts = times.as_ref().expect("set above");
        let norms: Vec<f64> = path.samples.iter().map(|x| x.u.h_norm()).collect();
        for (j, acc) in accs.iter_mut().enumerate() {
            let p = acc.p;
            let y: Vec<f64> = norms.iter().map(|r| r.powi(p as i32)).collect();
            let c: Vec<f64> = path.samples.iter().map(|x| x.moments[j].martingale()).collect();
            acc.add(&y, &c);
        }
        let m1: Vec<f64> = path.samples.iter().map(|x| x.m1).collect();
        let m2: Vec<f64> = path.samples.iter().map(|x| x.m2).collect();
        for a in 0..m1.len() {
            mart.m1[a] += m1[a];
            mart.m1_sq[a] += m1[a] * m1[a];
            mart.m1_abs[a] += m1[a].abs();
            mart.m2[a] += m2[a];
            mart.m2_sq[a] += m2[a] * m2[a];
            mart.m2_abs[a] += m2[a].abs();
        }
        let abs1: Vec<f64> = m1.iter().map(|x| x.abs()).collect();
        let abs2: Vec<f64> = m2.iter().map(|x| x.abs()).collect();
        mart.m1_tail_slopes.push(tail_slope(ts, &abs1, tail_start));
        mart.m2_tail_slopes.push(tail_slope(ts, &abs2, tail_start));
        let last = m1.len() - 1;
        mart.m1_tail_increments.push(m1[last] - m1[tail_start]);
        mart.m2_tail_increments.push(m2[last] - m2[tail_start]);
        terminal_norms.push(*norms.last().expect("nonempty"));
    }
    let n_used = terminal_norms.len();
    let times = match times {
        Some(t) => t,
        None => return Err(Error::Refused(format!("all {} paths tripped the blowup guard", seeds.len()))),
    };
    let moments = accs.iter().map(|a| MomentSeries::from_acc(a, n_used)).collect();
    Ok(EnsembleSummary {
        times,
        n_paths: seeds.len(),
        n_used,
        blowups,
        unreliable: blowups as f64 > 0.01 * seeds.len() as f64,
        moments,
        terminal_norms,
        horizon: cfg.horizon,
        martingales: mart,
    })
}
