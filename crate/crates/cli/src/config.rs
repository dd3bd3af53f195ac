//! Run configuration: a single TOML document per run.
//!
//! Regimes and tensor indices are 1-based here, matching the exported files.
//! Bracketed positions in error field names (`noise.q[0]`) are 0-based offsets
//! into the TOML arrays.

use hybrid_nse::hypotheses::HypothesisOptions;
use hybrid_nse::integrator::{Estimator, Model, SimConfig};
use hybrid_nse::noise::{
    CovarianceSpectrum, DiffusionFamily, DiffusionKind, JumpKernel, JumpKind, MarkDistribution, MarkKind, NoiseSpec,
    TimeProfile,
};
use hybrid_nse::spectral::{builtin_tensor, BuiltinTensor, ConvectionTensor, StokesSpectrum};
use hybrid_nse::stability::{ExponentWindow, StabilityOptions};
use hybrid_nse::GeneratorMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed; every random stream derives from it.
    #[serde(default)]
    pub seed: u64,
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub tensor: TensorConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// Either explicit `eigenvalues`, or `modes` with the default growth `λ₁ k^{2/3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<BuiltinTensor>,
    /// `[i, j, k, c]` rows, 1-based; each sets `c_ijk = c` and `c_ikj = -c`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMethod {
    #[default]
    Prm,
    Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Full generator; omitted means a single regime.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
    pub initial_regime: usize,
    pub method: ChainMethod,
    /// Horizon for the `chain` command; defaults to `sim.horizon`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { generator: None, initial_regime: 1, method: ChainMethod::Prm, horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Covariance eigenvalues; omitted means all zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump: Option<JumpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub kind: DiffusionKind,
    /// `amplitudes[regime][mode]`.
    pub amplitudes: Vec<Vec<f64>>,
    #[serde(default)]
    pub profile: TimeProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub intensity: f64,
    pub marks: MarksConfig,
    pub kind: JumpKind,
    pub amplitudes: Vec<Vec<f64>>,
    #[serde(default)]
    pub profile: TimeProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarksConfig {
    /// `[value, probability]` pairs.
    Atoms { atoms: Vec<(f64, f64)> },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub paths: usize,
    /// Moment orders analysed by the stability and audit commands.
    pub p: Vec<u32>,
    pub window: ExponentWindow,
    pub estimator: Estimator,
    pub hypotheses: HypothesisOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub declared_k: Option<f64>,
    pub sweep: SweepConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            paths: 1000,
            p: vec![2],
            window: ExponentWindow::default(),
            estimator: Estimator::ControlVariate,
            hypotheses: HypothesisOptions::default(),
            declared_k: None,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
}

/// Field names raised by the library, mapped onto config keys.
fn config_key(field: &str) -> String {
    const MAP: &[(&str, &str)] = &[
        ("generator", "chain.generator"),
        ("initial_regime", "chain.initial_regime"),
        ("r0", "chain.initial_regime"),
        ("horizon", "chain.horizon"),
        ("initial.", "sim.initial."),
        ("hypotheses.", "analysis.hypotheses."),
        ("paths", "analysis.paths"),
        ("p", "analysis.p"),
        ("nu", "sim.nu"),
    ];
    for (from, to) in MAP {
        if let Some(rest) = field.strip_prefix(from) {
            if from.ends_with('.') || rest.is_empty() || rest.starts_with('[') {
                return format!("{to}{rest}");
            }
        }
    }
    field.to_string()
}

impl From<hybrid_nse::Error> for CliError {
    fn from(e: hybrid_nse::Error) -> Self {
        use hybrid_nse::Error as E;
        match e {
            E::Config { field, reason } => CliError::Validation { field: config_key(&field), reason },
            E::Dimension { expected, got } => {
                CliError::Validation { field: "spectrum".into(), reason: format!("dimension mismatch: expected {expected}, got {got}") }
            }
            E::Unsupported(m) => CliError::Validation { field: "noise".into(), reason: format!("unsupported: {m}") },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Validation { field: field.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" at byte {}", s.start)).unwrap_or_default();
            invalid("config", format!("{}{span}", e.message()))
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, got {}", cfg.schema_version)));
        }
        cfg.build()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Builds the library objects, validating everything before any computation.
    pub fn build(&self) -> Result<Setup, CliError> {
        let spectrum = self.spectrum()?;
        let n = spectrum.len();
        let tensor = self.tensor(&spectrum)?;
        let generator = match &self.chain.generator {
            None => GeneratorMatrix::single(),
            Some(rows) => GeneratorMatrix::new(rows.clone())?,
        };
        let m = generator.states();
        if self.chain.initial_regime == 0 || self.chain.initial_regime > m {
            return Err(invalid("chain.initial_regime", format!("must be in 1..={m}, got {}", self.chain.initial_regime)));
        }
        let noise = self.noise(m, n)?;
        let model = Model::new(spectrum, tensor, generator, noise)?;
        let mut sim = self.sim.clone();
        for &p in &self.analysis.p {
            if p < 2 {
                return Err(invalid("analysis.p", format!("moment orders must be at least 2, got {p}")));
            }
            if !sim.moment_orders.contains(&p) {
                sim.moment_orders.push(p);
            }
        }
        if self.analysis.p.is_empty() {
            return Err(invalid("analysis.p", "at least one moment order is required"));
        }
        sim.validate(&model)?;
        if self.analysis.paths < 2 {
            return Err(invalid("analysis.paths", format!("need at least 2 paths, got {}", self.analysis.paths)));
        }
        if let Some(k) = self.analysis.declared_k {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(invalid("analysis.declared_k", format!("must be finite and nonnegative, got {k}")));
            }
        }
        if let Some(h) = self.chain.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("chain.horizon", format!("must be positive, got {h}")));
            }
        }
        if self.analysis.sweep.grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("analysis.sweep.grid", "grid must be sorted ascending"));
        }
        if let Some(k) = self.analysis.sweep.grid.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(invalid("analysis.sweep.grid", format!("K values must be finite and nonnegative, got {k}")));
        }
        Ok(Setup { model, sim, initial_regime: self.chain.initial_regime - 1 })
    }

    pub fn stability_options(&self, p: u32) -> StabilityOptions {
        StabilityOptions {
            p,
            paths: self.analysis.paths,
            seed: self.seed,
            initial_regime: self.chain.initial_regime - 1,
            window: self.analysis.window,
            estimator: self.analysis.estimator,
            hypotheses: self.analysis.hypotheses.clone(),
            declared_k: self.analysis.declared_k,
        }
    }

    fn spectrum(&self) -> Result<StokesSpectrum, CliError> {
        let s = &self.spectrum;
        match (&s.eigenvalues, s.modes) {
            (Some(_), Some(_)) => Err(invalid("spectrum", "give either `modes` or `eigenvalues`, not both")),
            (Some(_), _) if s.lambda1.is_some() => Err(invalid("spectrum.lambda1", "not used with explicit eigenvalues")),
            (Some(ev), None) => Ok(StokesSpectrum::new(ev.clone())?),
            (None, Some(m)) => {
                let l1 = s.lambda1.unwrap_or(1.0);
                if !(l1 > 0.0 && l1.is_finite()) {
                    return Err(invalid("spectrum.lambda1", format!("must be positive, got {l1}")));
                }
                Ok(StokesSpectrum::weyl(m, l1)?)
            }
            (None, None) => Err(invalid("spectrum", "one of `modes` or `eigenvalues` is required")),
        }
    }

    fn tensor(&self, spectrum: &StokesSpectrum) -> Result<ConvectionTensor, CliError> {
        let t = &self.tensor;
        let n = spectrum.len();
        if t.builtin.is_some() && !t.entries.is_empty() {
            return Err(invalid("tensor", "give either `builtin` or `entries`, not both"));
        }
        if t.entries.is_empty() {
            return Ok(builtin_tensor(t.builtin.unwrap_or(BuiltinTensor::Zero), spectrum)?);
        }
        let mut entries = Vec::with_capacity(t.entries.len());
        for (row, &(i, j, k, c)) in t.entries.iter().enumerate() {
            if [i, j, k].iter().any(|&x| x == 0 || x > n) {
                return Err(invalid(format!("tensor.entries[{row}]"), format!("indices must be in 1..={n}, got ({i},{j},{k})")));
            }
            entries.push((i - 1, j - 1, k - 1, c));
        }
        ConvectionTensor::from_entries(n, &entries).map_err(|e| match e {
            hybrid_nse::Error::Config { reason, .. } => invalid("tensor.entries", reason),
            other => other.into(),
        })
    }

    fn noise(&self, regimes: usize, modes: usize) -> Result<NoiseSpec, CliError> {
        let nc = &self.noise;
        let q = CovarianceSpectrum::new(nc.q.clone().unwrap_or_else(|| vec![0.0; modes]))?;
        let diffusion = match &nc.diffusion {
            None => DiffusionFamily::zero(regimes, modes),
            Some(d) => {
                if d.amplitudes.len() != regimes {
                    return Err(invalid(
                        "noise.diffusion.amplitudes",
                        format!("{} regimes given, generator has {regimes}", d.amplitudes.len()),
                    ));
                }
                DiffusionFamily::new(d.kind, d.amplitudes.clone(), d.profile)?
            }
        };
        let jump = match &nc.jump {
            None => None,
            Some(j) => {
                let kind = match &j.marks {
                    MarksConfig::Atoms { atoms } => MarkKind::Atoms(atoms.clone()),
                    MarksConfig::Uniform { low, high } => MarkKind::Uniform { low: *low, high: *high },
                    MarksConfig::Normal { mean, std } => MarkKind::Normal { mean: *mean, std: *std },
                };
                Some(JumpKernel::new(j.intensity, MarkDistribution::new(kind)?, j.kind, j.amplitudes.clone(), j.profile)?)
            }
        };
        Ok(NoiseSpec::new(q, diffusion, jump)?)
    }
}

/// Validated library objects built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: Model,
    pub sim: SimConfig,
    /// 0-based.
    pub initial_regime: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1
seed = 3
[spectrum]
modes = 2
[chain]
generator = [[-1.0, 1.0], [2.0, -2.0]]
[noise]
q = [1.0, 0.5]
[noise.diffusion]
kind = "linear-diagonal"
amplitudes = [[1.0, 1.0], [0.5, 0.5]]
[sim]
dt = 0.01
horizon = 1.0
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(BASE).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let setup = cfg.build().unwrap();
        assert_eq!(setup.model.generator.states(), 2);
        assert_eq!(setup.initial_regime, 0);
    }

    fn field_of(text: &str) -> String {
        match RunConfig::parse(text) {
            Err(CliError::Validation { field, .. }) => field,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&BASE.replace("[2.0, -2.0]", "[-2.0, 2.0]")), "chain.generator[1][0]");
        assert_eq!(field_of(&BASE.replace("schema_version = 1", "schema_version = 2")), "schema_version");
        assert_eq!(field_of(&BASE.replace("dt = 0.01", "dt = -0.01")), "sim.dt");
        assert_eq!(field_of(&BASE.replace("q = [1.0, 0.5]", "q = [1.0, -0.5]")), "noise.q[1]");
        assert_eq!(field_of(&format!("{BASE}\n[analysis]\npaths = 1\n")), "analysis.paths");
        assert_eq!(field_of(&BASE.replace("seed = 3", "seed = 3\n[chain2]\nx = 1")), "config");
        assert_eq!(field_of(&BASE.replace("[chain]", "[chain]\ninitial_regime = 3")), "chain.initial_regime");
        assert_eq!(field_of(&BASE.replace("horizon = 1.0", "horizon = 1.0\nbogus = 2")), "config");
    }

    #[test]
    fn unknown_keys_are_reported_by_name() {
        match RunConfig::parse(&BASE.replace("horizon = 1.0", "horizon = 1.0\nbogus = 2")) {
            Err(CliError::Validation { reason, .. }) => assert!(reason.contains("bogus"), "{reason}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_based_tensor_entries() {
        let text = BASE.replace("modes = 2", "modes = 3")
            .replace("q = [1.0, 0.5]", "q = [1.0, 0.5, 0.25]")
            .replace("[[1.0, 1.0], [0.5, 0.5]]", "[[1.0, 1.0, 1.0], [0.5, 0.5, 0.5]]")
            + "[tensor]\nentries = [[1, 2, 3, 0.5]]\n";
        let setup = RunConfig::parse(&text).unwrap().build().unwrap();
        assert_eq!(setup.model.tensor.coefficient(0, 1, 2), 0.5);
        assert_eq!(field_of(&text.replace("[1, 2, 3, 0.5]", "[0, 2, 3, 0.5]")), "tensor.entries[0]");
    }
}
