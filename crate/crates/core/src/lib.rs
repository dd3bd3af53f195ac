//! Galerkin surrogate of the regime-switching stochastic Navier–Stokes system
//! driven by Q-Wiener noise and compensated Poisson jumps, with energy audits
//! and moment-stability diagnostics.
//!
//! Regimes are 0-based inside the library and 1-based in every exported file.

pub mod audit;
pub mod chain;
pub mod error;
pub mod export;
pub mod hypotheses;
pub mod integrator;
pub mod noise;
pub mod rng;
pub mod spectral;
pub mod stability;
pub mod stats;

pub use chain::{ChainPath, GeneratorMatrix};
pub use error::{Error, Result};
pub use hypotheses::{verify_hypotheses, HypothesisMode, HypothesisOptions, HypothesisReport};
pub use integrator::{ensemble, integrate_path, EnsembleSummary, Estimator, HybridPath, JumpMode, Model, Scheme, SimConfig};
pub use noise::NoiseSpec;
pub use spectral::{ConvectionTensor, SpectralField, StokesSpectrum};
pub use stability::{thresholds, StabilityReport, ThresholdSet, Verdict};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
