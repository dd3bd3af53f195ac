//! Command-line front end. Each command writes CSV outputs next to a JSON
//! report that carries the run manifest.

pub mod commands;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate the regime chain and report occupation statistics.
    Chain,
    /// Integrate one path and an ensemble; write traces and moments.
    Simulate,
    /// Energy and p-th moment identity audit plus martingale diagnostics.
    Audit,
    /// Moment-exponent estimate and verdict against the guaranteed rate.
    Stability,
    /// Stability runs over a grid of growth constants.
    Sweep,
    /// Check the growth and Lipschitz hypotheses on the noise.
    Hypotheses,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Chain => "chain",
            Command::Simulate => "simulate",
            Command::Audit => "audit",
            Command::Stability => "stability",
            Command::Sweep => "sweep",
            Command::Hypotheses => "hypotheses",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "nse-lab", version, about = "Stability lab for the switched stochastic Navier-Stokes surrogate")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `analysis.paths`.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

/// One output file before it is written.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub suffix: String,
    pub body: String,
}

impl Artifact {
    pub fn new(suffix: impl Into<String>, body: String) -> Self {
        Self { suffix: suffix.into(), body }
    }
}

/// What a command produced, before the manifest is attached.
#[derive(Debug)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    pub report: serde_json::Value,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: Command,
    pub tool_version: &'static str,
    pub library_version: &'static str,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub paths: usize,
    pub seed_override: Option<u64>,
    pub paths_override: Option<usize>,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub config: String,
}

#[derive(Debug)]
pub struct RunResult {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Runs one command end to end. Nothing is left on disk on failure.
pub fn run(cli: &Cli) -> Result<RunResult, CliError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let text = fs::read_to_string(&cli.config).map_err(|e| io(&cli.config, e))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.paths {
        cfg.analysis.paths = n;
    }
    let setup = cfg.build()?;
    let output = commands::dispatch(cli.command, &cfg, &setup).map_err(|e| match e {
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", cli.command.name())),
        other => other,
    })?;

    let hash = sha256_hex(text.as_bytes());
    let mut stem = format!("{}-{}", cli.command.name(), &hash[..12]);
    if let Some(s) = cli.seed {
        stem.push_str(&format!("-s{s}"));
    }
    if let Some(n) = cli.paths {
        stem.push_str(&format!("-n{n}"));
    }
    let mut names: Vec<String> = output.artifacts.iter().map(|a| format!("{stem}-{}", a.suffix)).collect();
    let report_name = format!("{stem}-report.json");
    names.push(report_name.clone());
    let manifest = Manifest {
        command: cli.command,
        tool_version: env!("CARGO_PKG_VERSION"),
        library_version: hybrid_nse::VERSION,
        config_path: cli.config.display().to_string(),
        config_sha256: hash,
        seed: cfg.seed,
        paths: cfg.analysis.paths,
        seed_override: cli.seed,
        paths_override: cli.paths,
        started_unix,
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: names.clone(),
        config: text,
    };
    let report = serde_json::json!({ "manifest": manifest, "report": output.report });
    let mut bodies: Vec<String> = output.artifacts.into_iter().map(|a| a.body).collect();
    bodies.push(serde_json::to_string_pretty(&report).expect("report serializes") + "\n");

    fs::create_dir_all(&cli.out).map_err(|e| io(&cli.out, e))?;
    let mut written = Vec::with_capacity(names.len());
    for (name, body) in names.iter().zip(&bodies) {
        let path = cli.out.join(name);
        if let Err(e) = fs::write(&path, body) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            let _ = fs::remove_file(&path);
            return Err(io(&path, e));
        }
        written.push(path);
    }
    Ok(RunResult { files: written, lines: output.lines })
}
