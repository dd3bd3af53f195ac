//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use hybrid_nse::audit::{audit_energy, jump_algebra_errors, martingale_diagnostics};
use hybrid_nse::chain::{occupation_batch_means, simulate_chain_clock, simulate_chain_prm};
use hybrid_nse::hypotheses::{verify_hypotheses, HypothesisMode, HypothesisOptions};
use hybrid_nse::integrator::*;
use hybrid_nse::noise::*;
use hybrid_nse::rng::{stream_rng, Stream};
use hybrid_nse::spectral::*;
use hybrid_nse::stability::*;
use hybrid_nse::stats::chi_square_homogeneity;
use hybrid_nse::GeneratorMatrix;
use num_rational::Ratio;
use rand::Rng;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scalar(diffusion: DiffusionFamily, jump: Option<JumpKernel>) -> Model {
    Model::new(
        StokesSpectrum::new(vec![1.0]).unwrap(),
        ConvectionTensor::zero(1),
        GeneratorMatrix::single(),
        NoiseSpec::new(CovarianceSpectrum::new(vec![1.0]).unwrap(), diffusion, jump).unwrap(),
    )
    .unwrap()
}

fn linear(alpha: f64, profile: TimeProfile) -> DiffusionFamily {
    DiffusionFamily::new(DiffusionKind::LinearDiagonal, vec![vec![alpha]], profile).unwrap()
}

/// Regression window starting at the initial condition; see the README.
fn early_window() -> ExponentWindow {
    ExponentWindow { start: Some(0.0), end: Some(1.0), burn_in: Some(0.0) }
}

fn continuous_setup() -> (Model, SimConfig) {
    let cfg = SimConfig { dt: 1e-3, horizon: 5.0, record_interval: Some(0.05), ..Default::default() };
    (scalar(linear(1.0, TimeProfile::Constant), None), cfg)
}

fn c1_oracle() -> Outcome {
    let (model, cfg) = continuous_setup();
    let start = Instant::now();
    let sum = ensemble(&model, &cfg, 0, 10_000, 1).unwrap();
    let est = estimate_moment_exponent(&sum, 2, &early_window(), Estimator::ControlVariate, 1.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        (est.slope + 1.0).abs() <= 0.1 && secs < 120.0,
        format!("exponent {:.4} ± {:.4} vs -1.0 ± 0.1, {secs:.1} s", est.slope, est.stderr),
    )
}

fn c2_continuous_bound() -> Outcome {
    let (model, cfg) = continuous_setup();
    let opts = StabilityOptions { paths: 10_000, seed: 2, window: early_window(), ..Default::default() };
    let run = run_stability(&model, &cfg, &opts).unwrap();
    let r = &run.report;
    let e = r.estimate.as_ref().unwrap();
    verdict(
        r.verdict == Verdict::Consistent && e.slope <= -0.5 + 3.0 * e.stderr && r.guaranteed_rate == -0.5,
        format!("exponent {:.4} ± {:.4}, bound {}, verdict {}", e.slope, e.stderr, r.guaranteed_rate, r.verdict),
    )
}

fn c3_jump_bound() -> Outcome {
    let g = 0.2f64.sqrt();
    let kern = JumpKernel::new(
        1.0,
        MarkDistribution::new(MarkKind::Atoms(vec![(1.0, 0.5), (-1.0, 0.5)])).unwrap(),
        JumpKind::LinearDiagonal,
        vec![vec![g]],
        TimeProfile::Constant,
    )
    .unwrap();
    let model = scalar(linear(g, TimeProfile::Constant), Some(kern));
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, record_interval: Some(0.05), jump_mode: JumpMode::On, ..Default::default() };
    let opts = StabilityOptions { paths: 10_000, seed: 3, window: early_window(), ..Default::default() };
    let run = run_stability(&model, &cfg, &opts).unwrap();
    let r = &run.report;
    let e = r.estimate.as_ref().unwrap();
    let bound = -0.8;
    verdict(
        (r.declared_k - 0.2).abs() < 1e-12
            && r.declared_k < 1.0 / 3.0
            && (r.guaranteed_rate - bound).abs() < 1e-12
            && e.slope <= bound + 3.0 * e.stderr
            && r.verdict == Verdict::Consistent,
        format!("K {}, exponent {:.4} ± {:.4}, bound {bound}, verdict {}", r.declared_k, e.slope, e.stderr, r.verdict),
    )
}

fn c4_thresholds() -> Outcome {
    let mut ok = true;
    let mut rows = Vec::new();
    for p in 2u32..=6 {
        let ex = exact_thresholds(p).unwrap();
        let pu = p as u64;
        let cont = if p == 2 { Ratio::from_integer(2) } else { Ratio::new(2, pu - 1) };
        let jump = Ratio::new(pu, pu * (pu - 1) / 2 + (1 << pu) - 1 + pu);
        let th = thresholds(p, 1.0, 1.0).unwrap();
        let float_ok = th.continuous_kmax == *cont.numer() as f64 / *cont.denom() as f64
            && (th.jump_kmax - *jump.numer() as f64 / *jump.denom() as f64).abs() <= 1e-15;
        ok &= ex.continuous == cont && ex.jump == jump && float_ok;
        rows.push(format!("p={p}: {}, {}", ex.continuous, ex.jump));
    }
    ok &= exact_thresholds(2).unwrap().jump == Ratio::new(1, 3) && exact_thresholds(3).unwrap().jump == Ratio::new(3, 13);
    verdict(ok, rows.join("; "))
}

fn c5_energy_audit() -> Outcome {
    let spec = StokesSpectrum::weyl(4, 1.0).unwrap();
    let model = Model::new(spec.clone(), ConvectionTensor::zero(4), GeneratorMatrix::single(), NoiseSpec::silent(1, 4)).unwrap();
    let res: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| {
            let cfg = SimConfig {
                dt,
                horizon: 1.0,
                initial: InitialCondition::Value { u: vec![1.0, 0.5, -0.5, 0.25] },
                ..Default::default()
            };
            audit_energy(&integrate_path(&model, &cfg, 0, 0).unwrap(), &cfg).unwrap().max_residual(1.0)
        })
        .collect();
    let ratios: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();

    let kern = JumpKernel::new(
        4.0,
        MarkDistribution::new(MarkKind::Normal { mean: 0.3, std: 0.6 }).unwrap(),
        JumpKind::LinearDiagonal,
        vec![vec![0.5, -0.3, 0.2, 0.4]],
        TimeProfile::Constant,
    )
    .unwrap();
    let noise = NoiseSpec::new(
        CovarianceSpectrum::new(vec![1.0, 0.5, 0.25, 0.125]).unwrap(),
        DiffusionFamily::new(DiffusionKind::Additive, vec![vec![0.3; 4]], TimeProfile::Constant).unwrap(),
        Some(kern),
    )
    .unwrap();
    let tensor = builtin_tensor(BuiltinTensor::ShellLike, &spec).unwrap();
    let model = Model::new(spec, tensor, GeneratorMatrix::single(), noise).unwrap();
    let cfg = SimConfig { dt: 1e-3, horizon: 5.0, jump_mode: JumpMode::On, ..Default::default() };
    let mut jumps = 0;
    let mut worst: f64 = 0.0;
    for s in 0..10 {
        let path = integrate_path(&model, &cfg, 0, s).unwrap();
        jumps += path.jumps.len();
        worst = jump_algebra_errors(&path).into_iter().fold(worst, f64::max);
    }
    verdict(
        ratios.iter().all(|r| (1.5..=2.5).contains(r)) && jumps > 0 && worst <= 1e-12,
        format!(
            "residuals [{}], ratios {ratios:.3?}; {jumps} jumps, worst relative error {worst:.1e}",
            res.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c6_chain() -> Outcome {
    let g = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
    let path = simulate_chain_prm(&g, 0, 1e4, 6).unwrap();
    let occ = occupation_batch_means(&path, 0, 50);
    let occ_ok = (occ.mean - 2.0 / 3.0).abs() <= 3.0 * occ.stderr;
    let bins = 40;
    let (mut a, mut b) = (vec![0u64; bins], vec![0u64; bins]);
    for k in 0..10_000u64 {
        a[simulate_chain_prm(&g, 0, 5.0, 2 * k).unwrap().jump_count().min(bins - 1)] += 1;
        b[simulate_chain_clock(&g, 0, 5.0, 2 * k + 1).unwrap().jump_count().min(bins - 1)] += 1;
    }
    let chi = chi_square_homogeneity(&a, &b).unwrap();
    verdict(
        occ_ok && chi.p_value > 0.01,
        format!(
            "occupation {:.4} ± {:.4} vs 0.6667; chi-square {:.2} on {} dof, p = {:.3}",
            occ.mean, occ.stderr, chi.statistic, chi.dof, chi.p_value
        ),
    )
}

fn c7_martingales() -> Outcome {
    let kern = JumpKernel::new(
        2.0,
        MarkDistribution::new(MarkKind::Uniform { low: -1.0, high: 1.5 }).unwrap(),
        JumpKind::LinearDiagonal,
        vec![vec![0.4]],
        TimeProfile::Constant,
    )
    .unwrap();
    let model = scalar(linear(0.5, TimeProfile::Constant), Some(kern));
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, record_interval: Some(0.1), jump_mode: JumpMode::On, ..Default::default() };
    let rep = martingale_diagnostics(&ensemble(&model, &cfg, 0, 10_000, 7).unwrap());
    let (m1, m2) = (rep.terminal_m1, rep.terminal_m2);
    let means_ok = m1.mean.abs() <= 3.0 * m1.stderr && m2.mean.abs() <= 3.0 * m2.stderr && m2.stderr > 0.0;

    let decaying = scalar(linear(1.0, TimeProfile::ExpDecay { rate: 0.5 }), None);
    let hyp = verify_hypotheses(&decaying.noise, &HypothesisOptions { mode: HypothesisMode::HPrime, ..Default::default() }).unwrap();
    let cfg = SimConfig { dt: 1e-2, horizon: 10.0, record_interval: Some(0.1), ..Default::default() };
    let tail = martingale_diagnostics(&ensemble(&decaying, &cfg, 0, 10_000, 8).unwrap());
    let below = hyp.verified && hyp.k_inf < thresholds(2, 1.0, 1.0).unwrap().continuous_kmax;
    let s = tail.tail_slope_m1;
    verdict(
        means_ok && below && s.mean.abs() <= 3.0 * s.stderr,
        format!(
            "E M1(T) = {:.2e} ± {:.2e}, E M2(T) = {:.2e} ± {:.2e}; tail slope of E|M1| {:.2e} ± {:.2e}",
            m1.mean, m1.stderr, m2.mean, m2.stderr, s.mean, s.stderr
        ),
    )
}

fn c8_almost_sure() -> Outcome {
    let model = scalar(linear(1.0, TimeProfile::Constant), None);
    let cfg = SimConfig { dt: 5e-3, horizon: 50.0, record_interval: Some(1.0), ..Default::default() };
    let sum = ensemble(&model, &cfg, 0, 1000, 9).unwrap();
    let a = estimate_as_exponent(&sum).unwrap();
    let bound = thresholds(2, 1.0, 1.0).unwrap().as_bound_continuous(1.0);
    verdict(
        bound == -0.5 && a.p95 <= bound + 0.15 && (a.median + 1.5).abs() <= 0.15 && a.excluded == 0,
        format!("median {:.4} vs -1.5 ± 0.15, p95 {:.4} vs {bound} + 0.15", a.median, a.p95),
    )
}

fn c9_invariants() -> Outcome {
    let mut rng = stream_rng(2026, Stream::Initial);
    let mut worst = [0.0f64; 4];
    let rel = |err: f64, scale: f64| if scale > 0.0 { err / scale } else { err };
    for _ in 0..1000 {
        let n = rng.random_range(3..12);
        let mut acc = 0.0;
        let lambdas: Vec<f64> = (0..n).map(|_| { acc += rng.random_range(0.01..4.0); acc }).collect();
        let spec = StokesSpectrum::new(lambdas).unwrap();
        let entries: Vec<_> = (0..rng.random_range(1..15))
            .map(|_| {
                let j = rng.random_range(0..n);
                let k = (j + rng.random_range(1..n)) % n;
                (rng.random_range(0..n), j, k, rng.random_range(-3.0..3.0))
            })
            .collect();
        let t = ConvectionTensor::from_entries(n, &entries).unwrap();
        let mut field = || SpectralField((0..n).map(|_| rng.random_range(-5.0..5.0)).collect());
        let (u, v, w) = (field(), field(), field());
        let scale = |v: &SpectralField, w: &SpectralField| -> f64 {
            t.triads().iter().map(|tr| (tr.value * u[tr.i]).abs() * ((v[tr.j] * w[tr.k]).abs() + (v[tr.k] * w[tr.j]).abs())).sum()
        };
        let v2 = v_norm_sq(&u, &spec).unwrap();
        worst[0] = worst[0].max(rel((spec.lambda1() * u.h_norm_sq() - v2).max(0.0), v2));
        worst[1] = worst[1].max(rel(b_form(&t, &u, &v, &v).unwrap().abs(), scale(&v, &v)));
        worst[2] = worst[2].max(rel((b_form(&t, &u, &v, &w).unwrap() + b_form(&t, &u, &w, &v).unwrap()).abs(), scale(&v, &w)));
        worst[3] = worst[3].max(rel((apply_stokes(&u, &spec).unwrap().dot(&u).unwrap() - v2).abs(), v2));
    }

    let spec = StokesSpectrum::weyl(6, 1.0).unwrap();
    let kern = JumpKernel::new(
        3.0,
        MarkDistribution::new(MarkKind::Normal { mean: 0.0, std: 0.5 }).unwrap(),
        JumpKind::Additive,
        vec![vec![0.2; 6]],
        TimeProfile::Constant,
    )
    .unwrap();
    let noise = NoiseSpec::new(
        CovarianceSpectrum::new(vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.1]).unwrap(),
        DiffusionFamily::new(DiffusionKind::BoundedSaturating, vec![vec![0.5; 6]], TimeProfile::ExpDecay { rate: 0.1 }).unwrap(),
        Some(kern),
    )
    .unwrap();
    let model = Model::new(spec.clone(), builtin_tensor(BuiltinTensor::ShellLike, &spec).unwrap(), GeneratorMatrix::single(), noise).unwrap();
    let cfg = SimConfig { dt: 1e-3, horizon: 2.0, jump_mode: JumpMode::On, ..Default::default() };
    let mut identical = true;
    for seed in 0..5 {
        let a = integrate_path(&model, &cfg, 0, seed).unwrap();
        let b = integrate_unswitched(&model, &cfg, seed).unwrap();
        identical &= a.samples.len() == b.len()
            && a.samples.iter().zip(&b).all(|(s, (t, u, m1, m2))| s.t == *t && s.u.0 == u.0 && s.m1 == *m1 && s.m2 == *m2);
    }
    verdict(
        worst.iter().all(|w| *w <= 1e-12) && identical,
        format!(
            "worst relative errors: Poincaré {:.1e}, b(u,v,v) {:.1e}, antisymmetry {:.1e}, (Au,u) {:.1e}; freeze bit-identical: {identical}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

const CLI_CONFIG: &str = r#"schema_version = 1
seed = 10

[spectrum]
modes = 3

[tensor]
builtin = "triad"

[chain]
generator = [[-1.0, 1.0], [2.0, -2.0]]

[noise]
q = [1.0, 0.5, 0.25]

[noise.diffusion]
kind = "linear-diagonal"
amplitudes = [[0.6, 0.6, 0.6], [0.3, 0.3, 0.3]]

[noise.jump]
intensity = 1.0
kind = "linear-diagonal"
amplitudes = [[0.2, 0.2, 0.2], [0.1, 0.1, 0.1]]
marks = { kind = "uniform", low = -1.0, high = 1.0 }

[sim]
dt = 0.01
horizon = 2.0
record_interval = 0.1
jump_mode = "on"

[analysis]
paths = 100
p = [2, 3]
window = { start = 0.0, end = 2.0, burn_in = 0.0 }
sweep = { grid = [0.05, 0.1] }
"#;

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, CLI_CONFIG).unwrap();
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for cmd in ["chain", "simulate", "audit", "stability", "sweep", "hypotheses"] {
        let dirs = [tmp.path().join(format!("{cmd}-1")), tmp.path().join(format!("{cmd}-2"))];
        for d in &dirs {
            let st = Command::new(env!("CARGO_BIN_EXE_nse-lab"))
                .arg(cmd)
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(d)
                .arg("--quiet")
                .status()
                .unwrap();
            if !st.success() {
                return Err(format!("{cmd} exited with {st}"));
            }
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")) {
            compared += 1;
            if fs::read(dirs[0].join(n)).unwrap() != fs::read(dirs[1].join(n)).unwrap() {
                mismatched.push(n.to_string_lossy().into_owned());
            }
        }
    }
    verdict(mismatched.is_empty() && compared > 0, format!("{compared} CSV files compared, mismatches {mismatched:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("closed-form moment exponent", c1_oracle),
        ("continuous mean-square bound", c2_continuous_bound),
        ("jump mean-square bound", c3_jump_bound),
        ("threshold table", c4_thresholds),
        ("energy identity audit", c5_energy_audit),
        ("chain correctness", c6_chain),
        ("martingale compensation", c7_martingales),
        ("almost-sure exponent", c8_almost_sure),
        ("structural invariants", c9_invariants),
        ("end-to-end determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("criterion {} {name}: PASS ({d}) [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d}) [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
