use hybrid_nse::chain::ChainPath;
use hybrid_nse::integrator::*;
use hybrid_nse::noise::*;
use hybrid_nse::rng::{stream_rng, Stream};
use hybrid_nse::spectral::{builtin_tensor, BuiltinTensor, ConvectionTensor, SpectralField, StokesSpectrum};
use hybrid_nse::GeneratorMatrix;

fn scalar(alpha: f64) -> Model {
    Model::new(
        StokesSpectrum::new(vec![1.0]).unwrap(),
        ConvectionTensor::zero(1),
        GeneratorMatrix::single(),
        NoiseSpec::new(
            CovarianceSpectrum::new(vec![1.0]).unwrap(),
            DiffusionFamily::new(DiffusionKind::LinearDiagonal, vec![vec![alpha]], TimeProfile::Constant).unwrap(),
            None,
        )
        .unwrap(),
    )
    .unwrap()
}

#[test]
fn second_moment_follows_the_moment_ode() {
    let k: f64 = 0.5;
    let model = scalar(k.sqrt());
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, record_interval: Some(0.25), ..Default::default() };
    let sum = ensemble(&model, &cfg, 0, 10_000, 42).unwrap();
    let m = sum.moment(2).unwrap();
    for (idx, &t) in sum.times.iter().enumerate().skip(1) {
        let exact = ((k - 2.0) * t).exp();
        let e = m.plain[idx];
        assert!((e.mean - exact).abs() < 3.0 * e.stderr, "t={t}: {e:?} vs {exact}");
    }
    // martingale mean zero at T
    let m1 = *sum.mean_m1().last().unwrap();
    assert!(m1.mean.abs() < 3.0 * m1.stderr, "{m1:?}");
}

#[test]
fn summary_is_permutation_invariant() {
    let model = scalar(0.8);
    let cfg = SimConfig { dt: 1e-2, horizon: 1.0, record_interval: Some(0.1), ..Default::default() };
    let seeds: Vec<u64> = (0..200).collect();
    let mut rev = seeds.clone();
    rev.reverse();
    let a = ensemble_with_seeds(&model, &cfg, 0, &seeds).unwrap();
    let b = ensemble_with_seeds(&model, &cfg, 0, &rev).unwrap();
    for (x, y) in a.moment(2).unwrap().cv.iter().zip(&b.moment(2).unwrap().cv) {
        assert!((x.mean - y.mean).abs() <= 1e-12 * x.mean.abs());
        assert!((x.stderr - y.stderr).abs() <= 1e-9 * x.stderr.abs().max(1e-300));
    }
}

fn terminal_errors(model: &Model, dts: &[f64], reference: f64, paths: u64) -> Vec<f64> {
    let horizon = 1.0;
    let cells = (horizon / reference).round() as usize;
    let mut errs = vec![0.0; dts.len()];
    for s in 0..paths {
        let fine = FineBrownian::sample(model.noise.q.eigenvalues(), reference, cells, &mut stream_rng(s, Stream::Wiener));
        let run = |dt: f64, src: &mut FineBrownian| {
            let cfg = SimConfig { dt, horizon, ..Default::default() };
            let x = SpectralField(vec![1.0]);
            integrate_with(model, &cfg, x, ChainPath::constant(0, horizon), &[], src).unwrap().last().u[0]
        };
        let mut src = FineBrownian { dt: fine.dt, increments: fine.increments };
        let uref = run(reference, &mut src);
        for (e, &dt) in errs.iter_mut().zip(dts) {
            *e += (run(dt, &mut src) - uref).powi(2);
        }
    }
    errs.iter().map(|e| (e / paths as f64).sqrt()).collect()
}

#[test]
fn strong_order_on_linear_problem() {
    let dt = 0.02;
    let errs = terminal_errors(&scalar(1.0), &[dt, dt / 2.0], dt / 32.0, 400);
    let ratio = errs[0] / errs[1];
    assert!((1.2..=2.8).contains(&ratio), "stochastic ratio {ratio} from {errs:?}");
    let errs = terminal_errors(&scalar(0.0), &[dt, dt / 2.0], dt / 32.0, 1);
    let ratio = errs[0] / errs[1];
    assert!((1.2..=2.8).contains(&ratio) && (ratio - 2.0).abs() < 0.2, "deterministic ratio {ratio}");
}

#[test]
fn regime_freeze_with_jumps_is_bit_identical() {
    let mut model = scalar(0.6);
    model.noise.jump = Some(
        JumpKernel::new(
            1.5,
            MarkDistribution::new(MarkKind::Uniform { low: -0.5, high: 0.5 }).unwrap(),
            JumpKind::LinearDiagonal,
            vec![vec![0.7]],
            TimeProfile::Constant,
        )
        .unwrap(),
    );
    let cfg = SimConfig { dt: 1e-2, horizon: 3.0, jump_mode: JumpMode::On, ..Default::default() };
    for seed in 0..5 {
        let a = integrate_path(&model, &cfg, 0, seed).unwrap();
        let b = integrate_unswitched(&model, &cfg, seed).unwrap();
        assert!(!a.jumps.is_empty() || seed > 0);
        for (s, (t, u, m1, m2)) in a.samples.iter().zip(&b) {
            assert_eq!((s.t, &s.u.0, s.m1, s.m2), (*t, &u.0, *m1, *m2));
        }
    }
}

#[test]
fn mean_energy_decreases_below_threshold() {
    let model = scalar(1.0);
    let cfg = SimConfig { dt: 2e-3, horizon: 4.0, record_interval: Some(0.5), ..Default::default() };
    let sum = ensemble(&model, &cfg, 0, 4000, 7).unwrap();
    let m = &sum.moment(2).unwrap().cv;
    for k in 2..m.len() - 1 {
        let se = (m[k].stderr.powi(2) + m[k + 1].stderr.powi(2)).sqrt();
        assert!(m[k + 1].mean <= m[k].mean + 3.0 * se, "t={}: {:?} -> {:?}", sum.times[k], m[k], m[k + 1]);
    }
}

#[test]
fn zero_noise_energy_is_nonincreasing_with_convection() {
    let spec = StokesSpectrum::weyl(8, 1.0).unwrap();
    let tensor = builtin_tensor(BuiltinTensor::ShellLike, &spec).unwrap();
    let model = Model::new(spec, tensor, GeneratorMatrix::single(), NoiseSpec::silent(1, 8)).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 2.0,
        initial: InitialCondition::Value { u: vec![0.5, -0.3, 0.2, 0.4, -0.1, 0.3, 0.2, -0.2] },
        ..Default::default()
    };
    let path = integrate_path(&model, &cfg, 0, 0).unwrap();
    assert!(path.samples.windows(2).all(|w| w[1].u.h_norm() <= w[0].u.h_norm()));
}

#[test]
fn tamed_scheme_tolerates_stiff_steps() {
    let spec = StokesSpectrum::weyl(16, 1.0).unwrap();
    let tensor = builtin_tensor(BuiltinTensor::ShellLike, &spec).unwrap();
    let noise = NoiseSpec::new(
        CovarianceSpectrum::new(vec![0.5; 16]).unwrap(),
        DiffusionFamily::new(DiffusionKind::BoundedSaturating, vec![vec![0.5; 16]], TimeProfile::Constant).unwrap(),
        None,
    )
    .unwrap();
    let model = Model::new(spec, tensor, GeneratorMatrix::single(), noise).unwrap();
    let em = SimConfig { dt: 0.2, horizon: 10.0, ..Default::default() };
    assert!(em.validate(&model).is_err());
    let tamed = SimConfig { scheme: Scheme::TamedEuler, ..em };
    let path = integrate_path(&model, &tamed, 0, 1).unwrap();
    assert!(path.blowup.is_none());
    assert!(path.last().u.is_finite());
}

#[test]
fn two_regime_noise_switches_with_chain() {
    // regime 2 is noiseless: M₁ only grows while the chain sits in regime 1
    let model = Model::new(
        StokesSpectrum::new(vec![1.0]).unwrap(),
        ConvectionTensor::zero(1),
        GeneratorMatrix::two_state(2.0, 2.0).unwrap(),
        NoiseSpec::new(
            CovarianceSpectrum::new(vec![1.0]).unwrap(),
            DiffusionFamily::new(DiffusionKind::Additive, vec![vec![1.0], vec![0.0]], TimeProfile::Constant).unwrap(),
            None,
        )
        .unwrap(),
    )
    .unwrap();
    let cfg = SimConfig { dt: 1e-3, horizon: 3.0, ..Default::default() };
    let path = integrate_path(&model, &cfg, 0, 12).unwrap();
    assert!(path.chain.jump_count() > 0);
    for w in path.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let quiet = path.chain.state_at(a.t) == 1 && path.chain.switches_in(a.t, b.t).is_empty();
        if quiet {
            assert_eq!(a.energy.lq, b.energy.lq);
        }
    }
}
