use hybrid_nse::audit::{audit_energy, audit_pth_moment, jump_algebra_errors, martingale_diagnostics};
use hybrid_nse::chain::{occupation_batch_means, occupation_stats, simulate_chain_clock, simulate_chain_prm};
use hybrid_nse::export;
use hybrid_nse::integrator::{ensemble, integrate_path, HybridPath};
use hybrid_nse::rng::path_seed;
use hybrid_nse::stability::{estimate_as_exponent, noise_class, run_stability, threshold_sweep, NoiseClass, SweepTable};
use hybrid_nse::verify_hypotheses;
use serde_json::json;

use crate::config::{ChainMethod, RunConfig, Setup};
use crate::{Artifact, CliError, Command, CommandOutput};

const OCCUPATION_BATCHES: usize = 20;

pub fn dispatch(cmd: Command, cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    match cmd {
        Command::Chain => chain(cfg, setup),
        Command::Simulate => simulate(cfg, setup),
        Command::Audit => audit(cfg, setup),
        Command::Stability => stability(cfg, setup),
        Command::Sweep => sweep(cfg, setup),
        Command::Hypotheses => hypotheses(cfg, setup),
    }
}

fn chain(cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    let g = &setup.model.generator;
    let horizon = cfg.chain.horizon.unwrap_or(setup.sim.horizon);
    let path = match cfg.chain.method {
        ChainMethod::Prm => simulate_chain_prm(g, setup.initial_regime, horizon, cfg.seed)?,
        ChainMethod::Clock => simulate_chain_clock(g, setup.initial_regime, horizon, cfg.seed)?,
    };
    let occ = occupation_stats(&path, g.states())?;
    let batch: Vec<_> = (0..g.states()).map(|i| occupation_batch_means(&path, i, OCCUPATION_BATCHES)).collect();
    let mut lines = vec![format!("{} switches over [0, {horizon}]", path.jump_count())];
    for (i, f) in occ.fractions.iter().enumerate() {
        lines.push(format!("regime {}: occupation {f:.6} ± {:.6}", i + 1, batch[i].stderr));
    }
    Ok(CommandOutput {
        artifacts: vec![Artifact::new("chain.csv", export::chain_csv(&path))],
        report: json!({
            "method": cfg.chain.method,
            "horizon": horizon,
            "initial_regime": cfg.chain.initial_regime,
            "switches": path.jump_count(),
            "occupation": occ,
            "occupation_stderr": batch.iter().map(|b| b.stderr).collect::<Vec<_>>(),
            "batches": OCCUPATION_BATCHES,
        }),
        lines,
    })
}

fn first_path(cfg: &RunConfig, setup: &Setup) -> Result<HybridPath, CliError> {
    let path = integrate_path(&setup.model, &setup.sim, setup.initial_regime, path_seed(cfg.seed, 0))?;
    if let Some(t) = path.blowup {
        return Err(CliError::Runtime(format!("path 1 exceeded the blowup guard at t = {t}")));
    }
    Ok(path)
}

fn simulate(cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    let path = first_path(cfg, setup)?;
    let summary = ensemble(&setup.model, &setup.sim, setup.initial_regime, cfg.analysis.paths, cfg.seed)?;
    let mut lines = vec![format!(
        "{} paths, {} used, {} blowups; |u(T)| on path 1 = {:.6e}",
        summary.n_paths,
        summary.n_used,
        summary.blowups,
        path.last().u.h_norm()
    )];
    let mut terminal = Vec::new();
    for m in &summary.moments {
        let (a, b) = (m.plain.last().unwrap(), m.cv.last().unwrap());
        lines.push(format!("E|u(T)|^{} = {:.6e} ± {:.2e} (plain {:.6e} ± {:.2e})", m.p, b.mean, b.stderr, a.mean, a.stderr));
        terminal.push(json!({ "p": m.p, "plain": a, "control_variate": b }));
    }
    if summary.unreliable {
        lines.push("warning: more than 1% of paths tripped the blowup guard".into());
    }
    Ok(CommandOutput {
        artifacts: vec![
            Artifact::new("path.csv", export::path_csv(&path, &setup.model.spectrum)),
            Artifact::new("field.csv", export::field_csv(&path)),
            Artifact::new("chain.csv", export::chain_csv(&path.chain)),
            Artifact::new("ensemble.csv", export::ensemble_csv(&summary)),
        ],
        report: json!({
            "paths": summary.n_paths,
            "used": summary.n_used,
            "blowups": summary.blowups,
            "unreliable": summary.unreliable,
            "path1_jumps": path.jumps.len(),
            "path1_switches": path.chain.jump_count(),
            "terminal_moments": terminal,
        }),
        lines,
    })
}

fn audit(cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    let path = first_path(cfg, setup)?;
    let t = setup.sim.horizon;
    let energy = audit_energy(&path, &setup.sim)?;
    let mut artifacts = vec![Artifact::new("energy.csv", export::ledger_csv(&energy))];
    let mut lines = vec![format!("energy identity: max residual {:.3e}", energy.max_residual(t))];
    let mut moments = Vec::new();
    for &p in cfg.analysis.p.iter().filter(|&&p| p >= 3) {
        let led = audit_pth_moment(&path, &setup.sim, p)?;
        lines.push(format!(
            "p = {p} identity: max residual {:.3e} (exact correction {:.3e})",
            led.max_residual(t),
            led.max_residual_exact(t).unwrap_or(f64::NAN)
        ));
        moments.push(json!({ "p": p, "max_residual": led.max_residual(t), "max_residual_exact": led.max_residual_exact(t) }));
        artifacts.push(Artifact::new(format!("moment-p{p}.csv"), export::ledger_csv(&led)));
    }
    let jump_err = jump_algebra_errors(&path).into_iter().fold(0.0, f64::max);
    if !path.jumps.is_empty() {
        lines.push(format!("{} jumps, max per-jump algebra error {jump_err:.3e}", path.jumps.len()));
    }
    let summary = ensemble(&setup.model, &setup.sim, setup.initial_regime, cfg.analysis.paths, cfg.seed)?;
    let mart = martingale_diagnostics(&summary);
    lines.push(format!(
        "E M1(T) = {:.3e} ± {:.2e}, E M2(T) = {:.3e} ± {:.2e}",
        mart.terminal_m1.mean, mart.terminal_m1.stderr, mart.terminal_m2.mean, mart.terminal_m2.stderr
    ));
    artifacts.push(Artifact::new("martingale.csv", export::martingale_csv(&summary)));
    Ok(CommandOutput {
        artifacts,
        report: json!({
            "energy": {
                "max_residual": energy.max_residual(t),
                "compensator_gap": energy.compensator_gap(),
                "jumps": energy.jumps,
            },
            "moments": moments,
            "jump_algebra_max_error": jump_err,
            "martingale": {
                "paths": summary.n_used,
                "terminal_m1": mart.terminal_m1,
                "terminal_m2": mart.terminal_m2,
                "sup_mean_abs_m1": mart.sup_mean_abs_m1,
                "sup_mean_abs_m2": mart.sup_mean_abs_m2,
                "tail_slope_m1": mart.tail_slope_m1,
                "tail_slope_m2": mart.tail_slope_m2,
                "m1_flat": mart.m1_flat,
                "m2_flat": mart.m2_flat,
            },
        }),
        lines,
    })
}

fn stability(cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    let mut reports = Vec::new();
    let mut lines = Vec::new();
    let mut shared = None;
    for &p in &cfg.analysis.p {
        let run = run_stability(&setup.model, &setup.sim, &cfg.stability_options(p))?;
        let r = &run.report;
        lines.push(match &r.estimate {
            Some(e) => format!(
                "p = {p}: exponent {:.4} ± {:.4}, bound {:.4}, verdict {}",
                e.slope, e.stderr, r.guaranteed_rate, r.verdict
            ),
            None => format!("p = {p}: no estimate, verdict {}", r.verdict),
        });
        reports.push(run.report);
        shared.get_or_insert((run.summary, run.hypotheses));
    }
    let (summary, hyp) = shared.expect("analysis.p is nonempty");
    let mut artifacts = vec![Artifact::new("ensemble.csv", export::ensemble_csv(&summary))];
    let th = &reports[0].thresholds;
    let bound = match noise_class(&setup.model, &setup.sim) {
        NoiseClass::Continuous => th.as_bound_continuous(hyp.k_inf),
        NoiseClass::Jump => th.as_bound_jump(hyp.k_inf),
    };
    let as_report = match estimate_as_exponent(&summary) {
        Ok(a) => {
            lines.push(format!("pathwise exponent: median {:.4}, p95 {:.4}, bound {bound:.4}", a.median, a.p95));
            artifacts.push(Artifact::new("as-exponent.csv", export::as_exponent_csv(&a)));
            json!({ "median": a.median, "p95": a.p95, "mean": a.mean, "excluded": a.excluded, "bound": bound })
        }
        Err(e) => json!({ "error": e.to_string(), "bound": bound }),
    };
    Ok(CommandOutput {
        artifacts,
        report: json!({ "stability": reports, "almost_sure": as_report, "hypotheses": hyp }),
        lines,
    })
}

fn sweep(cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    let grid = &cfg.analysis.sweep.grid;
    let mut merged = SweepTable { rows: Vec::new(), monotone: true, monotonicity_breaks: Vec::new() };
    let mut tables = Vec::new();
    for &p in &cfg.analysis.p {
        let t = threshold_sweep(grid, &setup.model, &setup.sim, &cfg.stability_options(p))?;
        merged.rows.extend(t.rows.iter().cloned());
        tables.push(json!({ "p": p, "monotone": t.monotone, "breaks": t.monotonicity_breaks }));
    }
    let lines = merged
        .rows
        .iter()
        .map(|r| {
            format!(
                "K = {}, p = {}: exponent {}, bound {:.4}, verdict {}",
                r.k,
                r.p,
                r.exponent.map_or("n/a".to_string(), |e| format!("{e:.4}")),
                r.bound,
                r.verdict
            )
        })
        .collect();
    Ok(CommandOutput {
        artifacts: vec![Artifact::new("sweep.csv", export::sweep_csv(&merged))],
        report: json!({ "grid": grid, "tables": tables, "rows": merged.rows }),
        lines,
    })
}

fn hypotheses(cfg: &RunConfig, setup: &Setup) -> Result<CommandOutput, CliError> {
    let mut opts = cfg.analysis.hypotheses.clone();
    opts.p_max = opts.p_max.max(cfg.analysis.p.iter().copied().max().unwrap_or(2));
    if cfg.analysis.declared_k.is_some() {
        opts.declared_k = cfg.analysis.declared_k;
    }
    let rep = verify_hypotheses(&setup.model.noise, &opts)?;
    let mut lines: Vec<String> = rep
        .conditions
        .iter()
        .map(|c| {
            let status = if !c.evaluated {
                "not evaluated"
            } else if c.satisfied {
                "pass"
            } else {
                "FAIL"
            };
            format!("{} (p = {}): empirical {:.6e}, declared {:.6e}: {status}", c.name, c.p, c.empirical, c.declared)
        })
        .collect();
    lines.push(format!("hypotheses {}", if rep.verified { "verified" } else { "not verified" }));
    Ok(CommandOutput {
        artifacts: vec![Artifact::new("hypotheses.csv", export::hypotheses_csv(&rep))],
        report: serde_json::to_value(&rep).expect("report serializes"),
        lines,
    })
}
