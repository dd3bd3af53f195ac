//! CSV writers: comma separated, `.` decimal, header row, LF line endings.
//! Regimes and tensor indices are written 1-based.

use std::fmt::Write;

use crate::audit::{martingale_diagnostics, IdentityLedger};
use crate::hypotheses::HypothesisReport;
use crate::chain::ChainPath;
use crate::integrator::{EnsembleSummary, HybridPath};
use crate::spectral::{v_norm_sq_raw, ConvectionTensor, StokesSpectrum};
use crate::stability::{AsExponentReport, SweepTable};

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per switch; the first row is the initial regime at `t = 0`.
pub fn chain_csv(path: &ChainPath) -> String {
    let mut s = String::from("t_jump,new_state\n");
    writeln!(s, "0,{}", path.initial + 1).unwrap();
    for (t, r) in path.jump_times.iter().zip(&path.states) {
        writeln!(s, "{t},{}", r + 1).unwrap();
    }
    s
}

pub fn tensor_csv(tensor: &ConvectionTensor) -> String {
    let mut s = String::from("i,j,k,value\n");
    for (i, j, k, v) in tensor.expanded_entries() {
        writeln!(s, "{},{},{},{v}", i + 1, j + 1, k + 1).unwrap();
    }
    s
}

/// `t, |u|, ‖u‖, regime, M₁, M₂` at every recorded sample.
pub fn path_csv(path: &HybridPath, spec: &StokesSpectrum) -> String {
    let mut s = String::from("t,h_norm,v_norm,regime,m1,m2\n");
    for x in &path.samples {
        let v = v_norm_sq_raw(x.u.as_slice(), spec.eigenvalues()).sqrt();
        writeln!(s, "{},{},{v},{},{},{}", x.t, x.u.h_norm(), x.regime + 1, x.m1, x.m2).unwrap();
    }
    s
}

/// Full field per sample: `t, regime, u1..uN`.
pub fn field_csv(path: &HybridPath) -> String {
    let n = path.x.len();
    let mut s = String::from("t,regime");
    for k in 1..=n {
        write!(s, ",u{k}").unwrap();
    }
    s.push('\n');
    for x in &path.samples {
        write!(s, "{},{}", x.t, x.regime + 1).unwrap();
        for v in &x.u.0 {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn ensemble_csv(summary: &EnsembleSummary) -> String {
    let mut s = String::from("t,p,moment,stderr,cv_moment,cv_stderr\n");
    for m in &summary.moments {
        for (k, t) in summary.times.iter().enumerate() {
            let (a, b) = (m.plain[k], m.cv[k]);
            writeln!(s, "{t},{},{},{},{},{}", m.p, a.mean, a.stderr, b.mean, b.stderr).unwrap();
        }
    }
    s
}

pub fn ledger_csv(ledger: &IdentityLedger) -> String {
    let cols = ledger.columns();
    let mut s = String::from("t");
    for (name, _) in &cols {
        write!(s, ",{name}").unwrap();
    }
    s.push('\n');
    for (k, t) in ledger.times.iter().enumerate() {
        write!(s, "{t}").unwrap();
        for (_, v) in &cols {
            write!(s, ",{}", v[k]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut s = String::from("K,p,exponent,stderr,bound,verdict\n");
    for r in &table.rows {
        writeln!(s, "{},{},{},{},{},{}", r.k, r.p, opt(r.exponent), opt(r.stderr), r.bound, r.verdict).unwrap();
    }
    s
}

/// Mean martingales with standard errors and the mean absolute values.
pub fn martingale_csv(summary: &EnsembleSummary) -> String {
    let rep = martingale_diagnostics(summary);
    let (m1, m2) = (summary.mean_m1(), summary.mean_m2());
    let mut s = String::from("t,m1,m1_stderr,m2,m2_stderr,mean_abs_m1,mean_abs_m2\n");
    for (k, t) in summary.times.iter().enumerate() {
        writeln!(
            s,
            "{t},{},{},{},{},{},{}",
            m1[k].mean, m1[k].stderr, m2[k].mean, m2[k].stderr, rep.mean_abs_m1[k], rep.mean_abs_m2[k]
        )
        .unwrap();
    }
    s
}

pub fn hypotheses_csv(report: &HypothesisReport) -> String {
    let mut s = String::from("condition,p,declared,empirical,evaluated,satisfied\n");
    for c in &report.conditions {
        writeln!(s, "{},{},{},{},{},{}", c.name, c.p, c.declared, c.empirical, c.evaluated, c.satisfied).unwrap();
    }
    s
}

pub fn as_exponent_csv(report: &AsExponentReport) -> String {
    let mut s = String::from("path,exponent\n");
    for (k, e) in report.exponents.iter().enumerate() {
        writeln!(s, "{},{e}", k + 1).unwrap();
    }
    s
}
