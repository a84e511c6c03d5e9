//! Regime classification and per-η aggregation for the η sweep.

use std::io::Write;

use hamid_core::report::fmt_sig;
use serde::{Deserialize, Serialize};

use crate::experiments::{convergence_name, SeedRun};

/// Threshold on `dev_H0`, `dev_H1` and `dev_U` separating the regimes.
pub const REGIME_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    RecoversOriginal,
    AlternateSolution,
    Diverges,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::RecoversOriginal => "RecoversOriginal",
            Regime::AlternateSolution => "AlternateSolution",
            Regime::Diverges => "Diverges",
        }
    }
}

/// NaN deviations count as failures.
pub fn classify(dev_h0: f64, dev_h1: f64, dev_u: f64) -> Regime {
    let small = |x: f64| x <= REGIME_THRESHOLD;
    if !small(dev_u) {
        Regime::Diverges
    } else if small(dev_h0) && small(dev_h1) {
        Regime::RecoversOriginal
    } else {
        Regime::AlternateSolution
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtaRow {
    pub eta: f64,
    pub n_runs: usize,
    pub frac_recovers: f64,
    pub frac_alternate: f64,
    pub frac_diverges: f64,
    /// Most frequent label; ties go to the better regime.
    pub regime: Regime,
    pub dev_h0: Stats,
    pub dev_h1: Stats,
    pub dev_u: Stats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub worst: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats {
                mean: f64::NAN,
                median: f64::NAN,
                worst: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Stats {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            worst: v[n - 1],
        }
    }
}

/// Groups runs (sorted by η) into one row per distinct η.
pub fn aggregate(runs: &[SeedRun]) -> Vec<EtaRow> {
    let mut rows = Vec::new();
    let mut rest = runs;
    while let Some(first) = rest.first() {
        let len = rest.iter().take_while(|r| r.eta == first.eta).count();
        let (group, tail) = rest.split_at(len);
        rest = tail;
        let n = group.len() as f64;
        let count = |g: Regime| group.iter().filter(|r| r.regime == g).count();
        let (rec, alt, div) = (
            count(Regime::RecoversOriginal),
            count(Regime::AlternateSolution),
            count(Regime::Diverges),
        );
        let regime = if rec >= alt && rec >= div {
            Regime::RecoversOriginal
        } else if alt >= div {
            Regime::AlternateSolution
        } else {
            Regime::Diverges
        };
        let col = |f: fn(&SeedRun) -> f64| Stats::of(&group.iter().map(f).collect::<Vec<_>>());
        rows.push(EtaRow {
            eta: first.eta,
            n_runs: group.len(),
            frac_recovers: rec as f64 / n,
            frac_alternate: alt as f64 / n,
            frac_diverges: div as f64 / n,
            regime,
            dev_h0: col(|r| r.dev_h0),
            dev_h1: col(|r| r.dev_h1),
            dev_u: col(|r| r.dev_u),
        });
    }
    rows
}

pub const FIG2_HEADER: &str = "eta,n_runs,frac_recovers,frac_alternate,frac_diverges,regime,\
mean_dev_H0,median_dev_H0,worst_dev_H0,mean_dev_H1,median_dev_H1,worst_dev_H1,\
mean_dev_U,median_dev_U,worst_dev_U";

pub fn write_fig2<W: Write>(rows: &[EtaRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{FIG2_HEADER}")?;
    for r in rows {
        write!(
            w,
            "{},{},{},{},{},{}",
            fmt_sig(r.eta),
            r.n_runs,
            fmt_sig(r.frac_recovers),
            fmt_sig(r.frac_alternate),
            fmt_sig(r.frac_diverges),
            r.regime.name()
        )?;
        for s in [r.dev_h0, r.dev_h1, r.dev_u] {
            write!(
                w,
                ",{},{},{}",
                fmt_sig(s.mean),
                fmt_sig(s.median),
                fmt_sig(s.worst)
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub const FIG2_RAW_HEADER: &str =
    "eta,seed,converged,convergence,iterations,dev_H0,dev_H1,dev_U,regime";

pub fn write_fig2_raw<W: Write>(runs: &[SeedRun], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{FIG2_RAW_HEADER}")?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_sig(r.eta),
            r.seed,
            r.report.convergence == hamid_core::Convergence::Converged,
            convergence_name(r.report.convergence),
            r.report.iterations(),
            fmt_sig(r.dev_h0),
            fmt_sig(r.dev_h1),
            fmt_sig(r.dev_u),
            r.regime.name()
        )?;
    }
    Ok(())
}
