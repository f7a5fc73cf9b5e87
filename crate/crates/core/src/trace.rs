//! CSV export of run traces and the delay sweep.
//!
//! `steps.csv` columns: `t, x0..x2, h, t_pred, xp0..xp2, u_nom0, u0, d_hat,
//! rho, lo, hi, d_tilde_max, e_max, delta_y_max, e_tj_max, d_e, d_e_ref,
//! feasible, slack, obs_d_hat, d_true, envelope`.
//!
//! `epochs.csv` columns: `epoch, t, lo, hi, d_tilde_max, residual_b,
//! disturbance_term, total, ep_true, premise, e_tj_max_lit, diagnostic`.
//!
//! `summary.csv` is one header row and one value row. Reals are written in
//! scientific notation with 17 significant digits.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{Mode, RunConfig};
use crate::sim::{run, RunTrace, SimError, Summary};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn flag(b: bool) -> String {
    (b as u8).to_string()
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "mode",
    "true_delay",
    "avg_h",
    "min_h",
    "infeasible_steps",
    "final_lo",
    "final_hi",
    "final_d_tilde_max",
    "epochs",
    "premise_failures",
    "empty_updates",
    "max_abs_rho",
    "observed_udot_max",
    "envelope_violations",
    "version",
];

fn summary_row(s: &Summary) -> Vec<String> {
    vec![
        s.mode.to_string(),
        num(s.true_delay),
        num(s.avg_h),
        num(s.min_h),
        s.infeasible_steps.to_string(),
        num(s.final_lo),
        num(s.final_hi),
        num(s.final_d_tilde_max),
        s.epochs.to_string(),
        s.premise_failures.to_string(),
        s.empty_updates.to_string(),
        num(s.max_abs_rho),
        num(s.observed_udot_max),
        s.envelope_violations.to_string(),
        env!("CARGO_PKG_VERSION").to_string(),
    ]
}

/// Writes `header.toml`, `steps.csv`, `epochs.csv` and `summary.csv` into `dir`.
pub fn export(trace: &RunTrace, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let header = format!("# dacbf {}\n{}", trace.version, trace.config.to_toml_string());
    fs::write(dir.join("header.toml"), header)?;

    let n = trace.steps.first().map_or(3, |s| s.x.len());
    let m = trace.steps.first().map_or(1, |s| s.u.len());
    let mut w = csv::Writer::from_path(dir.join("steps.csv"))?;
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed("x", n));
    cols.push("h".into());
    cols.push("t_pred".into());
    cols.extend(indexed("xp", n));
    cols.extend(indexed("u_nom", m));
    cols.extend(indexed("u", m));
    for c in [
        "d_hat",
        "rho",
        "lo",
        "hi",
        "d_tilde_max",
        "e_max",
        "delta_y_max",
        "e_tj_max",
        "d_e",
        "d_e_ref",
        "feasible",
        "slack",
        "obs_d_hat",
        "d_true",
        "envelope",
    ] {
        cols.push(c.into());
    }
    w.write_record(&cols)?;
    for s in &trace.steps {
        let mut row = vec![num(s.t)];
        row.extend(s.x.iter().map(|v| num(*v)));
        row.push(num(s.h));
        row.push(num(s.t_pred));
        row.extend(s.x_pred.iter().map(|v| num(*v)));
        row.extend(s.u_nom.iter().map(|v| num(*v)));
        row.extend(s.u.iter().map(|v| num(*v)));
        row.extend([
            num(s.d_hat),
            num(s.rho),
            num(s.lo),
            num(s.hi),
            num(s.d_tilde_max),
            num(s.e_max_val),
            num(s.delta_y_max),
            num(s.e_tj_max),
            num(s.d_e),
            num(s.d_e_ref),
            flag(s.feasible),
            num(s.slack),
            num(s.obs_d_hat),
            num(s.d_true),
            num(s.envelope),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("epochs.csv"))?;
    w.write_record([
        "epoch",
        "t",
        "lo",
        "hi",
        "d_tilde_max",
        "residual_b",
        "disturbance_term",
        "total",
        "ep_true",
        "premise",
        "e_tj_max_lit",
        "diagnostic",
    ])?;
    for e in &trace.epochs {
        w.write_record([
            e.epoch.to_string(),
            num(e.t),
            num(e.lo),
            num(e.hi),
            num(e.d_tilde_max),
            num(e.residual_b),
            num(e.disturbance_term),
            num(e.total),
            num(e.ep_true),
            flag(e.premise),
            num(e.e_tj_max_lit),
            e.diagnostic.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(SUMMARY_COLUMNS)?;
    w.write_record(summary_row(&trace.summary))?;
    w.flush()?;
    Ok(())
}

/// Reads one numeric column of a CSV file written by [`export`].
pub fn read_column(path: &Path, name: &str) -> Result<Vec<f64>, SimError> {
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("no column `{name}`")))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[idx]
            .parse()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{name}: {e}")))?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct SweepCell {
    pub delay: f64,
    pub mode: Mode,
    pub result: Result<Summary, String>,
}

#[derive(Debug)]
pub struct SweepTable {
    pub delays: Vec<f64>,
    pub modes: Vec<Mode>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, delay: f64, mode: Mode) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.mode == mode && c.delay == delay)
    }

    /// Mean `avg_h` of a mode over all delays; `None` if any cell failed.
    pub fn mode_average(&self, mode: Mode) -> Option<f64> {
        let vals: Option<Vec<f64>> = self
            .delays
            .iter()
            .map(|d| {
                self.cell(*d, mode)
                    .and_then(|c| c.result.as_ref().ok())
                    .map(|s| s.avg_h)
            })
            .collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Plain-text table: one row per mode, one column per delay plus the
    /// average, then the proposed/baseline ratio row when both are present.
    pub fn render(&self) -> String {
        let mut out = format!("{:<16}", "delay (s)");
        for d in &self.delays {
            out += &format!("{:>10.2}", d);
        }
        out += &format!("{:>10}\n", "avg");
        for m in &self.modes {
            out += &format!("{:<16}", m.as_str());
            for d in &self.delays {
                match self.cell(*d, *m).map(|c| &c.result) {
                    Some(Ok(s)) => out += &format!("{:>10.3}", s.avg_h),
                    _ => out += &format!("{:>10}", "failed"),
                }
            }
            match self.mode_average(*m) {
                Some(a) => out += &format!("{:>10.3}\n", a),
                None => out += &format!("{:>10}\n", "-"),
            }
        }
        if self.modes.contains(&Mode::Proposed) && self.modes.contains(&Mode::DacbfBaseline) {
            out += &format!("{:<16}", "ratio");
            for d in &self.delays {
                let p = self.cell(*d, Mode::Proposed).and_then(|c| c.result.as_ref().ok());
                let b = self.cell(*d, Mode::DacbfBaseline).and_then(|c| c.result.as_ref().ok());
                match (p, b) {
                    (Some(p), Some(b)) => out += &format!("{:>10.3}", p.avg_h / b.avg_h),
                    _ => out += &format!("{:>10}", "-"),
                }
            }
            match (
                self.mode_average(Mode::Proposed),
                self.mode_average(Mode::DacbfBaseline),
            ) {
                (Some(p), Some(b)) => out += &format!("{:>10.3}\n", p / b),
                _ => out += &format!("{:>10}\n", "-"),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut cols: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
        cols.push("error".into());
        w.write_record(&cols)?;
        for c in &self.cells {
            match &c.result {
                Ok(s) => {
                    let mut row = summary_row(s);
                    row.push(String::new());
                    w.write_record(&row)?;
                }
                Err(e) => {
                    let mut row = vec![String::new(); SUMMARY_COLUMNS.len()];
                    row[0] = c.mode.to_string();
                    row[1] = num(c.delay);
                    row.push(e.clone());
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every `(delay, mode)` cell in parallel. A failing cell is recorded
/// and does not stop its siblings.
pub fn sweep(base: &RunConfig, delays: &[f64], modes: &[Mode]) -> SweepTable {
    let jobs: Vec<(f64, Mode)> = modes
        .iter()
        .flat_map(|m| delays.iter().map(move |d| (*d, *m)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|(delay, mode)| {
            let mut cfg = base.clone();
            cfg.true_delay = *delay;
            cfg.mode = *mode;
            let result = run(&cfg).map(|t| t.summary).map_err(|e| e.to_string());
            SweepCell {
                delay: *delay,
                mode: *mode,
                result,
            }
        })
        .collect();
    SweepTable {
        delays: delays.to_vec(),
        modes: modes.to_vec(),
        cells,
    }
}
