//! `run.csv`, `config.echo.json` and figure data files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::{Oracle, ScenarioConfig, ScenarioKind};
use crate::harness::run::{RunRecord, StepRecord};

/// Shortest format that round-trips any `f64`: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn state_labels(kind: ScenarioKind, dim: usize) -> Vec<String> {
    match (kind, dim) {
        (ScenarioKind::PdaClutter | ScenarioKind::JpdaTwoTarget, _) => vec!["pos".into(), "vel".into()],
        (_, 1) => vec![String::new()],
        _ => (1..=dim).map(|k| format!("x{k}")).collect(),
    }
}

fn join(prefix: &str, label: &str) -> String {
    if label.is_empty() {
        prefix.to_string()
    } else {
        format!("{prefix}_{label}")
    }
}

/// Column names for a configuration; fixed order per scenario kind, with
/// enabled oracles appended as kalman, grid, wonham.
pub fn columns(cfg: &ScenarioConfig) -> Vec<String> {
    let dim = cfg.model.sigma_b.len();
    let labels = state_labels(cfg.kind, dim);
    let two = cfg.kind.num_targets() == 2;
    let tag = |base: &str, n: usize| {
        if two {
            format!("{base}{}", n + 1)
        } else {
            base.to_string()
        }
    };
    let targets = cfg.kind.num_targets();
    let oracles = cfg.oracle_set();

    let mut cols = vec!["time".to_string()];
    for n in 0..targets {
        cols.extend(labels.iter().map(|l| join(&tag("truth", n), l)));
    }
    cols.extend((1..=cfg.channels).map(|m| format!("meas_{m}")));
    for n in 0..targets {
        cols.extend(labels.iter().map(|l| join(&tag("est", n), l)));
        if cfg.kind != ScenarioKind::PdaClutter && !two {
            cols.push(join(&tag("est", n), "var"));
        }
    }
    if two {
        cols.extend(["pi_1".to_string(), "pi_2".to_string()]);
    } else {
        cols.extend((0..=cfg.channels).map(|m| format!("beta_{m}")));
    }
    for o in &oracles {
        match o {
            Oracle::Kalman => {
                for n in 0..targets {
                    cols.extend(labels.iter().map(|l| join(&tag("kalman", n), l)));
                    if !two && cfg.kind != ScenarioKind::PdaClutter {
                        cols.push(join(&tag("kalman", n), "var"));
                    }
                }
            }
            Oracle::Grid => {
                cols.push("grid".into());
                cols.push("grid_var".into());
            }
            Oracle::Wonham => {
                if two {
                    cols.extend(["wonham_1".to_string(), "wonham_2".to_string()]);
                } else {
                    cols.extend((0..=cfg.channels).map(|m| format!("wonham_{m}")));
                }
            }
        }
    }
    cols
}

fn row_values(cfg: &ScenarioConfig, r: &StepRecord) -> Vec<f64> {
    let two = cfg.kind.num_targets() == 2;
    let with_var = !two && cfg.kind != ScenarioKind::PdaClutter;
    let mut v = vec![r.time];
    for x in &r.truth {
        v.extend_from_slice(x);
    }
    v.extend_from_slice(&r.meas);
    for (n, x) in r.est_mean.iter().enumerate() {
        v.extend_from_slice(x);
        if with_var {
            v.push(r.est_var[n]);
        }
    }
    v.extend_from_slice(&r.belief);
    for o in cfg.oracle_set() {
        match o {
            Oracle::Kalman => {
                for (n, x) in r.kalman_mean.iter().enumerate() {
                    v.extend_from_slice(x);
                    if with_var {
                        v.push(r.kalman_var[n]);
                    }
                }
            }
            Oracle::Grid => {
                let (m, s) = r.grid.unwrap_or((f64::NAN, f64::NAN));
                v.extend([m, s]);
            }
            Oracle::Wonham => match &r.wonham {
                Some(q) => v.extend_from_slice(q),
                None => v.extend(std::iter::repeat_n(f64::NAN, if two { 2 } else { cfg.channels + 1 })),
            },
        }
    }
    v
}

pub fn run_csv(record: &RunRecord) -> String {
    let mut out = columns(&record.config).join(",");
    out.push('\n');
    for r in &record.rows {
        let vals: Vec<String> = row_values(&record.config, r).into_iter().map(fmt_f64).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Single-target layout: trajectory plus every measurement tagged with
/// its true origin.
fn fig1(record: &RunRecord) -> (String, String) {
    let mut traj = String::from("time,truth_pos,est_pos\n");
    let mut meas = String::from("time,channel,value,origin\n");
    for r in &record.rows {
        let _ = writeln!(
            traj,
            "{},{},{}",
            fmt_f64(r.time),
            fmt_f64(r.truth[0][0]),
            fmt_f64(r.est_mean[0][0])
        );
        for (m, z) in r.meas.iter().enumerate() {
            let origin = if r.association == m + 1 { "target" } else { "clutter" };
            let _ = writeln!(meas, "{},{},{},{origin}", fmt_f64(r.time), m + 1, fmt_f64(*z));
        }
    }
    (traj, meas)
}

/// Two-target layout: (a) positions, (b) association probabilities.
fn fig2(record: &RunRecord) -> (String, String) {
    let mut a = String::from("time,truth1_pos,truth2_pos,est1_pos,est2_pos\n");
    let mut b = String::from("time,pi_1,pi_2\n");
    for r in &record.rows {
        let _ = writeln!(
            a,
            "{},{},{},{},{}",
            fmt_f64(r.time),
            fmt_f64(r.truth[0][0]),
            fmt_f64(r.truth[1][0]),
            fmt_f64(r.est_mean[0][0]),
            fmt_f64(r.est_mean[1][0])
        );
        let _ = writeln!(
            b,
            "{},{},{}",
            fmt_f64(r.time),
            fmt_f64(r.belief[0]),
            fmt_f64(r.belief[1])
        );
    }
    (a, b)
}

/// Writes `run.csv`, `config.echo.json` and the figure files for the
/// scenario kind into `dir` (created if missing). Returns the paths written.
pub fn emit_outputs(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![
        write(dir.join("run.csv"), &run_csv(record))?,
        write(dir.join("config.echo.json"), &(record.config.to_json() + "\n"))?,
    ];
    match record.config.kind {
        ScenarioKind::PdaClutter => {
            let (t, m) = fig1(record);
            written.push(write(dir.join("fig1_trajectory.csv"), &t)?);
            written.push(write(dir.join("fig1_measurements.csv"), &m)?);
        }
        ScenarioKind::JpdaTwoTarget => {
            let (a, b) = fig2(record);
            written.push(write(dir.join("fig2a_tracks.csv"), &a)?);
            written.push(write(dir.join("fig2b_association.csv"), &b)?);
        }
        _ => {}
    }
    Ok(written)
}
