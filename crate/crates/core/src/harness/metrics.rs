//! Scalar summaries of a run.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::run::RunRecord;

/// Slack on window edges so rows at `k·dt` are not lost to round-off.
const TIME_EPS: f64 = 1e-9;

/// RMS position error between truth and ensemble mean of `target`
/// (0-based) over rows with `window.0 ≤ t ≤ window.1`.
pub fn compute_rmse(record: &RunRecord, window: (f64, f64), target: usize) -> Result<f64> {
    let (lo, hi) = window;
    if !(lo <= hi) || lo < -TIME_EPS || hi > record.config.horizon + TIME_EPS {
        return Err(Error::invalid(format!("window [{lo}, {hi}] is not inside [0, T]")));
    }
    if target >= record.config.kind.num_targets() {
        return Err(Error::invalid(format!("no target {target}")));
    }
    let errs: Vec<f64> = record
        .rows
        .iter()
        .filter(|r| r.time >= lo - TIME_EPS && r.time <= hi + TIME_EPS)
        .map(|r| r.est_mean[target][0] - r.truth[target][0])
        .collect();
    if errs.is_empty() {
        return Err(Error::invalid(format!("no rows in window [{lo}, {hi}]")));
    }
    Ok((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coalescence {
    /// Time of the last sign change of the true position difference.
    pub crossing_time: Option<f64>,
    /// Smallest distance between the two estimated positions over the
    /// post-crossing window.
    pub min_distance: f64,
    /// Each estimate is strictly nearer its own truth than the other at `T`.
    pub identity_correct: bool,
}

/// Track-coalescence summary of a two-target record.
///
/// The post-crossing window opens once the true separation has regained
/// half of its final value after the last crossing, so the unavoidable
/// meeting at the crossing itself is not counted.
pub fn coalescence_metric(record: &RunRecord) -> Coalescence {
    let rows = &record.rows;
    let pos = |r: &crate::harness::run::StepRecord, n: usize| (r.truth[n][0], r.est_mean[n][0]);
    if rows.is_empty() || rows[0].truth.len() < 2 {
        return Coalescence {
            crossing_time: None,
            min_distance: f64::NAN,
            identity_correct: false,
        };
    }
    let gap: Vec<f64> = rows.iter().map(|r| pos(r, 0).0 - pos(r, 1).0).collect();
    let crossing = (1..rows.len()).rev().find(|&k| gap[k].signum() != gap[k - 1].signum());
    let final_sep = gap[gap.len() - 1].abs();
    let start = crossing.unwrap_or(0);
    let open = (start..rows.len())
        .find(|&k| gap[k].abs() >= 0.5 * final_sep)
        .unwrap_or(rows.len() - 1);
    let min_distance = rows[open..]
        .iter()
        .map(|r| (pos(r, 0).1 - pos(r, 1).1).abs())
        .fold(f64::INFINITY, f64::min);
    let last = &rows[rows.len() - 1];
    let (t1, e1) = pos(last, 0);
    let (t2, e2) = pos(last, 1);
    let identity_correct = (e1 - t1).abs() < (e1 - t2).abs() && (e2 - t2).abs() < (e2 - t1).abs();
    Coalescence {
        crossing_time: crossing.map(|k| rows[k].time),
        min_distance,
        identity_correct,
    }
}
