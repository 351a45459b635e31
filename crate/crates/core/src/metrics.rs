//! Trajectory error metrics computed from run logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::RunLog;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run log is empty")]
    EmptyLog,
    #[error("run log carries no ground truth; only status metrics are available")]
    MissingTruth,
}

/// Per-axis and aggregate error metrics over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Root mean square position error per axis (m).
    pub rmse: [f64; 3],
    /// Mean absolute position error per axis (m).
    pub mae: [f64; 3],
    /// Largest 3D position error over the run (m).
    pub max_error: f64,
    /// RMSE of the 3D position error norm (m).
    pub ate: f64,
    /// Mean solve wall time per tick (ms).
    pub mean_solve_ms: f64,
    /// Share of ticks without a valid visual detection (%).
    pub visual_loss_pct: f64,
    pub ticks: usize,
    /// Metrics restricted to ticks at or after this time (s).
    pub from_time_s: f64,
}

/// Computes metrics over all ticks with `t >= from_time_s` (warm-up skip).
pub fn compute_metrics(log: &RunLog, from_time_s: f64) -> Result<MetricsReport, MetricsError> {
    if log.ticks.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let selected: Vec<_> = log.ticks.iter().filter(|r| r.t >= from_time_s).collect();
    if selected.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    if selected.iter().any(|r| r.truth.is_none()) {
        return Err(MetricsError::MissingTruth);
    }

    let n = selected.len() as f64;
    let mut sq = [0.0; 3];
    let mut abs = [0.0; 3];
    let mut sq_norm = 0.0;
    let mut max_error: f64 = 0.0;
    let mut solve_ms = 0.0;
    let mut lost = 0usize;
    for rec in &selected {
        let truth = rec.truth.expect("checked above");
        let mut norm2 = 0.0;
        for axis in 0..3 {
            let e = rec.estimate[axis] - truth[axis];
            sq[axis] += e * e;
            abs[axis] += e.abs();
            norm2 += e * e;
        }
        sq_norm += norm2;
        max_error = max_error.max(norm2.sqrt());
        solve_ms += rec.solve_ms;
        if !rec.detection_ok {
            lost += 1;
        }
    }
    Ok(MetricsReport {
        rmse: [
            (sq[0] / n).sqrt(),
            (sq[1] / n).sqrt(),
            (sq[2] / n).sqrt(),
        ],
        mae: [abs[0] / n, abs[1] / n, abs[2] / n],
        max_error,
        ate: (sq_norm / n).sqrt(),
        mean_solve_ms: solve_ms / n,
        visual_loss_pct: 100.0 * lost as f64 / n,
        ticks: selected.len(),
        from_time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{BundleRecord, TickRecord, WeightRecord};

    fn record(t: f64, estimate: [f64; 6], truth: Option<[f64; 6]>) -> TickRecord {
        TickRecord {
            t,
            truth,
            estimate,
            prior: estimate,
            gimbal_pan: 0.0,
            gimbal_tilt: 0.0,
            bundle: BundleRecord::default(),
            weights: WeightRecord::default(),
            detection_ok: true,
            solver_ok: true,
            degraded: false,
            solve_ms: 1.0,
        }
    }

    #[test]
    fn constant_offset_metrics() {
        let ticks: Vec<TickRecord> = (0..100)
            .map(|k| {
                let t = k as f64 * 0.04;
                record(t, [0.1, 0.0, 0.0, 0.0, 0.0, 0.0], Some([0.0; 6]))
            })
            .collect();
        let log = RunLog { ticks, samples: Vec::new() };
        let m = compute_metrics(&log, 0.0).unwrap();
        assert!((m.rmse[0] - 0.1).abs() < 1e-12);
        assert!((m.mae[0] - 0.1).abs() < 1e-12);
        assert!((m.ate - 0.1).abs() < 1e-12);
        assert!((m.max_error - 0.1).abs() < 1e-12);
        assert_eq!(m.visual_loss_pct, 0.0);
    }

    #[test]
    fn zero_error_metrics() {
        let ticks: Vec<TickRecord> =
            (0..10).map(|k| record(k as f64, [0.0; 6], Some([0.0; 6]))).collect();
        let log = RunLog { ticks, samples: Vec::new() };
        let m = compute_metrics(&log, 0.0).unwrap();
        assert_eq!(m.rmse, [0.0; 3]);
        assert_eq!(m.mae, [0.0; 3]);
        assert_eq!(m.ate, 0.0);
    }

    #[test]
    fn known_injected_errors_match_hand_computation() {
        // Independent spreadsheet-style accumulation with fixed errors.
        let errors = [0.1, -0.2, 0.3, 0.0, 0.05];
        let ticks: Vec<TickRecord> = errors
            .iter()
            .enumerate()
            .map(|(k, e)| record(k as f64, [*e, 0.0, 0.0, 0.0, 0.0, 0.0], Some([0.0; 6])))
            .collect();
        let log = RunLog { ticks, samples: Vec::new() };
        let m = compute_metrics(&log, 0.0).unwrap();

        let n = errors.len() as f64;
        let mut sum_sq = 0.0;
        let mut sum_abs = 0.0;
        let mut max_e: f64 = 0.0;
        for e in errors {
            sum_sq += e * e;
            sum_abs += e.abs();
            max_e = max_e.max(e.abs());
        }
        assert!((m.rmse[0] - (sum_sq / n).sqrt()).abs() < 1e-15);
        assert!((m.mae[0] - sum_abs / n).abs() < 1e-15);
        assert!((m.ate - (sum_sq / n).sqrt()).abs() < 1e-15);
        assert!((m.max_error - max_e).abs() < 1e-15);
    }

    #[test]
    fn missing_truth_is_refused() {
        let ticks = vec![record(0.0, [0.0; 6], None)];
        let log = RunLog { ticks, samples: Vec::new() };
        assert!(matches!(compute_metrics(&log, 0.0), Err(MetricsError::MissingTruth)));
    }
}
