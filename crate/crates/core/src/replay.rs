//! CSV export and replay.
//!
//! Two file schemas: a raw sample log (`t, sensor_id, v1, v2, v3, valid`) with
//! one row per delivered sensor sample, and a per-tick run log with the
//! estimates, weights and statuses. Floats are written in the shortest
//! round-trippable decimal form, so a simulator export replayed through the
//! same synchronization buffer reproduces the estimates bit for bit.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector6};
use thiserror::Error;

use crate::dynamics::{DynamicsParams, ImuSample};
use crate::estimator::{Estimator, SolveStatus};
use crate::geometry::UnitQuat;
use crate::scenario::{BundleRecord, RunLog, RunMode, ScenarioConfig, TickRecord, WeightRecord};
use crate::sensors::{RawKind, RawSample, SyncBuffer};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sample log unusable: {skipped} of {total} rows malformed")]
    TooManyMalformed { skipped: usize, total: usize },
    #[error("sample log is empty")]
    EmptyLog,
    #[error("run log header mismatch: {0}")]
    HeaderMismatch(String),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
}

fn kind_str(kind: RawKind) -> &'static str {
    match kind {
        RawKind::ImuAcc => "imu_acc",
        RawKind::ImuAtt => "imu_att",
        RawKind::Uwb => "uwb",
        RawKind::Optical => "optical",
        RawKind::Altimeter => "altimeter",
        RawKind::Camera => "camera",
        RawKind::UgvVel => "ugv_vel",
        RawKind::PlannerPos => "planner_pos",
        RawKind::PlannerVel => "planner_vel",
        RawKind::TruthPos => "truth_pos",
        RawKind::TruthVel => "truth_vel",
    }
}

fn kind_from_str(s: &str) -> Option<RawKind> {
    Some(match s {
        "imu_acc" => RawKind::ImuAcc,
        "imu_att" => RawKind::ImuAtt,
        "uwb" => RawKind::Uwb,
        "optical" => RawKind::Optical,
        "altimeter" => RawKind::Altimeter,
        "camera" => RawKind::Camera,
        "ugv_vel" => RawKind::UgvVel,
        "planner_pos" => RawKind::PlannerPos,
        "planner_vel" => RawKind::PlannerVel,
        "truth_pos" => RawKind::TruthPos,
        "truth_vel" => RawKind::TruthVel,
        _ => return None,
    })
}

pub const SAMPLES_HEADER: &str = "t,sensor_id,v1,v2,v3,valid";

/// Writes the raw sample log.
pub fn write_samples_csv(path: &Path, samples: &[RawSample]) -> Result<(), ReplayError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{SAMPLES_HEADER}")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.t,
            kind_str(s.kind),
            s.values[0],
            s.values[1],
            s.values[2],
            if s.valid { 1 } else { 0 }
        )?;
    }
    Ok(())
}

/// Reads a raw sample log. Malformed rows are skipped and counted; more than
/// five percent skipped aborts the read.
pub fn read_samples_csv(path: &Path) -> Result<(Vec<RawSample>, usize), ReplayError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != SAMPLES_HEADER {
                return Err(ReplayError::HeaderMismatch(line));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_sample_row(&line) {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    if total == 0 {
        return Err(ReplayError::EmptyLog);
    }
    if skipped * 20 > total {
        return Err(ReplayError::TooManyMalformed { skipped, total });
    }
    Ok((samples, skipped))
}

fn parse_sample_row(line: &str) -> Option<RawSample> {
    let mut parts = line.split(',');
    let t: f64 = parts.next()?.trim().parse().ok()?;
    let kind = kind_from_str(parts.next()?.trim())?;
    let v1: f64 = parts.next()?.trim().parse().ok()?;
    let v2: f64 = parts.next()?.trim().parse().ok()?;
    let v3: f64 = parts.next()?.trim().parse().ok()?;
    let valid = match parts.next()?.trim() {
        "1" | "true" => true,
        "0" | "false" => false,
        _ => return None,
    };
    if parts.next().is_some() || !t.is_finite() {
        return None;
    }
    Some(RawSample::new(t, kind, [v1, v2, v3], valid))
}

/// Drives the estimator from a recorded sample stream; the simulator is
/// bypassed entirely. Tick times follow the configured grid up to the last
/// recorded sample, so a truncated file yields a clean partial run.
pub fn replay(samples: &[RawSample], cfg: &ScenarioConfig, mode: RunMode) -> Result<RunLog, ReplayError> {
    cfg.validate().map_err(crate::scenario::ScenarioError::from)?;
    if samples.is_empty() {
        return Err(ReplayError::EmptyLog);
    }
    let mut drag = cfg.drag_mu;
    if let Some(mu) = mode.mu_override() {
        drag = mu;
    }
    let dynamics = DynamicsParams::new(Vector3::from_column_slice(&drag), cfg.window.dt, cfg.gravity)
        .map_err(crate::scenario::ScenarioError::from)?;
    let mut estimator = Estimator::new(cfg.window, dynamics, cfg.confidence.clone(), mode.estimator_options())
        .map_err(crate::scenario::ScenarioError::from)?;
    let mut buffer = SyncBuffer::new(cfg.window.dt, cfg.h_g, &cfg.noise);

    let dt = cfg.window.dt;
    let max_t = samples.iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    let mut log = RunLog::default();
    let mut cursor = 0usize;
    let mut pending_acc: Option<(f64, [f64; 3])> = None;
    let mut v_ugv = Vector3::zeros();
    let mut planner_pos: Option<[f64; 3]> = None;
    let mut planner_vel: Option<[f64; 3]> = None;
    let mut planner_t = f64::NEG_INFINITY;
    let mut truth_pos: Option<[f64; 3]> = None;
    let mut truth_vel: Option<[f64; 3]> = None;
    let mut truth_t = f64::NEG_INFINITY;

    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        if t > max_t + 1e-9 {
            break;
        }
        while cursor < samples.len() && samples[cursor].t <= t + 1e-12 {
            let row = &samples[cursor];
            cursor += 1;
            match row.kind {
                RawKind::ImuAcc => pending_acc = Some((row.t, row.values)),
                RawKind::ImuAtt => {
                    if let Some((ta, acc)) = pending_acc.take() {
                        if (ta - row.t).abs() < 1e-12 {
                            let q = UnitQuat::from_rotation_vector(&Vector3::from_column_slice(&row.values));
                            buffer.push_imu(ImuSample {
                                a: Vector3::from_column_slice(&acc),
                                q,
                                t: row.t,
                            });
                        }
                    }
                }
                RawKind::Uwb => buffer.push_uwb(row.t, row.values[0]),
                RawKind::Optical => buffer.push_optical(row.t, Vector3::from_column_slice(&row.values)),
                RawKind::Altimeter => buffer.push_altimeter(row.t, row.values[0]),
                RawKind::Camera => {
                    buffer.push_camera(row.t, Vector3::from_column_slice(&row.values), row.valid)
                }
                RawKind::UgvVel => v_ugv = Vector3::from_column_slice(&row.values),
                RawKind::PlannerPos => {
                    planner_pos = Some(row.values);
                    planner_t = row.t;
                }
                RawKind::PlannerVel => planner_vel = Some(row.values),
                RawKind::TruthPos => {
                    truth_pos = Some(row.values);
                    truth_t = row.t;
                }
                RawKind::TruthVel => truth_vel = Some(row.values),
            }
        }

        let (bundle, imu_batch, _degraded) = buffer.build_bundle(t, &v_ugv);
        let reference_available = planner_t >= t - 0.5 * dt;
        let x_bar = match (planner_pos, planner_vel) {
            (Some(p), Some(v)) => Vector6::new(p[0], p[1], p[2], v[0], v[1], v[2]),
            _ => Vector6::zeros(),
        };
        let out = estimator.step(t, &bundle, &imu_batch, &x_bar, reference_available);
        let estimate = out.states.last().copied().expect("non-empty window");

        let truth = match (truth_pos, truth_vel) {
            (Some(p), Some(v)) if truth_t >= t - 0.5 * dt => {
                Some([p[0], p[1], p[2], v[0], v[1], v[2]])
            }
            _ => None,
        };
        log.ticks.push(TickRecord {
            t,
            truth,
            estimate: [estimate[0], estimate[1], estimate[2], estimate[3], estimate[4], estimate[5]],
            prior: [out.prior[0], out.prior[1], out.prior[2], out.prior[3], out.prior[4], out.prior[5]],
            gimbal_pan: 0.0,
            gimbal_tilt: 0.0,
            bundle: BundleRecord {
                uwb_range: bundle.uwb_range,
                uwb_valid: bundle.uwb_valid,
                opt: [bundle.opt_velocity.x, bundle.opt_velocity.y, bundle.opt_velocity.z],
                opt_valid: bundle.opt_valid,
                alt: bundle.alt,
                alt_valid: bundle.alt_valid,
                cam: [bundle.cam_position.x, bundle.cam_position.y, bundle.cam_position.z],
                cam_valid: bundle.cam_valid,
            },
            weights: WeightRecord {
                transfer_trace: out.weights.transfer.sum(),
                uwb: out.weights.uwb,
                alt: out.weights.altimeter,
                opt: [out.weights.optical.x, out.weights.optical.y, out.weights.optical.z],
                cam: [out.weights.camera.x, out.weights.camera.y, out.weights.camera.z],
            },
            detection_ok: bundle.cam_valid,
            solver_ok: out.status == SolveStatus::Ok,
            degraded: out.weights.degraded,
            solve_ms: out.solve_ms,
        });
        k += 1;
    }
    if log.ticks.is_empty() {
        return Err(ReplayError::EmptyLog);
    }
    Ok(log)
}

pub const RUN_LOG_HEADER: &str = "t,truth_px,truth_py,truth_pz,truth_vx,truth_vy,truth_vz,\
est_px,est_py,est_pz,est_vx,est_vy,est_vz,\
prior_px,prior_py,prior_pz,prior_vx,prior_vy,prior_vz,\
gimbal_pan,gimbal_tilt,\
uwb_range,uwb_valid,opt_x,opt_y,opt_z,opt_valid,alt,alt_valid,cam_x,cam_y,cam_z,cam_valid,\
w_transfer,w_uwb,w_alt,w_opt_x,w_opt_y,w_opt_z,w_cam_x,w_cam_y,w_cam_z,\
detection_ok,solver_ok,degraded,solve_ms";

/// Writes the per-tick run log.
pub fn write_run_log_csv(path: &Path, log: &RunLog) -> Result<(), ReplayError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{RUN_LOG_HEADER}")?;
    for r in &log.ticks {
        let truth = match &r.truth {
            Some(t) => t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            None => ",,,,,".to_string(),
        };
        let flag = |b: bool| if b { "1" } else { "0" };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            truth,
            r.estimate.map(|v| v.to_string()).join(","),
            r.prior.map(|v| v.to_string()).join(","),
            r.gimbal_pan,
            r.gimbal_tilt,
            r.bundle.uwb_range,
            flag(r.bundle.uwb_valid),
            r.bundle.opt.map(|v| v.to_string()).join(","),
            flag(r.bundle.opt_valid),
            r.bundle.alt,
            flag(r.bundle.alt_valid),
            r.bundle.cam.map(|v| v.to_string()).join(","),
            flag(r.bundle.cam_valid),
            r.weights.transfer_trace,
            r.weights.uwb,
            r.weights.alt,
            r.weights.opt.map(|v| v.to_string()).join(","),
            r.weights.cam.map(|v| v.to_string()).join(","),
            flag(r.detection_ok),
            flag(r.solver_ok),
            flag(r.degraded),
            r.solve_ms,
        )?;
    }
    Ok(())
}

/// Reads a per-tick run log written by [`write_run_log_csv`].
pub fn read_run_log_csv(path: &Path) -> Result<RunLog, ReplayError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut log = RunLog::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != RUN_LOG_HEADER {
                return Err(ReplayError::HeaderMismatch(line));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 46 {
            return Err(ReplayError::HeaderMismatch(format!("row with {} fields", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| ReplayError::HeaderMismatch(s.to_string()));
        let flag = |s: &str| s.trim() == "1";
        let truth = if f[1].is_empty() {
            None
        } else {
            let mut arr = [0.0; 6];
            for (a, s) in arr.iter_mut().zip(&f[1..7]) {
                *a = num(s)?;
            }
            Some(arr)
        };
        let arr6 = |slice: &[&str]| -> Result<[f64; 6], ReplayError> {
            let mut arr = [0.0; 6];
            for (a, s) in arr.iter_mut().zip(slice) {
                *a = num(s)?;
            }
            Ok(arr)
        };
        let arr3 = |slice: &[&str]| -> Result<[f64; 3], ReplayError> {
            let mut arr = [0.0; 3];
            for (a, s) in arr.iter_mut().zip(slice) {
                *a = num(s)?;
            }
            Ok(arr)
        };
        log.ticks.push(TickRecord {
            t: num(f[0])?,
            truth,
            estimate: arr6(&f[7..13])?,
            prior: arr6(&f[13..19])?,
            gimbal_pan: num(f[19])?,
            gimbal_tilt: num(f[20])?,
            bundle: BundleRecord {
                uwb_range: num(f[21])?,
                uwb_valid: flag(f[22]),
                opt: arr3(&f[23..26])?,
                opt_valid: flag(f[26]),
                alt: num(f[27])?,
                alt_valid: flag(f[28]),
                cam: arr3(&f[29..32])?,
                cam_valid: flag(f[32]),
            },
            weights: WeightRecord {
                transfer_trace: num(f[33])?,
                uwb: num(f[34])?,
                alt: num(f[35])?,
                opt: arr3(&f[36..39])?,
                cam: arr3(&f[39..42])?,
            },
            detection_ok: flag(f[42]),
            solver_ok: flag(f[43]),
            degraded: flag(f[44]),
            solve_ms: num(f[45])?,
        });
    }
    Ok(log)
}
