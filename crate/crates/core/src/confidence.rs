//! Adaptive sliding confidence evaluation: per-sensor failure detection from
//! accumulated first differences, quality scoring of measurement jumps
//! through a sigmoid, moving variance against the planner reference, and the
//! trace-normalized weight assembly that distributes a fixed budget across
//! all sensor axes.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::sensors::{MeasurementBundle, SensorId};

/// Sensors participating in the weight normalization, in fusion order:
/// inertial (through the state transfer term), distance, altimeter, optical
/// flow, visual.
pub const FUSED_SENSORS: [SensorId; 5] = [
    SensorId::Imu,
    SensorId::Uwb,
    SensorId::Altimeter,
    SensorId::Optical,
    SensorId::Camera,
];

/// Feedback dimension per sensor (the inertial term weights the full state
/// transfer residual).
pub fn sensor_dim(sensor: SensorId) -> usize {
    match sensor {
        SensorId::Imu => 6,
        SensorId::Uwb | SensorId::Altimeter => 1,
        SensorId::Optical | SensorId::Camera => 3,
    }
}

fn sensor_slot(sensor: SensorId) -> usize {
    FUSED_SENSORS.iter().position(|s| *s == sensor).expect("fused sensor")
}

/// Per-sensor failure thresholds (accumulated absolute first differences
/// below the threshold flag the sensor as lost).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FailureThresholds {
    pub inertial: f64,
    pub uwb: f64,
    pub altimeter: f64,
    pub optical: f64,
    pub camera: f64,
}

impl FailureThresholds {
    pub fn get(&self, sensor: SensorId) -> f64 {
        match sensor {
            SensorId::Imu => self.inertial,
            SensorId::Uwb => self.uwb,
            SensorId::Altimeter => self.altimeter,
            SensorId::Optical => self.optical,
            SensorId::Camera => self.camera,
        }
    }
}

/// Preset constants of the confidence evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// Failure thresholds per sensor (sensor-native units).
    pub eps_f: FailureThresholds,
    /// Small constant marking a failed sensor.
    pub eps: f64,
    /// Sigmoid slope.
    pub m: f64,
    /// Sigmoid midpoint (sensor-native units).
    pub omega0: f64,
    /// Total weight budget distributed across all sensor axes.
    pub xi: f64,
    /// Evaluation window width (ticks).
    pub tw: usize,
    /// Constant prior weight diagonal entry.
    pub prior_weight: f64,
    /// Non-standard option: fail individual axes instead of the whole sensor
    /// on the min-rule.
    pub per_axis_failure: bool,
}

impl ConfidenceParams {
    /// Defaults tied to the simulator noise floor: a live sensor accumulates
    /// roughly `(tw+1) * sigma` of first differences, so one percent of that
    /// separates frozen from alive.
    pub fn defaults_for(tw: usize, noise: &crate::sensors::SensorNoiseSpec) -> Self {
        let scale = 0.01 * (tw + 1) as f64;
        Self {
            eps_f: FailureThresholds {
                inertial: scale * noise.imu.sigma.max(1e-3),
                uwb: scale * noise.uwb.sigma.max(1e-3),
                altimeter: scale * noise.altimeter.sigma.max(1e-3),
                optical: scale * noise.optical.sigma.max(1e-3),
                camera: scale * noise.camera.sigma.max(1e-3),
            },
            eps: 1e-6,
            m: 10.0,
            omega0: 0.5,
            xi: 10.0,
            tw,
            prior_weight: 0.1,
            per_axis_failure: false,
        }
    }
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self::defaults_for(8, &crate::sensors::SensorNoiseSpec::default())
    }
}

/// Diagonal confidence weights for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSet {
    pub prior: Vector6<f64>,
    pub transfer: Vector6<f64>,
    pub uwb: f64,
    pub altimeter: f64,
    pub optical: Vector3<f64>,
    pub camera: Vector3<f64>,
    /// All sensors failed; the solve falls back to prior-only weights.
    pub degraded: bool,
}

impl WeightSet {
    /// Measurement-row diagonal in the stacked order [UWB; OPT(3); ALT; CAM(3)].
    pub fn measurement_diag(&self) -> SVector<f64, 8> {
        SVector::<f64, 8>::from_column_slice(&[
            self.uwb,
            self.optical.x,
            self.optical.y,
            self.optical.z,
            self.altimeter,
            self.camera.x,
            self.camera.y,
            self.camera.z,
        ])
    }

    /// Sum of the normalized sensor weights (transfer plus measurement axes).
    pub fn sensor_trace(&self) -> f64 {
        self.transfer.sum() + self.uwb + self.altimeter + self.optical.sum() + self.camera.sum()
    }
}

/// Failure status diagonal from the accumulated absolute first differences
/// of the sensor history. The min over axes gates the whole sensor unless
/// per-axis mode is selected.
pub fn failure_status(
    history: &[DVector<f64>],
    eps_f: f64,
    eps: f64,
    per_axis: bool,
) -> DVector<f64> {
    let dim = history.last().map(|v| v.len()).unwrap_or(0);
    if history.len() < 2 {
        return DVector::from_element(dim, 1.0);
    }
    let mut omega_f = DVector::zeros(dim);
    for pair in history.windows(2) {
        omega_f += (&pair[1] - &pair[0]).abs();
    }
    if per_axis {
        omega_f.map(|w| if w > eps_f { 1.0 } else { eps })
    } else if omega_f.min() > eps_f {
        DVector::from_element(dim, 1.0)
    } else {
        DVector::from_element(dim, eps)
    }
}

/// Quality status diagonal: `1 - sigmoid(|y_k - y_{k-1}|)` per axis.
pub fn quality_status(y_k: &DVector<f64>, y_prev: &DVector<f64>, m: f64, omega0: f64) -> DVector<f64> {
    let jump = (y_k - y_prev).abs();
    jump.map(|w| 1.0 - 1.0 / (1.0 + (-m * (w - omega0)).exp()))
}

/// Moving variance: windowed sum of residual outer products.
pub fn moving_variance(residuals: &[DVector<f64>]) -> DMatrix<f64> {
    let dim = residuals.last().map(|v| v.len()).unwrap_or(0);
    let mut p = DMatrix::zeros(dim, dim);
    for r in residuals {
        p += r * r.transpose();
    }
    p
}

/// Per-axis normalized reliability from the moving variances of all sensors:
/// `gamma_i[d] = 1 - P_i[d,d] / sum_j tr(P_j)`, clamped to [0, 1]. A zero
/// total variance is uninformative and yields all ones.
pub fn normalized_gamma(p_all: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    let total: f64 = p_all.iter().map(|p| p.trace()).sum();
    p_all
        .iter()
        .map(|p| {
            if total <= f64::MIN_POSITIVE {
                DVector::from_element(p.nrows(), 1.0)
            } else {
                DVector::from_fn(p.nrows(), |d, _| (1.0 - p[(d, d)] / total).clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// Combines the three diagonal factors per sensor and distributes the budget
/// so the sensor traces sum to `xi`. Order follows [`FUSED_SENSORS`].
pub fn assemble_weights(
    factors: &[(DVector<f64>, DVector<f64>, DVector<f64>)],
    params: &ConfidenceParams,
) -> WeightSet {
    let combined: Vec<DVector<f64>> = factors
        .iter()
        .map(|(s_f, s_q, gamma)| s_f.component_mul(s_q).component_mul(gamma))
        .collect();
    let denom: f64 = combined.iter().map(|f| f.sum()).sum();
    let degraded = denom <= params.eps * params.eps;
    let scale = if degraded { 0.0 } else { params.xi / denom };

    let take = |slot: usize| -> DVector<f64> { combined[slot].clone() * scale };
    let transfer = take(sensor_slot(SensorId::Imu));
    let uwb = take(sensor_slot(SensorId::Uwb));
    let alt = take(sensor_slot(SensorId::Altimeter));
    let opt = take(sensor_slot(SensorId::Optical));
    let cam = take(sensor_slot(SensorId::Camera));

    WeightSet {
        prior: Vector6::from_element(params.prior_weight),
        transfer: Vector6::from_column_slice(transfer.as_slice()),
        uwb: uwb[0],
        altimeter: alt[0],
        optical: Vector3::from_column_slice(opt.as_slice()),
        camera: Vector3::from_column_slice(cam.as_slice()),
        degraded,
    }
}

/// Weighting strategies: the adaptive pipeline, or the fixed initial weights
/// with only failure detection retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Adaptive,
    FixedWithFaultDetection,
}

/// Per-tick inputs to the confidence evaluation.
#[derive(Debug, Clone)]
pub struct ConfidenceInputs<'a> {
    /// IMU-derived acceleration input at this tick (inertial stream).
    pub u: Vector3<f64>,
    pub bundle: &'a MeasurementBundle,
    /// Range linearization direction at this tick.
    pub rho: Vector3<f64>,
    /// Planner reference state (position and velocity).
    pub x_bar: Vector6<f64>,
    /// Newest propagated prior.
    pub x_check: Vector6<f64>,
    /// Whether the planner reference is available this tick.
    pub reference_available: bool,
}

/// Sliding evaluation state: per-sensor measurement histories and residual
/// windows, plus the held variance when the reference goes stale.
#[derive(Debug, Clone)]
pub struct ConfidenceEngine {
    pub params: ConfidenceParams,
    pub mode: WeightMode,
    killed: Vec<SensorId>,
    meas_hist: [VecDeque<DVector<f64>>; 5],
    resid_hist: [VecDeque<DVector<f64>>; 5],
    held_p: [DMatrix<f64>; 5],
    reference_stale: bool,
}

impl ConfidenceEngine {
    pub fn new(params: ConfidenceParams, mode: WeightMode, killed: Vec<SensorId>) -> Self {
        let meas_hist = std::array::from_fn(|_| VecDeque::new());
        let resid_hist = std::array::from_fn(|_| VecDeque::new());
        let held_p =
            std::array::from_fn(|i| DMatrix::zeros(sensor_dim(FUSED_SENSORS[i]), sensor_dim(FUSED_SENSORS[i])));
        Self { params, mode, killed, meas_hist, resid_hist, held_p, reference_stale: false }
    }

    fn push_bounded(deque: &mut VecDeque<DVector<f64>>, value: DVector<f64>, cap: usize) {
        deque.push_back(value);
        while deque.len() > cap {
            deque.pop_front();
        }
    }

    /// Runs one evaluation tick and returns the weight set for the newest
    /// window position.
    pub fn update(&mut self, inp: &ConfidenceInputs<'_>) -> WeightSet {
        let cap = self.params.tw + 1;
        let b = inp.bundle;

        // Measurement streams per sensor. The inertial stream is the raw
        // acceleration input; its three axes are replicated over the position
        // and velocity blocks of the 6-dim transfer weight.
        let streams: [DVector<f64>; 5] = [
            DVector::from_column_slice(inp.u.as_slice()),
            DVector::from_column_slice(&[b.uwb_range]),
            DVector::from_column_slice(&[b.alt]),
            DVector::from_column_slice(b.opt_velocity.as_slice()),
            DVector::from_column_slice(b.cam_position.as_slice()),
        ];

        // Residuals against the planner reference.
        let p_bar = Vector3::new(inp.x_bar[0], inp.x_bar[1], inp.x_bar[2]);
        let v_bar = Vector3::new(inp.x_bar[3], inp.x_bar[4], inp.x_bar[5]);
        let residuals: [DVector<f64>; 5] = [
            DVector::from_column_slice((inp.x_bar - inp.x_check).as_slice()),
            DVector::from_column_slice(&[inp.rho.dot(&p_bar) - b.uwb_range]),
            DVector::from_column_slice(&[p_bar.z - b.alt]),
            DVector::from_column_slice((v_bar - b.opt_velocity).as_slice()),
            DVector::from_column_slice((p_bar - b.cam_position).as_slice()),
        ];

        for i in 0..5 {
            Self::push_bounded(&mut self.meas_hist[i], streams[i].clone(), cap);
        }
        if inp.reference_available {
            for i in 0..5 {
                Self::push_bounded(&mut self.resid_hist[i], residuals[i].clone(), cap);
                self.held_p[i] = moving_variance(self.resid_hist[i].make_contiguous());
            }
            self.reference_stale = false;
        } else {
            self.reference_stale = true;
        }

        let mut factors = Vec::with_capacity(5);
        let gammas = normalized_gamma(&self.held_p);
        for (i, sensor) in FUSED_SENSORS.iter().enumerate() {
            let hist = self.meas_hist[i].make_contiguous();
            let mut s_f = failure_status(
                hist,
                self.params.eps_f.get(*sensor),
                self.params.eps,
                self.params.per_axis_failure,
            );
            if self.killed.contains(sensor) {
                s_f.fill(0.0);
            }
            let (s_q, gamma) = match self.mode {
                WeightMode::Adaptive => {
                    let n = hist.len();
                    let s_q = if n >= 2 {
                        quality_status(&hist[n - 1], &hist[n - 2], self.params.m, self.params.omega0)
                    } else {
                        DVector::from_element(s_f.len(), 1.0)
                    };
                    (s_q, gammas[i].clone())
                }
                WeightMode::FixedWithFaultDetection => (
                    DVector::from_element(s_f.len(), 1.0),
                    DVector::from_element(s_f.len(), 1.0),
                ),
            };
            // The inertial statuses come from a 3-axis stream; replicate them
            // across the stacked [p; v] blocks.
            let expand = |v: DVector<f64>| -> DVector<f64> {
                if *sensor == SensorId::Imu && v.len() == 3 {
                    DVector::from_fn(6, |d, _| v[d % 3])
                } else {
                    v
                }
            };
            factors.push((expand(s_f), expand(s_q), gamma));
        }

        match self.mode {
            WeightMode::Adaptive => assemble_weights(&factors, &self.params),
            WeightMode::FixedWithFaultDetection => {
                // Initial identity weights per sensor, scaled only by the
                // failure status; no budget normalization.
                let diag = |slot: usize| factors[slot].0.clone();
                let transfer = diag(0);
                WeightSet {
                    prior: Vector6::from_element(self.params.prior_weight),
                    transfer: Vector6::from_column_slice(transfer.as_slice()),
                    uwb: diag(1)[0],
                    altimeter: diag(2)[0],
                    optical: Vector3::from_column_slice(diag(3).as_slice()),
                    camera: Vector3::from_column_slice(diag(4).as_slice()),
                    degraded: false,
                }
            }
        }
    }

    pub fn reference_stale(&self) -> bool {
        self.reference_stale
    }
}
