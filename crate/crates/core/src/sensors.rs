//! Observation models, measurement bundle assembly, and synthetic sensor
//! generation with noise and fault injection.
//!
//! Raw streams arrive at their own rates (IMU 100 Hz, UWB 50 Hz, optical
//! 25 Hz, camera 30 Hz by default) and are zero-order held onto the 25 Hz
//! estimator grid by [`SyncBuffer`]. The same buffer serves both the
//! simulator and log replay so that the two paths produce identical bundles
//! from identical samples.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsParams, ImuSample};
use crate::geometry::UnitQuat;

/// Sensors participating in fusion; `Imu` contributes through the state
/// transfer term rather than a measurement row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorId {
    Imu,
    Uwb,
    Optical,
    Altimeter,
    Camera,
}

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("degenerate geometry: prior range {norm:.3e} m below threshold")]
    DegenerateGeometry { norm: f64 },
}

/// Threshold below which the range direction is considered undefined.
pub const EPSILON_POS: f64 = 1e-3;

/// One estimator-tick snapshot of all measurement channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementBundle {
    pub t: f64,
    pub uwb_range: f64,
    pub uwb_valid: bool,
    /// Relative velocity already transformed into the reference frame.
    pub opt_velocity: Vector3<f64>,
    pub opt_valid: bool,
    /// Relative height (altimeter reading minus the anchor height).
    pub alt: f64,
    pub alt_valid: bool,
    /// Relative position from the active-vision chain.
    pub cam_position: Vector3<f64>,
    pub cam_valid: bool,
}

/// Stacked measurement matrix with the row layout
/// `[UWB; OPT(3); ALT; CAM(3)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    pub c: SMatrix<f64, 8, 6>,
    pub rho: Vector3<f64>,
    pub beta: Vector3<f64>,
}

/// Unit direction of the range measurement, linearized along the prior
/// relative position.
pub fn uwb_direction(r: &Vector3<f64>) -> Result<Vector3<f64>, SensorError> {
    let norm = r.norm();
    if norm <= EPSILON_POS {
        return Err(SensorError::DegenerateGeometry { norm });
    }
    Ok(r / norm)
}

/// Builds the 8x6 measurement matrix for one tick.
pub fn assemble_observation(rho: &Vector3<f64>) -> ObservationMatrix {
    let beta = Vector3::new(0.0, 0.0, 1.0);
    let mut c = SMatrix::<f64, 8, 6>::zeros();
    c.fixed_view_mut::<1, 3>(0, 0).copy_from(&rho.transpose());
    c.fixed_view_mut::<3, 3>(1, 3).copy_from(&Matrix3::identity());
    c.fixed_view_mut::<1, 3>(4, 0).copy_from(&beta.transpose());
    c.fixed_view_mut::<3, 3>(5, 0).copy_from(&Matrix3::identity());
    ObservationMatrix { c, rho: *rho, beta }
}

/// Transforms the body-frame optical velocity into the reference frame,
/// with the vertical channel replaced by an altimeter finite difference.
/// Returns the observation and whether it is degraded (no previous height).
pub fn optical_observation(
    v_body: &Vector3<f64>,
    h_k: f64,
    h_prev: Option<f64>,
    dt: f64,
    r: &Matrix3<f64>,
    v_ugv: &Vector3<f64>,
) -> (Vector3<f64>, bool) {
    let (vz, degraded) = match h_prev {
        Some(prev) => ((h_k - prev) / dt, false),
        None => (0.0, true),
    };
    let stacked = Vector3::new(v_body.x, v_body.y, vz);
    (r * stacked - v_ugv, degraded)
}

/// Relative height observation.
pub fn altimeter_observation(h: f64, h_g: f64) -> f64 {
    h - h_g
}

/// Per-sensor noise channel: Gaussian sigma plus optional constant bias and
/// linear drift, sampled at `rate_hz`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensorChannel {
    pub sigma: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub drift: f64,
    pub rate_hz: f64,
}

impl SensorChannel {
    pub fn new(sigma: f64, rate_hz: f64) -> Self {
        Self { sigma, bias: 0.0, drift: 0.0, rate_hz }
    }
}

/// Noise specification for all simulated channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorNoiseSpec {
    pub imu: SensorChannel,
    pub uwb: SensorChannel,
    pub optical: SensorChannel,
    pub altimeter: SensorChannel,
    /// Direct camera-position channel; the closed loop replaces this with
    /// the projection/PnP chain and uses `pixel_sigma` instead.
    pub camera: SensorChannel,
    pub pixel_sigma: f64,
    /// Servo encoder quantization (degrees); zero disables quantization.
    pub encoder_resolution_deg: f64,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        Self {
            imu: SensorChannel::new(0.05, 100.0),
            uwb: SensorChannel::new(0.05, 50.0),
            optical: SensorChannel::new(0.05, 25.0),
            altimeter: SensorChannel::new(0.01, 25.0),
            camera: SensorChannel::new(0.02, 30.0),
            pixel_sigma: 0.5,
            encoder_resolution_deg: 0.088,
        }
    }
}

impl SensorNoiseSpec {
    /// All stochastic corruption disabled; rates keep their defaults.
    pub fn noiseless() -> Self {
        let mut spec = Self::default();
        spec.imu.sigma = 0.0;
        spec.uwb.sigma = 0.0;
        spec.optical.sigma = 0.0;
        spec.altimeter.sigma = 0.0;
        spec.camera.sigma = 0.0;
        spec.pixel_sigma = 0.0;
        spec.encoder_resolution_deg = 0.0;
        spec
    }

    pub fn channel(&self, sensor: SensorId) -> &SensorChannel {
        match sensor {
            SensorId::Imu => &self.imu,
            SensorId::Uwb => &self.uwb,
            SensorId::Optical => &self.optical,
            SensorId::Altimeter => &self.altimeter,
            SensorId::Camera => &self.camera,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "factor")]
pub enum FaultMode {
    /// The sensor keeps reporting its last value.
    Frozen,
    /// Samples stop arriving entirely.
    Dropped,
    /// Noise sigma multiplied by the factor.
    Inflated(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultWindow {
    pub sensor: SensorId,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(flatten)]
    pub mode: FaultMode,
}

/// Time-indexed fault injection plan.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultSchedule {
    pub windows: Vec<FaultWindow>,
}

impl FaultSchedule {
    pub fn none() -> Self {
        Self { windows: Vec::new() }
    }

    pub fn active(&self, sensor: SensorId, t: f64) -> Option<FaultMode> {
        self.windows
            .iter()
            .find(|w| w.sensor == sensor && t >= w.start_s && t < w.end_s)
            .map(|w| w.mode)
    }
}

/// Ground-truth snapshot used by the sensor models. Positions and velocities
/// are expressed in the ground-initial frame; the attitude is a rotation
/// vector for the body orientation.
#[derive(Debug, Clone, Copy)]
pub struct TruthState {
    pub uav_pos: Vector3<f64>,
    pub uav_vel: Vector3<f64>,
    pub uav_acc: Vector3<f64>,
    pub uav_att: Vector3<f64>,
    pub ugv_pos: Vector3<f64>,
    pub ugv_vel: Vector3<f64>,
    pub ugv_yaw: f64,
}

impl TruthState {
    pub fn relative_position(&self) -> Vector3<f64> {
        self.uav_pos - self.ugv_pos
    }

    pub fn relative_velocity(&self) -> Vector3<f64> {
        self.uav_vel - self.ugv_vel
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent, reproducible stream for one sample of one sensor.
/// Keying by sample index (not draw order) keeps matched-seed runs aligned
/// even when their control paths diverge.
pub fn sample_rng(seed: u64, sensor_tag: u64, sample_idx: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(sensor_tag.wrapping_add(0x51ab_3c44)) ^ splitmix64(sample_idx));
    ChaCha8Rng::seed_from_u64(key)
}

fn sensor_tag(sensor: SensorId) -> u64 {
    match sensor {
        SensorId::Imu => 1,
        SensorId::Uwb => 2,
        SensorId::Optical => 3,
        SensorId::Altimeter => 4,
        SensorId::Camera => 5,
    }
}

#[derive(Debug, Clone, Copy)]
struct Held<T> {
    value: T,
    arrival: f64,
    ever: bool,
}

impl<T: Copy> Held<T> {
    fn new(zero: T) -> Self {
        Self { value: zero, arrival: f64::NEG_INFINITY, ever: false }
    }

    fn push(&mut self, t: f64, value: T) {
        self.value = value;
        self.arrival = t;
        self.ever = true;
    }

    fn fresh(&self, now: f64, threshold: f64) -> bool {
        self.ever && now - self.arrival <= threshold
    }
}

/// Aligns multi-rate sensor streams onto the estimator grid with a
/// zero-order hold and per-sensor staleness thresholds.
#[derive(Debug, Clone)]
pub struct SyncBuffer {
    dt: f64,
    h_g: f64,
    uwb: Held<f64>,
    opt: Held<Vector3<f64>>,
    alt: Held<f64>,
    cam: Held<Vector3<f64>>,
    cam_ok: bool,
    imu_batch: Vec<ImuSample>,
    latest_q: UnitQuat,
    has_q: bool,
    alt_prev_tick: Option<f64>,
    stale_uwb: f64,
    stale_opt: f64,
    stale_alt: f64,
    stale_cam: f64,
}

/// Staleness threshold: a little over one missed sample.
fn staleness(rate_hz: f64) -> f64 {
    1.6 / rate_hz
}

impl SyncBuffer {
    pub fn new(dt: f64, h_g: f64, noise: &SensorNoiseSpec) -> Self {
        Self {
            dt,
            h_g,
            uwb: Held::new(0.0),
            opt: Held::new(Vector3::zeros()),
            alt: Held::new(0.0),
            cam: Held::new(Vector3::zeros()),
            cam_ok: false,
            imu_batch: Vec::new(),
            latest_q: UnitQuat::identity(),
            has_q: false,
            alt_prev_tick: None,
            stale_uwb: staleness(noise.uwb.rate_hz).max(dt),
            stale_opt: staleness(noise.optical.rate_hz).max(dt),
            stale_alt: staleness(noise.altimeter.rate_hz).max(dt),
            stale_cam: staleness(noise.camera.rate_hz).max(dt),
        }
    }

    pub fn push_imu(&mut self, sample: ImuSample) {
        self.latest_q = sample.q;
        self.has_q = true;
        self.imu_batch.push(sample);
    }

    pub fn push_uwb(&mut self, t: f64, range: f64) {
        self.uwb.push(t, range);
    }

    pub fn push_optical(&mut self, t: f64, v_body: Vector3<f64>) {
        self.opt.push(t, v_body);
    }

    pub fn push_altimeter(&mut self, t: f64, h: f64) {
        self.alt.push(t, h);
    }

    pub fn push_camera(&mut self, t: f64, position: Vector3<f64>, ok: bool) {
        self.cam.push(t, position);
        self.cam_ok = ok;
    }

    pub fn latest_quaternion(&self) -> UnitQuat {
        self.latest_q
    }

    /// Assembles the per-tick bundle and drains the IMU batch accumulated
    /// since the previous tick. `v_ugv` is the ground vehicle velocity feed.
    pub fn build_bundle(
        &mut self,
        t: f64,
        v_ugv: &Vector3<f64>,
    ) -> (MeasurementBundle, Vec<ImuSample>, bool) {
        let r = crate::geometry::quat_to_rotation(&self.latest_q);
        let alt_rel = altimeter_observation(self.alt.value, self.h_g);
        let (opt_velocity, opt_degraded) = optical_observation(
            &self.opt.value,
            self.alt.value,
            self.alt_prev_tick,
            self.dt,
            &r,
            v_ugv,
        );
        let bundle = MeasurementBundle {
            t,
            uwb_range: self.uwb.value,
            uwb_valid: self.uwb.fresh(t, self.stale_uwb),
            opt_velocity,
            opt_valid: self.opt.fresh(t, self.stale_opt) && self.has_q,
            alt: alt_rel,
            alt_valid: self.alt.fresh(t, self.stale_alt),
            cam_position: self.cam.value,
            cam_valid: self.cam_ok && self.cam.fresh(t, self.stale_cam),
        };
        if self.alt.ever {
            self.alt_prev_tick = Some(self.alt.value);
        }
        let batch = std::mem::take(&mut self.imu_batch);
        (bundle, batch, opt_degraded)
    }
}

#[derive(Debug, Clone, Copy)]
struct SampleClock {
    rate_hz: f64,
    next_idx: u64,
}

impl SampleClock {
    fn new(rate_hz: f64) -> Self {
        Self { rate_hz, next_idx: 0 }
    }

    /// Sample times (index, t) due up to and including `t`.
    fn due(&mut self, t: f64) -> Vec<(u64, f64)> {
        let mut out = Vec::new();
        loop {
            let ts = self.next_idx as f64 / self.rate_hz;
            if ts <= t + 1e-12 {
                out.push((self.next_idx, ts));
                self.next_idx += 1;
            } else {
                break;
            }
        }
        out
    }
}

/// Deterministic multi-rate sensor simulator. Each sample's noise stream is
/// keyed by (seed, sensor, sample index), so two runs with the same seed see
/// identical sensor errors regardless of estimator behavior.
#[derive(Debug, Clone)]
pub struct SensorSimulator {
    noise: SensorNoiseSpec,
    faults: FaultSchedule,
    dynamics: DynamicsParams,
    seed: u64,
    simulate_camera: bool,
    imu_clock: SampleClock,
    uwb_clock: SampleClock,
    opt_clock: SampleClock,
    alt_clock: SampleClock,
    cam_clock: SampleClock,
    frozen_imu: Option<(ImuSample, Vector3<f64>)>,
    frozen_uwb: Option<f64>,
    frozen_opt: Option<Vector3<f64>>,
    frozen_alt: Option<f64>,
    frozen_cam: Option<Vector3<f64>>,
    pub buffer: SyncBuffer,
}

impl SensorSimulator {
    pub fn new(
        noise: SensorNoiseSpec,
        faults: FaultSchedule,
        dynamics: DynamicsParams,
        h_g: f64,
        seed: u64,
        simulate_camera: bool,
    ) -> Self {
        let buffer = SyncBuffer::new(dynamics.dt, h_g, &noise);
        Self {
            imu_clock: SampleClock::new(noise.imu.rate_hz),
            uwb_clock: SampleClock::new(noise.uwb.rate_hz),
            opt_clock: SampleClock::new(noise.optical.rate_hz),
            alt_clock: SampleClock::new(noise.altimeter.rate_hz),
            cam_clock: SampleClock::new(noise.camera.rate_hz),
            frozen_imu: None,
            frozen_uwb: None,
            frozen_opt: None,
            frozen_alt: None,
            frozen_cam: None,
            noise,
            faults,
            dynamics,
            seed,
            simulate_camera,
            buffer,
        }
    }

    pub fn noise_spec(&self) -> &SensorNoiseSpec {
        &self.noise
    }

    pub fn fault_at(&self, sensor: SensorId, t: f64) -> Option<FaultMode> {
        self.faults.active(sensor, t)
    }

    fn draw(&self, sensor: SensorId, idx: u64, dims: usize, sigma: f64) -> Vec<f64> {
        if sigma == 0.0 {
            return vec![0.0; dims];
        }
        let mut rng = sample_rng(self.seed, sensor_tag(sensor), idx);
        let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
        (0..dims).map(|_| normal.sample(&mut rng)).collect()
    }

    fn corrupt(&self, sensor: SensorId, idx: u64, ts: f64, truth: &[f64]) -> Option<Vec<f64>> {
        let channel = self.noise.channel(sensor);
        let mut sigma = channel.sigma;
        match self.faults.active(sensor, ts) {
            Some(FaultMode::Dropped) => return None,
            Some(FaultMode::Frozen) => return Some(Vec::new()), // caller substitutes held value
            Some(FaultMode::Inflated(f)) => sigma *= f,
            None => {}
        }
        let noise = self.draw(sensor, idx, truth.len(), sigma);
        Some(
            truth
                .iter()
                .zip(noise)
                .map(|(v, n)| v + channel.bias + channel.drift * ts + n)
                .collect(),
        )
    }

    /// Camera frame times due up to `t`, for callers that synthesize the
    /// camera channel externally (the closed-loop vision chain). Dropped
    /// frames are skipped here so a vision fault suppresses frames entirely.
    pub fn camera_frames_due(&mut self, t: f64) -> Vec<f64> {
        self.cam_clock
            .due(t)
            .into_iter()
            .filter(|(_, ts)| !matches!(self.faults.active(SensorId::Camera, *ts), Some(FaultMode::Dropped)))
            .map(|(_, ts)| ts)
            .collect()
    }

    /// Feeds one externally produced camera measurement, honoring a frozen
    /// fault window. Returns what was actually delivered to the buffer so
    /// the caller can log it.
    pub fn push_camera_sample(
        &mut self,
        t: f64,
        position: Vector3<f64>,
        ok: bool,
    ) -> Option<(Vector3<f64>, bool)> {
        if matches!(self.faults.active(SensorId::Camera, t), Some(FaultMode::Frozen)) {
            let held = self.frozen_cam?;
            self.buffer.push_camera(t, held, true);
            return Some((held, true));
        }
        if ok {
            self.frozen_cam = Some(position);
        }
        self.buffer.push_camera(t, position, ok);
        Some((position, ok))
    }

    /// Generates all raw samples due up to `t`, pushes them through the sync
    /// buffer, and returns the estimator-tick bundle plus the IMU batch.
    /// Also returns the raw samples for log export.
    pub fn tick(
        &mut self,
        t: f64,
        truth: &impl Fn(f64) -> TruthState,
    ) -> (MeasurementBundle, Vec<ImuSample>, Vec<RawSample>, bool) {
        let mut raws = Vec::new();

        for (idx, ts) in self.imu_clock.due(t) {
            let tr = truth(ts);
            let q = UnitQuat::from_rotation_vector(&tr.uav_att);
            let r = crate::geometry::quat_to_rotation(&q);
            // Thrust-only specific force: the accelerometer senses the
            // commanded acceleration plus the drag it must overcome, so the
            // drag-augmented discrete model stays consistent with truth.
            let mu = Matrix3::from_diagonal(&self.dynamics.mu);
            let f_g0 = tr.uav_acc + mu * tr.uav_vel + Vector3::new(0.0, 0.0, self.dynamics.g);
            let a_body = r.transpose() * f_g0 / self.dynamics.g;
            match self.corrupt(SensorId::Imu, idx, ts, a_body.as_slice()) {
                None => {}
                Some(vals) => {
                    let (sample, att) = if vals.is_empty() {
                        match self.frozen_imu {
                            Some((prev, prev_att)) => (ImuSample { t: ts, ..prev }, prev_att),
                            None => continue,
                        }
                    } else {
                        (ImuSample { a: Vector3::new(vals[0], vals[1], vals[2]), q, t: ts }, tr.uav_att)
                    };
                    self.frozen_imu = Some((sample, att));
                    raws.push(RawSample::new(
                        ts,
                        RawKind::ImuAcc,
                        [sample.a.x, sample.a.y, sample.a.z],
                        true,
                    ));
                    raws.push(RawSample::new(ts, RawKind::ImuAtt, [att.x, att.y, att.z], true));
                    self.buffer.push_imu(sample);
                }
            }
        }

        for (idx, ts) in self.uwb_clock.due(t) {
            let tr = truth(ts);
            let range = tr.relative_position().norm();
            match self.corrupt(SensorId::Uwb, idx, ts, &[range]) {
                None => {}
                Some(vals) => {
                    let value = if vals.is_empty() {
                        match self.frozen_uwb {
                            Some(prev) => prev,
                            None => continue,
                        }
                    } else {
                        vals[0].max(0.0)
                    };
                    self.frozen_uwb = Some(value);
                    raws.push(RawSample::scalar(SensorId::Uwb, ts, value));
                    self.buffer.push_uwb(ts, value);
                }
            }
        }

        for (idx, ts) in self.opt_clock.due(t) {
            let tr = truth(ts);
            let q = UnitQuat::from_rotation_vector(&tr.uav_att);
            let r = crate::geometry::quat_to_rotation(&q);
            let v_body = r.transpose() * tr.uav_vel;
            match self.corrupt(SensorId::Optical, idx, ts, v_body.as_slice()) {
                None => {}
                Some(vals) => {
                    let value = if vals.is_empty() {
                        match self.frozen_opt {
                            Some(prev) => prev,
                            None => continue,
                        }
                    } else {
                        Vector3::new(vals[0], vals[1], vals[2])
                    };
                    self.frozen_opt = Some(value);
                    raws.push(RawSample::vector(SensorId::Optical, ts, &value));
                    self.buffer.push_optical(ts, value);
                }
            }
        }

        for (idx, ts) in self.alt_clock.due(t) {
            let tr = truth(ts);
            let h = tr.uav_pos.z;
            match self.corrupt(SensorId::Altimeter, idx, ts, &[h]) {
                None => {}
                Some(vals) => {
                    let value = if vals.is_empty() {
                        match self.frozen_alt {
                            Some(prev) => prev,
                            None => continue,
                        }
                    } else {
                        vals[0]
                    };
                    self.frozen_alt = Some(value);
                    raws.push(RawSample::scalar(SensorId::Altimeter, ts, value));
                    self.buffer.push_altimeter(ts, value);
                }
            }
        }

        if self.simulate_camera {
            for (idx, ts) in self.cam_clock.due(t) {
                let tr = truth(ts);
                let rel = tr.relative_position();
                match self.corrupt(SensorId::Camera, idx, ts, rel.as_slice()) {
                    None => {}
                    Some(vals) => {
                        let value = if vals.is_empty() {
                            match self.frozen_cam {
                                Some(prev) => prev,
                                None => continue,
                            }
                        } else {
                            Vector3::new(vals[0], vals[1], vals[2])
                        };
                        self.frozen_cam = Some(value);
                        raws.push(RawSample::vector(SensorId::Camera, ts, &value));
                        self.buffer.push_camera(ts, value, true);
                    }
                }
            }
        }

        let tr = truth(t);
        let (bundle, batch, degraded) = self.buffer.build_bundle(t, &tr.ugv_vel);
        (bundle, batch, raws, degraded)
    }
}

/// One raw sample row for the replayable sample log.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub t: f64,
    pub kind: RawKind,
    pub values: [f64; 3],
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawKind {
    ImuAcc,
    ImuAtt,
    Uwb,
    Optical,
    Altimeter,
    Camera,
    UgvVel,
    PlannerPos,
    PlannerVel,
    TruthPos,
    TruthVel,
}

impl RawSample {
    fn scalar(sensor: SensorId, t: f64, v: f64) -> Self {
        let kind = match sensor {
            SensorId::Uwb => RawKind::Uwb,
            SensorId::Altimeter => RawKind::Altimeter,
            _ => unreachable!("scalar raw sample for {sensor:?}"),
        };
        Self { t, kind, values: [v, 0.0, 0.0], valid: true }
    }

    fn vector(sensor: SensorId, t: f64, v: &Vector3<f64>) -> Self {
        let kind = match sensor {
            SensorId::Optical => RawKind::Optical,
            SensorId::Camera => RawKind::Camera,
            _ => unreachable!("vector raw sample for {sensor:?}"),
        };
        Self { t, kind, values: [v.x, v.y, v.z], valid: true }
    }

    pub fn new(t: f64, kind: RawKind, values: [f64; 3], valid: bool) -> Self {
        Self { t, kind, values, valid }
    }
}
