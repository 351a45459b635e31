//! Active and adaptive ground-aerial relative localization.
//!
//! A ground vehicle tracks an aerial robot with a pan/tilt camera while the
//! aerial robot reports inertial, single-range, optical-flow and altimeter
//! measurements. The crate fuses these multi-rate streams in a sliding-window
//! weighted least-squares estimator whose state sequence is compressed onto a
//! low-order polynomial basis, with per-sensor confidence weights adapted
//! from failure detection, jump quality scoring and moving variance against
//! the planner reference.
//!
//! The `scenario` module provides a deterministic closed-loop simulator,
//! fault injection, metrics, and CSV export/replay; the `a2visr` binary in
//! the companion CLI crate drives it.

pub mod confidence;
pub mod dynamics;
pub mod estimator;
pub mod geometry;
pub mod metrics;
pub mod replay;
pub mod scenario;
pub mod sensors;
pub mod vision;

pub use confidence::{ConfidenceParams, WeightMode, WeightSet};
pub use dynamics::{DynamicsParams, ImuSample, RelativeState, StateTransition};
pub use estimator::{Estimator, EstimatorOutput, WindowConfig};
pub use geometry::{FrameId, PoseTransform, UnitQuat};
pub use metrics::MetricsReport;
pub use scenario::{RunLog, ScenarioConfig, TickRecord};
pub use sensors::{FaultMode, FaultSchedule, MeasurementBundle, SensorId, SensorNoiseSpec};
pub use vision::{CameraModel, GimbalGeometry, GimbalState, MarkerArray};
