//! Relative translational dynamics between the aerial robot and the moving
//! reference frame, the drag-augmented discrete transition, and construction
//! of the acceleration input from IMU samples.

use nalgebra::{Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{quat_to_rotation, UnitQuat};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid step dt = {0}")]
    InvalidStep(f64),
    #[error("drag entries must be non-negative, got {0:?}")]
    NegativeDrag(Vector3<f64>),
    #[error("gravity must be positive, got {0}")]
    InvalidGravity(f64),
    #[error("dt * max(mu) = {0} >= 1: velocity block would not contract")]
    NonContractive(f64),
}

/// Relative state of the body with respect to the dynamic reference frame,
/// stacked as `[p; v]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl RelativeState {
    pub fn zero() -> Self {
        Self { p: Vector3::zeros(), v: Vector3::zeros() }
    }

    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }
}

/// One IMU sample: normalized linear acceleration (g-units, body frame) and
/// the attitude quaternion relative to the initial ground frame.
#[derive(Debug, Clone, Copy)]
pub struct ImuSample {
    pub a: Vector3<f64>,
    pub q: UnitQuat,
    pub t: f64,
}

/// Drag, step and gravity parameters for the discrete transition.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsParams {
    /// Diagonal of the drag coefficient matrix (1/s).
    pub mu: Vector3<f64>,
    /// Discretization step (s).
    pub dt: f64,
    /// Gravity constant (m/s^2).
    pub g: f64,
}

impl DynamicsParams {
    pub fn new(mu: Vector3<f64>, dt: f64, g: f64) -> Result<Self, DynamicsError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(DynamicsError::InvalidStep(dt));
        }
        if mu.min() < 0.0 {
            return Err(DynamicsError::NegativeDrag(mu));
        }
        if !(g > 0.0) {
            return Err(DynamicsError::InvalidGravity(g));
        }
        Ok(Self { mu, dt, g })
    }
}

/// Discrete transition `x_{k+1} = A x_k + B u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTransition {
    pub a: Matrix6<f64>,
    pub b: Matrix6x3<f64>,
}

/// Acceleration input in the ground-initial frame from one IMU sample:
/// `u = g * R(q) * a - [0, 0, g]`.
pub fn compute_input(s: &ImuSample, params: &DynamicsParams) -> Vector3<f64> {
    let r = quat_to_rotation(&s.q);
    params.g * (r * s.a) - Vector3::new(0.0, 0.0, params.g)
}

/// Averages a batch of IMU samples into one per-tick input. Averaging
/// preserves the integral of acceleration over the tick.
pub fn average_input(samples: &[ImuSample], params: &DynamicsParams) -> Vector3<f64> {
    if samples.is_empty() {
        return Vector3::zeros();
    }
    let sum: Vector3<f64> = samples.iter().map(|s| compute_input(s, params)).sum();
    sum / samples.len() as f64
}

/// Builds the drag-augmented discrete transition:
/// `A = [[I, dt I], [0, I - dt mu]]`, `B = [dt^2/2 I; dt I]`.
pub fn discretize(params: &DynamicsParams) -> Result<StateTransition, DynamicsError> {
    let damp = params.dt * params.mu.max();
    if damp >= 1.0 {
        return Err(DynamicsError::NonContractive(damp));
    }
    let mut a = Matrix6::identity();
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(params.dt * Matrix3::identity()));
    a.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() - params.dt * Matrix3::from_diagonal(&params.mu)));

    let mut b = Matrix6x3::zeros();
    b.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(0.5 * params.dt * params.dt * Matrix3::identity()));
    b.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(params.dt * Matrix3::identity()));
    Ok(StateTransition { a, b })
}

/// One forward step of the discrete model.
pub fn propagate(x: &RelativeState, u: &Vector3<f64>, st: &StateTransition) -> RelativeState {
    let next = st.a * x.to_vector() + st.b * u;
    RelativeState::from_vector(&next)
}

/// Relative velocity reference: rotate the body-frame velocity into the
/// initial frame and subtract the ground vehicle velocity.
pub fn relative_velocity_reference(
    v_body: &Vector3<f64>,
    r: &Matrix3<f64>,
    v_ugv: &Vector3<f64>,
) -> Vector3<f64> {
    r * v_body - v_ugv
}
