//! Coordinate frames, rigid transforms and quaternion handling.
//!
//! Every module in the pipeline moves quantities between a small closed set
//! of frames: the aerial robot body `Body`, the ground vehicle `Ground`, its
//! initial pose `GroundInitial` (the inertial surrogate), the translating
//! reference `GroundReference` (inherits `GroundInitial` orientation, follows
//! the ground vehicle's position), the gimbal camera `Camera`, and the gimbal
//! mechanism base `MechanismBase`. Frame compatibility is checked at runtime
//! so that an ill-composed chain fails loudly instead of producing a silently
//! wrong position.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Orthonormality defect below this is accepted as-is.
pub const ROTATION_TOL: f64 = 1e-9;
/// Defect between `ROTATION_TOL` and this is repaired by projection onto the
/// nearest rotation; anything worse is rejected.
pub const ROTATION_REPAIR_TOL: f64 = 1e-6;

/// The closed set of coordinate frames used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameId {
    /// Aerial robot body frame.
    Body,
    /// Ground vehicle frame (moves and rotates with the vehicle).
    Ground,
    /// Initial pose of the ground frame; plays the role of an inertial frame.
    GroundInitial,
    /// Dynamic reference frame: translates with the ground vehicle while
    /// keeping the initial orientation.
    GroundReference,
    /// Gimbal camera frame (z along the optical axis, x right, y down).
    Camera,
    /// Base frame of the pan/tilt mechanism, rigidly mounted on the vehicle.
    MechanismBase,
}

impl std::fmt::Display for FrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FrameId::Body => "body",
            FrameId::Ground => "ground",
            FrameId::GroundInitial => "ground_initial",
            FrameId::GroundReference => "ground_reference",
            FrameId::Camera => "camera",
            FrameId::MechanismBase => "mechanism_base",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("frame mismatch: cannot compose {outer_from}<-... with ...<-{inner_to}")]
    FrameMismatch {
        outer_from: FrameId,
        inner_to: FrameId,
    },
    #[error("rotation matrix is not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },
    #[error("rotation matrix is improper (det {det:.6})")]
    ImproperRotation { det: f64 },
    #[error("quaternion norm {norm:.6} too far from 1 to normalize")]
    NonUnitQuaternion { norm: f64 },
    #[error("direction undefined: vector norm {norm:.3e} below threshold")]
    DegenerateDirection { norm: f64 },
}

/// Unit quaternion `[w, x, y, z]`, body orientation relative to its initial
/// (ground-initial-aligned) attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Builds a unit quaternion, normalizing inputs whose norm deviates from
    /// one by less than `ROTATION_REPAIR_TOL`. Returns whether normalization
    /// was applied so callers can surface it in diagnostics.
    pub fn new_checked(w: f64, x: f64, y: f64, z: f64) -> Result<(Self, bool), GeometryError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > ROTATION_REPAIR_TOL {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        let repaired = (norm - 1.0).abs() > ROTATION_TOL;
        let q = Self { w: w / norm, x: x / norm, y: y / norm, z: z / norm };
        Ok((q, repaired))
    }

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Self::new_checked(w, x, y, z).map(|(q, _)| q)
    }

    /// Exponential map: rotation vector (axis * angle) to quaternion.
    pub fn from_rotation_vector(r: &Vector3<f64>) -> Self {
        let angle = r.norm();
        if angle < 1e-12 {
            // First-order expansion keeps the map smooth near zero.
            let half = 0.5;
            let q = Self {
                w: 1.0,
                x: half * r.x,
                y: half * r.y,
                z: half * r.z,
            };
            let n = (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
            return Self { w: q.w / n, x: q.x / n, y: q.y / n, z: q.z / n };
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let axis = r / angle;
        Self { w: c, x: s * axis.x, y: s * axis.y, z: s * axis.z }
    }

    /// Hamilton product `self * other`.
    pub fn product(&self, other: &UnitQuat) -> UnitQuat {
        let (w1, x1, y1, z1) = (self.w, self.x, self.y, self.z);
        let (w2, x2, y2, z2) = (other.w, other.x, other.y, other.z);
        UnitQuat {
            w: w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            x: w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            y: w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            z: w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        }
    }

    pub fn conjugate(&self) -> UnitQuat {
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }
}

/// Converts a unit quaternion to its rotation matrix.
pub fn quat_to_rotation(q: &UnitQuat) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn orthonormality_defect(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Projects a near-rotation onto the closest proper rotation matrix.
fn nearest_rotation(r: &Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let svd = r.svd(true, true);
    let u = svd.u.ok_or(GeometryError::NotOrthonormal { defect: f64::NAN })?;
    let v_t = svd.v_t.ok_or(GeometryError::NotOrthonormal { defect: f64::NAN })?;
    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    Ok(u * v_t)
}

/// Rigid transform mapping points expressed in frame `from` into frame `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub from: FrameId,
    pub to: FrameId,
}

impl PoseTransform {
    /// Validates the rotation before accepting it. Defects within
    /// `ROTATION_REPAIR_TOL` are repaired by nearest-rotation projection;
    /// larger ones are rejected.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Result<Self, GeometryError> {
        let defect = orthonormality_defect(&rotation);
        let rotation = if defect <= ROTATION_TOL {
            rotation
        } else if defect <= ROTATION_REPAIR_TOL {
            nearest_rotation(&rotation)?
        } else {
            return Err(GeometryError::NotOrthonormal { defect });
        };
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_REPAIR_TOL {
            return Err(GeometryError::ImproperRotation { det });
        }
        Ok(Self { rotation, translation, from, to })
    }

    pub fn identity(frame: FrameId) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from: frame,
            to: frame,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> PoseTransform {
        let rot_t = self.rotation.transpose();
        PoseTransform {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
            from: self.to,
            to: self.from,
        }
    }
}

/// Composes two transforms: the result maps `b.from` into `a.to`.
/// Requires the inner frames to match (`a.from == b.to`).
pub fn compose(a: &PoseTransform, b: &PoseTransform) -> Result<PoseTransform, GeometryError> {
    if a.from != b.to {
        return Err(GeometryError::FrameMismatch { outer_from: a.from, inner_to: b.to });
    }
    Ok(PoseTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
        from: b.from,
        to: a.to,
    })
}

/// Position of the body relative to the dynamic reference frame. Both inputs
/// are expressed in the ground-initial frame; the reference frame keeps the
/// initial orientation, so the rotation in the transfer is the identity and
/// the relative position is a plain difference.
pub fn to_reference_frame(p_g0_b: &Vector3<f64>, p_g0_gp: &Vector3<f64>) -> Vector3<f64> {
    p_g0_b - p_g0_gp
}
