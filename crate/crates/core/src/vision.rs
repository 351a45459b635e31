//! Active vision: pan/tilt gimbal kinematics, marker projection, planar PnP
//! pose recovery, correspondence handling, and the composite transform chain
//! that turns a camera-frame pose into a reference-frame position feedback.
//!
//! Conventions: the mechanism base frame has x forward, y left, z up. Pan
//! rotates about the base z axis, tilt about the panned y axis (positive tilt
//! raises the optical axis). The camera frame follows the usual computer
//! vision convention (z along the optical axis, x right, y down); at the home
//! pose the optical axis coincides with the base x axis.

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{compose, quat_to_rotation, FrameId, GeometryError, PoseTransform, UnitQuat};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("only {observable} of 4 markers observable")]
    DetectionFailure { observable: usize },
    #[error("points do not form a convex quadrilateral")]
    OrderingFailure,
    #[error("homography system ill-conditioned (cond {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("pose refinement failed (residual {residual:.3e} px)")]
    PoseFailure { residual: f64 },
    #[error("target direction undefined (norm {norm:.3e})")]
    DegenerateTarget { norm: f64 },
    #[error("marker points are not coplanar (defect {0:.3e})")]
    NonCoplanar(f64),
    #[error("marker points do not form a rectangle")]
    NotRectangle,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pan/tilt joint angles. Pan covers the full turn, tilt is limited to
/// straight up/down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GimbalState {
    /// Pan angle theta in (-pi, pi].
    pub pan: f64,
    /// Tilt angle phi in [-pi/2, pi/2].
    pub tilt: f64,
}

impl GimbalState {
    pub fn new(pan: f64, tilt: f64) -> Self {
        Self { pan: wrap_angle(pan), tilt: tilt.clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2) }
    }

    pub fn home() -> Self {
        Self { pan: 0.0, tilt: 0.0 }
    }

    /// Quantizes both angles to the encoder resolution (radians). A zero
    /// resolution returns the state unchanged.
    pub fn quantized(&self, resolution_rad: f64) -> GimbalState {
        if resolution_rad <= 0.0 {
            return *self;
        }
        GimbalState {
            pan: (self.pan / resolution_rad).round() * resolution_rad,
            tilt: (self.tilt / resolution_rad).round() * resolution_rad,
        }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        w = std::f64::consts::PI;
    }
    w
}

/// Pinhole camera intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Rectangular array of four markers in the body frame, ordered
/// top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerArray {
    points: [Vector3<f64>; 4],
}

impl MarkerArray {
    /// Validates coplanarity and the rectangle constraints (opposite sides
    /// equal, diagonals equal).
    pub fn new(points: [Vector3<f64>; 4]) -> Result<Self, VisionError> {
        let e1 = points[1] - points[0];
        let e2 = points[3] - points[0];
        let normal = e1.cross(&e2);
        let scale = e1.norm().max(e2.norm());
        if normal.norm() < 1e-12 * scale * scale {
            return Err(VisionError::NotRectangle);
        }
        let n = normal / normal.norm();
        let defect = (points[2] - points[0]).dot(&n).abs();
        if defect > 1e-9 * scale.max(1.0) {
            return Err(VisionError::NonCoplanar(defect));
        }
        let top = points[1] - points[0];
        let bottom = points[2] - points[3];
        let left = points[3] - points[0];
        let right = points[2] - points[1];
        let d1 = points[2] - points[0];
        let d2 = points[3] - points[1];
        let tol = 1e-9 * scale.max(1.0);
        if (top.norm() - bottom.norm()).abs() > tol
            || (left.norm() - right.norm()).abs() > tol
            || (d1.norm() - d2.norm()).abs() > tol
        {
            return Err(VisionError::NotRectangle);
        }
        Ok(Self { points })
    }

    /// Rectangle centered at the body origin in the body x-y plane, facing
    /// downward; `width` spans body x, `height` spans body y.
    pub fn rectangle(width: f64, height: f64) -> Self {
        let (a, b) = (width / 2.0, height / 2.0);
        Self {
            points: [
                Vector3::new(-a, b, 0.0),
                Vector3::new(a, b, 0.0),
                Vector3::new(a, -b, 0.0),
                Vector3::new(-a, -b, 0.0),
            ],
        }
    }

    pub fn points(&self) -> &[Vector3<f64>; 4] {
        &self.points
    }

    /// Orthonormal in-plane basis and centroid: marker i sits at
    /// `centroid + e1 * q_i.x + e2 * q_i.y`.
    fn plane_frame(&self) -> (Vector3<f64>, Matrix3<f64>) {
        let centroid = (self.points[0] + self.points[1] + self.points[2] + self.points[3]) / 4.0;
        let e1 = (self.points[1] - self.points[0]).normalize();
        let raw2 = self.points[3] - self.points[0];
        let e2 = (raw2 - e1 * raw2.dot(&e1)).normalize();
        let e3 = e1.cross(&e2);
        (centroid, Matrix3::from_columns(&[e1, e2, e3]))
    }

    fn plane_coords(&self) -> [Vector2<f64>; 4] {
        let (c, basis) = self.plane_frame();
        let e1 = basis.column(0);
        let e2 = basis.column(1);
        let mut out = [Vector2::zeros(); 4];
        for (i, p) in self.points.iter().enumerate() {
            let d = p - c;
            out[i] = Vector2::new(d.dot(&e1), d.dot(&e2));
        }
        out
    }
}

/// Link offsets of the pan/tilt mechanism. Defaults to concentric axes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GimbalGeometry {
    /// Offset from the pan axis to the tilt axis, in the panned frame.
    pub pan_to_tilt: [f64; 3],
    /// Offset from the tilt axis to the camera center, in the tilted frame.
    pub tilt_to_camera: [f64; 3],
}

impl Default for GimbalGeometry {
    fn default() -> Self {
        Self { pan_to_tilt: [0.0; 3], tilt_to_camera: [0.0; 3] }
    }
}

/// Fixed camera mounting rotation: maps camera axes (x right, y down,
/// z forward) onto the tilt link (x forward, y left, z up).
fn mount_rotation() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    )
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Pose of the camera frame in the mechanism base frame for the given joint
/// angles.
pub fn forward_kinematics(gs: &GimbalState, geom: &GimbalGeometry) -> PoseTransform {
    let pan_to_tilt = Vector3::from_column_slice(&geom.pan_to_tilt);
    let tilt_to_camera = Vector3::from_column_slice(&geom.tilt_to_camera);
    let r_pan = rot_z(gs.pan);
    let r_tilt = rot_y(-gs.tilt);
    let rotation = r_pan * r_tilt * mount_rotation();
    let translation = r_pan * (pan_to_tilt + r_tilt * tilt_to_camera);
    PoseTransform::new(rotation, translation, FrameId::Camera, FrameId::MechanismBase)
        .expect("kinematic rotation is orthonormal by construction")
}

/// Joint angles that place `target` (mechanism base frame) on the camera
/// optical axis. `current` provides the pan tie-break when the target sits on
/// the pan axis.
pub fn inverse_kinematics(
    target: &Vector3<f64>,
    geom: &GimbalGeometry,
    current: &GimbalState,
) -> Result<GimbalState, VisionError> {
    let norm = target.norm();
    if norm < 1e-9 {
        return Err(VisionError::DegenerateTarget { norm });
    }
    let mut state = *current;
    // Fixed-point iteration over the camera-center offset; exact in one pass
    // for concentric axes.
    for _ in 0..50 {
        let fk = forward_kinematics(&state, geom);
        let center = *fk.translation();
        let d = target - center;
        let horiz = (d.x * d.x + d.y * d.y).sqrt();
        let next = if horiz < 1e-6 {
            if d.z.abs() < 1e-9 {
                return Err(VisionError::DegenerateTarget { norm: d.norm() });
            }
            GimbalState { pan: state.pan, tilt: d.z.signum() * std::f64::consts::FRAC_PI_2 }
        } else {
            GimbalState::new(d.y.atan2(d.x), d.z.atan2(horiz))
        };
        let moved = wrap_angle(next.pan - state.pan).abs() + (next.tilt - state.tilt).abs();
        state = next;
        if moved < 1e-14 {
            break;
        }
    }
    Ok(state)
}

/// Projection of one marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerProjection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub observable: bool,
}

/// Pinhole projection of the marker array under a body-to-camera transform.
/// Markers behind the camera or outside the image are flagged unobservable.
pub fn project_markers(
    t_cb: &PoseTransform,
    markers: &MarkerArray,
    cam: &CameraModel,
) -> [MarkerProjection; 4] {
    let mut out = [MarkerProjection { pixel: Vector2::zeros(), depth: 0.0, observable: false }; 4];
    for (i, m) in markers.points().iter().enumerate() {
        let p = t_cb.transform_point(m);
        if p.z <= 1e-9 {
            out[i] = MarkerProjection { pixel: Vector2::zeros(), depth: p.z, observable: false };
            continue;
        }
        let u = cam.cx + cam.fx * p.x / p.z;
        let v = cam.cy + cam.fy * p.y / p.z;
        let inside = u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64;
        out[i] = MarkerProjection { pixel: Vector2::new(u, v), depth: p.z, observable: inside };
    }
    out
}

/// Extracts the four pixels if all markers are observable.
pub fn all_observable(projections: &[MarkerProjection; 4]) -> Result<[Vector2<f64>; 4], VisionError> {
    let observable = projections.iter().filter(|p| p.observable).count();
    if observable < 4 {
        return Err(VisionError::DetectionFailure { observable });
    }
    let mut out = [Vector2::zeros(); 4];
    for (o, p) in out.iter_mut().zip(projections) {
        *o = p.pixel;
    }
    Ok(out)
}

/// Sorts four detected points into a canonical (top-left, top-right,
/// bottom-right, bottom-left) order: angular sort around the centroid,
/// starting from the topmost (then leftmost) point. Rejects collinear or
/// concave configurations.
pub fn order_correspondences(points: &[Vector2<f64>; 4]) -> Result<[Vector2<f64>; 4], VisionError> {
    let centroid = (points[0] + points[1] + points[2] + points[3]) / 4.0;
    let mut idx = [0usize, 1, 2, 3];
    let angle = |i: usize| {
        let d = points[i] - centroid;
        d.y.atan2(d.x)
    };
    idx.sort_by(|&a, &b| angle(a).partial_cmp(&angle(b)).unwrap_or(std::cmp::Ordering::Equal));

    // Convexity: all consecutive edge cross products must share the sign of
    // an angular sweep and be well away from zero.
    for k in 0..4 {
        let a = points[idx[k]];
        let b = points[idx[(k + 1) % 4]];
        let c = points[idx[(k + 2) % 4]];
        let e1 = b - a;
        let e2 = c - b;
        let cross = e1.x * e2.y - e1.y * e2.x;
        if cross <= 1e-9 * e1.norm() * e2.norm() {
            return Err(VisionError::OrderingFailure);
        }
    }

    // Start from the topmost point (smallest v), ties broken by smallest u.
    let mut start = 0;
    for k in 1..4 {
        let (p, q) = (points[idx[k]], points[idx[start]]);
        if p.y < q.y - 1e-12 || ((p.y - q.y).abs() <= 1e-12 && p.x < q.x) {
            start = k;
        }
    }
    let mut out = [Vector2::zeros(); 4];
    for k in 0..4 {
        out[k] = points[idx[(start + k) % 4]];
    }
    Ok(out)
}

/// Assigns detected points to predicted marker pixels by exhaustive
/// minimum-cost matching. Used when a pose prior is available; unlike the
/// canonical ordering, it is stable under in-image rotation.
pub fn match_to_predicted(
    detected: &[Vector2<f64>; 4],
    predicted: &[Vector2<f64>; 4],
) -> [Vector2<f64>; 4] {
    const PERMS: [[usize; 4]; 24] = [
        [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
        [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
        [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
        [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
    ];
    let mut best = PERMS[0];
    let mut best_cost = f64::INFINITY;
    for perm in PERMS {
        let cost: f64 = (0..4)
            .map(|i| (detected[perm[i]] - predicted[i]).norm_squared())
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best = perm;
        }
    }
    [detected[best[0]], detected[best[1]], detected[best[2]], detected[best[3]]]
}

/// Direct linear transform for the plane-to-normalized-image homography,
/// with Hartley normalization. Returns (H, condition number).
fn homography_dlt(
    obj: &[Vector2<f64>; 4],
    img: &[Vector2<f64>; 4],
) -> Result<(Matrix3<f64>, f64), VisionError> {
    fn normalizer(pts: &[Vector2<f64>; 4]) -> Matrix3<f64> {
        let c = (pts[0] + pts[1] + pts[2] + pts[3]) / 4.0;
        let mean_dist: f64 = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / 4.0;
        let s = if mean_dist > 1e-15 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
        Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
    }
    let t_obj = normalizer(obj);
    let t_img = normalizer(img);
    let apply = |t: &Matrix3<f64>, p: &Vector2<f64>| {
        Vector2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
    };

    let mut a = SMatrix::<f64, 8, 9>::zeros();
    for i in 0..4 {
        let o = apply(&t_obj, &obj[i]);
        let m = apply(&t_img, &img[i]);
        let r = 2 * i;
        a[(r, 0)] = o.x;
        a[(r, 1)] = o.y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -m.x * o.x;
        a[(r, 7)] = -m.x * o.y;
        a[(r, 8)] = -m.x;
        a[(r + 1, 3)] = o.x;
        a[(r + 1, 4)] = o.y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -m.y * o.x;
        a[(r + 1, 7)] = -m.y * o.y;
        a[(r + 1, 8)] = -m.y;
    }
    let sv = a.singular_values();
    let cond = sv[0] / sv[7].max(f64::MIN_POSITIVE);
    if cond > 1e8 {
        return Err(VisionError::IllConditioned { cond });
    }
    // Null vector of the 8x9 system from the smallest eigenpair of A^T A
    // (the thin SVD does not expose the null space).
    let gram = a.transpose() * a;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut min_idx = 0;
    for i in 1..9 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let h = eig.eigenvectors.column(min_idx);
    let h_n = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_img_inv = t_img.try_inverse().expect("similarity transform invertible");
    Ok((t_img_inv * h_n * t_obj, cond))
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    u * v_t
}

fn reprojection_residual(
    t_cb: &PoseTransform,
    markers: &MarkerArray,
    cam: &CameraModel,
    pixels: &[Vector2<f64>; 4],
) -> f64 {
    let mut max_err: f64 = 0.0;
    for (m, px) in markers.points().iter().zip(pixels) {
        let p = t_cb.transform_point(m);
        if p.z <= 0.0 {
            return f64::INFINITY;
        }
        let u = cam.cx + cam.fx * p.x / p.z;
        let v = cam.cy + cam.fy * p.y / p.z;
        max_err = max_err.max((Vector2::new(u, v) - px).norm());
    }
    max_err
}

/// Gauss-Newton refinement of a body-to-camera pose against pixel
/// correspondences.
fn refine_pose(
    mut rotation: Matrix3<f64>,
    mut translation: Vector3<f64>,
    markers: &MarkerArray,
    cam: &CameraModel,
    pixels: &[Vector2<f64>; 4],
) -> (Matrix3<f64>, Vector3<f64>) {
    for _ in 0..30 {
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SMatrix::<f64, 6, 1>::zeros();
        let mut bad = false;
        for (m, px) in markers.points().iter().zip(pixels) {
            let p = rotation * m + translation;
            if p.z <= 1e-9 {
                bad = true;
                break;
            }
            let iz = 1.0 / p.z;
            let u = cam.cx + cam.fx * p.x * iz;
            let v = cam.cy + cam.fy * p.y * iz;
            let r = Vector2::new(px.x - u, px.y - v);
            // d(pixel)/d(camera point)
            let duv_dp = SMatrix::<f64, 2, 3>::new(
                cam.fx * iz, 0.0, -cam.fx * p.x * iz * iz,
                0.0, cam.fy * iz, -cam.fy * p.y * iz * iz,
            );
            // Left-multiplied rotation update: dp/dw = -skew(R m)
            let rm = rotation * m;
            let skew = Matrix3::new(
                0.0, -rm.z, rm.y,
                rm.z, 0.0, -rm.x,
                -rm.y, rm.x, 0.0,
            );
            let mut j = SMatrix::<f64, 2, 6>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(duv_dp * (-skew)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&duv_dp);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        if bad {
            break;
        }
        let Some(delta) = jtj.lu().solve(&jtr) else { break };
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        rotation = quat_to_rotation(&UnitQuat::from_rotation_vector(&w)) * rotation;
        rotation = nearest_rotation(&rotation);
        translation += dt;
        if delta.norm() < 1e-14 {
            break;
        }
    }
    (rotation, translation)
}

/// Recovers the body-to-camera pose from four ordered coplanar marker
/// correspondences: homography decomposition followed by iterative
/// reprojection refinement. The solution with markers in front of the camera
/// is selected; a residual above `max_residual_px` is reported as failure.
pub fn solve_pnp(
    pixels: &[Vector2<f64>; 4],
    markers: &MarkerArray,
    cam: &CameraModel,
    max_residual_px: f64,
) -> Result<PoseTransform, VisionError> {
    let obj = markers.plane_coords();
    let mut img = [Vector2::zeros(); 4];
    for (i, px) in pixels.iter().enumerate() {
        img[i] = Vector2::new((px.x - cam.cx) / cam.fx, (px.y - cam.cy) / cam.fy);
    }
    let (h, _cond) = homography_dlt(&obj, &img)?;

    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let lambda = 1.0 / (h1.norm() * h2.norm()).sqrt();
    let mut r1 = lambda * h1;
    let mut r2 = lambda * h2;
    let mut t = lambda * h3;
    // The plane centroid must sit in front of the camera.
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let r_cp = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));

    // Compose with the plane-in-body placement to get body -> camera.
    let (centroid, basis) = markers.plane_frame();
    let r_cb0 = r_cp * basis.transpose();
    let t_cb0 = t - r_cb0 * centroid;

    let (rotation, translation) = refine_pose(r_cb0, t_cb0, markers, cam, pixels);
    let pose = PoseTransform::new(rotation, translation, FrameId::Body, FrameId::Camera)?;
    let residual = reprojection_residual(&pose, markers, cam, pixels);
    if !residual.is_finite() || residual > max_residual_px {
        return Err(VisionError::PoseFailure { residual });
    }
    Ok(pose)
}

/// Relative position feedback from the composite chain
/// reference <- ground <- mechanism <- camera <- body.
pub fn camera_position_feedback(
    t_gp_g: &PoseTransform,
    t_g_m: &PoseTransform,
    t_m_c: &PoseTransform,
    t_c_b: &PoseTransform,
) -> Result<Vector3<f64>, GeometryError> {
    let chain = compose(t_gp_g, &compose(t_g_m, &compose(t_m_c, t_c_b)?)?)?;
    Ok(*chain.translation())
}

/// One tracking update: aim the optical axis at the fused target position,
/// rate-limited from the current joint state. The target is given in the
/// reference frame; `t_gp_m` maps mechanism coordinates into the reference
/// frame. Returns the current state unchanged when the target direction is
/// undefined.
pub fn track_step(
    target_reference: &Vector3<f64>,
    t_gp_m: &PoseTransform,
    current: &GimbalState,
    geom: &GimbalGeometry,
    max_rate: f64,
    dt: f64,
) -> GimbalState {
    let target_m = t_gp_m.inverse().transform_point(target_reference);
    let desired = match inverse_kinematics(&target_m, geom, current) {
        Ok(d) => d,
        Err(_) => return *current,
    };
    let budget = max_rate * dt;
    let dpan = wrap_angle(desired.pan - current.pan).clamp(-budget, budget);
    let dtilt = (desired.tilt - current.tilt).clamp(-budget, budget);
    GimbalState::new(current.pan + dpan, current.tilt + dtilt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn optical_axis(gs: &GimbalState, geom: &GimbalGeometry) -> Vector3<f64> {
        let fk = forward_kinematics(gs, geom);
        fk.rotation() * Vector3::new(0.0, 0.0, 1.0)
    }

    #[test]
    fn home_pose_is_mounting_transform() {
        let fk = forward_kinematics(&GimbalState::home(), &GimbalGeometry::default());
        assert_relative_eq!(fk.rotation(), &mount_rotation(), epsilon = 1e-15);
        assert_relative_eq!(fk.translation(), &Vector3::zeros(), epsilon = 1e-15);
        assert_relative_eq!(
            optical_axis(&GimbalState::home(), &GimbalGeometry::default()),
            Vector3::new(1.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn quarter_pan_rotates_optical_axis() {
        let gs = GimbalState::new(std::f64::consts::FRAC_PI_2, 0.0);
        let axis = optical_axis(&gs, &GimbalGeometry::default());
        assert_relative_eq!(axis, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn ik_examples() {
        let geom = GimbalGeometry::default();
        let home = GimbalState::home();

        let s = inverse_kinematics(&Vector3::new(2.0, 0.0, 0.0), &geom, &home).unwrap();
        assert_relative_eq!(s.pan, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.tilt, 0.0, epsilon = 1e-12);

        let prev = GimbalState::new(0.3, 0.1);
        let overhead = inverse_kinematics(&Vector3::new(0.0, 0.0, 1.0), &geom, &prev).unwrap();
        assert_relative_eq!(overhead.tilt, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(overhead.pan, 0.3, epsilon = 1e-12);

        let diag = inverse_kinematics(&Vector3::new(1.0, 1.0, 0.0), &geom, &home).unwrap();
        assert_relative_eq!(diag.pan, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(diag.tilt, 0.0, epsilon = 1e-12);

        assert!(inverse_kinematics(&Vector3::zeros(), &geom, &home).is_err());
    }

    #[test]
    fn fk_ik_round_trip() {
        let geoms = [
            GimbalGeometry::default(),
            GimbalGeometry { pan_to_tilt: [0.02, 0.0, 0.05], tilt_to_camera: [0.03, 0.01, 0.0] },
        ];
        let mut rng = StdRng::seed_from_u64(3);
        for geom in &geoms {
            for _ in 0..300 {
                let pan = rng.random_range(-3.0..3.0);
                let tilt = rng.random_range(-1.4..1.4);
                let gs = GimbalState::new(pan, tilt);
                let fk = forward_kinematics(&gs, geom);
                // Target on the optical axis at a random depth.
                let depth = rng.random_range(0.5..5.0);
                let target = fk.transform_point(&Vector3::new(0.0, 0.0, depth));
                let rec = inverse_kinematics(&target, geom, &GimbalState::home()).unwrap();
                assert!(
                    wrap_angle(rec.pan - gs.pan).abs() < 1e-9,
                    "pan {} vs {} (geom {geom:?})",
                    rec.pan,
                    gs.pan
                );
                assert!((rec.tilt - gs.tilt).abs() < 1e-9, "tilt {} vs {}", rec.tilt, gs.tilt);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let cam = CameraModel::default();
        let markers = MarkerArray::new([
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.1, 0.075, 0.0),
            Vector3::new(0.0, 0.075, 0.0),
        ])
        .unwrap();
        // Body 2 m along the optical axis.
        let t_cb = PoseTransform::new(
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 2.0),
            FrameId::Body,
            FrameId::Camera,
        )
        .unwrap();
        let proj = project_markers(&t_cb, &markers, &cam);
        // First marker is exactly on the optical axis.
        assert_relative_eq!(proj[0].pixel, Vector2::new(cam.cx, cam.cy), epsilon = 1e-12);

        // Doubling depth halves centered offsets.
        let t_far = PoseTransform::new(
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 4.0),
            FrameId::Body,
            FrameId::Camera,
        )
        .unwrap();
        let far = project_markers(&t_far, &markers, &cam);
        for (n, f) in proj.iter().zip(&far) {
            let off_near = n.pixel - Vector2::new(cam.cx, cam.cy);
            let off_far = f.pixel - Vector2::new(cam.cx, cam.cy);
            assert_relative_eq!(off_near / 2.0, off_far, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_matches_homography_oracle() {
        // Independent oracle: pixels of plane points via the 3x3 homography
        // K [r1 r2 t] built directly from the plane pose.
        let cam = CameraModel::default();
        let markers = MarkerArray::rectangle(0.2, 0.15);
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let w = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let r = quat_to_rotation(&UnitQuat::from_rotation_vector(&w));
            let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(1.5..4.0));
            let t_cb = PoseTransform::new(r, t, FrameId::Body, FrameId::Camera).unwrap();

            let (centroid, basis) = markers.plane_frame();
            let r_cp = r * basis;
            let t_cp = r * centroid + t;
            let k = Matrix3::new(cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0);
            let h = k * Matrix3::from_columns(&[r_cp.column(0).into(), r_cp.column(1).into(), t_cp]);

            let proj = project_markers(&t_cb, &markers, &cam);
            for (q, p) in markers.plane_coords().iter().zip(&proj) {
                let hp = h * Vector3::new(q.x, q.y, 1.0);
                let oracle = Vector2::new(hp.x / hp.z, hp.y / hp.z);
                assert_relative_eq!(p.pixel, oracle, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ordering_is_permutation_invariant() {
        const PERMS: [[usize; 4]; 24] = [
            [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
            [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
            [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
            [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
        ];
        // Axis-aligned square.
        let square = [
            Vector2::new(100.0, 100.0),
            Vector2::new(200.0, 100.0),
            Vector2::new(200.0, 200.0),
            Vector2::new(100.0, 200.0),
        ];
        let canonical = order_correspondences(&square).unwrap();
        assert_relative_eq!(canonical[0], square[0]);
        assert_relative_eq!(canonical[1], square[1]);
        assert_relative_eq!(canonical[2], square[2]);
        assert_relative_eq!(canonical[3], square[3]);

        // Rotated square: every input permutation yields the same output.
        let ang = 30.0_f64.to_radians();
        let rot = |p: Vector2<f64>| {
            let c = Vector2::new(150.0, 150.0);
            let d = p - c;
            Vector2::new(
                c.x + d.x * ang.cos() - d.y * ang.sin(),
                c.y + d.x * ang.sin() + d.y * ang.cos(),
            )
        };
        let rotated: Vec<Vector2<f64>> = square.iter().map(|&p| rot(p)).collect();
        let reference = order_correspondences(&[rotated[0], rotated[1], rotated[2], rotated[3]]).unwrap();
        for perm in PERMS {
            let shuffled = [rotated[perm[0]], rotated[perm[1]], rotated[perm[2]], rotated[perm[3]]];
            let ordered = order_correspondences(&shuffled).unwrap();
            for k in 0..4 {
                assert_relative_eq!(ordered[k], reference[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ordering_rejects_collinear() {
        let bad = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(2.0, 0.0),
            Vector2::new(0.0, 1.0),
        ];
        assert!(order_correspondences(&bad).is_err());
    }

    #[test]
    fn pnp_frontoparallel_depth() {
        let cam = CameraModel::default();
        let markers = MarkerArray::rectangle(0.2, 0.15);
        let t_true = PoseTransform::new(
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 2.0),
            FrameId::Body,
            FrameId::Camera,
        )
        .unwrap();
        let proj = project_markers(&t_true, &markers, &cam);
        let pixels = all_observable(&proj).unwrap();
        let pose = solve_pnp(&pixels, &markers, &cam, 1e-3).unwrap();
        assert_relative_eq!(pose.translation().z, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn pnp_noiseless_round_trip() {
        let cam = CameraModel::default();
        let markers = MarkerArray::rectangle(0.2, 0.15);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let w = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let r = quat_to_rotation(&UnitQuat::from_rotation_vector(&w));
            let t = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.4..0.4),
                rng.random_range(1.0..5.0),
            );
            let t_true = PoseTransform::new(r, t, FrameId::Body, FrameId::Camera).unwrap();
            let proj = project_markers(&t_true, &markers, &cam);
            let Ok(pixels) = all_observable(&proj) else { continue };
            let pose = solve_pnp(&pixels, &markers, &cam, 1e-3).unwrap();
            assert!((pose.translation() - t).norm() < 1e-6, "translation error");
            let dr = pose.rotation().transpose() * r;
            let angle = ((dr.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-6, "rotation error {angle}");
            // Reprojection of the recovered pose reproduces the input pixels.
            let back = project_markers(&pose, &markers, &cam);
            for (b, p) in back.iter().zip(&pixels) {
                assert!((b.pixel - p).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn pnp_monte_carlo_translation_error() {
        // 0.5 px pixel noise at ~3 m range: mean translation error under 5 cm.
        let cam = CameraModel::default();
        let markers = MarkerArray::rectangle(0.2, 0.15);
        let mut rng = StdRng::seed_from_u64(13);
        let normal = rand_distr::Normal::new(0.0, 0.5).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        while count < 1000 {
            let w = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            let r = quat_to_rotation(&UnitQuat::from_rotation_vector(&w));
            let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 3.0);
            let t_true = PoseTransform::new(r, t, FrameId::Body, FrameId::Camera).unwrap();
            let proj = project_markers(&t_true, &markers, &cam);
            let Ok(mut pixels) = all_observable(&proj) else { continue };
            for px in pixels.iter_mut() {
                px.x += rand_distr::Distribution::sample(&normal, &mut rng);
                px.y += rand_distr::Distribution::sample(&normal, &mut rng);
            }
            let Ok(pose) = solve_pnp(&pixels, &markers, &cam, 10.0) else { continue };
            total += (pose.translation() - t).norm();
            count += 1;
        }
        let mean = total / count as f64;
        assert!(mean < 0.05, "mean translation error {mean} m");
    }

    #[test]
    fn chain_identity_gives_zero() {
        let y = camera_position_feedback(
            &PoseTransform::identity(FrameId::GroundReference),
            &identity_between(FrameId::MechanismBase, FrameId::GroundReference),
            &identity_between(FrameId::Camera, FrameId::MechanismBase),
            &identity_between(FrameId::Body, FrameId::Camera),
        )
        .unwrap();
        assert_relative_eq!(y, Vector3::zeros());

        fn identity_between(from: FrameId, to: FrameId) -> PoseTransform {
            PoseTransform::new(Matrix3::identity(), Vector3::zeros(), from, to).unwrap()
        }
    }

    #[test]
    fn track_step_examples() {
        let geom = GimbalGeometry::default();
        let t_gp_m = PoseTransform::new(
            Matrix3::identity(),
            Vector3::zeros(),
            FrameId::MechanismBase,
            FrameId::GroundReference,
        )
        .unwrap();

        // Target already on the optical axis: no motion.
        let current = GimbalState::new(0.0, 0.0);
        let next = track_step(&Vector3::new(2.0, 0.0, 0.0), &t_gp_m, &current, &geom, 2.0, 0.04);
        assert_relative_eq!(next.pan, 0.0, epsilon = 1e-12);
        assert_relative_eq!(next.tilt, 0.0, epsilon = 1e-12);

        // 90 degree step with a 2 rad/s limit advances exactly 0.08 rad.
        let next = track_step(&Vector3::new(0.0, 2.0, 0.0), &t_gp_m, &current, &geom, 2.0, 0.04);
        assert_relative_eq!(next.pan, 0.08, epsilon = 1e-12);
    }

    #[test]
    fn encoder_quantization() {
        let res = 0.088_f64.to_radians();
        let gs = GimbalState::new(0.5, -0.3);
        let q = gs.quantized(res);
        assert!((q.pan / res).fract().abs() < 1e-9 || ((q.pan / res).fract().abs() - 1.0).abs() < 1e-9);
        assert!((gs.pan - q.pan).abs() <= res / 2.0 + 1e-12);
        let same = gs.quantized(0.0);
        assert_relative_eq!(same.pan, gs.pan);
    }
}
