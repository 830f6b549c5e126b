//! Pose/twist algebra and the pose difference operator used by the tracking
//! and consistency rewards.
//!
//! The difference between two poses stacks the position difference with the
//! rotation vector (log map) of the relative orientation. The log map is
//! taken on the quaternion representative with non-negative scalar part, so
//! the rotation angle always lands in `[0, pi]`.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector6};

/// Position plus orientation of a rigid body in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }

    /// Yaw-only pose, handy for planner references.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }
}

/// Linear and angular velocity, world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// Linear and angular acceleration, world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accel {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Accel {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Rotation vector (axis times angle) of a unit quaternion.
///
/// Sign-fixes the double cover first so the returned angle is in `[0, pi]`.
pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut raw: Quaternion<f64> = *q.quaternion();
    if raw.w < 0.0 {
        raw = -raw;
    }
    let imag = raw.imag();
    let imag_norm = imag.norm();
    if imag_norm < 1e-12 {
        // First-order expansion of the log map near identity.
        return imag * 2.0;
    }
    let angle = 2.0 * imag_norm.atan2(raw.w);
    imag * (angle / imag_norm)
}

/// Difference of two poses: position difference stacked with the rotation
/// vector of `a.orientation * b.orientation^-1`.
pub fn pose_diff(a: &Pose, b: &Pose) -> Vector6<f64> {
    let dp = a.position - b.position;
    let qa = a.orientation.quaternion();
    let qb = b.orientation.quaternion();
    // Identical representations (up to the double cover) difference to zero
    // exactly; the conjugate product below would leave rounding residue.
    let rv = if qa.coords == qb.coords || qa.coords == -qb.coords {
        Vector3::zeros()
    } else {
        let dq = UnitQuaternion::new_unchecked(qa * qb.conjugate());
        rotation_vector(&dq)
    };
    Vector6::new(dp.x, dp.y, dp.z, rv.x, rv.y, rv.z)
}

/// Componentwise twist difference.
pub fn twist_diff(a: &Twist, b: &Twist) -> Vector6<f64> {
    let dl = a.linear - b.linear;
    let da = a.angular - b.angular;
    Vector6::new(dl.x, dl.y, dl.z, da.x, da.y, da.z)
}

/// Componentwise acceleration difference.
pub fn accel_diff(a: &Accel, b: &Accel) -> Vector6<f64> {
    let dl = a.linear - b.linear;
    let da = a.angular - b.angular;
    Vector6::new(dl.x, dl.y, dl.z, da.x, da.y, da.z)
}

/// Integrates a world-frame twist over `dt`: position moves along the linear
/// part, orientation is advanced by the exponential map of `angular * dt` and
/// renormalized.
pub fn integrate_pose(p: &Pose, t: &Twist, dt: f64) -> Pose {
    let position = p.position + t.linear * dt;
    let delta = UnitQuaternion::from_scaled_axis(t.angular * dt);
    let orientation = UnitQuaternion::new_normalize((delta * p.orientation).into_inner());
    Pose { position, orientation }
}
