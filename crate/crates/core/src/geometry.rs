//! SE(3)/SO(3) primitives shared by every other module.
//!
//! Rotations are unit quaternions `(w, x, y, z)` kept on the `w >= 0`
//! hemisphere. A quaternion and its negation encode the same rotation, so
//! fixing the hemisphere at every API boundary makes equality checks,
//! serialization, and clustering deterministic.
//!
//! Delta rotations compose on the left in the world frame: applying a delta
//! `d` to an orientation `r` yields `d * r`. The convention is recorded in
//! the motion token library file so decoding never has to guess.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum deviation from unit norm accepted when validating an externally
/// supplied quaternion; anything further off is rejected rather than
/// silently renormalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm} deviates from 1 by more than {UNIT_NORM_TOLERANCE}")]
    NonUnitQuaternion { norm: f64 },
    #[error("interpolation parameter {t} outside [0, 1]")]
    ParamOutOfRange { t: f64 },
}

/// 3-vector in meters (or unitless when used as a direction).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Self = Self { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn lerp(self, o: Self, t: f64) -> Self {
        self + (o - self).scale(t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

/// Unit quaternion on the `w >= 0` hemisphere.
///
/// Fields stay private so every value in circulation satisfies the unit-norm
/// and hemisphere invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Rotation {
    pub const IDENTITY: Self = Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Validating constructor: accepts quaternions whose norm is within
    /// [`UNIT_NORM_TOLERANCE`] of 1, normalizes them, and projects onto the
    /// canonical hemisphere. Values already unit to machine precision keep
    /// their exact bits, so serialization round-trips losslessly.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        let q = if (norm - 1.0).abs() <= 1e-12 {
            Self { w, x, y, z }
        } else {
            Self { w: w / norm, x: x / norm, y: y / norm, z: z / norm }
        };
        Ok(q.canonicalized())
    }

    /// Normalize an arbitrary non-zero quaternion. Used internally where
    /// intermediate values (products, cluster means) drift off the sphere.
    /// Inputs already unit to machine precision keep their exact bits.
    pub(crate) fn from_unnormalized(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return None;
        }
        let q = if (norm - 1.0).abs() <= 1e-12 {
            Self { w, x, y, z }
        } else {
            Self { w: w / norm, x: x / norm, y: y / norm, z: z / norm }
        };
        Some(q.canonicalized())
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-12 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            w: c,
            x: axis.x / n * s,
            y: axis.y / n * s,
            z: axis.z / n * s,
        }
        .canonicalized()
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn as_wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn canonicalized(mut self) -> Self {
        // w >= 0; on the w == 0 great circle the first non-zero vector
        // component decides, so the representative is unique.
        let flip = self.w < 0.0
            || (self.w == 0.0
                && (self.x < 0.0
                    || (self.x == 0.0 && (self.y < 0.0 || (self.y == 0.0 && self.z < 0.0)))));
        if flip {
            self.w = -self.w;
            self.x = -self.x;
            self.y = -self.y;
            self.z = -self.z;
        }
        self
    }

    /// Inverse rotation.
    pub fn conjugate(self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }.canonicalized()
    }

    /// Hamilton product `self * other` (apply `other` first, then `self`),
    /// renormalized and canonicalized.
    pub fn compose(self, o: Self) -> Self {
        let w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z;
        let x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y;
        let y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x;
        let z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w;
        Self::from_unnormalized(w, x, y, z).expect("product of unit quaternions is non-zero")
    }

    /// Rotate a vector: `q v q*`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    pub fn dot(self, o: Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotation angle in [0, pi].
    pub fn angle(self) -> f64 {
        let vec_norm = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * vec_norm.atan2(self.w.abs())
    }

    pub fn is_unit(&self) -> bool {
        let norm = self.dot(*self).sqrt();
        (norm - 1.0).abs() <= 1e-9
    }
}

impl TryFrom<[f64; 4]> for Rotation {
    type Error = GeometryError;
    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        Rotation::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        r.as_wxyz()
    }
}

/// Rigid pose: position plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "pos")]
    pub position: Vec3,
    #[serde(rename = "rot")]
    pub orientation: Rotation,
}

impl Pose {
    pub const IDENTITY: Self = Self { position: Vec3::ZERO, orientation: Rotation::IDENTITY };

    pub fn new(position: Vec3, orientation: Rotation) -> Self {
        Self { position, orientation }
    }

    /// Composition as rigid transforms: `self` applied after `other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.orientation.rotate(other.position) + self.position,
            orientation: self.orientation.compose(other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.conjugate();
        Pose {
            position: inv.rotate(self.position).scale(-1.0),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.orientation.rotate(p) + self.position
    }
}

/// Per-frame robot state: torso and both end-effector poses plus gripper
/// opening levels in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub torso: Pose,
    pub left: Pose,
    pub right: Pose,
    #[serde(rename = "left_grip", deserialize_with = "clamp_unit")]
    pub left_gripper: f64,
    #[serde(rename = "right_grip", deserialize_with = "clamp_unit")]
    pub right_gripper: f64,
    #[serde(rename = "t")]
    pub timestamp: f64,
}

fn clamp_unit<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    Ok(v.clamp(0.0, 1.0))
}

impl RobotState {
    pub fn new(
        torso: Pose,
        left: Pose,
        right: Pose,
        left_gripper: f64,
        right_gripper: f64,
        timestamp: f64,
    ) -> Self {
        Self {
            torso,
            left,
            right,
            left_gripper: left_gripper.clamp(0.0, 1.0),
            right_gripper: right_gripper.clamp(0.0, 1.0),
            timestamp,
        }
    }
}

/// Relative motion between two poses: translation plus relative rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaAction {
    pub d_pos: Vec3,
    pub d_rot: Rotation,
}

impl DeltaAction {
    pub const ZERO: Self = Self { d_pos: Vec3::ZERO, d_rot: Rotation::IDENTITY };

    pub fn new(d_pos: Vec3, d_rot: Rotation) -> Self {
        Self { d_pos, d_rot }
    }
}

/// Geodesic angle between two rotations, in [0, pi].
///
/// Computed from the relative quaternion via `atan2`, which stays accurate
/// for both tiny and near-pi angles. Symmetric, and zero exactly when the
/// inputs describe the same rotation (up to quaternion sign).
pub fn rotation_distance(a: Rotation, b: Rotation) -> f64 {
    a.conjugate().compose(b).angle()
}

/// Spherical linear interpolation with the shortest-path sign convention.
pub fn slerp(a: Rotation, b: Rotation, t: f64) -> Result<Rotation, GeometryError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GeometryError::ParamOutOfRange { t });
    }
    if t == 0.0 {
        return Ok(a);
    }
    if t == 1.0 {
        return Ok(b);
    }
    let mut dot = a.dot(b);
    let mut sign = 1.0;
    if dot < 0.0 {
        dot = -dot;
        sign = -1.0;
    }
    let (ca, cb) = if dot > 1.0 - 1e-12 {
        // Nearly identical: fall back to normalized linear interpolation.
        (1.0 - t, t * sign)
    } else {
        let theta = dot.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s * sign)
    };
    Ok(Rotation::from_unnormalized(
        ca * a.w + cb * b.w,
        ca * a.x + cb * b.x,
        ca * a.y + cb * b.y,
        ca * a.z + cb * b.z,
    )
    .expect("slerp of unit quaternions is non-zero"))
}

/// Perpendicular distance from `p` to the infinite line through the segment.
/// A degenerate (zero-length) segment falls back to the distance to
/// `seg_start`, which keeps stationary frames well-defined.
pub fn point_to_line_distance(p: Vec3, seg_start: Vec3, seg_end: Vec3) -> f64 {
    let dir = seg_end - seg_start;
    let len_sq = dir.norm_squared();
    if len_sq < 1e-24 {
        return (p - seg_start).norm();
    }
    let rel = p - seg_start;
    let t = rel.dot(dir) / len_sq;
    (rel - dir.scale(t)).norm()
}

/// Apply a delta action to a pose. Translation adds in the world frame and
/// the relative rotation left-composes onto the orientation.
pub fn apply_delta(s: &Pose, d: &DeltaAction) -> Pose {
    Pose {
        position: s.position + d.d_pos,
        orientation: d.d_rot.compose(s.orientation),
    }
}

/// Delta such that `apply_delta(a, delta_between(a, b)) == b`.
pub fn delta_between(a: &Pose, b: &Pose) -> DeltaAction {
    DeltaAction {
        d_pos: b.position - a.position,
        d_rot: b.orientation.compose(a.orientation.conjugate()),
    }
}

/// Reflect a rotation across the world x-z plane: `R' = M R M` with
/// `M = diag(1, -1, 1)`, which on quaternions is `(w, x, y, z) -> (w, -x, y, -z)`.
pub fn mirror_rotation_xz(r: Rotation) -> Rotation {
    Rotation { w: r.w, x: -r.x, y: r.y, z: -r.z }.canonicalized()
}

/// Mirror a local-frame pose across the world x-z plane and express the
/// result in a target local frame.
///
/// The pose is lifted to the world frame, its world-frame y position is
/// negated, its orientation is reflected via [`mirror_rotation_xz`], and the
/// result is mapped into the target frame. Mirroring twice with the frames
/// swapped back recovers the original pose.
pub fn mirror_pose(p: &Pose, world_from_local: &Pose, target_world_from_local: &Pose) -> Pose {
    let world = world_from_local.compose(p);
    let mirrored = Pose {
        position: Vec3::new(world.position.x, -world.position.y, world.position.z),
        orientation: mirror_rotation_xz(world.orientation),
    };
    target_world_from_local.inverse().compose(&mirrored)
}
