use std::fmt::Write as _;
use std::ops::Mul;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::IoError;

const ORTHO_TOL: f64 = 1e-9;
const QUAT_NORM_TOL: f64 = 1e-3;

/// Rigid transform in SE(3).
///
/// Trajectory and ground-truth poses are sensor-to-world; the pose estimated
/// by PnP is world-to-camera. Sensor frames use the camera convention:
/// x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    iso: Isometry3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            iso: Isometry3::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Pose {
            iso: Isometry3::from_parts(Translation3::from(translation), rotation),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Pose { iso }
    }

    /// Validates `RᵀR = I` and `det R = +1` within 1e-9.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, IoError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= ORTHO_TOL) {
            return Err(IoError::InvalidPose(format!("rotation not orthonormal (|RᵀR−I| = {ortho:e})")));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(IoError::InvalidPose(format!("rotation determinant {det}")));
        }
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Ok(Self::new(translation, UnitQuaternion::from_rotation_matrix(&rot)))
    }

    /// Quaternion in `(x, y, z, w)` order. Its norm must be within 1e-3 of one;
    /// inputs already unit to machine precision are kept bit-for-bit.
    pub fn from_quaternion_xyzw(translation: Vector3<f64>, q: [f64; 4]) -> Result<Self, IoError> {
        if !q.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(IoError::InvalidPose("non-finite value".into()));
        }
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm_sq = quat.norm_squared();
        if !((norm_sq.sqrt() - 1.0).abs() <= QUAT_NORM_TOL) {
            return Err(IoError::InvalidPose(format!("quaternion norm {} is not unit", norm_sq.sqrt())));
        }
        let unit = if (norm_sq - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        Ok(Self::new(translation, unit))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.iso.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    pub fn inverse(&self) -> Pose {
        Pose {
            iso: self.iso.inverse(),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation * p + self.iso.translation.vector
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose { iso: self.iso * rhs.iso }
    }
}

/// Ordered list of indexed poses with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(i64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(i64, Pose)>) -> Result<Self, IoError> {
        if let Some(w) = entries.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(IoError::InvalidPose(format!(
                "trajectory indices must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Trajectory { entries })
    }

    /// Indices `0..n` in order.
    pub fn from_poses(poses: impl IntoIterator<Item = Pose>) -> Self {
        Trajectory {
            entries: poses.into_iter().enumerate().map(|(i, p)| (i as i64, p)).collect(),
        }
    }

    pub fn entries(&self) -> &[(i64, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Greedy arc-length sampling: the first pose is kept, then every pose at
/// least `interval_m` away from the last kept one.
pub fn sample_trajectory(traj: &Trajectory, interval_m: f64) -> Vec<Pose> {
    assert!(interval_m > 0.0, "sampling interval must be positive");
    let mut kept: Vec<Pose> = Vec::new();
    for pose in traj.poses() {
        match kept.last() {
            Some(last) if (pose.translation() - last.translation()).norm() < interval_m => {}
            _ => kept.push(*pose),
        }
    }
    kept
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, IoError> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| IoError::Parse {
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(perr(format!("expected 8 fields, found {}", fields.len())));
        }
        let index: i64 = fields[0]
            .parse()
            .map_err(|_| perr(format!("bad index '{}'", fields[0])))?;
        let mut vals = [0.0f64; 7];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.parse().map_err(|_| perr(format!("bad number '{f}'")))?;
        }
        let pose = Pose::from_quaternion_xyzw(
            Vector3::new(vals[0], vals[1], vals[2]),
            [vals[3], vals[4], vals[5], vals[6]],
        )
        .map_err(|e| perr(e.to_string()))?;
        entries.push((index, pose));
    }
    Trajectory::new(entries)
}

/// `index tx ty tz qx qy qz qw`, shortest round-trip float formatting.
pub fn format_pose_line(index: i64, pose: &Pose) -> String {
    let t = pose.translation();
    let q = pose.quaternion();
    format!("{} {} {} {} {} {} {} {}", index, t.x, t.y, t.z, q.i, q.j, q.k, q.w)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let bytes = super::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| IoError::Malformed("trajectory is not UTF-8".into()))?;
    parse_trajectory(&text)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let mut out = String::from("# index tx ty tz qx qy qz qw\n");
    for (i, p) in traj.entries() {
        let _ = writeln!(out, "{}", format_pose_line(*i, p));
    }
    super::write_file(path, out.as_bytes())
}
