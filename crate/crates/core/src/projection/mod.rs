//! Map projection: four-face HEC panoramas with depth and point-id buffers,
//! the pinhole model, intensity equalization and CLAHE.

mod clahe;
mod equalize;
mod hec;
mod panorama;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::CameraIntrinsics;

pub use clahe::clahe;
pub use equalize::{equalize_map_intensity, linear_intensity_scaling};
pub use hec::{hec_forward, hec_inverse};
pub use panorama::{
    face_ray, pixel_ray, project_point_to_pano, render_panorama, splat_half_width, MapImage, PanoHit, NO_POINT,
};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("coordinates ({u}, {v}) outside [-1, 1]²")]
    OutOfDomain { u: f64, v: f64 },
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
    #[error("point {0} has no equalized intensity")]
    NotEqualized(u32),
}

/// The four side faces of the cube; top and ground faces are never rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CubeFace {
    Front,
    Left,
    Back,
    Right,
}

impl CubeFace {
    pub const ALL: [CubeFace; 4] = [CubeFace::Front, CubeFace::Left, CubeFace::Back, CubeFace::Right];

    /// Tile position in the panorama, left to right.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CubeFace> {
        Self::ALL.get(i).copied()
    }

    /// Rotation from the sensor frame into the face frame. Rows are the face's
    /// right, down and viewing axes expressed in the sensor frame.
    pub fn rotation(self) -> nalgebra::Matrix3<f64> {
        use nalgebra::Matrix3;
        match self {
            CubeFace::Front => Matrix3::identity(),
            CubeFace::Left => Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0),
            CubeFace::Back => Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0),
            CubeFace::Right => Matrix3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
        }
    }

    /// Coordinates of a sensor-frame vector in this face's frame.
    #[inline]
    pub(crate) fn to_face(self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            CubeFace::Front => *p,
            CubeFace::Left => Vector3::new(p.z, p.y, -p.x),
            CubeFace::Back => Vector3::new(-p.x, p.y, -p.z),
            CubeFace::Right => Vector3::new(-p.z, p.y, p.x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Side length S of each cube face; the panorama is 4S × S.
    pub face_size: usize,
    /// Splat half-width is `min(splat_max, round(splat_gain / depth))`.
    pub splat_gain: f64,
    pub splat_max: u32,
    pub z_near: f64,
    /// Plain cube map when false. Driven by the pipeline's ablation switch.
    #[serde(skip)]
    pub use_hec: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            face_size: 480,
            splat_gain: 8.0,
            splat_max: 2,
            z_near: 0.3,
            use_hec: true,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::InvalidConfig(m.into()));
        if self.face_size == 0 {
            return bad("face_size must be positive");
        }
        if self.splat_max > 3 {
            return bad("splat_max must be at most 3");
        }
        if !(self.z_near > 0.0) {
            return bad("z_near must be positive");
        }
        if !(self.splat_gain >= 0.0) {
            return bad("splat_gain must be non-negative");
        }
        Ok(())
    }

    pub fn panorama_width(&self) -> usize {
        4 * self.face_size
    }

    /// Pixels per radian at a face center (horizontal direction).
    pub fn center_focal(&self) -> f64 {
        let half = self.face_size as f64 / 2.0;
        if self.use_hec {
            half * 4.0 / std::f64::consts::PI
        } else {
            half
        }
    }
}

/// Pinhole projection; `None` for points at or behind the camera plane.
pub fn project_pinhole(p_cam: &Vector3<f64>, k: &CameraIntrinsics) -> Option<(f64, f64)> {
    if p_cam.z > 0.0 {
        Some((k.fx * p_cam.x / p_cam.z + k.cx, k.fy * p_cam.y / p_cam.z + k.cy))
    } else {
        None
    }
}
